"""Deviation-clipping security patch for the tracker's state estimation.

A shared FIFO buffer collects the magnitude of observation-prediction
deviations per axis, sanitizes them against outliers by quantile trimming,
fits a Gamma distribution, and exposes the fitted high quantile as a
per-axis clip bound for the update residual. The modulation preserves the
deviation direction and is silent for in-distribution deviations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import gammainc


class InsufficientData(RuntimeError):
    """Not enough samples to fit a deviation distribution."""


class DegenerateVariance(RuntimeError):
    """Sample variance is (numerically) zero; quantiles degenerate."""


class InactiveDefense(RuntimeError):
    """Modulation is disabled until the buffer is warmed up."""


@dataclass
class DefenseConfig:
    alpha_max: float = 0.95        # quantile used as the clip bound
    beta_trim: float = 0.05        # outlier trimming bound, < 0.5
    buffer_size: int = 200         # FIFO capacity per axis
    warmup_min: int = 30           # samples required before modulation
    distribution: str = "gamma"    # gamma | gaussian
    axis_aware: bool = True
    outlier_aware: bool = True
    elimination_mode: bool = False  # store only the largest-axis deviation

    def __post_init__(self):
        if not 0.0 < self.alpha_max < 1.0:
            raise ValueError("alpha_max must lie in (0, 1)")
        if not 0.0 < self.beta_trim < 0.5:
            raise ValueError("beta_trim must lie in (0, 0.5)")
        if self.buffer_size < 1 or self.warmup_min < 1:
            raise ValueError("buffer_size and warmup_min must be positive")
        if self.distribution not in ("gamma", "gaussian"):
            raise ValueError(f"unknown distribution {self.distribution!r}")


@dataclass(frozen=True)
class GammaParams:
    shape: float
    scale: float


@dataclass(frozen=True)
class GaussianParams:
    mean: float
    std: float


def fit(values, cfg: DefenseConfig):
    """Method-of-moments fit of the configured distribution.

    Gamma: k = mean^2 / var, theta = var / mean. Gaussian: mean and std.
    Raises InsufficientData below the warmup count and DegenerateVariance
    when the sample variance vanishes.
    """
    x = np.asarray(values, dtype=float)
    if x.size < cfg.warmup_min:
        raise InsufficientData(f"{x.size} samples < warmup {cfg.warmup_min}")
    mean = float(np.mean(x))
    var = float(np.var(x))
    if var <= 1e-18 * max(mean * mean, 1.0):
        raise DegenerateVariance(f"variance {var:.3g} at mean {mean:.3g}")
    if cfg.distribution == "gaussian":
        return GaussianParams(mean=mean, std=math.sqrt(var))
    if mean <= 0.0:
        raise DegenerateVariance(f"non-positive mean {mean:.3g}")
    return GammaParams(shape=mean * mean / var, scale=var / mean)


def gamma_quantile(params: GammaParams, q: float) -> float:
    """Inverse CDF of Gamma(shape, scale) by bisection on the regularized
    lower incomplete gamma function, to 1e-10 relative tolerance."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    k = params.shape
    hi = max(k, 1.0)
    while gammainc(k, hi) < q:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gammainc(k, mid) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * max(hi, 1e-300):
            break
    return 0.5 * (lo + hi) * params.scale


def gaussian_quantile(params: GaussianParams, q: float) -> float:
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    return params.mean + NormalDist().inv_cdf(q) * params.std


def quantile(params, q: float) -> float:
    if isinstance(params, GammaParams):
        return gamma_quantile(params, q)
    return gaussian_quantile(params, q)


def modulate(delta, dmax) -> np.ndarray:
    """Clip the deviation per axis to the given bound, preserving its sign.

    Components already within the bound pass through unchanged.
    """
    d = np.asarray(delta, dtype=float)
    m = np.asarray(dmax, dtype=float)
    return np.where(np.abs(d) > m, np.sign(d) * m, d)


class DeviationBuffer:
    """Per-axis FIFO of absolute deviations with outlier trimming.

    axis_aware=False pools all axes into one buffer; elimination_mode
    stores only the largest-magnitude axis of each deviation. Entries
    remember the frame they were recorded at for export.
    """

    def __init__(self, dims: int, cfg: Optional[DefenseConfig] = None):
        self.cfg = cfg if cfg is not None else DefenseConfig()
        self.dims = dims
        n = dims if (self.cfg.axis_aware and not self.cfg.elimination_mode) else 1
        self._buffers: List[List[Tuple[int, float]]] = [[] for _ in range(n)]

    def __len__(self) -> int:
        return sum(len(b) for b in self._buffers)

    def sizes(self) -> List[int]:
        return [len(b) for b in self._buffers]

    def values(self, buffer_index: int = 0) -> np.ndarray:
        return np.array([v for _, v in self._buffers[buffer_index]])

    def record(self, delta, frame: int = -1) -> None:
        """Append the per-axis magnitudes, evicting FIFO beyond capacity."""
        mags = np.abs(np.asarray(delta, dtype=float).ravel())
        if mags.shape != (self.dims,):
            raise ValueError(f"expected {self.dims}-axis deviation, got {mags.shape}")
        if not np.all(np.isfinite(mags)):
            raise ValueError("deviation has non-finite components")
        if self.cfg.elimination_mode:
            self._append(0, frame, float(mags.max()))
        elif not self.cfg.axis_aware:
            for v in mags:
                self._append(0, frame, float(v))
        else:
            for i, v in enumerate(mags):
                self._append(i, frame, float(v))

    def _append(self, idx: int, frame: int, value: float) -> None:
        buf = self._buffers[idx]
        buf.append((frame, value))
        overflow = len(buf) - self.cfg.buffer_size
        if overflow > 0:
            del buf[:overflow]

    def trim(self) -> None:
        """Drop values strictly outside the empirical [beta, 1-beta]
        quantile interval per axis; no-op when outlier awareness is off
        or an axis holds fewer than 3 samples."""
        if not self.cfg.outlier_aware:
            return
        beta = self.cfg.beta_trim
        for buf in self._buffers:
            if len(buf) < 3:
                continue
            vals = np.array([v for _, v in buf])
            lo, hi = np.quantile(vals, [beta, 1.0 - beta])
            buf[:] = [(f, v) for f, v in buf if lo <= v <= hi]

    def threshold_vector(self) -> np.ndarray:
        """Per-axis clip bound: the alpha_max quantile of the fitted
        distribution, or the sample mean when variance degenerates.

        Raises InactiveDefense while any buffer is below the warmup count.
        """
        thresholds = []
        for buf in self._buffers:
            if len(buf) < self.cfg.warmup_min:
                raise InactiveDefense(
                    f"{len(buf)} samples < warmup {self.cfg.warmup_min}")
            vals = np.array([v for _, v in buf])
            try:
                thresholds.append(quantile(fit(vals, self.cfg), self.cfg.alpha_max))
            except DegenerateVariance:
                thresholds.append(float(np.mean(vals)))
        if len(thresholds) == 1:
            return np.full(self.dims, thresholds[0])
        return np.array(thresholds)

    def export_rows(self) -> List[Tuple[int, int, float]]:
        """Snapshot as (frame, axis, value) rows for CSV export."""
        rows = []
        for axis, buf in enumerate(self._buffers):
            rows.extend((frame, axis, value) for frame, value in buf)
        return rows
