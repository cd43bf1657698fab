"""Monte-Carlo checks of the deviation-growth claims on a scalar-axis filter.

Four runs share one observation-noise realization per trial: clean and
attacked, each with and without the clipping defense. Terminal deviations
against the clean undefended run isolate the attack and defense effects:
the attacked deviation grows with the hide block, the defended clean run
is exactly unchanged while residuals stay under the clip bound, and the
defended attacked deviation shrinks by roughly the clip-to-shift ratio.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import kalman
from .attack import layout_frames
from .defense import modulate
from .kalman import constant_velocity_model

LAYOUTS = ("optimal", "uniform", "random", "inverted")


@dataclass
class SimConfig:
    T: int = 300
    s_ratio: float = 0.02
    h_ratio: float = 0.15
    lam: float = 1.0
    delta_max: float = 0.1
    noise: float = 0.03
    trials: int = 100
    seed: int = 0
    layout: str = "optimal"
    q: float = 0.0001
    r: float = 1.0
    gt_velocity: float = 1.0
    # tracks enter the simulation settled: velocity initialized at the true
    # rate so clean residuals are noise-scale from the first frame
    init_velocity: Optional[float] = None

    def __post_init__(self):
        if self.s_ratio + self.h_ratio > 1.0 + 1e-12:
            raise ValueError("s_ratio + h_ratio must not exceed 1")
        if self.T < 2 or self.trials < 1:
            raise ValueError("T and trials must be positive")
        if self.init_velocity is None:
            self.init_velocity = self.gt_velocity


@dataclass
class SimReport:
    layout: str
    T: int
    mean_d10: float
    max_d10: float
    mean_d01: float
    max_d01: float
    mean_d11: float
    max_d11: float
    ratio: float          # mean |d10| over mean |d11|
    beta_estimate: float
    d10: np.ndarray
    d01: np.ndarray
    d11: np.ndarray


@dataclass
class GrowthFit:
    hide_lengths: np.ndarray
    mean_d10: np.ndarray
    mean_d11: np.ndarray
    slope_d10: float
    slope_d11: float
    r2_d10: float
    r2_d11: float

    @property
    def slope_ratio(self) -> float:
        return self.slope_d10 / self.slope_d11 if self.slope_d11 else float("inf")


def _run_axis(z: np.ndarray, model, shift_set, hide_set, lam: float,
              attacked: bool, defended: bool, delta_max: float,
              init_velocity: float = 0.0) -> float:
    """Final position of one scalar run over shared observations.

    All runs model an established track: initialization consumes the clean
    first observation, and attack operations apply from frame 1 onward.
    """
    dmax = np.array([delta_max])
    state = kalman.initial_state([z[0]], model)
    state = kalman.KfState(s=np.array([state.s[0], init_velocity]), P=state.P)
    for t in range(1, len(z)):
        state = kalman.predict(state, model)
        if attacked and t in hide_set:
            continue
        obs = z[t] + (lam if attacked and t in shift_set else 0.0)
        mod = (lambda d: modulate(d, dmax)) if defended else None
        state = kalman.update(state, [obs], model, mod)
    return float(kalman.position(state)[0])


def _trial_deviations(cfg: SimConfig, model, shift_set, hide_set,
                      rng: np.random.Generator):
    w = rng.normal(0.0, cfg.noise, cfg.T)
    gt = cfg.gt_velocity * np.arange(cfg.T, dtype=float)
    z = gt + w
    v0 = cfg.init_velocity
    p00 = _run_axis(z, model, shift_set, hide_set, cfg.lam, False, False,
                    cfg.delta_max, v0)
    p10 = _run_axis(z, model, shift_set, hide_set, cfg.lam, True, False,
                    cfg.delta_max, v0)
    p01 = _run_axis(z, model, shift_set, hide_set, cfg.lam, False, True,
                    cfg.delta_max, v0)
    p11 = _run_axis(z, model, shift_set, hide_set, cfg.lam, True, True,
                    cfg.delta_max, v0)
    return abs(p10 - p00), abs(p01 - p00), abs(p11 - p00)


def _trial_rngs(cfg: SimConfig) -> List[np.random.Generator]:
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)
    return [np.random.default_rng(s) for s in seqs]


def simulate(cfg: SimConfig) -> SimReport:
    """Paired-noise Monte Carlo over `trials` runs of the four scenarios."""
    model = constant_velocity_model(1, q=cfg.q, r=cfg.r)
    shifts, hides = layout_frames(cfg.T, cfg.s_ratio, cfg.h_ratio,
                                  cfg.layout, seed=cfg.seed)
    shift_set, hide_set = set(shifts), set(hides)
    d10, d01, d11 = [], [], []
    for rng in _trial_rngs(cfg):
        a, b, c = _trial_deviations(cfg, model, shift_set, hide_set, rng)
        d10.append(a)
        d01.append(b)
        d11.append(c)
    d10 = np.array(d10)
    d01 = np.array(d01)
    d11 = np.array(d11)
    mean_d11 = float(d11.mean())
    ratio = float(d10.mean() / mean_d11) if mean_d11 > 0 else float("inf")
    return SimReport(layout=cfg.layout, T=cfg.T,
                     mean_d10=float(d10.mean()), max_d10=float(d10.max()),
                     mean_d01=float(d01.mean()), max_d01=float(d01.max()),
                     mean_d11=float(d11.mean()), max_d11=float(d11.max()),
                     ratio=ratio, beta_estimate=estimate_decay_constant(model),
                     d10=d10, d01=d01, d11=d11)


def layout_sweep(cfg: SimConfig, layouts: Sequence[str] = LAYOUTS) -> Dict[str, np.ndarray]:
    """Per-trial attacked deviations for each layout on shared noise."""
    if len(layouts) < 2:
        raise ValueError("need at least two layouts to compare")
    model = constant_velocity_model(1, q=cfg.q, r=cfg.r)
    out: Dict[str, np.ndarray] = {}
    for layout in layouts:
        shifts, hides = layout_frames(cfg.T, cfg.s_ratio, cfg.h_ratio,
                                      layout, seed=cfg.seed)
        shift_set, hide_set = set(shifts), set(hides)
        devs = [_trial_deviations(cfg, model, shift_set, hide_set, rng)[0]
                for rng in _trial_rngs(cfg)]
        out[layout] = np.array(devs)
    return out


def growth_fit(cfg: SimConfig, T_values: Sequence[int]) -> GrowthFit:
    """Linear fit of terminal deviation against hide-block length.

    The shift block is held at its cfg.T size across all trace lengths so
    the injected velocity is fixed and only the hiding phase scales.
    """
    if len(T_values) < 4:
        raise ValueError("need at least four trace lengths")
    model = constant_velocity_model(1, q=cfg.q, r=cfg.r)
    n_s = int(round(cfg.s_ratio * cfg.T))
    mean10, mean11, lengths = [], [], []
    for T in T_values:
        T = int(T)
        n_h = int(round(cfg.h_ratio * T))
        shift_set = set(range(T - n_s - n_h, T - n_h))
        hide_set = set(range(T - n_h, T))
        run_cfg = replace(cfg, T=T)
        d10, d11 = [], []
        for rng in _trial_rngs(run_cfg):
            a, _, c = _trial_deviations(run_cfg, model, shift_set, hide_set, rng)
            d10.append(a)
            d11.append(c)
        mean10.append(float(np.mean(d10)))
        mean11.append(float(np.mean(d11)))
        lengths.append(float(n_h))
    lengths = np.array(lengths)
    mean10 = np.array(mean10)
    mean11 = np.array(mean11)
    s10, r10 = _linfit(lengths, mean10)
    s11, r11 = _linfit(lengths, mean11)
    return GrowthFit(hide_lengths=lengths, mean_d10=mean10, mean_d11=mean11,
                     slope_d10=s10, slope_d11=s11, r2_d10=r10, r2_d11=r11)


def _linfit(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def estimate_decay_constant(model=None, iterations: int = 500) -> float:
    """Decay rate of the closed-loop deviation recursion at the steady gain."""
    if model is None:
        model = constant_velocity_model(1)
    state = kalman.initial_state(np.zeros(model.dims), model)
    for _ in range(iterations):
        state = kalman.predict(state, model)
        state = kalman.update(state, np.zeros(model.dims), model)
    pred = kalman.predict(state, model)
    K = kalman.gain(pred, model)
    n = 2 * model.dims
    closed_loop = (np.eye(n) - K @ model.H) @ model.A
    rho = float(np.max(np.abs(np.linalg.eigvals(closed_loop))))
    return float(-np.log(max(rho, 1e-12)))


def report_rows(reports: Sequence[SimReport]) -> List[tuple]:
    """CSV-ready rows: (trial, layout, T, d10, d01, d11)."""
    rows = []
    for rep in reports:
        for trial in range(len(rep.d10)):
            rows.append((trial, rep.layout, rep.T,
                         rep.d10[trial], rep.d01[trial], rep.d11[trial]))
    return rows
