"""Experiment runner: track, attack-eval, ablate, theory, bench.

Every subcommand reads one JSON config (see `init-config` for a reference
document with all defaults), resolves CLI overrides, and writes CSV rows,
a text report and rendered figures under the output directory. Artifacts
embed the hash of the resolved config so runs are self-describing.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import experiments, kitti_io, metrics, plotting, theory
from .defense import DefenseConfig
from .metrics import clear, identify_track, perceived_centers
from .tracker import Tracker, TrackerConfig, profile, run_trace

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


class UserError(Exception):
    pass


DEFAULT_CONFIG = {
    "profile": "ab3dmot",
    "seed": 0,
    "out": "runs/out",
    "jobs": 1,
    "tracker": {
        "hit_count": 3,
        "reserved_age": 10,
        "iou_gate": 0.1,
        "sigma_scale": 1.0,
        "feature_weight": 0.5,
        "desk_scale": True,
    },
    "defense": {
        "enabled": True,
        "alpha_max": 0.95,
        "beta_trim": 0.05,
        "buffer_size": 200,
        "warmup_min": 30,
        "distribution": "gamma",
        "axis_aware": True,
        "outlier_aware": True,
        "elimination_mode": False,
    },
    "attack": {
        "hide_frames": 5,
        "lam": None,
        "lam_factor": 5.0,
        "poison": True,
        "alpha_values": [0.85, 0.90, 0.95, 0.99],
    },
    "input": {
        "kind": "synth",
        "kitti_dir": None,
        "classes": ["Car"],
        "synth": {"traces": 10, "frames": 120, "noise": 0.05, "extra_objects": 1},
    },
    "theory": {
        "T": 300,
        "trials": 100,
        "s_ratio": 0.02,
        "h_ratio": 0.10,
        "lam": 1.0,
        "delta_max": 0.1,
        "noise": 0.03,
        "layouts": ["optimal", "uniform", "random", "inverted"],
        "growth_T": [100, 200, 300, 400, 500],
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UserError(f"config file not found: {path}")
        try:
            cfg = _merge(cfg, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise UserError(f"config is not valid JSON: {exc}") from exc
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.profile is not None:
        cfg["profile"] = args.profile
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    if args.defense is not None:
        if args.defense == "off":
            cfg["defense"]["enabled"] = False
        elif args.defense == "on":
            cfg["defense"]["enabled"] = True
        else:
            cfg["defense"]["enabled"] = True
            mode = args.defense
            if mode == "gaussian":
                cfg["defense"]["distribution"] = "gaussian"
            elif mode == "elimination":
                cfg["defense"]["elimination_mode"] = True
            elif mode == "outlier_unaware":
                cfg["defense"]["outlier_aware"] = False
            elif mode == "axis_unaware":
                cfg["defense"]["axis_aware"] = False
            else:
                raise UserError(f"unknown defense mode {mode!r}")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def tracker_kwargs(cfg: dict) -> dict:
    base = profile(cfg["profile"], desk_scale=cfg["tracker"].get("desk_scale", True))
    return dict(dims=base.dims, matcher=base.matcher, scoring=base.scoring,
                hit_count=cfg["tracker"]["hit_count"],
                reserved_age=cfg["tracker"].get(
                    "reserved_age", base.reserved_age),
                iou_gate=cfg["tracker"]["iou_gate"],
                sigma_scale=cfg["tracker"]["sigma_scale"],
                feature_weight=cfg["tracker"]["feature_weight"])


def defense_kwargs(cfg: dict) -> dict:
    d = dict(cfg["defense"])
    d.pop("enabled", None)
    return d


def build_defense(cfg: dict):
    if not cfg["defense"].get("enabled", True):
        return None
    return DefenseConfig(**defense_kwargs(cfg))


def load_traces(cfg: dict):
    """(key, Trace) pairs from the configured input."""
    inp = cfg["input"]
    dims = TrackerConfig(**tracker_kwargs(cfg)).dims
    if inp["kind"] == "kitti":
        if not inp.get("kitti_dir"):
            raise UserError("input.kind is 'kitti' but input.kitti_dir is unset")
        root = Path(inp["kitti_dir"])
        if not root.is_dir():
            raise UserError(f"kitti directory not found: {root}")
        pairs = []
        for path in sorted(root.glob("*.txt")):
            trace = kitti_io.parse(path.read_text(),
                                   classes=tuple(inp.get("classes") or ()) or None,
                                   dims=dims)
            pairs.append((path.stem, trace))
        if not pairs:
            raise UserError(f"no .txt label files under {root}")
        return pairs
    synth_cfg = inp["synth"]
    seeds = [cfg["seed"] + k for k in range(synth_cfg.get("traces", 1))]
    return [(f"synth-{seed}",
             experiments.synth_attack_scenario(
                 seed, n_frames=synth_cfg["frames"], noise=synth_cfg["noise"],
                 dims=dims, n_extra=synth_cfg.get("extra_objects", 1)))
            for seed in seeds]


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_csv(path: Path, header, rows, cfg_hash: str):
    with path.open("w", newline="") as fh:
        fh.write(f"# config_sha256={cfg_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_report(path: Path, lines, cfg_hash: str):
    text = "\n".join([f"config_sha256 {cfg_hash}", *lines]) + "\n"
    path.write_text(text)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


# -- subcommands ----------------------------------------------------------------


def cmd_init_config(args) -> int:
    text = json.dumps(DEFAULT_CONFIG, indent=2) + "\n"
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        print(f"wrote reference config to {path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = load_config(args)
    chash = config_hash(cfg)
    out = _outdir(cfg)
    base = TrackerConfig(**tracker_kwargs(cfg), defense=build_defense(cfg))
    rows = []
    report_lines = []
    for key, trace in load_traces(cfg):
        results = run_trace(base, trace.frames)
        for res in results:
            for snap in res.snapshots:
                rows.append([key, res.frame, snap.track_id,
                             *(_fmt(float(v)) for v in snap.center),
                             *(_fmt(float(v)) for v in snap.velocity),
                             int(snap.confirmed), int(snap.matched)])
        if trace.gt_tracks:
            rep = clear(results, list(trace.gt_tracks.values()), dims=trace.dims)
            report_lines.append(
                f"{key}: mota={rep.mota:.4f} motp={rep.motp:.4f} "
                f"precision={rep.precision:.4f} recall={rep.recall:.4f} "
                f"f1={rep.f1:.4f} mt={rep.mt:.4f} ml={rep.ml:.4f}")
        first_gt = min(trace.gt_tracks) if trace.gt_tracks else None
        if first_gt is not None:
            gt = trace.gt_tracks[first_gt]
            try:
                tid = identify_track(results, gt)
                perceived = perceived_centers(results, tid)
                plotting.save_trajectory_overlay(
                    out / f"track_{key}.png",
                    (gt.frames, [float(gt.center_at(f)[0]) for f in gt.frames]),
                    {"perceived": ([f for f, _ in perceived],
                                   [float(c[0]) for _, c in perceived])})
            except metrics.NoTarget:
                pass
    axes = "xy" if base.dims == 2 else "xyz"
    header = ["trace", "frame", "track_id", *(f"c{a}" for a in axes),
              *(f"v{a}" for a in axes), "confirmed", "matched"]
    write_csv(out / "trajectories.csv", header, rows, chash)
    write_report(out / "track_report.txt", report_lines or ["no ground truth"], chash)
    print(f"wrote {out / 'trajectories.csv'}")
    return EXIT_OK


def cmd_attack_eval(args) -> int:
    cfg = load_config(args)
    chash = config_hash(cfg)
    out = _outdir(cfg)
    base = TrackerConfig(**tracker_kwargs(cfg))
    defense = DefenseConfig(**defense_kwargs(cfg))
    atk = cfg["attack"]
    pairs = load_traces(cfg)
    hide_frames = atk.get("hide_frames", 5)
    eval_rows = experiments.attack_eval_batch(
        pairs, tracker_kwargs(cfg), defense_kwargs(cfg), lam=atk.get("lam"),
        lam_factor=atk.get("lam_factor", 5.0), hide_frames=hide_frames,
        jobs=cfg.get("jobs", 1))
    rows = []
    for (key, trace), row in zip(pairs, eval_rows):
        rows.append([row.trace_key, row.attack_frame, _fmt(row.lam), row.axis,
                     _fmt(row.fd_max_off), _fmt(row.fd_avg_off),
                     _fmt(row.fd_max_on), _fmt(row.fd_avg_on),
                     row.lf_off, row.lf_on])
        _overlay_figure(out, trace, base, defense, row, hide_frames)
    header = ["trace", "attack_frame", "lambda", "axis",
              "fd_max_off", "fd_avg_off", "fd_max_on", "fd_avg_on",
              "lf_off", "lf_on"]
    write_csv(out / "attack_report.csv", header, rows, chash)

    fd_off = [r.fd_max_off for r in eval_rows]
    fd_on = [r.fd_max_on for r in eval_rows]
    lines = [
        f"traces {len(eval_rows)}",
        f"fd_max w/o defense: max={max(fd_off):.4f} avg={np.mean([r.fd_avg_off for r in eval_rows]):.4f}",
        f"fd_max w/ defense:  max={max(fd_on):.4f} avg={np.mean([r.fd_avg_on for r in eval_rows]):.4f}",
        f"lf w/o defense: max={max(r.lf_off for r in eval_rows)} avg={np.mean([r.lf_off for r in eval_rows]):.2f}",
        f"lf w/ defense:  max={max(r.lf_on for r in eval_rows)} avg={np.mean([r.lf_on for r in eval_rows]):.2f}",
    ]
    if eval_rows[0].verdicts_on is not None:
        for name in metrics.SAFETY_THRESHOLDS_M:
            n_off = sum(r.verdicts_off[name] for r in eval_rows)
            n_on = sum(r.verdicts_on[name] for r in eval_rows)
            lines.append(f"breaches {name}: w/o={n_off} w/={n_on}")
    write_report(out / "attack_report.txt", lines, chash)
    print("\n".join(lines))
    print(f"wrote {out / 'attack_report.csv'}")
    return EXIT_OK


def _overlay_figure(out: Path, trace, base, defense, row, hide_frames: int):
    """Perceived-vs-true trajectory figure, replayable plan document and
    deviation-buffer export for one evaluated trace."""
    gt = trace.gt_tracks[row.target]
    plan = experiments.two_phase_plan(row.target, row.attack_frame, row.lam,
                                      experiments.orthogonal_attack_direction(
                                          trace, row.target),
                                      hide_frames=hide_frames)
    (out / f"plan_{row.trace_key}.txt").write_text(plan.to_text())
    perturbed = experiments.apply_plan(trace, plan)
    series = {}
    for label, dcfg in (("attacked, no defense", None),
                        ("attacked, defended", defense)):
        results = run_trace(experiments._with_defense(base, dcfg),
                            perturbed.frames)
        try:
            tid = identify_track(results, gt, upto=row.attack_frame - 1)
        except metrics.NoTarget:
            continue
        perceived = perceived_centers(results, tid)
        series[label] = ([f for f, _ in perceived],
                         [float(c[row.axis]) for _, c in perceived])
    plotting.save_trajectory_overlay(
        out / f"overlay_{row.trace_key}.png",
        (gt.frames, [float(gt.center_at(f)[row.axis]) for f in gt.frames]),
        series, attack_start=row.attack_frame)

    defended = Tracker(experiments._with_defense(base, defense))
    for f, dets in enumerate(perturbed.frames):
        defended.step(f, dets)
    if defended.defense is not None:
        rows = defended.defense.export_rows()
        write_csv(out / f"deviations_{row.trace_key}.csv",
                  ["frame", "axis", "value"],
                  [[f, a, _fmt(v)] for f, a, v in rows], "buffer-snapshot")
        plotting.save_deviation_histogram(
            out / f"deviations_{row.trace_key}.png", rows,
            defended.defense_thresholds())


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    chash = config_hash(cfg)
    out = _outdir(cfg)
    base = TrackerConfig(**tracker_kwargs(cfg))
    defense = DefenseConfig(**defense_kwargs(cfg))
    atk = cfg["attack"]
    all_rows = []
    for key, trace in load_traces(cfg):
        rows = experiments.ablation_table(
            trace, base, defense, lam=atk.get("lam"),
            lam_factor=atk.get("lam_factor", 5.0),
            hide_frames=atk.get("hide_frames", 5),
            poison=atk.get("poison", True),
            alpha_values=tuple(atk.get("alpha_values", (0.85, 0.90, 0.95, 0.99))))
        all_rows.extend([key, r.mode, _fmt(r.fd_max), _fmt(r.fd_avg),
                         _fmt(r.mota), _fmt(r.f1)] for r in rows)
        plotting.save_metric_bars(out / f"ablation_{key}.png",
                                  [r.mode for r in rows],
                                  [r.fd_max for r in rows],
                                  title=f"FD max by defense variant ({key})")
    write_csv(out / "ablation.csv",
              ["trace", "mode", "fd_max", "fd_avg", "mota", "f1"],
              all_rows, chash)
    write_report(out / "ablation.txt",
                 [" ".join(str(c) for c in row) for row in all_rows], chash)
    print(f"wrote {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_theory(args) -> int:
    cfg = load_config(args)
    chash = config_hash(cfg)
    out = _outdir(cfg)
    tcfg = cfg["theory"]
    sim_cfg = theory.SimConfig(T=tcfg["T"], trials=tcfg["trials"],
                               s_ratio=tcfg["s_ratio"], h_ratio=tcfg["h_ratio"],
                               lam=tcfg["lam"], delta_max=tcfg["delta_max"],
                               noise=tcfg["noise"], seed=cfg["seed"])
    reports = []
    for layout in tcfg["layouts"]:
        from dataclasses import replace as dc_replace
        reports.append(theory.simulate(dc_replace(sim_cfg, layout=layout)))
    rows = [[trial, layout, T, _fmt(d10), _fmt(d01), _fmt(d11)]
            for trial, layout, T, d10, d01, d11 in theory.report_rows(reports)]
    write_csv(out / "theory.csv", ["trial", "layout", "T", "d10", "d01", "d11"],
              rows, chash)

    lines = [f"beta_estimate {reports[0].beta_estimate:.4f}"]
    for rep in reports:
        lines.append(f"layout={rep.layout} mean_d10={rep.mean_d10:.4f} "
                     f"mean_d01={rep.mean_d01:.6f} mean_d11={rep.mean_d11:.4f} "
                     f"ratio={rep.ratio:.2f}")
    fit = theory.growth_fit(sim_cfg, tcfg.get("growth_T", [100, 200, 300, 400, 500]))
    lines.append(f"growth slope_no_defense={fit.slope_d10:.4f} r2={fit.r2_d10:.4f}")
    lines.append(f"growth slope_defended={fit.slope_d11:.4f} r2={fit.r2_d11:.4f}")
    lines.append(f"growth slope_ratio={fit.slope_ratio:.2f}")
    write_report(out / "theory.txt", lines, chash)
    plotting.save_growth_curves(out / "theory_growth.png", fit.hide_lengths,
                                {"no defense": fit.mean_d10,
                                 "defended": fit.mean_d11})
    plotting.save_metric_bars(out / "theory_layouts.png",
                              [r.layout for r in reports],
                              [r.mean_d10 for r in reports],
                              ylabel="mean terminal deviation",
                              title="schedule layout comparison")
    print("\n".join(lines))
    print(f"wrote {out / 'theory.csv'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_config(args)
    chash = config_hash(cfg)
    out = _outdir(cfg)
    base = TrackerConfig(**tracker_kwargs(cfg))
    defense = DefenseConfig(**defense_kwargs(cfg))
    rows = []
    lines = []
    for key, trace in load_traces(cfg):
        row = experiments.bench_trace(trace, base, defense, trace_key=key)
        rows.append([row.trace_key, row.n_frames, _fmt(row.time_off),
                     _fmt(row.fps_off), _fmt(row.time_on), _fmt(row.fps_on)])
        lines.append(f"{row.trace_key}: frames={row.n_frames} "
                     f"off={row.time_off:.3f}s ({row.fps_off:.1f} fps) "
                     f"on={row.time_on:.3f}s ({row.fps_on:.1f} fps)")
    write_csv(out / "bench.csv",
              ["trace", "frames", "time_off", "fps_off", "time_on", "fps_on"],
              rows, chash)
    write_report(out / "bench.txt", lines, chash)
    print("\n".join(lines))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motshield",
                     description="Multi-object tracking workbench with hijack "
                                 "simulation and a deviation-clipping defense")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "init-config": cmd_init_config,
        "track": cmd_track,
        "attack-eval": cmd_attack_eval,
        "ablate": cmd_ablate,
        "theory": cmd_theory,
        "bench": cmd_bench,
    }
    for name, func in commands.items():
        p = sub.add_parser(name)
        p.set_defaults(func=func)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--profile", default=None,
                       choices=["jia2d", "apollo2d", "ab3dmot", "apollo3d"])
        p.add_argument("--defense", default=None,
                       help="on | off | gaussian | elimination | "
                            "outlier_unaware | axis_unaware")
        p.add_argument("--jobs", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
