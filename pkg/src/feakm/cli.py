"""Command-line driver: ``feakm {simulate,sweep,match,report}``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config
from .evaluation import average_precision
from .geometry import Pose, transform_difference
from .matcher import MatchFailure
from .pipeline import Toggles, Trial
from .protocol import bandwidth_report, write_message
from .scene import SceneGenerationError, generate_scene
from .sweep import SweepResult, SweepRow, plot_sweep_svg, run_sweep


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the run (or sweep) seed")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
    common.add_argument("--k-pairs", type=int, choices=(4, 8), default=None, help="minimum matched pairs")
    common.add_argument("--no-correction", action="store_true", help="use reported poses as-is")
    common.add_argument("--no-confidence-map", action="store_true", help="keypoints from raw feature magnitude")
    common.add_argument("--no-multiscale", action="store_true", help="single-scale fusion")
    common.add_argument("--plot", action="store_true", help="write SVG charts")

    p = argparse.ArgumentParser(prog="feakm", description="Keypoint-matching pose rectification on synthetic BEV scenes.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one scene end to end")
    sw = sub.add_parser("sweep", parents=[common], help="AP versus pose-noise sweep")
    sw.add_argument("--toggle", choices=("default", "ablation"), default=None, help="variant grid")
    m = sub.add_parser("match", parents=[common], help="match and align one agent pair")
    m.add_argument("--dump-assignment", action="store_true", help="write the assignment matrix as CSV")
    r = sub.add_parser("report", parents=[common], help="summarize a sweep CSV / plot debug dumps")
    r.add_argument("csv", nargs="?", type=Path, default=None, help="sweep CSV (default: <out>/sweep.csv)")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else load_config(None)
    run, sweep, matcher, toggle = cfg.run, cfg.sweep, cfg.matcher, cfg.toggle
    if args.seed is not None:
        run = replace(run, seed=args.seed)
        sweep = replace(sweep, seed=args.seed)
    if args.out is not None:
        run = replace(run, output_dir=str(args.out))
    if args.workers is not None:
        if args.workers < 0:
            raise ConfigError("run.workers", "must be non-negative")
        run = replace(run, workers=args.workers)
    if args.plot:
        run = replace(run, plot=True)
    if args.k_pairs is not None:
        matcher = replace(matcher, k_pairs=args.k_pairs)
    if getattr(args, "toggle", None):
        sweep = replace(sweep, toggles=args.toggle)
    toggle = replace(
        toggle,
        correction=toggle.correction and not args.no_correction,
        confidence_map=toggle.confidence_map and not args.no_confidence_map,
        multiscale=toggle.multiscale and not args.no_multiscale,
    )
    return replace(cfg, run=run, sweep=sweep, matcher=matcher, toggle=toggle)


def _variant(cfg: RunConfig) -> Toggles:
    t = cfg.toggle
    return Toggles("corrected" if t.correction else "reported", t.confidence_map, t.multiscale, cfg.matcher.k_pairs)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    return out


def cmd_simulate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    scene = generate_scene(cfg.scene_config(), cfg.run.seed)
    trial = Trial(scene, cfg.pipeline_config())
    variant = _variant(cfg)
    res = trial.run(variant, keep_levels=True)
    (out / "scene.jsonl").write_text(scene.to_jsonl())

    with open(out / "detections.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cx", "cy", "length", "width", "yaw", "score"])
        for b in sorted(res.detections, key=lambda b: -b.score):
            w.writerow([f"{b.cx:.4f}", f"{b.cy:.4f}", f"{b.length:.4f}", f"{b.width:.4f}", f"{b.yaw:.6f}", f"{b.score:.6f}"])

    with open(out / "alignment.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "status", "pairs", "inliers", "rms_residual", "angle_deg", "tx", "ty", "t_err_m", "r_err_deg"])
        for lk in res.links:
            al = lk.alignment
            tf = al.transform if al is not None else None
            w.writerow([
                lk.agent,
                lk.status.value if lk.status else "",
                lk.pairs,
                len(al.inliers) if al else 0,
                f"{al.rms_residual:.6f}" if al else "",
                f"{math.degrees(tf.angle):.6f}" if tf else "",
                f"{tf.translation[0]:.6f}" if tf else "",
                f"{tf.translation[1]:.6f}" if tf else "",
                f"{lk.t_err:.6f}",
                f"{lk.r_err_deg:.6f}",
            ])

    msgs_dir = out / "messages"
    msgs_dir.mkdir(exist_ok=True)
    msgs = []
    for a in range(scene.n_agents):
        m = trial.message(a, variant.confidence_map)
        write_message(msgs_dir / f"agent{a}.fkm", m)
        msgs.append(m)

    levels = res.fused.levels
    np.savez(out / "fused_levels.npz", **{f"level{k + 1}": lv for k, lv in enumerate(levels)}, fused=res.fused.grid.data)

    summary = {
        "seed": cfg.run.seed,
        "variant": variant.label,
        "ap50": average_precision(res.detections, res.ground_truth, 0.5),
        "ap70": average_precision(res.detections, res.ground_truth, 0.7),
        "detections": len(res.detections),
        "ground_truth": len(res.ground_truth),
        "bandwidth": {str(k): v for k, v in bandwidth_report(msgs)["per_agent"].items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{variant.label}: AP@0.5={summary['ap50']:.3f} AP@0.7={summary['ap70']:.3f} -> {out}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    scfg = cfg.sweep_config()
    workers = cfg.run.workers or None

    def progress(done, total):
        if done % max(1, total // 20) == 0 or done == total:
            print(f"  {done}/{total} trials", file=sys.stderr)

    result = run_sweep(scfg, workers=workers, progress=progress)
    (out / "sweep.csv").write_text(result.to_csv())
    if cfg.run.plot:
        plot_sweep_svg(result, out / "sweep.svg")
    print(_format_table(result))
    return 0


def cmd_match(cfg: RunConfig, dump_assignment: bool = False) -> int:
    scene = generate_scene(cfg.scene_config(), cfg.run.seed)
    j = cfg.match.agent
    dx, dy, dyaw = cfg.match.corruption
    if dx or dy or dyaw:
        p = scene.agent_poses_reported[j]
        reported = list(scene.agent_poses_reported)
        reported[j] = Pose.planar(p.x + dx, p.y + dy, p.yaw + math.radians(dyaw))
        scene = replace(scene, agent_poses_reported=reported)
    trial = Trial(scene, cfg.pipeline_config())
    matches, assignment, res, _ = trial.link(j, cfg.toggle.confidence_map, cfg.matcher.k_pairs)
    dt, dr = transform_difference(res.transform, trial.true_transform(j))
    pairs = 0 if isinstance(matches, MatchFailure) else len(matches)
    print(f"pairs: {pairs}")
    print(f"status: {res.status.value}")
    print(f"transform error: {dt:.4f} m, {math.degrees(dr):.4f} deg")
    if dump_assignment:
        out = _outdir(cfg)
        (out / "assignment.csv").write_text(assignment.to_csv())
        print(f"assignment -> {out / 'assignment.csv'}")
    return 0


def read_sweep_csv(path) -> SweepResult:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(SweepRow(
                float(rec["sigma_t"]), float(rec["sigma_r"]), rec["toggles"],
                float(rec["ap50"]), float(rec["ap70"]), float(rec["mean_pairs"]),
                int(rec["n_consistent"]), int(rec["n_deviant"]), int(rec["n_unverifiable"]),
                float(rec["t_err_m"]), float(rec["r_err_deg"]), int(rec["failures"]),
            ))
    return SweepResult(rows)


def _format_table(result: SweepResult, metric: str = "ap50") -> str:
    labels = list(dict.fromkeys(r.toggles for r in result.rows))
    levels = list(dict.fromkeys((r.sigma_t, r.sigma_r) for r in result.rows))
    width = max(len(lab) for lab in labels) + 2
    head = f"{metric:<{width}}" + "".join(f"{st:g}/{sr:g}".rjust(9) for st, sr in levels)
    lines = [head]
    for lab in labels:
        vals = {(r.sigma_t, r.sigma_r): getattr(r, metric) for r in result.rows if r.toggles == lab}
        lines.append(f"{lab:<{width}}" + "".join(f"{vals.get(lv, float('nan')):9.3f}" for lv in levels))
    return "\n".join(lines)


def cmd_report(cfg: RunConfig, csv_path=None) -> int:
    out = Path(cfg.run.output_dir)
    path = Path(csv_path) if csv_path else out / "sweep.csv"
    if path.exists():
        result = read_sweep_csv(path)
        print(_format_table(result, "ap50"))
        print()
        print(_format_table(result, "ap70"))
        if cfg.run.plot:
            plot_sweep_svg(result, path.with_suffix(".svg"))
    dump = out / "fused_levels.npz"
    if cfg.run.plot and dump.exists():
        _plot_levels(dump, out / "fused_levels.svg")
    if not path.exists() and not dump.exists():
        print(f"nothing to report in {out}", file=sys.stderr)
        return 1
    return 0


def _plot_levels(npz_path, svg_path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "feakm"
    data = np.load(npz_path)
    keys = sorted(k for k in data.files if k.startswith("level")) + ["fused"]
    fig, axes = plt.subplots(len(keys), 1, figsize=(8, 2.2 * len(keys)))
    for ax, k in zip(np.atleast_1d(axes), keys):
        ax.imshow(np.linalg.norm(data[k], axis=-1), origin="lower", cmap="magma")
        ax.set_title(k)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "match":
            return cmd_match(cfg, args.dump_assignment)
        return cmd_report(cfg, args.csv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SceneGenerationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
