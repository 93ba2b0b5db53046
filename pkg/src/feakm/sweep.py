"""Noise sweeps: AP versus pose-noise level for several pipeline variants.

Each (level, trial) work item derives its scene seed from the sweep seed
and its indices alone, and results are merged in (level, trial) order, so the
output does not depend on how many workers ran it.
"""
from __future__ import annotations

import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .align import Status
from .evaluation import ap_from_flags, match_detections
from .geometry import PoseNoiseSpec
from .pipeline import PipelineConfig, Toggles, Trial
from .scene import SceneConfig, generate_scene

# (0,0), (0,0.2), then (0.4,0.4) ... (2.0,2.0)
DEFAULT_NOISE_LEVELS = [(0.0, 0.0), (0.0, 0.2)] + [(round(0.2 * k, 1), round(0.2 * k, 1)) for k in range(2, 11)]

CSV_COLUMNS = [
    "sigma_t", "sigma_r", "toggles", "ap50", "ap70", "mean_pairs",
    "n_consistent", "n_deviant", "n_unverifiable", "t_err_m", "r_err_deg", "failures",
]


def default_toggle_sets(k_pairs: int = 4, confidence_map: bool = True, multiscale: bool = True, correction: bool = True):
    """Main variant plus the no-correction and oracle reference curves."""
    sets = []
    if correction:
        sets.append(Toggles("corrected", confidence_map, multiscale, k_pairs))
    sets.append(Toggles("reported", confidence_map, multiscale, k_pairs))
    sets.append(Toggles("true", confidence_map, multiscale, k_pairs))
    return sets


def ablation_toggle_sets(k_pairs: int = 4):
    """Confidence map x multiscale, corrected, plus both reference curves."""
    sets = [Toggles("corrected", conf, ms, k_pairs) for conf in (False, True) for ms in (False, True)]
    return sets + [Toggles("reported", True, True, k_pairs), Toggles("true", True, True, k_pairs)]


@dataclass(frozen=True)
class SweepConfig:
    noise_levels: tuple = tuple(DEFAULT_NOISE_LEVELS)
    trials_per_level: int = 30
    scene: SceneConfig = field(default_factory=SceneConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    toggle_sets: tuple = tuple(default_toggle_sets())
    seed: int = 0

    def __post_init__(self):
        if not self.noise_levels:
            raise ValueError("sweep.noise_levels must be non-empty")
        if self.trials_per_level < 1:
            raise ValueError("sweep.trials_per_level must be at least 1")
        for st, sr in self.noise_levels:
            if st < 0 or sr < 0:
                raise ValueError("sweep.noise_levels must be non-negative")
        if not self.toggle_sets:
            raise ValueError("sweep.toggle_sets must be non-empty")


@dataclass
class VariantTrial:
    """Per-trial, per-variant record; AP is pooled later."""

    scores: list
    tp50: list
    tp70: list
    n_gt: int
    pairs: list
    statuses: list
    t_err: list
    r_err: list


@dataclass
class SweepRow:
    sigma_t: float
    sigma_r: float
    toggles: str
    ap50: float
    ap70: float
    mean_pairs: float
    n_consistent: int
    n_deviant: int
    n_unverifiable: int
    t_err_m: float
    r_err_deg: float
    failures: int


@dataclass
class SweepResult:
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(
                f"{r.sigma_t:.2f},{r.sigma_r:.2f},{r.toggles},{r.ap50:.6f},{r.ap70:.6f},{r.mean_pairs:.4f},"
                f"{r.n_consistent},{r.n_deviant},{r.n_unverifiable},{r.t_err_m:.6f},{r.r_err_deg:.6f},{r.failures}\n"
            )
        return buf.getvalue()

    def row(self, toggles: str, level) -> SweepRow:
        for r in self.rows:
            if r.toggles == toggles and (r.sigma_t, r.sigma_r) == tuple(level):
                return r
        raise KeyError((toggles, level))

    def series(self, toggles: str, metric: str = "ap50"):
        return [getattr(r, metric) for r in self.rows if r.toggles == toggles]


def trial_seed(seed: int, level_index: int, trial_index: int) -> int:
    return int(np.random.SeedSequence([int(seed), level_index, trial_index]).generate_state(1, dtype=np.uint64)[0])


def run_trial(cfg: SweepConfig, level_index: int, trial_index: int):
    """One scene through every variant. Returns a list of VariantTrial, or an error string."""
    st, sr = cfg.noise_levels[level_index]
    seed = trial_seed(cfg.seed, level_index, trial_index)
    scene_cfg = replace(cfg.scene, noise=PoseNoiseSpec(st, sr, seed))
    try:
        trial = Trial(generate_scene(scene_cfg, seed), cfg.pipeline)
        out = []
        for t in cfg.toggle_sets:
            o = trial.run(t)
            order = sorted(range(len(o.detections)), key=lambda k: -o.detections[k].score)
            dets = [o.detections[k] for k in order]
            out.append(VariantTrial(
                scores=[d.score for d in dets],
                tp50=list(match_detections(dets, o.ground_truth, 0.5)),
                tp70=list(match_detections(dets, o.ground_truth, 0.7)),
                n_gt=len(o.ground_truth),
                pairs=[lk.pairs for lk in o.links],
                statuses=[lk.status for lk in o.links],
                t_err=[lk.t_err for lk in o.links],
                r_err=[lk.r_err_deg for lk in o.links],
            ))
        return out
    except Exception as exc:  # recorded per trial, never fatal to the sweep
        return f"{type(exc).__name__}: {exc}"


def _run_item(args):
    cfg, li, ti = args
    return run_trial(cfg, li, ti)


def run_sweep(cfg: SweepConfig, workers: int | None = 1, progress=None) -> SweepResult:
    items = [(cfg, li, ti) for li in range(len(cfg.noise_levels)) for ti in range(cfg.trials_per_level)]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1:
        results = []
        for it in items:
            results.append(_run_item(it))
            if progress:
                progress(len(results), len(items))
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_item, items, chunksize=max(1, len(items) // (4 * workers))))

    rows = []
    per_level = cfg.trials_per_level
    for li, (st, sr) in enumerate(cfg.noise_levels):
        chunk = results[li * per_level:(li + 1) * per_level]
        ok = [r for r in chunk if not isinstance(r, str)]
        failures = len(chunk) - len(ok)
        for vi, t in enumerate(cfg.toggle_sets):
            recs = [r[vi] for r in ok]
            rows.append(_aggregate(st, sr, t.label, recs, failures))
    return SweepResult(rows)


def _pooled_ap(recs, key: str) -> float:
    scores, flags, n_gt = [], [], 0
    for r in recs:
        scores.extend(r.scores)
        flags.extend(getattr(r, key))
        n_gt += r.n_gt
    return ap_from_flags(scores, flags, n_gt)


def _aggregate(st, sr, label, recs, failures) -> SweepRow:
    statuses = [s for r in recs for s in r.statuses]
    pairs = [p for r in recs for p in r.pairs]
    t_err = [e for r in recs for e in r.t_err]
    r_err = [e for r in recs for e in r.r_err]
    return SweepRow(
        sigma_t=st,
        sigma_r=sr,
        toggles=label,
        ap50=_pooled_ap(recs, "tp50") if recs else 0.0,
        ap70=_pooled_ap(recs, "tp70") if recs else 0.0,
        mean_pairs=float(np.mean(pairs)) if pairs else 0.0,
        n_consistent=sum(s is Status.CONSISTENT for s in statuses),
        n_deviant=sum(s is Status.DEVIANT for s in statuses),
        n_unverifiable=sum(s is Status.UNVERIFIABLE for s in statuses),
        t_err_m=float(np.mean(t_err)) if t_err else 0.0,
        r_err_deg=float(np.mean(r_err)) if r_err else 0.0,
        failures=failures,
    )


def plot_sweep_svg(result: SweepResult, path, metric: str = "ap50") -> None:
    """AP versus noise level, one line per variant."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "feakm"
    labels = list(dict.fromkeys(r.toggles for r in result.rows))
    fig, ax = plt.subplots(figsize=(7, 4))
    for lab in labels:
        rows = [r for r in result.rows if r.toggles == lab]
        ax.plot(range(len(rows)), [getattr(r, metric) for r in rows], marker="o", label=lab)
        ticks = [f"{r.sigma_t:g}/{r.sigma_r:g}" for r in rows]
    ax.set_xticks(range(len(ticks)))
    ax.set_xticklabels(ticks, rotation=45)
    ax.set_xlabel("pose noise sigma_t (m) / sigma_r (deg)")
    ax.set_ylabel(metric.upper().replace("AP", "AP@0."))
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
