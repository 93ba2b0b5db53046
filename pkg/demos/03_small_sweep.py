"""A reduced noise sweep comparing corrected, uncorrected and oracle poses.

The full default sweep (30 trials at each of 11 noise levels) takes a few
minutes on one core; this version runs 6 trials at 4 levels. Pass an output
path to also write an SVG plot (needs matplotlib).

    python demos/03_small_sweep.py [plot.svg]
"""
import os
import sys

from feakm.sweep import SweepConfig, plot_sweep_svg, run_sweep

cfg = SweepConfig(noise_levels=((0.0, 0.0), (0.6, 0.6), (1.2, 1.2), (2.0, 2.0)), trials_per_level=6)
result = run_sweep(cfg, workers=os.cpu_count())
labels = [t.label for t in cfg.toggle_sets]
print("sigma_t sigma_r  " + "  ".join(f"{lab:>22}" for lab in labels))
for level in cfg.noise_levels:
    print(f"{level[0]:7.1f} {level[1]:7.1f}  " + "  ".join(f"{result.row(lab, level).ap50:22.3f}" for lab in labels))
if len(sys.argv) > 1:
    plot_sweep_svg(result, sys.argv[1])
    print(f"plot written to {sys.argv[1]}")
