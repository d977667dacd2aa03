"""Sampling, partial denoising, and the prediction-vs-timestep sweep.

Three ways to drive the reverse process with the pretrained demo checkpoint:
full ancestral sampling from pure noise, reconstruction from an intermediate
noising level (which keeps generations comparable to a reference image), and
a sweep that shows how the one-shot clean-image prediction degrades as the
injected timestep grows. All images land in demo_out/.

Run demo 02 first.
"""

from pathlib import Path

import numpy as np

from rcldt.data import SyntheticSpec, generate_synthetic
from rcldt.sampler import (partial_denoise, sample, save_image_set,
                           save_sweep_grid, z0_prediction_sweep)
from rcldt.training import load_checkpoint

out_dir = Path(__file__).parent / "demo_out"
ckpt_path = out_dir / "representation" / "checkpoint.bin"
if not ckpt_path.exists():
    raise SystemExit("run demos/02_pretrain_micro.py first")

ckpt = load_checkpoint(ckpt_path)
schedule = ckpt.build_schedule()
heldout = generate_synthetic(SyntheticSpec(
    n_images=8, image_size=16, blob_probability=1.0,
    blob_radius_range=(2.0, 3.5), noise_sigma=0.03, seed=3), split="test")
refs = heldout.stack()

print(f"sampling {len(refs)} images from pure noise ({schedule.T} steps)...")
samples = sample(ckpt, schedule, n=len(refs), seed=11, ref_images=refs)
save_image_set(samples, out_dir / "samples", "sample",
               [(11, schedule.T - 1, "representation")] * len(refs))

t_start = schedule.T // 5
recon = partial_denoise(ckpt, schedule, refs, t_start=t_start, seed=12)
err = float(np.mean((recon - refs) ** 2))
print(f"partial denoise from t={t_start}: mean squared error vs originals {err:.4f}")
save_image_set(recon, out_dir / "recon", "recon",
               [(12, t_start, "representation")] * len(refs))

t_list = [int(f * schedule.T) for f in (0.1, 0.3, 0.5, 0.7, 0.9)]
sweep = z0_prediction_sweep(ckpt, schedule, refs[:1], t_list, seed=13)
for t, _, z0p in sweep:
    print(f"  t={t:3d}: prediction error {float(np.mean((z0p - refs[:1])**2)):.4f}")
save_sweep_grid(sweep, out_dir / "sweep_grid.pgm")
print(f"images under {out_dir}/samples, {out_dir}/recon, grid at sweep_grid.pgm")
