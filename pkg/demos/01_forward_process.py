"""The forward corruption process and its algebraic inversion.

Builds the 1000-step linear-beta schedule, checks the signal/noise identity,
then noises one synthetic image at several timesteps and recovers it with
the true noise. Writes a strip of the noised images as demo_out/forward.pgm.
"""

from pathlib import Path

import numpy as np

from rcldt.data import SyntheticSpec, generate_synthetic, write_pgm
from rcldt.schedule import build_schedule, noise, predict_z0

out_dir = Path(__file__).parent / "demo_out"
out_dir.mkdir(exist_ok=True)

s = build_schedule(1000)
print(f"T = {s.T}")
print(f"max |gamma^2 + delta^2 - 1| = {np.abs(s.gamma**2 + s.delta**2 - 1).max():.2e}")
print(f"gamma: {s.gamma[0]:.4f} -> {s.gamma[-1]:.4f}   "
      f"delta: {s.delta[0]:.4f} -> {s.delta[-1]:.4f}")

ds = generate_synthetic(SyntheticSpec(n_images=1, blob_probability=1.0, seed=4))
z0 = ds.image(0)
rng = np.random.default_rng(0)

strip = [z0]
for t in (50, 200, 400, 600, 800, 999):
    eps = rng.standard_normal(z0.shape)
    zt = noise(s, z0, t, eps)
    recovered = predict_z0(s, zt, eps, t)
    print(f"t={t:3d}: signal {s.gamma[t]:.3f}  noise {s.delta[t]:.3f}  "
          f"round-trip err {np.abs(recovered - z0).max():.2e}")
    strip.append(np.clip(zt, -1, 1))

write_pgm(out_dir / "forward.pgm", np.concatenate([im[0] for im in strip], axis=1))
print(f"wrote {out_dir / 'forward.pgm'}")
