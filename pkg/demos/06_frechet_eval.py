"""Feature-space Fréchet distance with the pretrained encoder.

The encoder learned during pretraining doubles as the feature extractor:
two samples of the same synthetic distribution should sit close together,
a shifted distribution farther away, and generated images somewhere in
between depending on training quality. Absolute values depend on the
feature extractor, so only comparisons under the same encoder mean
anything.

Run demo 02 first.
"""

from pathlib import Path

import numpy as np

from rcldt.data import SyntheticSpec, generate_synthetic
from rcldt.metrics import extract_features, frechet_distance
from rcldt.sampler import sample
from rcldt.training import load_checkpoint

out_dir = Path(__file__).parent / "demo_out"
ckpt_path = out_dir / "representation" / "checkpoint.bin"
if not ckpt_path.exists():
    raise SystemExit("run demos/02_pretrain_micro.py first")

ckpt = load_checkpoint(ckpt_path)
schedule = ckpt.build_schedule()


def synth(seed, p=0.4):
    return generate_synthetic(SyntheticSpec(
        n_images=64, image_size=16, blob_probability=p,
        blob_radius_range=(2.0, 3.5), noise_sigma=0.03, seed=seed))


real_a, real_b = synth(seed=20), synth(seed=21)
all_blobs = synth(seed=22, p=1.0)

# feature scale depends on the encoder head, so report in scientific
# notation and judge ratios, not absolute values
f_a = extract_features(ckpt, real_a)
f_b = extract_features(ckpt, real_b)
f_blob = extract_features(ckpt, all_blobs)
same = frechet_distance(f_a, f_b)
shifted = frechet_distance(f_a, f_blob)
print(f"same distribution, fresh draw : {same:.3e}")
print(f"vs all-blob distribution      : {shifted:.3e}  ({shifted / same:.1f}x)")

generated = sample(ckpt, schedule, n=64, seed=30, ref_images=real_b.stack())
f_gen = extract_features(ckpt, generated)
gen_fd = frechet_distance(f_a, f_gen)
print(f"vs generated images           : {gen_fd:.3e}  ({gen_fd / same:.1f}x)")

# how far apart the encoder puts the two classes it was never told about
labels = np.array(real_a.labels)
if labels.min() != labels.max():
    mu0 = f_a[labels == 0].mean(axis=0)
    mu1 = f_a[labels == 1].mean(axis=0)
    within = 0.5 * (np.linalg.norm(f_a[labels == 0] - mu0, axis=1).mean()
                    + np.linalg.norm(f_a[labels == 1] - mu1, axis=1).mean())
    print(f"between-class mean distance   : {np.linalg.norm(mu0 - mu1):.3e} "
          f"(within-class spread {within:.3e})")
