"""Zero-shot classification with the frozen tuned checkpoint.

For each held-out image the classifier draws a fixed set of (timestep,
noise) pairs, asks the denoiser for a prediction under every candidate
label, reconstructs the clean image from each prediction, and picks the
label whose reconstructions stay closest to the input. The noise-space
baseline scores the same predictions against the drawn noise instead; both
reports are printed side by side.

Run demos 02 and 03 first.
"""

from pathlib import Path

from rcldt.classifier import ClassifierConfig, evaluate
from rcldt.data import SyntheticSpec, generate_synthetic
from rcldt.training import load_checkpoint

out_dir = Path(__file__).parent / "demo_out"
ckpt_path = out_dir / "finetuned" / "checkpoint.bin"
if not ckpt_path.exists():
    raise SystemExit("run demos/02 and 03 first")

ckpt = load_checkpoint(ckpt_path)
schedule = ckpt.build_schedule()
heldout = generate_synthetic(SyntheticSpec(
    n_images=40, image_size=16, blob_probability=0.4,
    blob_radius_range=(2.0, 3.5), noise_sigma=0.03, seed=2), split="test")
majority = max(sum(heldout.labels), len(heldout) - sum(heldout.labels)) / len(heldout)
print(f"held-out set: {len(heldout)} images, majority-class rate {majority:.2f}")

for space in ("z0", "epsilon"):
    cfg = ClassifierConfig(num_mc_samples=16, t_strategy="stratified",
                           seed=0, scoring_space=space)
    rep = evaluate(ckpt, schedule, heldout, cfg)
    print(f"{space:8s}: accuracy {rep.accuracy:.3f}  f1 {rep.f1:.3f}  "
          f"recall {rep.recall:.3f}  precision {rep.precision:.3f}")
    rep.to_json(out_dir / f"report_{space}.json")

print(f"reports written to {out_dir}/report_z0.json and report_epsilon.json")
