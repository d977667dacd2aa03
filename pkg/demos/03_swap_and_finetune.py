"""Downstream adaptation: swap the conditioning pathway, then tune on labels.

Loads the pretrained representation-conditioned checkpoint from demo 02
(run that first), replaces its encoder pathway with a zero-initialized
two-class embedding table, and fine-tunes on a labeled split. At swap time
the class table is all zeros, so the swapped model starts out behaving
exactly like the unconditional model with the same weights.
"""

from pathlib import Path

from rcldt.conditioning import swap_conditioning
from rcldt.data import SyntheticSpec, generate_synthetic
from rcldt.training import TrainConfig, finetune, load_checkpoint

out_dir = Path(__file__).parent / "demo_out"
pre_path = out_dir / "representation" / "checkpoint.bin"
if not pre_path.exists():
    raise SystemExit("run demos/02_pretrain_micro.py first")

ckpt = load_checkpoint(pre_path)
print(f"loaded {pre_path.name}: mode={ckpt.config.conditioning}, step={ckpt.step}")

swapped = swap_conditioning(ckpt, "class", num_classes=2)
shared = sum(1 for n in swapped.tensors if n in ckpt.tensors)
print(f"swap: {shared} shared tensors carried over, step reset to {swapped.step}, "
      f"class table shape {swapped.tensors['denoiser.class_embed.table'].shape}")

labeled = generate_synthetic(SyntheticSpec(
    n_images=96, image_size=16, blob_probability=0.4,
    blob_radius_range=(2.0, 3.5), noise_sigma=0.03, seed=1))
train = labeled.subset(range(16, 96), split="train")
valid = labeled.subset(range(16), split="valid")

cfg = TrainConfig(batch_size=8, lr=3e-4, steps=300, seed=0, loss_log_every=20)
tuned, curve, val_curve = finetune(ckpt, cfg, train, valid_set=valid,
                                   num_classes=2, out_dir=out_dir / "finetuned")
print(f"train loss {curve.losses[0]:.4f} -> {curve.losses[-1]:.4f}")
print("validation per epoch:", ", ".join(f"{v:.4f}" for v in val_curve.losses))
print(f"tuned checkpoint under {out_dir / 'finetuned'}")
