import numpy as np
import pytest

from rcldt.config import micro_8
from rcldt.errors import ConfigError, InputError
from rcldt.metrics import (classification_metrics, extract_features,
                           frechet_distance)
from rcldt.training import TrainConfig, init_model, model_to_checkpoint
from oracles import naive_frechet


# ---------------------------------------------------------------------------
# classification metrics


def labels_from_counts(tp, fn, fp, tn):
    y_true = [1] * (tp + fn) + [0] * (fp + tn)
    y_pred = [1] * tp + [0] * fn + [1] * fp + [0] * tn
    return y_true, y_pred


def test_reported_row_reconstruction():
    # 179 test items, 28 positives: counts (21, 7, 2, 149)
    y_true, y_pred = labels_from_counts(21, 7, 2, 149)
    rep = classification_metrics(y_true, y_pred, positive_class=1)
    assert rep.precision == pytest.approx(0.9130, abs=5e-5)
    assert rep.recall == pytest.approx(0.7500, abs=1e-12)
    assert rep.f1 == pytest.approx(0.8235, abs=1e-4)
    assert rep.accuracy == pytest.approx(0.9497, abs=5e-4)
    assert rep.counts == {"tp": 21, "fp": 2, "fn": 7, "tn": 149}
    assert rep.n == 179


def test_perfect_predictions():
    rep = classification_metrics([0, 1, 1, 0], [0, 1, 1, 0])
    assert rep.accuracy == 1.0 and rep.f1 == 1.0
    assert rep.precision == 1.0 and rep.recall == 1.0


def test_degenerate_no_positive_predictions_flagged():
    rep = classification_metrics([1, 1, 0], [0, 0, 0], positive_class=1)
    assert rep.precision == 0.0
    assert rep.f1 == 0.0
    assert any("precision defined as 0" in w for w in rep.warnings)


def test_random_confusion_vs_counting_oracle():
    rng = np.random.default_rng(0)
    y_true = rng.integers(0, 2, 30)
    y_pred = rng.integers(0, 2, 30)
    rep = classification_metrics(y_true, y_pred)
    tp = sum(1 for t, p in zip(y_true, y_pred) if t == 1 and p == 1)
    fp = sum(1 for t, p in zip(y_true, y_pred) if t == 0 and p == 1)
    fn = sum(1 for t, p in zip(y_true, y_pred) if t == 1 and p == 0)
    assert rep.counts["tp"] == tp and rep.counts["fp"] == fp and rep.counts["fn"] == fn
    if tp + fp and tp + fn:
        p, r = tp / (tp + fp), tp / (tp + fn)
        assert rep.precision == pytest.approx(p)
        assert rep.recall == pytest.approx(r)
        assert rep.f1 == pytest.approx(2 * p * r / (p + r))


def test_order_invariance():
    rng = np.random.default_rng(1)
    y_true = rng.integers(0, 3, 40)
    y_pred = rng.integers(0, 3, 40)
    perm = rng.permutation(40)
    a = classification_metrics(y_true, y_pred)
    b = classification_metrics(y_true[perm], y_pred[perm])
    assert a.to_dict() == b.to_dict()


def test_multiclass_per_class_rows():
    rep = classification_metrics([0, 1, 2, 2], [0, 2, 2, 2], positive_class=2)
    assert len(rep.per_class) == 3
    assert rep.per_class[2]["support"] == 2
    assert rep.recall == 1.0
    assert rep.precision == pytest.approx(2 / 3)


def test_metrics_input_validation():
    with pytest.raises(InputError):
        classification_metrics([], [])
    with pytest.raises(InputError):
        classification_metrics([1, 0], [1])
    with pytest.raises(InputError):
        classification_metrics([1, -1], [1, 0])


def test_report_json_has_required_keys(tmp_path):
    rep = classification_metrics([0, 1], [0, 1])
    text = rep.to_json(tmp_path / "r.json")
    import json
    data = json.loads(text)
    for key in ("accuracy", "f1", "recall", "precision"):
        assert key in data
    assert (tmp_path / "r.json").exists()


# ---------------------------------------------------------------------------
# Fréchet distance


def test_identical_features_give_zero():
    rng = np.random.default_rng(2)
    f = rng.standard_normal((64, 8))
    assert abs(frechet_distance(f, f)) < 1e-6


def test_one_dimensional_gaussians_analytic():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((100_000, 1))
    b = rng.standard_normal((100_000, 1)) + 1.0
    assert frechet_distance(a, b) == pytest.approx(1.0, abs=0.05)


def test_matches_naive_oracle_on_random_features():
    rng = np.random.default_rng(4)
    for _ in range(5):
        a = rng.standard_normal((40, 8)) @ rng.standard_normal((8, 8)) + rng.standard_normal(8)
        b = rng.standard_normal((50, 8)) @ rng.standard_normal((8, 8))
        ours = frechet_distance(a, b)
        ref = naive_frechet(a, b)
        assert ours == pytest.approx(ref, abs=1e-6)


def test_symmetry():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((30, 5))
    b = rng.standard_normal((45, 5)) * 2 + 0.3
    assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9


def test_frechet_input_validation():
    ok = np.zeros((5, 3))
    with pytest.raises(InputError):
        frechet_distance(ok, np.zeros((5, 4)))
    with pytest.raises(InputError):
        frechet_distance(ok, np.zeros(5))
    with pytest.raises(InputError):
        frechet_distance(ok, np.zeros((1, 3)))
    bad = ok.copy()
    bad[0, 0] = np.nan
    with pytest.raises(InputError):
        frechet_distance(ok, bad)


# ---------------------------------------------------------------------------
# feature extraction


def test_extract_features_shape_and_determinism():
    cfg = micro_8("representation")
    model = init_model(cfg, np.random.default_rng(6))
    ckpt = model_to_checkpoint(model, step=0, cfg=TrainConfig())
    rng = np.random.default_rng(7)
    images = rng.uniform(-1, 1, (9, 1, 8, 8)).astype(np.float32)
    a = extract_features(ckpt, images, batch_size=4)
    b = extract_features(ckpt, images, batch_size=9)
    assert a.shape == (9, cfg.repr_dim)
    assert np.array_equal(a, b)


def test_extract_features_requires_encoder():
    cfg = micro_8("unconditional")
    ckpt = model_to_checkpoint(init_model(cfg, np.random.default_rng(8)),
                               step=0, cfg=TrainConfig())
    with pytest.raises(ConfigError):
        extract_features(ckpt, np.zeros((2, 1, 8, 8), dtype=np.float32))
