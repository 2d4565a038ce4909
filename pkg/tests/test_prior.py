import numpy as np
import pytest

from priorguide.classifier import MLP, TrainConfig
from priorguide.dataset import NoiseSpec, inject_noise, synth_blobs
from priorguide.errors import DegenerateTrainingError, PriorGenerationError, ShapeError
from priorguide.history import mean_history, separation_report
from priorguide.prior import (HARD, NOISY, HistoryClassifier, PriorConfig, PriorPartition, build_Da,
                              classify_middle, default_quantiles, fit_history_classifier, generate_prior,
                              train_Mm)

TRAINER = TrainConfig(learning_rate=0.02, batch_size=16, epochs=10)


def numeric_grad(model, rows, labels, cw, eps=1e-5):
    flat = model.flat_params().copy()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        f = flat.copy()
        f[i] += eps
        model.set_flat_params(f)
        a, _ = model.loss_and_grads(rows, labels, cw)
        f[i] -= 2 * eps
        model.set_flat_params(f)
        b, _ = model.loss_and_grads(rows, labels, cw)
        out[i] = (a - b) / (2 * eps)
    model.set_flat_params(flat)
    return out


@pytest.fixture(scope="module")
def blob_prior():
    ds = synth_blobs(4, 500, 8, 4.0, seed=0)
    noisy, mask = inject_noise(ds, NoiseSpec("symmetric", 0.4), seed=0)
    return noisy, mask, generate_prior(noisy, TRAINER, tau=0.4, seed=0)


class TestHistoryClassifier:
    def test_output_sums_to_one(self):
        m = HistoryClassifier.init(7, seed=0)
        p = m.predict_proba(np.random.default_rng(0).random((5, 7)))
        assert p.shape == (5, 2)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            HistoryClassifier.init(7, seed=0).predict_proba(np.zeros((2, 6)))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        m = HistoryClassifier.init(6, (3, 4, 2), 3, seed=1)
        for p in m.params():
            p += rng.normal(0, 0.3, p.shape)
        rows, labels, cw = rng.random((7, 6)), rng.integers(0, 2, 7), np.array([0.7, 1.4])
        _, grads = m.loss_and_grads(rows, labels, cw)
        ga = np.concatenate([g.ravel() for g in grads])
        gn = numeric_grad(m, rows, labels, cw)
        assert np.max(np.abs(ga - gn) / np.maximum(np.abs(ga) + np.abs(gn), 1e-7)) < 1e-4

    @pytest.mark.parametrize("frac_noisy", [0.5, 0.8])
    def test_separable_toy(self, frac_noisy):
        rng = np.random.default_rng(2)
        labels = (rng.random(200) < frac_noisy).astype(np.int64)
        rows = np.where(labels[:, None] == NOISY, 0.1, 0.9) * np.ones((200, 10))
        m = fit_history_classifier(rows, labels, PriorConfig(), seed=0)
        acc = np.mean(m.predict_proba(rows).argmax(axis=1) == labels)
        assert acc > 0.95

    def test_single_class(self):
        with pytest.raises(DegenerateTrainingError):
            fit_history_classifier(np.full((5, 3), 0.5), np.zeros(5, int), PriorConfig(), seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        rows, labels = rng.random((30, 5)), rng.integers(0, 2, 30)
        a = fit_history_classifier(rows, labels, PriorConfig(), seed=4)
        b = fit_history_classifier(rows, labels, PriorConfig(), seed=4)
        assert a.flat_params().tobytes() == b.flat_params().tobytes()


class TestClassifyMiddle:
    def test_zero_model_all_noisy(self):
        p_h, p_n, hard = classify_middle(HistoryClassifier.zeros(4), np.random.default_rng(0).random((6, 4)))
        assert np.all(p_h == 0.5) and not hard.any()
        assert np.all(p_h + p_n == 1.0)

    def test_threshold(self):
        m = HistoryClassifier.zeros(4)
        m.fc_bias[HARD] = np.log(9.0)
        p_h, _, hard = classify_middle(m, np.zeros((3, 4)))
        assert p_h == pytest.approx(0.9) and hard.all()


class TestBuildDa:
    def test_zero_tau(self, tiny_blobs):
        ids = np.arange(0, 80, 2)
        d_a, r = build_Da(tiny_blobs, ids, 0.0, seed=0)
        assert np.array_equal(d_a.labels, tiny_blobs.labels[ids]) and not r.flipped.any()

    def test_expected_flips(self):
        ds = synth_blobs(4, 200, 4, 4.0, seed=0)
        d_a, r = build_Da(ds, np.arange(500), 0.5, seed=1)
        # 250 redraws, each lands on a different class with probability 3/4
        mean, sd = 250 * 0.75, np.sqrt(250 * 0.75 * 0.25)
        assert abs(r.flipped.sum() - mean) <= 4 * sd
        assert np.array_equal(r.flipped, d_a.labels != ds.labels[:500])

    def test_deterministic(self, tiny_blobs):
        a, _ = build_Da(tiny_blobs, np.arange(40), 0.4, seed=5)
        b, _ = build_Da(tiny_blobs, np.arange(40), 0.4, seed=5)
        assert np.array_equal(a.labels, b.labels)

    def test_empty(self, tiny_blobs):
        with pytest.raises(PriorGenerationError):
            build_Da(tiny_blobs, [], 0.3, seed=0)


class TestTrainMm:
    def test_empty_band(self, tiny_blobs):
        d_a, r = build_Da(tiny_blobs, np.arange(80), 0.3, seed=0)
        with pytest.raises(PriorGenerationError):
            train_Mm(d_a, r, 0.6, 0.4, PriorConfig(), TrainConfig(epochs=2), seed=0)

    def test_deterministic(self, tiny_blobs):
        d_a, r = build_Da(tiny_blobs, np.arange(80), 0.4, seed=0)
        cfg = TrainConfig(epochs=4)
        a, ha = train_Mm(d_a, r, 0.3, 0.2, PriorConfig(), cfg, seed=2)
        b, hb = train_Mm(d_a, r, 0.3, 0.2, PriorConfig(), cfg, seed=2)
        assert a.flat_params().tobytes() == b.flat_params().tobytes()
        assert ha.matrix.shape == (80, 4)


class TestGeneratePrior:
    def test_quantiles(self):
        assert default_quantiles(0.4) == pytest.approx((0.3, 0.2))
        assert default_quantiles(0.0) == (0.5, 0.0)

    def test_clean_dataset(self, tiny_blobs):
        part = generate_prior(tiny_blobs, TrainConfig(epochs=3), tau=0.0, seed=0)
        assert part.noisy_direct.size == 0
        assert part.flags.get("history_classifier_fallback")

    def test_partition(self, blob_prior):
        _, _, part = blob_prior
        part.validate()
        assert np.all(part.p_h + part.p_n == 1.0)
        assert part.hard.size + part.noisy_classified.size == part.middle.size

    def test_easy_purity(self, blob_prior):
        _, mask, part = blob_prior
        purity = 1 - mask.flipped[part.easy].mean()
        assert purity >= 0.95
        assert purity > 1 - mask.rate

    def test_noisy_recall(self, blob_prior):
        _, mask, part = blob_prior
        recall = np.isin(np.flatnonzero(mask.flipped), part.noisy).mean()
        assert recall >= 0.80

    def test_artificial_history_matches_shape(self, blob_prior):
        _, mask, part = blob_prior
        orig = separation_report(mean_history(part.history), mask.flipped)
        art = separation_report(mean_history(part.da_history), part.da_flipped)
        assert orig.separated() and art.separated()

    def test_json_roundtrip(self, blob_prior, tmp_path):
        part = blob_prior[2]
        part.save(tmp_path / "prior.json")
        back = PriorPartition.load(tmp_path / "prior.json")
        assert back.to_dict() == part.to_dict()
