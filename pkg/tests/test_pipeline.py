"""End-to-end pipeline: decisions, handoff, serialization, determinism."""

import numpy as np
import pytest

from bmiml import (
    AwlelConfig,
    BlsConfig,
    ConfigError,
    ModelFormatError,
    PipelineConfig,
    SmiprConfig,
    average_precision,
    clip_scores,
    decide,
    fit_bmiml,
    generate_synthetic,
    hamming_loss,
    load_model,
    predict_bags,
    save_model,
    split_dataset,
)
from bmiml.pipeline import global_views


def fast_config(seed=0, **kw):
    base = dict(
        bls_config=BlsConfig(m1=2, k1=4, m2=1, k2=16),
        awlel_config=AwlelConfig(max_iters=5),
        smipr_config=SmiprConfig(epochs=150),
        seed=seed,
    )
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def noiseless():
    ds = generate_synthetic(200, 4, 16, 5, noise_std=0.0, seed=21)
    split = split_dataset(ds, (0.6, 0.1, 0.3), seed=21)
    return ds, split


class TestClip:
    def test_inside_scores_unchanged_bitwise(self, rng):
        scores = rng.uniform(-1, 1, size=(6, 4))
        clipped = clip_scores(scores, (-2.0, 2.0))
        np.testing.assert_array_equal(clipped, scores)

    def test_clamping(self):
        out = clip_scores(np.array([[-5.0, 0.2, 9.0]]), (0.0, 1.0))
        np.testing.assert_array_equal(out, [[0.0, 0.2, 1.0]])

    def test_mixed_matrix(self, rng):
        scores = rng.normal(scale=3, size=(20, 5))
        lo, hi = -1.5, 1.2
        out = clip_scores(scores, (lo, hi))
        assert out.min() >= lo and out.max() <= hi
        inside = (scores >= lo) & (scores <= hi)
        np.testing.assert_array_equal(out[inside], scores[inside])

    def test_argmax_preserved_when_max_inside(self, rng):
        scores = rng.normal(size=(30, 4))
        lo, hi = -0.8, 0.9
        out = clip_scores(scores, (lo, hi))
        rows = np.nonzero((scores.max(axis=1) <= hi) & (scores.max(axis=1) >= lo))[0]
        np.testing.assert_array_equal(out[rows].argmax(axis=1), scores[rows].argmax(axis=1))


class TestDecide:
    def test_paper_threshold_example(self):
        np.testing.assert_array_equal(decide(np.array([0.9, 0.1]), np.full(2, 0.8)), [1, 0])

    def test_strict_inequality_at_boundary(self):
        np.testing.assert_array_equal(decide(np.array([0.8, 0.5]), np.array([0.8, 0.5])), [0, 0])

    def test_uniform_probabilities_give_empty_set(self):
        np.testing.assert_array_equal(decide(np.full(5, 0.2), np.full(5, 0.8)), np.zeros(5, np.uint8))

    def test_raising_tau_never_adds_positives(self, rng):
        probs = rng.uniform(size=(15, 4))
        low = decide(probs, np.full(4, 0.3))
        high = decide(probs, np.full(4, 0.6))
        assert np.all(high <= low)


class TestGlobalViews:
    def test_mean_and_max(self, rng):
        ds = generate_synthetic(5, 3, 6, 2, noise_std=0.3, seed=2)
        gm = global_views(ds.bags, "mean")
        gx = global_views(ds.bags, "max")
        for i, b in enumerate(ds.bags):
            np.testing.assert_array_equal(gm[i], b.instances.mean(axis=0))
            np.testing.assert_array_equal(gx[i], b.instances.max(axis=0))

    def test_concat_requires_uniform_counts(self, rng):
        from bmiml import Bag, DimensionError, MimlDataset

        bags = [
            Bag(rng.normal(size=(2, 3)), [1, 0], "a"),
            Bag(rng.normal(size=(3, 3)), [0, 1], "b"),
        ]
        with pytest.raises(DimensionError):
            global_views(bags, "concat")
        uniform = generate_synthetic(4, 3, 6, 2, noise_std=0.1, seed=3)
        assert global_views(uniform.bags, "concat").shape == (4, 18)


class TestFitPredict:
    def test_training_ap_on_noiseless_data(self, noiseless):
        ds, split = noiseless
        train = ds.subset(split.train_indices)
        model = fit_bmiml(train, PipelineConfig(seed=21))
        pred = predict_bags(model, train.bags)
        ap = average_precision(pred.probabilities, train.label_matrix())
        assert ap >= 0.95

    def test_noiseless_test_hamming_loss(self, noiseless):
        # softmax mass splits across the true classes, so the threshold must
        # sit below 1/max-cardinality to admit multi-positive bags
        ds, split = noiseless
        train = ds.subset(split.train_indices)
        test_bags = [ds.bags[i] for i in split.test_indices]
        model = fit_bmiml(train, PipelineConfig(seed=21, tau=0.18))
        pred = predict_bags(model, test_bags)
        truth = np.stack([b.label for b in test_bags])
        assert hamming_loss(pred.labels, truth) <= 0.1

    def test_prediction_set_invariants(self, noiseless):
        ds, split = noiseless
        train = ds.subset(split.train_indices)
        model = fit_bmiml(train, fast_config(4))
        pred = predict_bags(model, ds.bags)
        np.testing.assert_allclose(pred.probabilities.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(pred.labels, decide(pred.probabilities, model.tau))
        assert pred.raw_scores.min() >= model.t_range[0]
        assert pred.raw_scores.max() <= model.t_range[1]

    def test_prediction_is_pure(self, noiseless):
        ds, split = noiseless
        model = fit_bmiml(ds.subset(split.train_indices), fast_config(5))
        p1 = predict_bags(model, ds.bags[:20])
        p2 = predict_bags(model, ds.bags[:20])
        np.testing.assert_array_equal(p1.probabilities, p2.probabilities)
        np.testing.assert_array_equal(p1.raw_scores, p2.raw_scores)

    def test_cluster_excess_rejected_before_training(self):
        ds = generate_synthetic(10, 3, 6, 2, noise_std=0.2, seed=6)
        cfg = fast_config(1, smipr_config=SmiprConfig(num_clusters=50))
        with pytest.raises(ConfigError, match="num_clusters"):
            fit_bmiml(ds, cfg)

    def test_smipr_targets_are_awlel_output(self, monkeypatch):
        # instrumented handoff: the regression stage must receive exactly
        # the retargeted label matrix the enhancement stage emitted
        import bmiml.pipeline as pl

        ds = generate_synthetic(30, 3, 8, 2, noise_std=0.2, seed=7)
        seen = {}
        real_fit_awlel = pl.fit_awlel
        real_fit_smipr = pl.fit_smipr

        def spy_awlel(*args, **kw):
            model, T = real_fit_awlel(*args, **kw)
            seen["T_out"] = T.copy()
            return model, T

        def spy_smipr(bags, T, cfg):
            seen["T_in"] = np.asarray(T).copy()
            return real_fit_smipr(bags, T, cfg)

        monkeypatch.setattr(pl, "fit_awlel", spy_awlel)
        monkeypatch.setattr(pl, "fit_smipr", spy_smipr)
        fit_bmiml(ds, fast_config(8))
        np.testing.assert_array_equal(seen["T_in"], seen["T_out"])

    def test_variants_produce_models(self):
        ds = generate_synthetic(30, 3, 8, 2, noise_std=0.2, seed=9)
        cfg = fast_config(10)
        awlel_only = fit_bmiml(ds, cfg, variant="awlel")
        smipr_only = fit_bmiml(ds, cfg, variant="smipr")
        assert awlel_only.smipr_net is None and awlel_only.awlel_model is not None
        assert smipr_only.awlel_model is None and smipr_only.smipr_net is not None
        assert smipr_only.t_range == (0.0, 1.0)
        for model in (awlel_only, smipr_only):
            pred = predict_bags(model, ds.bags)
            assert pred.probabilities.shape == (30, 2)

    def test_outer_rounds_experimental_path(self):
        ds = generate_synthetic(24, 3, 8, 2, noise_std=0.2, seed=11)
        model = fit_bmiml(ds, fast_config(12, outer_rounds=2))
        pred = predict_bags(model, ds.bags)
        assert np.all(np.isfinite(pred.probabilities))


class TestSerialization:
    def test_round_trip_bitwise_predictions(self, tmp_path):
        ds = generate_synthetic(30, 3, 8, 2, noise_std=0.2, seed=13)
        for variant in ("awlel", "smipr", "bmiml"):
            model = fit_bmiml(ds, fast_config(14), variant=variant)
            path = tmp_path / f"{variant}.bmiml"
            save_model(model, path)
            loaded = load_model(path)
            p1 = predict_bags(model, ds.bags)
            p2 = predict_bags(loaded, ds.bags)
            np.testing.assert_array_equal(p1.raw_scores, p2.raw_scores)
            np.testing.assert_array_equal(p1.probabilities, p2.probabilities)
            np.testing.assert_array_equal(p1.labels, p2.labels)

    def test_same_seed_bitwise_identical_files(self, tmp_path):
        ds = generate_synthetic(25, 3, 8, 2, noise_std=0.2, seed=15)
        for run in ("a", "b"):
            save_model(fit_bmiml(ds, fast_config(16)), tmp_path / f"{run}.bmiml")
        assert (tmp_path / "a.bmiml").read_bytes() == (tmp_path / "b.bmiml").read_bytes()

    def test_truncated_file_detected(self, tmp_path):
        ds = generate_synthetic(20, 3, 8, 2, noise_std=0.2, seed=17)
        path = tmp_path / "m.bmiml"
        save_model(fit_bmiml(ds, fast_config(18)), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(ModelFormatError, match="truncated|CRC"):
            load_model(path)

    def test_corrupted_payload_detected(self, tmp_path):
        ds = generate_synthetic(20, 3, 8, 2, noise_std=0.2, seed=17)
        path = tmp_path / "m.bmiml"
        save_model(fit_bmiml(ds, fast_config(18)), path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_unsupported_version_rejected(self, tmp_path):
        ds = generate_synthetic(20, 3, 8, 2, noise_std=0.2, seed=19)
        path = tmp_path / "m.bmiml"
        save_model(fit_bmiml(ds, fast_config(20)), path)
        raw = bytearray(path.read_bytes())
        raw[6:10] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(ModelFormatError, match="version"):
            load_model(path)

    def test_config_survives_round_trip(self, tmp_path):
        ds = generate_synthetic(20, 3, 8, 2, noise_std=0.2, seed=23)
        cfg = fast_config(24, tau=(0.7, 0.6), global_view="max")
        model = fit_bmiml(ds, cfg)
        path = tmp_path / "m.bmiml"
        save_model(model, path)
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.tau, model.tau)
        assert loaded.config.global_view == "max"
        assert loaded.t_range == model.t_range
        assert loaded.variant == "bmiml"
