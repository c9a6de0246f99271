import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from saliency_forge.core import (
    AttributionMap,
    AttributionStack,
    ImageTensor,
    normalize_map,
)
from saliency_forge.ensembles import (
    EnsembleConfig,
    aggregate,
    apply_flip,
    finish_rbm_pipeline,
    flip_detect,
    flip_disagreement,
    mean_ensemble,
    metric_optimize_flip,
    rbm_aggregate,
    stack_to_samples,
    variance_ensemble,
    with_original_image,
)
from saliency_forge.errors import ValidationError
from saliency_forge.metrics import MetricSpec
from saliency_forge.oracle import make_stub
from saliency_forge.rbm import TrainConfig, complement_params, train_cd

from conftest import make_stack

FAST_TRAIN = TrainConfig(learning_rate=0.05, batch_size=16, n_iterations=60, seed=0)


def _normalized(values, source="m"):
    return normalize_map(AttributionMap(scores=np.asarray(values, float), source=source))


def _stack_from_arrays(arrays, rng, sources=None):
    arrays = [np.asarray(a, float) for a in arrays]
    h, w = arrays[0].shape
    image = ImageTensor(data=rng.random((1, h, w)), label=0)
    maps = tuple(
        _normalized(a, source=(sources[i] if sources else f"s{i}"))
        for i, a in enumerate(arrays)
    )
    return AttributionStack(maps=maps, image=image)


class TestMeanEnsemble:
    def test_identical_maps_unchanged(self, rng):
        base = rng.random((5, 5))
        stack = _stack_from_arrays([base, base, base], rng)
        out = mean_ensemble(stack)
        np.testing.assert_allclose(out.map.scores, stack.maps[0].scores, atol=1e-12)

    def test_complementary_pair_degenerates(self, rng):
        stack = _stack_from_arrays([[[0.0, 1.0]], [[1.0, 0.0]]], rng)
        out = mean_ensemble(stack)
        np.testing.assert_array_equal(out.map.scores, [[0.0, 0.0]])

    def test_matches_bruteforce_loops(self, rng):
        arrays = [rng.random((4, 4)) for _ in range(3)]
        stack = _stack_from_arrays(arrays, rng)
        raw = np.zeros((4, 4))
        for r in range(4):
            for c in range(4):
                raw[r, c] = sum(m.scores[r, c] for m in stack.maps) / 3
        expected = normalize_map(AttributionMap(scores=raw, source="mean"))
        np.testing.assert_allclose(mean_ensemble(stack).map.scores, expected.scores, atol=1e-12)

    def test_needs_two_maps(self, rng):
        image = ImageTensor(data=rng.random((1, 3, 3)), label=0)
        single = AttributionStack(maps=(_normalized(rng.random((3, 3))),), image=image)
        with pytest.raises(ValidationError):
            mean_ensemble(single)

    def test_rejects_unnormalized(self, rng):
        stack = make_stack(rng, normalized=False)
        with pytest.raises(ValidationError):
            mean_ensemble(stack)


class TestVarianceEnsemble:
    def test_zero_deviation_pixel(self, rng):
        # All maps agree at 0.5 -> raw 0.5 / (0 + 0.5) = 1.0.
        maps = [np.array([[0.5, 0.0], [1.0, 0.25]])] * 3
        stack = _stack_from_arrays(maps, rng)
        arr = np.stack([m.scores for m in stack.maps])
        raw = arr.mean(axis=0) / (arr.std(axis=0) + 0.5)
        assert raw[0, 0] == pytest.approx(1.0)

    def test_population_std_hand_value(self, rng):
        # Pixel values {0, 1}: mean 0.5, population std 0.5 -> 0.5/(0.5+0.5).
        stack = _stack_from_arrays([[[0.0, 1.0]], [[1.0, 0.0]]], rng)
        arr = np.stack([m.scores for m in stack.maps])
        raw = arr.mean(axis=0) / (arr.std(axis=0) + 0.5)
        np.testing.assert_allclose(raw, [[0.5, 0.5]])

    def test_equal_mean_smaller_deviation_dominates(self, rng):
        # Three pixels, all with cross-map mean 0.5 but increasing
        # disagreement; the ensemble value must be strictly decreasing
        # (normalization preserves the ordering of nonnegative raw values).
        a = np.array([[0.5, 0.4, 0.0, 1.0]])
        b = np.array([[0.5, 0.6, 1.0, 0.0]])
        image = ImageTensor(data=rng.random((1, 1, 4)), label=0)
        stack = AttributionStack(
            maps=(
                AttributionMap(scores=a, source="a", normalized=True),
                AttributionMap(scores=b, source="b", normalized=True),
            ),
            image=image,
        )
        out = variance_ensemble(stack).map.scores[0]
        assert out[0] > out[1] > out[2]

    def test_matches_bruteforce_loops(self, rng):
        arrays = [rng.random((3, 3)) for _ in range(4)]
        stack = _stack_from_arrays(arrays, rng)
        eps = 1e-6
        raw = np.zeros((3, 3))
        for r in range(3):
            for c in range(3):
                vals = [m.scores[r, c] for m in stack.maps]
                mean = sum(vals) / len(vals)
                var = sum((v - mean) ** 2 for v in vals) / len(vals)
                raw[r, c] = mean / (var**0.5 + eps)
        expected = normalize_map(AttributionMap(scores=raw, source="variance"))
        got = variance_ensemble(stack, epsilon=eps)
        np.testing.assert_allclose(got.map.scores, expected.scores, atol=1e-12)

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_naive_oracle_property(self, seed):
        rng = np.random.default_rng(seed)
        arrays = [rng.random((3, 4)) for _ in range(int(rng.integers(2, 6)))]
        stack = _stack_from_arrays(arrays, rng)
        n = len(stack)
        mean_naive = np.zeros((3, 4))
        var_naive = np.zeros((3, 4))
        for r in range(3):
            for c in range(4):
                vals = [m.scores[r, c] for m in stack.maps]
                mu = sum(vals) / n
                mean_naive[r, c] = mu
                var_naive[r, c] = mu / ((sum((v - mu) ** 2 for v in vals) / n) ** 0.5 + 1e-6)
        np.testing.assert_allclose(
            mean_ensemble(stack).map.scores,
            normalize_map(AttributionMap(scores=mean_naive, source="x")).scores,
            atol=1e-12,
        )
        np.testing.assert_allclose(
            variance_ensemble(stack).map.scores,
            normalize_map(AttributionMap(scores=var_naive, source="x")).scores,
            atol=1e-12,
        )


class TestFlipDetect:
    def test_identical_maps_do_not_flip(self, rng):
        m = _normalized(rng.permutation(100).reshape(10, 10).astype(float))
        assert flip_detect(m, m, fraction=0.05) is False

    def test_complement_flips(self, rng):
        values = rng.permutation(100).reshape(10, 10).astype(float)
        m = _normalized(values)
        assert flip_detect(apply_flip(m), m, fraction=0.05) is True

    def test_swapped_extremes_fixture(self):
        # Candidate's top-5 set equals the reference's bottom-5 set and
        # vice versa; everything else keeps its rank.
        ref_values = np.arange(100, dtype=float).reshape(10, 10)
        cand_values = ref_values.copy().ravel()
        cand_values[:5], cand_values[-5:] = ref_values.ravel()[-5:], ref_values.ravel()[:5]
        cand = _normalized(cand_values.reshape(10, 10))
        ref = _normalized(ref_values)
        # cross = |Tc & Br| + |Bc & Tr| = 5 + 5; agree = 0.
        assert flip_disagreement(cand, ref, 0.05) == (10, 0)
        assert flip_detect(cand, ref, 0.05) is True

    def test_shape_mismatch(self, rng):
        a = _normalized(rng.random((4, 4)))
        b = _normalized(rng.random((5, 5)))
        with pytest.raises(ValidationError):
            flip_detect(a, b)

    @given(seed=st.integers(0, 2000))
    @settings(max_examples=60, deadline=None)
    def test_flip_coherence_when_decisive(self, seed):
        rng = np.random.default_rng(seed)
        cand = _normalized(rng.permutation(64).reshape(8, 8).astype(float))
        ref = _normalized(rng.permutation(64).reshape(8, 8).astype(float))
        cross, agree = flip_disagreement(cand, ref, 0.1)
        assume(cross != agree)  # ties leave both orientations unflipped
        assert flip_detect(cand, ref, 0.1) != flip_detect(apply_flip(cand), ref, 0.1)


class TestApplyFlip:
    def test_values(self):
        m = _normalized([[0.0, 0.5, 1.0]])
        np.testing.assert_array_equal(apply_flip(m).scores, [[1.0, 0.5, 0.0]])

    def test_involution(self, rng):
        # Exact on dyadic values; within 1 ulp of 1.0 otherwise (1-(1-x)
        # rounds once for x < 0.5).
        m = _normalized(np.arange(9).reshape(3, 3) / 8.0)
        np.testing.assert_array_equal(apply_flip(apply_flip(m)).scores, m.scores)
        r = _normalized(rng.random((6, 6)))
        np.testing.assert_allclose(
            apply_flip(apply_flip(r)).scores, r.scores, rtol=0, atol=2**-52
        )

    def test_reverses_ranking(self, rng):
        m = _normalized(rng.permutation(36).reshape(6, 6).astype(float))
        flipped = apply_flip(m)
        np.testing.assert_array_equal(
            np.argsort(flipped.scores.ravel()), np.argsort(m.scores.ravel())[::-1]
        )

    def test_requires_normalized(self, rng):
        with pytest.raises(ValidationError):
            apply_flip(AttributionMap(scores=rng.random((3, 3)), source="m"))

    def test_degenerate_constant_map(self):
        zeros = _normalized([[0.0, 0.0]])
        np.testing.assert_array_equal(apply_flip(zeros).scores, [[0.0, 0.0]])


class TestRbmAggregate:
    def test_identical_maps_recover_common_ranking(self, rng):
        values = rng.permutation(64).reshape(8, 8).astype(float)
        stack = _stack_from_arrays([values] * 4, rng)
        config = EnsembleConfig(method="rbm", rbm_train=FAST_TRAIN)
        out = rbm_aggregate(stack, config)
        np.testing.assert_array_equal(
            np.argsort(out.map.scores.ravel(), kind="stable"),
            np.argsort(stack.maps[0].scores.ravel(), kind="stable"),
        )

    def test_deterministic(self, rng):
        stack = make_stack(rng, n_maps=4)
        config = EnsembleConfig(method="rbm", rbm_train=FAST_TRAIN)
        a = rbm_aggregate(stack, config)
        b = rbm_aggregate(stack, config)
        np.testing.assert_array_equal(a.map.scores, b.map.scores)
        assert a.flipped == b.flipped

    def test_permutation_invariance(self, rng):
        stack = make_stack(rng, n_maps=5)
        config = EnsembleConfig(method="rbm", rbm_train=FAST_TRAIN)
        base = rbm_aggregate(stack, config)
        perm = AttributionStack(
            maps=tuple(stack.maps[i] for i in [3, 0, 4, 1, 2]), image=stack.image
        )
        shuffled = rbm_aggregate(perm, config)
        np.testing.assert_array_equal(base.map.scores, shuffled.map.scores)

    def test_mean_variance_permutation_invariance(self, rng):
        stack = make_stack(rng, n_maps=5)
        perm = AttributionStack(
            maps=tuple(stack.maps[i] for i in [4, 2, 0, 3, 1]), image=stack.image
        )
        np.testing.assert_allclose(
            mean_ensemble(stack).map.scores, mean_ensemble(perm).map.scores, atol=1e-12
        )
        np.testing.assert_allclose(
            variance_ensemble(stack).map.scores,
            variance_ensemble(perm).map.scores,
            atol=1e-12,
        )

    def test_symmetric_params_same_output_flip_detection(self, rng):
        stack = make_stack(rng, n_maps=4)
        params = train_cd(stack_to_samples(stack), FAST_TRAIN, m=1)
        config = EnsembleConfig(method="rbm", rbm_train=FAST_TRAIN, flip_policy="flip_detection")
        out_a = finish_rbm_pipeline(params, stack, config)
        out_b = finish_rbm_pipeline(complement_params(params), stack, config)
        np.testing.assert_array_equal(out_a.map.scores, out_b.map.scores)

    def test_symmetric_params_same_output_metric_optimization(self, rng):
        stack = make_stack(rng, n_maps=4)
        params = train_cd(stack_to_samples(stack), FAST_TRAIN, m=1)
        mask = np.zeros((8, 8), dtype=bool)
        mask[:4, :4] = True
        stub = make_stub("fraction_remaining", {"mask": mask, "baseline": 0.0})
        spec = MetricSpec(kind="deletion", step_fraction=0.25)
        config = EnsembleConfig(
            method="rbm", rbm_train=FAST_TRAIN, flip_policy="metric_optimization"
        )
        out_a = finish_rbm_pipeline(params, stack, config, stub, spec)
        out_b = finish_rbm_pipeline(complement_params(params), stack, config, stub, spec)
        np.testing.assert_array_equal(out_a.map.scores, out_b.map.scores)

    def test_metric_optimization_requires_oracle(self, rng):
        stack = make_stack(rng, n_maps=3)
        config = EnsembleConfig(
            method="rbm", rbm_train=FAST_TRAIN, flip_policy="metric_optimization"
        )
        with pytest.raises(ValidationError):
            rbm_aggregate(stack, config)

    def test_needs_two_maps(self, rng):
        image = ImageTensor(data=rng.random((1, 4, 4)), label=0)
        single = AttributionStack(maps=(_normalized(rng.random((4, 4))),), image=image)
        with pytest.raises(ValidationError):
            rbm_aggregate(single, EnsembleConfig(method="rbm", rbm_train=FAST_TRAIN))


class TestMetricOptimizeFlip:
    def _fixture(self, rng):
        mask = np.zeros((10, 10), dtype=bool)
        mask[:5, :5] = True
        image = ImageTensor(data=rng.uniform(0.1, 1.0, (1, 10, 10)), label=0)
        aligned = _normalized(np.where(mask, 1.0, 0.2) + rng.random((10, 10)) * 0.05)
        stub = make_stub("fraction_remaining", {"mask": mask, "baseline": 0.0})
        spec = MetricSpec(kind="deletion", step_fraction=0.25)
        return image, aligned, stub, spec

    def test_aligned_map_stays_unflipped(self, rng):
        image, aligned, stub, spec = self._fixture(rng)
        out = metric_optimize_flip(aligned, image, stub, spec)
        assert out.flipped is False
        assert out.diagnostics["metric_unflipped"] < out.diagnostics["metric_flipped"]

    def test_anti_aligned_map_flips(self, rng):
        image, aligned, stub, spec = self._fixture(rng)
        out = metric_optimize_flip(apply_flip(aligned), image, stub, spec)
        assert out.flipped is True

    def test_tie_prefers_unflipped(self, rng):
        image, aligned, stub, spec = self._fixture(rng)
        constant = make_stub("constant", {"value": 0.5})
        out = metric_optimize_flip(aligned, image, constant, spec)
        assert out.flipped is False
        assert out.diagnostics["tie"] is True


class TestAggregateDispatcher:
    def test_include_original_image(self, rng):
        stack = make_stack(rng, n_maps=3)
        augmented = with_original_image(stack)
        assert len(augmented) == 4
        assert augmented.maps[-1].source == "original_image"
        config = EnsembleConfig(method="mean", include_original_image=True)
        direct = mean_ensemble(augmented)
        routed = aggregate(stack, config)
        np.testing.assert_array_equal(direct.map.scores, routed.map.scores)

    def test_method_dispatch(self, rng):
        stack = make_stack(rng, n_maps=3)
        np.testing.assert_array_equal(
            aggregate(stack, EnsembleConfig(method="mean")).map.scores,
            mean_ensemble(stack).map.scores,
        )
        np.testing.assert_array_equal(
            aggregate(stack, EnsembleConfig(method="variance")).map.scores,
            variance_ensemble(stack).map.scores,
        )

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            EnsembleConfig(method="median")
        with pytest.raises(ValidationError):
            EnsembleConfig(epsilon=0.0)
        with pytest.raises(ValidationError):
            EnsembleConfig(flip_fraction=0.6)
