import numpy as np
import pytest

from graphdeconv.graph import MarkerAssignment, SimilarityGraph
from graphdeconv.matrices import SignatureMatrix
from graphdeconv.penalties import (
    PenaltyConfig,
    PenaltyWeights,
    f1_gradient,
    f1_value,
    f2_euclidean_trace,
    f2_gradient,
    f2_gradient_half_diag,
    f2_value,
    frozen_penalty_gradient,
    frozen_penalty_value,
    penalty_value_arrays,
)


def central_differences(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad


def random_instance(rng, n_rows=None, k=None):
    n_rows = n_rows if n_rows is not None else int(rng.integers(6, 31))
    k = k if k is not None else int(rng.integers(2, 5))
    c = rng.uniform(0.2, 1.5, (n_rows, k))
    w = rng.uniform(0.05, 1.0, (n_rows, n_rows))
    w = (w + w.T) / 2
    np.fill_diagonal(w, 1.0)
    graph = SimilarityGraph(adjacency=w, degrees=w.sum(axis=1), sigma=0.2)
    labels = rng.integers(0, k + 1, n_rows)
    while not np.any(labels > 0):
        labels = rng.integers(0, k + 1, n_rows)
    markers = MarkerAssignment.from_labels(labels, k)
    return c, graph, markers


class TestF1:
    def test_aligned_markers_zero(self):
        c = np.zeros((4, 3))
        labels = np.array([1, 2, 3, 0])
        for i, r in enumerate(labels):
            if r:
                c[i, r - 1] = 0.5 + i
            else:
                c[i] = [1.0, 2.0, 3.0]
        markers = MarkerAssignment.from_labels(labels, 3)
        cfg = PenaltyConfig(lambda1=3.0)
        assert f1_value(SignatureMatrix(c), markers, cfg) == pytest.approx(0.0, abs=1e-15)

    def test_single_marker_row_analytic(self):
        # row (1,1,0) assigned to type 1 at lambda1=2: (2/2)(1 - 1/sqrt(2))^2
        c = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
        markers = MarkerAssignment.from_labels(np.array([1, 0]), 3)
        cfg = PenaltyConfig(lambda1=2.0)
        expected = (1.0 - 1.0 / np.sqrt(2.0)) ** 2
        assert f1_value(SignatureMatrix(c), markers, cfg) == pytest.approx(expected, rel=1e-12)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(11)
        c, _, markers = random_instance(rng, n_rows=12, k=3)
        cfg = PenaltyConfig(lambda1=1.0)
        # oracle: direct loop over the definition
        expected = 0.0
        for r in range(3):
            e_r = np.zeros(3)
            e_r[r] = 1.0
            for i in markers.marker_sets[r]:
                d = 1.0 - np.dot(c[i], e_r) / np.linalg.norm(c[i])
                expected += 0.5 * d * d
        assert f1_value(SignatureMatrix(c), markers, cfg) == pytest.approx(expected, rel=1e-12)

    def test_zero_lambda_or_no_markers(self):
        rng = np.random.default_rng(3)
        c, _, markers = random_instance(rng, n_rows=8, k=2)
        assert f1_value(SignatureMatrix(c), markers, PenaltyConfig()) == 0.0
        empty = MarkerAssignment.from_labels(np.zeros(8, dtype=int), 2)
        assert f1_value(SignatureMatrix(c), empty, PenaltyConfig(lambda1=5.0)) == 0.0


class TestF1Gradient:
    def test_zero_at_minimizer(self):
        c = np.zeros((3, 2))
        labels = np.array([1, 2, 1])
        for i, r in enumerate(labels):
            c[i, r - 1] = 1.0 + i
        markers = MarkerAssignment.from_labels(labels, 2)
        grad = f1_gradient(SignatureMatrix(c), markers, PenaltyConfig(lambda1=2.0))
        np.testing.assert_allclose(grad, 0.0, atol=1e-14)

    def test_nonmarker_rows_zero(self):
        rng = np.random.default_rng(5)
        c, _, markers = random_instance(rng, n_rows=10, k=3)
        grad = f1_gradient(SignatureMatrix(c), markers, PenaltyConfig(lambda1=1.3))
        np.testing.assert_array_equal(grad[~markers.chi], 0.0)

    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        c, _, markers = random_instance(rng, n_rows=9, k=3)
        cfg = PenaltyConfig(lambda1=1.7)
        grad = f1_gradient(SignatureMatrix(c), markers, cfg)
        fd = central_differences(lambda v: f1_value(SignatureMatrix(v), markers, cfg), c)
        assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_elementwise_formula_matches_matrix_form(self):
        # oracle: per-entry evaluation of the elementwise gradient expression
        rng = np.random.default_rng(9)
        c, _, markers = random_instance(rng, n_rows=8, k=3)
        lam = 2.1
        grad = f1_gradient(SignatureMatrix(c), markers, PenaltyConfig(lambda1=lam))
        n, k = c.shape
        expected = np.zeros_like(c)
        for i in range(n):
            r = markers.g[i]
            if r == 0:
                continue
            norm = np.linalg.norm(c[i])
            u = c[i, r - 1] / norm
            for j in range(k):
                delta = 1.0 if j == r - 1 else 0.0
                expected[i, j] = lam * (1 - u) / norm * (u / norm * c[i, j] - delta)
        np.testing.assert_allclose(grad, expected, atol=1e-12)


class TestF2:
    def test_collinear_rows_zero(self):
        base = np.array([1.0, 2.0, 0.5])
        c = np.vstack([s * base for s in (1.0, 2.0, 0.3, 5.0)])
        w = np.full((4, 4), 0.8)
        np.fill_diagonal(w, 1.0)
        graph = SimilarityGraph(adjacency=w, degrees=w.sum(1), sigma=0.2)
        assert f2_value(SignatureMatrix(c), graph, PenaltyConfig(lambda2=3.0)) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_two_orthogonal_rows(self):
        c = np.array([[1.0, 0.0], [0.0, 1.0]])
        w = np.array([[1.0, 0.37], [0.37, 1.0]])
        graph = SimilarityGraph(adjacency=w, degrees=w.sum(1), sigma=0.2)
        value = f2_value(SignatureMatrix(c), graph, PenaltyConfig(lambda2=1.0))
        assert value == pytest.approx(0.37, rel=1e-12)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(13)
        c, graph, _ = random_instance(rng, n_rows=6, k=3)
        cfg = PenaltyConfig(lambda2=1.0)
        expected = 0.0
        for i in range(6):
            for j in range(6):
                d = 1.0 - np.dot(c[i], c[j]) / (np.linalg.norm(c[i]) * np.linalg.norm(c[j]))
                expected += 0.5 * graph.adjacency[i, j] * d * d
        assert f2_value(SignatureMatrix(c), graph, cfg) == pytest.approx(expected, rel=1e-12)


class TestF2Gradient:
    def test_collinear_zero_gradient(self):
        base = np.array([0.3, 1.0, 0.7])
        c = np.vstack([s * base for s in (1.0, 0.5, 2.0)])
        w = np.full((3, 3), 0.6)
        np.fill_diagonal(w, 1.0)
        graph = SimilarityGraph(adjacency=w, degrees=w.sum(1), sigma=0.2)
        grad = f2_gradient(SignatureMatrix(c), graph, PenaltyConfig(lambda2=2.0))
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_finite_differences(self):
        rng = np.random.default_rng(17)
        c, graph, _ = random_instance(rng, n_rows=10, k=3)
        cfg = PenaltyConfig(lambda2=2.3)
        grad = f2_gradient(SignatureMatrix(c), graph, cfg)
        fd = central_differences(lambda v: f2_value(SignatureMatrix(v), graph, cfg), c)
        assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_rows_orthogonal_to_c(self):
        rng = np.random.default_rng(19)
        c, graph, _ = random_instance(rng, n_rows=12, k=4)
        grad = f2_gradient(SignatureMatrix(c), graph, PenaltyConfig(lambda2=1.1))
        inner = np.abs((grad * c).sum(axis=1))
        assert np.max(inner) <= 1e-10

    def test_half_diag_variant_disagrees_with_fd(self):
        # the half-weight diagonal variant is a diagnostic, not a gradient
        rng = np.random.default_rng(21)
        c, graph, _ = random_instance(rng, n_rows=8, k=3)
        cfg = PenaltyConfig(lambda2=1.5)
        fd = central_differences(lambda v: f2_value(SignatureMatrix(v), graph, cfg), c)
        half = f2_gradient_half_diag(SignatureMatrix(c), graph, cfg)
        full = f2_gradient(SignatureMatrix(c), graph, cfg)
        assert np.linalg.norm(half - fd) > 1e-2 * np.linalg.norm(fd)
        # the discrepancy is exactly the missing half of the diagonal term
        _, inv = np.linalg.norm(c, axis=1), 1.0 / np.linalg.norm(c, axis=1)
        coc = (c * inv[:, None]) @ (c * inv[:, None]).T
        w3 = graph.adjacency * (1.0 - coc) * coc
        missing = cfg.lambda2 * (w3.sum(axis=1) * inv * inv)[:, None] * c
        np.testing.assert_allclose(full - half, missing, atol=1e-10)


class TestEuclideanTrace:
    def test_identical_rows_zero_both_forms(self):
        c = np.tile([1.0, 2.0], (4, 1))
        w = np.full((4, 4), 0.5)
        np.fill_diagonal(w, 1.0)
        graph = SimilarityGraph(adjacency=w, degrees=w.sum(1), sigma=0.2)
        forms = f2_euclidean_trace(SignatureMatrix(c), graph, PenaltyConfig(lambda2=2.0))
        assert forms.loop == pytest.approx(0.0, abs=1e-12)
        assert forms.trace == pytest.approx(0.0, abs=1e-10)

    def test_forms_agree_random(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            c, graph, _ = random_instance(rng, n_rows=5, k=2)
            forms = f2_euclidean_trace(SignatureMatrix(c), graph, PenaltyConfig(lambda2=1.0))
            assert forms.trace == pytest.approx(forms.loop, rel=1e-10)

    def test_zero_adjacency(self):
        c = np.array([[1.0, 0.2], [0.3, 1.0]])
        graph = SimilarityGraph(
            adjacency=np.eye(2), degrees=np.ones(2), sigma=0.2
        )
        # only self-loops: Euclidean distance of a row to itself is zero
        forms = f2_euclidean_trace(SignatureMatrix(c), graph, PenaltyConfig(lambda2=1.0))
        assert forms.loop == pytest.approx(0.0, abs=1e-12)
        assert forms.trace == pytest.approx(0.0, abs=1e-12)


class TestScaleInvariance:
    def test_penalties_invariant_under_row_scaling(self):
        rng = np.random.default_rng(29)
        c, graph, markers = random_instance(rng, n_rows=10, k=3)
        cfg = PenaltyConfig(lambda1=1.2, lambda2=0.7)
        scales = rng.uniform(0.1, 10.0, 10)
        scaled = SignatureMatrix(c * scales[:, None])
        orig = SignatureMatrix(c)
        assert f1_value(scaled, markers, cfg) == pytest.approx(
            f1_value(orig, markers, cfg), rel=1e-10
        )
        assert f2_value(scaled, graph, cfg) == pytest.approx(
            f2_value(orig, graph, cfg), rel=1e-10
        )

    def test_values_nonnegative(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            c, graph, markers = random_instance(rng)
            cfg = PenaltyConfig(lambda1=rng.uniform(0, 3), lambda2=rng.uniform(0, 3))
            assert f1_value(SignatureMatrix(c), markers, cfg) >= 0.0
            assert f2_value(SignatureMatrix(c), graph, cfg) >= 0.0


class TestFrozenWeights:
    def test_gradient_at_freeze_point_is_true_gradient(self):
        rng = np.random.default_rng(37)
        c, graph, markers = random_instance(rng, n_rows=10, k=3)
        cfg = PenaltyConfig(lambda1=1.4, lambda2=0.9)
        weights = PenaltyWeights.from_signature(SignatureMatrix(c), graph, markers, cfg)
        frozen = frozen_penalty_gradient(c, weights, markers, cfg)
        true_grad = f1_gradient(SignatureMatrix(c), markers, cfg) + f2_gradient(
            SignatureMatrix(c), graph, cfg
        )
        np.testing.assert_allclose(frozen, true_grad, atol=1e-12)

    def test_frozen_pair_consistent_by_fd(self):
        rng = np.random.default_rng(41)
        c, graph, markers = random_instance(rng, n_rows=8, k=3)
        cfg = PenaltyConfig(lambda1=0.8, lambda2=1.6)
        weights = PenaltyWeights.from_signature(SignatureMatrix(c), graph, markers, cfg)
        a = rng.uniform(0.2, 1.5, c.shape)
        grad = frozen_penalty_gradient(a, weights, markers, cfg)
        fd = central_differences(
            lambda v: frozen_penalty_value(v, weights, markers, cfg), a
        )
        assert np.linalg.norm(grad - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)

    def test_values_recorded_at_freeze(self):
        rng = np.random.default_rng(43)
        c, graph, markers = random_instance(rng, n_rows=9, k=3)
        cfg = PenaltyConfig(lambda1=2.0, lambda2=3.0)
        weights = PenaltyWeights.from_signature(SignatureMatrix(c), graph, markers, cfg)
        assert weights.f1_at_freeze == pytest.approx(
            f1_value(SignatureMatrix(c), markers, cfg), rel=1e-12
        )
        assert weights.f2_at_freeze == pytest.approx(
            f2_value(SignatureMatrix(c), graph, cfg), rel=1e-12
        )

    def test_penalty_value_arrays_matches_typed_path(self):
        rng = np.random.default_rng(47)
        c, graph, markers = random_instance(rng, n_rows=7, k=3)
        cfg = PenaltyConfig(lambda1=1.1, lambda2=0.6)
        direct = penalty_value_arrays(c, graph.adjacency, markers, cfg)
        typed = f1_value(SignatureMatrix(c), markers, cfg) + f2_value(
            SignatureMatrix(c), graph, cfg
        )
        assert direct == pytest.approx(typed, rel=1e-12)

    def test_zero_row_contributes_zero_gradient_row(self):
        c = np.array([[1.0, 0.5], [0.0, 0.0], [0.4, 1.2]])
        w = np.full((3, 3), 0.5)
        np.fill_diagonal(w, 1.0)
        graph = SimilarityGraph(adjacency=w, degrees=w.sum(1), sigma=0.2)
        markers = MarkerAssignment.from_labels(np.array([1, 2, 0]), 2)
        cfg = PenaltyConfig(lambda1=1.0, lambda2=1.0)
        c_sig = SignatureMatrix(c)
        g1 = f1_gradient(c_sig, markers, cfg)
        g2 = f2_gradient(c_sig, graph, cfg)
        np.testing.assert_array_equal(g1[1], 0.0)
        np.testing.assert_array_equal(g2[1], 0.0)
        assert np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))
