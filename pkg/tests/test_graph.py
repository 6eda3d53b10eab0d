import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdeconv.errors import ClusteringError, DataError, ParameterError
from graphdeconv.graph import (
    GraphSparsity,
    LaplacianKind,
    MarkerAssignment,
    build_adjacency,
    cluster_rows,
    graph_laplacian,
    select_markers,
    spectral_embed,
)
from graphdeconv.matrices import ExpressionMatrix
from graphdeconv.pipeline import prepare_structure
from graphdeconv.synthetic import SyntheticSpec, generate_synthetic


def make_expression(values):
    values = np.asarray(values, dtype=float)
    return ExpressionMatrix(
        values,
        gene_ids=[f"g{i}" for i in range(values.shape[0])],
        sample_ids=[f"s{j}" for j in range(values.shape[1])],
        nonnegative=False,
    )


def three_cloud_expression(seed=0, per_cloud=30, n=12):
    """Rows tightly correlated with one of three orthogonal directions."""
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for r in range(3):
        base = np.zeros(n)
        base[4 * r: 4 * r + 4] = 1.0
        for _ in range(per_cloud):
            rows.append(rng.uniform(0.5, 2.0) * base + rng.uniform(0, 0.02, n))
            labels.append(r + 1)
    order = rng.permutation(len(rows))
    return make_expression(np.array(rows)[order]), np.array(labels)[order]


class TestBuildAdjacency:
    def test_identical_rows_weight_one(self):
        g = make_expression([[1.0, 2.0], [2.0, 4.0], [1.0, 0.0]])
        graph = build_adjacency(g, sigma=0.7)
        assert graph.adjacency[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_rows(self):
        g = make_expression([[1.0, 0.0], [0.0, 1.0]])
        graph = build_adjacency(g, sigma=0.5)
        assert graph.adjacency[0, 1] == pytest.approx(math.exp(-2.0), rel=1e-12)

    def test_half_correlated_rows(self):
        # independent scalar computation of exp(-d^2/sigma)
        d = 1.0 - (1.0 * 1.0 + 0.0 * 1.0) / (1.0 * math.sqrt(2.0))
        expected = math.exp(-d * d / 0.2)
        g = make_expression([[1.0, 0.0], [1.0, 1.0]])
        graph = build_adjacency(g, sigma=0.2)
        assert graph.adjacency[0, 1] == pytest.approx(expected, rel=1e-12)

    def test_diagonal_is_one(self):
        g, _ = three_cloud_expression()
        graph = build_adjacency(g, sigma=0.2)
        np.testing.assert_array_equal(np.diag(graph.adjacency), 1.0)

    def test_bad_sigma(self):
        g = make_expression([[1.0, 0.0]])
        with pytest.raises(ParameterError):
            build_adjacency(g, sigma=0.0)

    def test_zero_row_rejected(self):
        g = make_expression([[1.0, 1.0], [0.0, 0.0]])
        with pytest.raises(DataError, match="zero row"):
            build_adjacency(g, sigma=0.2)

    @pytest.mark.parametrize("sparsity", ["dense", "knn:3", "threshold:0.5"])
    def test_symmetry_exact_all_modes(self, sparsity):
        g, _ = three_cloud_expression(seed=3)
        graph = build_adjacency(g, sigma=0.2, sparsity=sparsity)
        assert np.max(np.abs(graph.adjacency - graph.adjacency.T)) == 0.0
        assert np.all(graph.degrees > 0)

    def test_knn_keeps_row_maxima(self):
        g, _ = three_cloud_expression(seed=1)
        dense = build_adjacency(g, sigma=0.2)
        sparse = build_adjacency(g, sigma=0.2, sparsity="knn:5")
        w, ws = dense.adjacency, sparse.adjacency
        kept = ws > 0
        # every kept off-diagonal entry keeps its dense value
        np.testing.assert_array_equal(ws[kept], w[kept])
        # each row keeps at least its own 5 largest neighbors
        n = w.shape[0]
        for i in range(min(n, 10)):
            off = w[i].copy()
            off[i] = -np.inf
            top5 = np.argsort(off)[-5:]
            assert np.all(ws[i, top5] > 0)

    def test_sparsity_parse_errors(self):
        with pytest.raises(ParameterError):
            GraphSparsity.parse("nearest:5")
        with pytest.raises(ParameterError):
            GraphSparsity.parse("knn:zero")
        with pytest.raises(ParameterError):
            GraphSparsity(mode="knn")


class TestGraphLaplacian:
    def setup_method(self):
        g = make_expression([[1.0, 1.0], [2.0, 2.0]])
        self.graph = build_adjacency(g, sigma=0.5)

    def test_unnormalized_identical_pair(self):
        lap = graph_laplacian(self.graph, LaplacianKind.UNNORMALIZED)
        np.testing.assert_allclose(lap, [[1.0, -1.0], [-1.0, 1.0]], atol=1e-12)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(lap)), [0.0, 2.0], atol=1e-12)

    def test_symmetric_identical_pair(self):
        lap = graph_laplacian(self.graph, LaplacianKind.SYMMETRIC)
        np.testing.assert_allclose(lap, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-12)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(lap)), [0.0, 1.0], atol=1e-12)

    def test_random_walk_rows_sum_to_zero(self):
        g, _ = three_cloud_expression(seed=5)
        graph = build_adjacency(g, sigma=0.2)
        lap = graph_laplacian(graph, LaplacianKind.RANDOM_WALK)
        np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-12)

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_unnormalized_annihilates_constants(self, seed):
        rng = np.random.default_rng(seed)
        g = make_expression(rng.uniform(0.1, 2.0, (5, 4)))
        graph = build_adjacency(g, sigma=0.3)
        lap = graph_laplacian(graph, LaplacianKind.UNNORMALIZED)
        bound = 1e-10 * np.max(np.abs(lap)) * 5
        assert np.max(np.abs(lap @ np.ones(5))) <= bound

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_symmetric_psd_spectrum_in_0_2(self, seed):
        rng = np.random.default_rng(seed)
        g = make_expression(rng.uniform(0.1, 2.0, (6, 4)))
        graph = build_adjacency(g, sigma=0.3)
        lap = graph_laplacian(graph, LaplacianKind.SYMMETRIC)
        eigvals = np.linalg.eigvalsh(lap)
        assert eigvals[0] >= -1e-10
        assert eigvals[-1] <= 2.0 + 1e-10
        assert abs(eigvals[0]) <= 1e-10


class TestSpectralEmbed:
    def test_disconnected_components_zero_multiplicity(self):
        # two components, each a pair of identical rows
        w = np.zeros((4, 4))
        w[0, 1] = w[1, 0] = 1.0
        w[2, 3] = w[3, 2] = 1.0
        np.fill_diagonal(w, 1.0)
        from graphdeconv.graph import SimilarityGraph

        graph = SimilarityGraph(adjacency=w, degrees=w.sum(1), sigma=0.2)
        lap = graph_laplacian(graph, LaplacianKind.SYMMETRIC)
        eigvals = np.sort(np.linalg.eigvalsh(lap))
        assert eigvals[0] == pytest.approx(0.0, abs=1e-12)
        assert eigvals[1] == pytest.approx(0.0, abs=1e-12)
        emb = spectral_embed(lap, 2)
        # embedding separates the components: rows 0,1 equal, rows 2,3 equal,
        # and the two groups differ
        np.testing.assert_allclose(emb[0], emb[1], atol=1e-8)
        np.testing.assert_allclose(emb[2], emb[3], atol=1e-8)
        assert np.linalg.norm(emb[0] - emb[2]) > 0.1

    def test_eigenpairs_satisfy_eigen_equation(self):
        # oracle-free check: residual ||L v - mu v|| and orthonormality
        g, _ = three_cloud_expression(seed=7)
        graph = build_adjacency(g, sigma=0.2)
        lap = graph_laplacian(graph, LaplacianKind.SYMMETRIC)
        emb = spectral_embed(lap, 3)
        for j in range(3):
            v = emb[:, j]
            mu = float(v @ lap @ v)
            assert np.linalg.norm(lap @ v - mu * v) <= 1e-10 * max(1.0, abs(mu))
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
        gram = emb.T @ emb
        np.testing.assert_allclose(gram, np.eye(3), atol=1e-10)

    def test_sign_convention(self):
        g, _ = three_cloud_expression(seed=9)
        graph = build_adjacency(g, sigma=0.2)
        lap = graph_laplacian(graph, LaplacianKind.SYMMETRIC)
        emb = spectral_embed(lap, 3)
        for j in range(3):
            lead = int(np.argmax(np.abs(emb[:, j])))
            assert emb[lead, j] > 0

    def test_k_bounds(self):
        lap = np.eye(3)
        with pytest.raises(ParameterError):
            spectral_embed(lap, 1)
        with pytest.raises(ParameterError):
            spectral_embed(lap, 4)

    def test_asymmetric_rejected(self):
        lap = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(DataError):
            spectral_embed(lap, 2)

    @pytest.mark.slow
    def test_iterative_path_matches_dense(self):
        # above the dense cutoff the Lanczos path must agree with a dense solve
        rng = np.random.default_rng(0)
        n = 2100
        g = make_expression(rng.uniform(0.05, 2.0, (n, 6)))
        graph = build_adjacency(g, sigma=0.5)
        lap = graph_laplacian(graph, LaplacianKind.SYMMETRIC)
        emb = spectral_embed(lap, 3)
        eigvals_dense = np.linalg.eigvalsh(lap)[:3]
        for j in range(3):
            v = emb[:, j]
            mu = float(v @ lap @ v)
            assert mu == pytest.approx(eigvals_dense[j], abs=1e-8)
            assert np.linalg.norm(lap @ v - mu * v) <= 1e-8


class TestClusterRows:
    def test_three_clouds_pure(self):
        g, labels = three_cloud_expression(seed=11)
        graph = build_adjacency(g, sigma=0.2)
        lap = graph_laplacian(graph, LaplacianKind.SYMMETRIC)
        emb = spectral_embed(lap, 3)
        clusters = cluster_rows(emb, 3, seed=0)
        assert sorted(np.unique(clusters.labels)) == [1, 2, 3]
        # purity 1.0: each cluster maps to exactly one generator label
        for group in clusters.groups:
            assert len(np.unique(labels[group])) == 1

    def test_degenerate_embedding_rejected(self):
        emb = np.ones((10, 3))
        with pytest.raises(ClusteringError, match="degenerate"):
            cluster_rows(emb, 3, seed=0)

    def test_row_permutation_equivariance(self):
        g, _ = three_cloud_expression(seed=13)
        graph = build_adjacency(g, sigma=0.2)
        lap = graph_laplacian(graph, LaplacianKind.SYMMETRIC)
        emb = spectral_embed(lap, 3)
        clusters = cluster_rows(emb, 3, seed=0)
        rng = np.random.default_rng(1)
        perm = rng.permutation(emb.shape[0])
        clusters_perm = cluster_rows(emb[perm], 3, seed=0)
        # same partition up to label renaming
        for r in range(3):
            members = np.flatnonzero(clusters_perm.labels == r + 1)
            original = perm[members]
            assert len(np.unique(clusters.labels[original])) == 1


class TestSelectMarkers:
    def test_recovers_generator_labels(self):
        truth = generate_synthetic(
            SyntheticSpec(n_genes=150, n_samples=12, n_types=3,
                          marker_split=(50, 50, 50, 0), ndr=0.02, seed=3)
        )
        structure = prepare_structure(truth.g, 3, sigma=0.2, seed=0,
                                      markers_per_cluster=20)
        markers = structure.markers
        agree = total = 0
        for r, members in enumerate(markers.marker_sets):
            got = truth.labels[members]
            counts = np.bincount(got[got > 0])
            agree += counts.max() if counts.size else 0
            total += members.size
        assert agree / total >= 0.95

    def test_full_cluster_selection(self):
        g, _ = three_cloud_expression(seed=17)
        structure = prepare_structure(g, 3, sigma=0.2, seed=0, markers_per_cluster=30)
        for r in range(3):
            np.testing.assert_array_equal(
                np.sort(structure.markers.marker_sets[r]),
                np.sort(structure.clusters.groups[r]),
            )

    def test_indicator_row_sums(self):
        g, _ = three_cloud_expression(seed=19)
        structure = prepare_structure(g, 3, sigma=0.2, seed=0, markers_per_cluster=10)
        sums = structure.markers.indicator.sum(axis=1)
        np.testing.assert_array_equal(sums[structure.markers.chi], 1.0)
        np.testing.assert_array_equal(sums[~structure.markers.chi], 0.0)

    def test_per_cluster_too_large(self):
        g, _ = three_cloud_expression(seed=21)
        structure = prepare_structure(g, 3, sigma=0.2, seed=0)
        with pytest.raises(ParameterError, match="cluster sizes"):
            select_markers(g, structure.clusters, per_cluster=31)

    @pytest.mark.parametrize("strategy", ["medoid", "centroid", "max-mean-correlation"])
    def test_strategies_agree_on_clean_data(self, strategy):
        g, labels = three_cloud_expression(seed=23)
        structure = prepare_structure(g, 3, sigma=0.2, seed=0)
        markers = select_markers(g, structure.clusters, per_cluster=10, strategy=strategy)
        for members in markers.marker_sets:
            assert len(np.unique(labels[members])) == 1

    def test_determinism(self):
        truth = generate_synthetic(
            SyntheticSpec(n_genes=120, n_samples=10, n_types=3,
                          marker_split=(40, 40, 40, 0), ndr=0.05, seed=5)
        )
        a = prepare_structure(truth.g, 3, sigma=0.2, seed=4, markers_per_cluster=15)
        b = prepare_structure(truth.g, 3, sigma=0.2, seed=4, markers_per_cluster=15)
        np.testing.assert_array_equal(a.markers.g, b.markers.g)
        np.testing.assert_array_equal(a.clusters.labels, b.clusters.labels)


class TestMarkerAssignment:
    def test_from_labels_structure(self):
        g_map = np.array([0, 1, 2, 1, 0, 2])
        markers = MarkerAssignment.from_labels(g_map, 2)
        np.testing.assert_array_equal(markers.marker_sets[0], [1, 3])
        np.testing.assert_array_equal(markers.marker_sets[1], [2, 5])
        np.testing.assert_array_equal(markers.chi, [False, True, True, True, False, True])
        assert markers.indicator.shape == (6, 2)
        np.testing.assert_array_equal(markers.indicator[1], [1.0, 0.0])
        np.testing.assert_array_equal(markers.indicator[2], [0.0, 1.0])

    def test_label_bounds_checked(self):
        with pytest.raises(ParameterError):
            MarkerAssignment.from_labels(np.array([0, 3]), 2)
