import numpy as np
import pytest
from scipy import sparse

from flatvae import riemann as rm
from flatvae.errors import (ContractViolation, DegenerateMetricError,
                            GraphConnectivityError, UnsupportedDimensionError)


def test_condition_number_examples():
    assert rm.condition_number(np.eye(2)) == 1.0
    assert rm.condition_number(np.diag([1.0, 4.0])) == 4.0
    # eigenvalues of [[2,1],[1,2]] are 3 and 1 by the characteristic polynomial
    assert abs(rm.condition_number(np.array([[2.0, 1.0], [1.0, 2.0]])) - 3.0) < 1e-12


def test_condition_number_closed_form_matches_eigensolver():
    rng = np.random.default_rng(0)
    for _ in range(50):
        j = rng.standard_normal((6, 2))
        g = j.T @ j + 0.01 * np.eye(2)
        eig = np.linalg.eigvalsh(g)
        assert abs(rm.condition_number(g) - eig[-1] / eig[0]) < 1e-9 * (eig[-1] / eig[0])


def test_condition_number_scale_invariant():
    g = np.array([[2.0, 0.5], [0.5, 1.0]])
    base = rm.condition_number(g)
    for s in (0.5, 3.0, 100.0):
        assert abs(rm.condition_number(s * g) - base) < 1e-9


def test_condition_number_degenerate_raises():
    with pytest.raises(DegenerateMetricError):
        rm.condition_number(np.diag([1.0, 0.0]))


def test_magnification_factor_examples():
    assert rm.magnification_factor(np.eye(2)) == 1.0
    assert rm.magnification_factor(np.diag([4.0, 9.0])) == 6.0


def test_magnification_factor_matches_singular_values():
    rng = np.random.default_rng(1)
    for _ in range(20):
        j = rng.standard_normal((7, 3))
        got = rm.magnification_factor(j.T @ j)
        want = float(np.prod(np.linalg.svd(j, compute_uv=False)))
        assert abs(got - want) < 1e-9 * max(want, 1.0)


def test_normalised_mf():
    assert np.array_equal(rm.normalised_mf([2.0, 2.0, 2.0]), [1.0, 1.0, 1.0])
    assert np.array_equal(rm.normalised_mf([1.0, 3.0]), [0.5, 1.5])
    rng = np.random.default_rng(2)
    vals = rng.uniform(0.1, 5.0, 100)
    assert abs(rm.normalised_mf(vals).mean() - 1.0) < 1e-12
    with pytest.raises(DegenerateMetricError):
        rm.normalised_mf([0.0, 0.0])


def test_straight_line_waypoints():
    p = rm.straight_line([0.0, 0.0], [2.0, 0.0], 1)
    assert p.waypoints.shape == (2, 2)
    p2 = rm.straight_line([0.0, 0.0], [1.0, 1.0], 10)
    assert np.allclose(p2.waypoints[5], [0.5, 0.5])
    for m in (1, 7, 100):
        path = rm.straight_line([1.0, -1.0], [4.0, 3.0], m)
        assert abs(path.latent_length() - 5.0) < 1e-12


def test_path_length_scaled_identity_decoder():
    decode = lambda z: 2.0 * np.atleast_2d(z)
    for m in (1, 10, 500):
        path = rm.straight_line([0.0, 0.0], [0.6, 0.8], m)
        assert abs(rm.path_length_observation(decode, path) - 2.0) < 1e-12
    same = rm.LatentPath(np.zeros((3, 2)))
    assert rm.path_length_observation(decode, same) == 0.0


def test_path_length_quarter_circle():
    theta = np.linspace(0.0, np.pi / 2, 1001)
    path = rm.LatentPath(np.stack([np.cos(theta), np.sin(theta)], axis=1))
    length = rm.path_length_observation(lambda z: np.atleast_2d(z), path)
    assert abs(length - np.pi / 2) < 1e-4


def flat_graph(seed=3, n=400, k=8):
    box = np.array([[0.0, 0.0], [1.0, 1.0]])
    return rm.build_geodesic_graph(lambda z: np.atleast_2d(z), box, n, k, seed)


def test_geodesic_graph_build_is_deterministic():
    a, b = flat_graph(seed=5), flat_graph(seed=5)
    assert np.array_equal(a.nodes, b.nodes)
    assert (a.adjacency != b.adjacency).nnz == 0


def test_geodesic_graph_two_nodes():
    box = np.array([[0.0, 0.0], [1.0, 1.0]])
    g = rm.build_geodesic_graph(lambda z: np.atleast_2d(z), box, 2, 1, seed=0)
    assert g.adjacency.nnz == 2  # one undirected edge
    w = g.adjacency.data[0]
    assert abs(w - np.linalg.norm(g.nodes[0] - g.nodes[1])) < 1e-12


def test_flat_space_graph_distance_close_to_euclidean():
    g = flat_graph(seed=7, n=3000, k=12)
    z_a, z_b = np.array([0.05, 0.05]), np.array([0.95, 0.95])
    _, length = rm.geodesic(g, z_a, z_b)
    want = np.linalg.norm(z_b - z_a)
    assert abs(length - want) / want < 0.05


def test_geodesic_same_point_is_zero():
    g = flat_graph()
    path, length = rm.geodesic(g, [0.5, 0.5], [0.5, 0.5])
    assert length == 0.0
    assert np.array_equal(path.start, path.end)


def test_geodesic_prefers_two_hops_over_heavy_edge():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    adj = sparse.csr_matrix(np.array([[0.0, 1.0, 3.0],
                                      [1.0, 0.0, 1.0],
                                      [3.0, 1.0, 0.0]]))
    # endpoints decode onto their attachment nodes, so the chords are zero
    g = rm.GeodesicGraph(nodes=nodes, decoded=np.zeros_like(nodes), adjacency=adj,
                         neighbour_count=2, decode=lambda z: np.atleast_2d(z) * 0.0)
    path, length = rm.geodesic(g, nodes[0], nodes[2])
    assert length == 2.0
    assert path.waypoints.shape[0] == 5  # z_a, three nodes, z_b


def test_geodesic_disconnected_raises():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0]])
    adj = sparse.lil_matrix((4, 4))
    adj[0, 1] = adj[1, 0] = 1.0
    adj[2, 3] = adj[3, 2] = 1.0
    g = rm.GeodesicGraph(nodes=nodes, decoded=nodes.copy(), adjacency=adj.tocsr(),
                         neighbour_count=1, decode=lambda z: np.atleast_2d(z))
    with pytest.raises(GraphConnectivityError):
        rm.geodesic(g, nodes[0], nodes[2])


def test_graph_build_rejects_disconnected():
    with pytest.raises(GraphConnectivityError):
        rm.build_geodesic_graph(lambda z: np.atleast_2d(z),
                                np.array([[0.0, 0.0], [1.0, 1.0]]), 40, 1, seed=1)


def test_ratio_table_flat_decoder_near_one():
    g = flat_graph(seed=9, n=3000, k=12)
    rng = np.random.default_rng(10)
    pairs = []
    while len(pairs) < 20:
        a, b = rng.uniform(0.1, 0.9, 2), rng.uniform(0.1, 0.9, 2)
        if np.linalg.norm(a - b) > 0.3:
            pairs.append((a, b))
    stats = rm.ratio_table(lambda z: np.atleast_2d(z), g, pairs, m=50)
    assert abs(stats.observation_mean - 1.0) < 0.1
    assert 0.0 < stats.latent_mean <= 1.0 + 1e-12


def test_ratio_table_latent_ratio_never_exceeds_one():
    g = flat_graph(seed=11, n=600, k=10)
    rng = np.random.default_rng(12)
    pairs = [(rng.uniform(0.0, 1.0, 2), rng.uniform(0.0, 1.0, 2)) for _ in range(30)]
    stats = rm.ratio_table(lambda z: np.atleast_2d(z), g, pairs, m=20)
    assert stats.latent_mean <= 1.0 + 1e-12


def test_smoothness_affine_decoder_is_zero():
    decode = lambda z: np.atleast_2d(z) @ np.array([[1.0, 2.0], [3.0, 4.0]]) + 5.0
    mean, std = rm.smoothness(decode, [([0.0, 0.0], [1.0, 1.0])], m=20)
    assert np.max(mean) < 1e-9
    assert np.max(std) < 1e-9


def test_smoothness_quadratic_decoder_constant_two():
    decode = lambda z: np.atleast_2d(z) ** 2
    for m in (2, 10, 50):
        mean, std = rm.smoothness(decode, [([0.0], [1.0])], m=m)
        assert abs(mean[0] - 2.0) < 1e-8
        assert std[0] < 1e-8


def test_smoothness_scales_with_output():
    decode = lambda z: np.sin(np.atleast_2d(z))
    pairs = [([0.0, 0.0], [2.0, 1.0])]
    m1, _ = rm.smoothness(decode, pairs, m=30)
    m3, _ = rm.smoothness(lambda z: 3.0 * decode(z), pairs, m=30)
    assert np.allclose(m3, 3.0 * m1)


def test_grid_fields_flat_decoder():
    box = np.array([[-1.0, -1.0], [1.0, 1.0]])
    fields = rm.grid_fields(lambda z: np.atleast_2d(z), box, resolution=21,
                            centres=[[0.0, 0.0]])
    assert np.max(np.abs(fields.mf - 1.0)) < 1e-6
    dist = fields.distance_fields[0]
    cells = np.stack(np.meshgrid(fields.z1, fields.z2, indexing="ij"), axis=-1)
    euclid = np.linalg.norm(cells, axis=-1)
    centre = np.unravel_index(np.argmin(euclid), euclid.shape)
    assert dist[centre] == 0.0
    # along axis and diagonal rays the 8-connected paths are exact
    ci, cj = centre
    for i in range(dist.shape[0]):
        assert abs(dist[i, cj] - euclid[i, cj]) < 1e-9
        j = cj + (i - ci)
        if 0 <= j < dist.shape[1]:
            assert abs(dist[i, j] - euclid[i, j]) < 1e-9
    # off those rays the stretch is bounded by the 8-connectivity chamfer limit
    mask = euclid > 0.05
    rel = (dist[mask] - euclid[mask]) / euclid[mask]
    assert np.min(rel) >= -1e-9  # grid paths never undercut straight lines
    assert np.max(rel) <= 0.083


def test_grid_distance_non_decreasing_along_paths():
    box = np.array([[-1.0, -1.0], [1.0, 1.0]])
    fields = rm.grid_fields(lambda z: np.atleast_2d(z) ** 2 + np.atleast_2d(z),
                            box, resolution=15, centres=[[0.2, -0.1]])
    dist = fields.distance_fields[0]
    assert np.all(np.isfinite(dist))
    assert (dist == 0.0).sum() == 1


def test_grid_fields_vector_field_constant_for_scaled_identity():
    box = np.array([[-1.0, -1.0], [1.0, 1.0]])
    fields = rm.grid_fields(lambda z: 2.0 * np.atleast_2d(z), box, resolution=9)
    assert np.allclose(fields.vector_field, 2.0)


def test_grid_fields_rejects_non_planar():
    with pytest.raises(UnsupportedDimensionError):
        rm.grid_fields(lambda z: np.atleast_2d(z),
                       np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]), 5)


def test_metric_report_identity_decoder():
    rng = np.random.default_rng(13)
    report = rm.metric_report(lambda z: np.atleast_2d(z), rng.standard_normal((50, 2)))
    assert np.allclose(report.condition_numbers, 1.0)
    assert np.allclose(report.normalised_mf, 1.0)
    s = report.summary()
    assert abs(s["condition_number"]["median"] - 1.0) < 1e-9


def test_export_field_csv_roundtrip(tmp_path):
    z1 = np.array([0.0, 1.0])
    z2 = np.array([0.0, 1.0])
    vals = np.array([[1.0, 2.0], [3.0, 4.0]])
    path = tmp_path / "field.csv"
    rm.export_field_csv(path, z1, z2, vals)
    lines = path.read_text().splitlines()
    assert lines[0] == "z1,z2,value"
    assert len(lines) == 5
    got = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(got[:, 2], [1.0, 2.0, 3.0, 4.0])


def test_bounding_box_margin():
    pts = np.array([[0.0, 0.0], [1.0, 2.0]])
    box = rm.bounding_box(pts, margin=0.1)
    assert np.allclose(box[0], [-0.1, -0.2])
    assert np.allclose(box[1], [1.1, 2.2])
