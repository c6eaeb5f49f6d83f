"""Latent-geometry analysis of a trained decoder.

Condition numbers and magnification factors summarise how far the metric
tensor G = J^T J is from a scaled identity; geodesics are approximated by
shortest paths on a k-nearest-neighbour graph whose edges are weighted by
the observation-space chord between decoded endpoints; smoothness measures
second differences of decoded straight-line interpolations. Everything here
is read-only on the model weights and pure given (weights, seed, config).
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .errors import (ContractViolation, DegenerateMetricError,
                     GraphConnectivityError, UnsupportedDimensionError)
from .flatloss import approx_jacobian, metric_tensor

EIG_FLOOR = 1e-12


def condition_number(g: np.ndarray) -> float:
    """Ratio of the extreme eigenvalues of a symmetric PSD matrix."""
    g = np.asarray(g, dtype=float)
    if g.shape == (2, 2):
        mid = 0.5 * (g[0, 0] + g[1, 1])
        disc = np.hypot(0.5 * (g[0, 0] - g[1, 1]), g[0, 1])
        s_min, s_max = mid - disc, mid + disc
    else:
        eig = np.linalg.eigvalsh(g)
        s_min, s_max = eig[0], eig[-1]
    if s_min <= EIG_FLOOR:
        raise DegenerateMetricError(f"smallest metric eigenvalue {s_min:.3e} below {EIG_FLOOR}")
    return float(s_max / s_min)


def magnification_factor(g: np.ndarray) -> float:
    """sqrt(det G), clamped at zero."""
    return float(np.sqrt(max(np.linalg.det(np.asarray(g, dtype=float)), 0.0)))


def normalised_mf(values) -> np.ndarray:
    """Divide by the mean so different models become comparable."""
    v = np.asarray(values, dtype=float)
    if v.size == 0 or v.mean() <= 0.0:
        raise DegenerateMetricError("magnification factors have non-positive mean")
    return v / v.mean()


@dataclass
class LatentPath:
    waypoints: np.ndarray  # [M+1, latent_dim]

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.shape[0] < 2 or not np.all(np.isfinite(self.waypoints)):
            raise ContractViolation("a path needs at least two finite waypoints")

    @property
    def start(self) -> np.ndarray:
        return self.waypoints[0]

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]

    def latent_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


def straight_line(z_a, z_b, m: int) -> LatentPath:
    """M+1 evenly spaced waypoints from z_a to z_b."""
    if m < 1:
        raise ContractViolation(f"need at least 1 segment, got {m}")
    t = np.linspace(0.0, 1.0, m + 1)[:, None]
    z_a = np.asarray(z_a, dtype=float)
    z_b = np.asarray(z_b, dtype=float)
    return LatentPath((1.0 - t) * z_a + t * z_b)


def path_length_observation(decode, path: LatentPath) -> float:
    """Polyline length of the decoded path in observation space."""
    x = np.asarray(decode(path.waypoints), dtype=float)
    return float(np.linalg.norm(np.diff(x, axis=0), axis=1).sum())


@dataclass
class GeodesicGraph:
    nodes: np.ndarray  # [n, latent_dim]
    decoded: np.ndarray  # [n, data_dim]
    adjacency: sparse.csr_matrix  # symmetric, observation-space chord weights
    neighbour_count: int
    decode: "callable"
    _tree: cKDTree = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.nodes)
        return self._tree


def bounding_box(points: np.ndarray, margin: float = 0.1) -> np.ndarray:
    """Per-axis [lo, hi] of the points, expanded by the given fraction."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = margin * np.maximum(hi - lo, 1e-9)
    return np.stack([lo - pad, hi + pad])


def build_geodesic_graph(decode, box: np.ndarray, node_count: int,
                         neighbour_count: int, seed: int) -> GeodesicGraph:
    """Uniform node sampling in the box, symmetric k-NN, chord-length weights."""
    box = np.asarray(box, dtype=float)
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(box[0], box[1], size=(node_count, box.shape[1]))
    decoded = np.asarray(decode(nodes), dtype=float)
    k = min(neighbour_count, node_count - 1)
    _, idx = cKDTree(nodes).query(nodes, k=k + 1)
    rows = np.repeat(np.arange(node_count), k)
    cols = idx[:, 1:].ravel()
    weights = np.linalg.norm(decoded[rows] - decoded[cols], axis=1)
    adj = sparse.csr_matrix((weights, (rows, cols)), shape=(node_count, node_count))
    adj = adj.maximum(adj.T)
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise GraphConnectivityError(f"geodesic graph has {n_comp} components; "
                                     "increase node or neighbour count")
    return GeodesicGraph(nodes=nodes, decoded=decoded, adjacency=adj,
                         neighbour_count=k, decode=decode)


def geodesic(graph: GeodesicGraph, z_a, z_b) -> "tuple[LatentPath, float]":
    """Shortest decoded path between two latent points.

    Endpoints attach to their nearest graph nodes with the corresponding
    observation-space chord; returns the waypoint path and its total length.
    """
    z_a = np.asarray(z_a, dtype=float)
    z_b = np.asarray(z_b, dtype=float)
    if np.array_equal(z_a, z_b):
        return LatentPath(np.stack([z_a, z_b])), 0.0
    _, ia = graph.tree().query(z_a)
    _, ib = graph.tree().query(z_b)
    fa, fb = np.atleast_2d(graph.decode(np.stack([z_a, z_b])))
    chord_a = float(np.linalg.norm(fa - graph.decoded[ia]))
    chord_b = float(np.linalg.norm(fb - graph.decoded[ib]))
    if ia == ib:
        return LatentPath(np.stack([z_a, graph.nodes[ia], z_b])), chord_a + chord_b
    dist, pred = dijkstra(graph.adjacency, directed=False, indices=ia,
                          return_predecessors=True)
    if not np.isfinite(dist[ib]):
        raise GraphConnectivityError("endpoints lie in disconnected graph components")
    order = [ib]
    while order[-1] != ia:
        order.append(pred[order[-1]])
    node_path = graph.nodes[order[::-1]]
    waypoints = np.vstack([z_a[None], node_path, z_b[None]])
    return LatentPath(waypoints), chord_a + float(dist[ib]) + chord_b


@dataclass
class RatioStats:
    observation_mean: float
    observation_std: float
    latent_mean: float
    latent_std: float


def ratio_table(decode, graph: GeodesicGraph, pairs, m: int = 100) -> RatioStats:
    """Straight-line-to-geodesic length ratios over the given point pairs.

    observation: decoded straight-line length over geodesic length;
    latent: endpoint distance over the geodesic polyline's latent length.
    """
    pairs = list(pairs)
    if not pairs:
        raise ContractViolation("ratio_table needs at least one pair")
    obs, lat = [], []
    for z_a, z_b in pairs:
        line = straight_line(z_a, z_b, m)
        geo_path, geo_len = geodesic(graph, z_a, z_b)
        if geo_len <= 0.0:
            raise ContractViolation("degenerate pair with zero geodesic length")
        obs.append(path_length_observation(decode, line) / geo_len)
        lat.append(float(np.linalg.norm(np.asarray(z_b) - np.asarray(z_a)))
                   / geo_path.latent_length())
    obs, lat = np.asarray(obs), np.asarray(lat)
    return RatioStats(float(obs.mean()), float(obs.std()),
                      float(lat.mean()), float(lat.std()))


def smoothness(decode, pairs, m: int = 100) -> "tuple[np.ndarray, np.ndarray]":
    """Mean and std of |second difference| of decoded straight lines.

    Second central differences along each decoded trajectory, scaled by
    1/dt^2, pooled over pairs and interior waypoints; one (mean, std) per
    output dimension.
    """
    if m < 2:
        raise ContractViolation(f"smoothness needs at least 2 segments, got {m}")
    dt = 1.0 / m
    stacked = []
    for z_a, z_b in pairs:
        x = np.asarray(decode(straight_line(z_a, z_b, m).waypoints), dtype=float)
        second = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / dt ** 2
        stacked.append(np.abs(second))
    all_rows = np.concatenate(stacked, axis=0)
    return all_rows.mean(axis=0), all_rows.std(axis=0)


# -- planar grid fields --------------------------------------------------------


@dataclass
class GridFields:
    z1: np.ndarray  # [resolution] cell-centre coordinates
    z2: np.ndarray
    mf: np.ndarray  # [resolution, resolution], indexed [i, j] = (z1[i], z2[j])
    vector_field: np.ndarray  # [resolution, resolution, 2], column norms of J
    distance_fields: "list[np.ndarray]"
    centres: np.ndarray


def grid_fields(decode, box: np.ndarray, resolution: int, centres=None,
                h: float = 1e-4) -> GridFields:
    """Magnification, Jacobian-norm and equidistance fields on a planar grid.

    The distance field runs a shortest-path sweep over the 8-connected grid
    graph with edge weight sqrt(dz^T G(midpoint) dz), the local line element
    of the decoded metric.
    """
    box = np.asarray(box, dtype=float)
    if box.shape[1] != 2:
        raise UnsupportedDimensionError(
            f"grid fields need a 2-D latent space, box has {box.shape[1]} axes")
    z1 = np.linspace(box[0, 0], box[1, 0], resolution)
    z2 = np.linspace(box[0, 1], box[1, 1], resolution)
    g1, g2 = np.meshgrid(z1, z2, indexing="ij")
    cells = np.stack([g1.ravel(), g2.ravel()], axis=1)  # [R*R, 2]

    jac = approx_jacobian(decode, cells, h)  # [R*R, data, 2]
    g = metric_tensor(jac)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
    mf = np.sqrt(np.maximum(det, 0.0)).reshape(resolution, resolution)
    vf = np.linalg.norm(jac, axis=1).reshape(resolution, resolution, 2)

    dist_fields = []
    centre_arr = np.zeros((0, 2))
    if centres is not None:
        centre_arr = np.atleast_2d(np.asarray(centres, dtype=float))
        adj = _grid_metric_graph(decode, cells, resolution, h)
        for c in centre_arr:
            start = int(np.argmin(np.linalg.norm(cells - c, axis=1)))
            dist = dijkstra(adj, directed=False, indices=start)
            dist_fields.append(dist.reshape(resolution, resolution))
    return GridFields(z1=z1, z2=z2, mf=mf, vector_field=vf,
                      distance_fields=dist_fields, centres=centre_arr)


def _grid_metric_graph(decode, cells: np.ndarray, resolution: int, h: float):
    """8-connected cell graph weighted by the local metric line element."""
    r = resolution
    index = np.arange(r * r).reshape(r, r)
    rows, cols, weights = [], [], []
    offsets = [(1, 0), (0, 1), (1, 1), (1, -1)]
    for di, dj in offsets:
        src_i = np.arange(max(0, -di), r - max(0, di))
        src_j = np.arange(max(0, -dj), r - max(0, dj))
        ii, jj = np.meshgrid(src_i, src_j, indexing="ij")
        a = index[ii, jj].ravel()
        b = index[ii + di, jj + dj].ravel()
        mids = 0.5 * (cells[a] + cells[b])
        gmid = metric_tensor(approx_jacobian(decode, mids, h))
        dz = cells[b] - cells[a]
        quad = (gmid[:, 0, 0] * dz[:, 0] ** 2 + 2.0 * gmid[:, 0, 1] * dz[:, 0] * dz[:, 1]
                + gmid[:, 1, 1] * dz[:, 1] ** 2)
        rows.append(a)
        cols.append(b)
        weights.append(np.sqrt(np.maximum(quad, 0.0)))
    adj = sparse.csr_matrix((np.concatenate(weights),
                             (np.concatenate(rows), np.concatenate(cols))),
                            shape=(r * r, r * r))
    return adj.maximum(adj.T)


# -- report -------------------------------------------------------------------


@dataclass
class AnalysisReport:
    condition_numbers: np.ndarray
    mf_values: np.ndarray
    normalised_mf: np.ndarray
    ratio_observation: "tuple[float, float] | None" = None
    ratio_latent: "tuple[float, float] | None" = None
    smoothness_mean: np.ndarray | None = None
    smoothness_std: np.ndarray | None = None

    def summary(self) -> dict:
        cn = np.asarray(self.condition_numbers)
        nmf = np.asarray(self.normalised_mf)
        out = {
            "condition_number": _box_stats(cn),
            "magnification_factor": _box_stats(np.asarray(self.mf_values)),
            "normalised_mf": _box_stats(nmf),
        }
        if self.ratio_observation is not None:
            out["ratio_observation"] = {"mean": self.ratio_observation[0],
                                        "std": self.ratio_observation[1]}
            out["ratio_latent"] = {"mean": self.ratio_latent[0],
                                   "std": self.ratio_latent[1]}
        if self.smoothness_mean is not None:
            out["smoothness"] = {
                "per_dimension_mean": np.asarray(self.smoothness_mean).tolist(),
                "per_dimension_std": np.asarray(self.smoothness_std).tolist(),
                "overall_mean": float(np.mean(self.smoothness_mean)),
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _box_stats(v: np.ndarray) -> dict:
    q1, q2, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(q2), "q1": float(q1), "q3": float(q3),
            "iqr": float(q3 - q1), "mean": float(v.mean()), "std": float(v.std()),
            "count": int(v.size)}


def metric_report(decode, z_points: np.ndarray, h: float = 1e-4) -> AnalysisReport:
    """Condition-number and magnification statistics at the given latents."""
    jac = approx_jacobian(decode, np.atleast_2d(z_points), h)
    metrics = metric_tensor(jac)
    cn = np.array([condition_number(g) for g in metrics])
    mf = np.array([magnification_factor(g) for g in metrics])
    return AnalysisReport(condition_numbers=cn, mf_values=mf,
                          normalised_mf=normalised_mf(mf))


def export_field_csv(path, z1: np.ndarray, z2: np.ndarray, values: np.ndarray) -> None:
    """Write a planar field as rows of z1,z2,value."""
    with open(path, "w") as fh:
        fh.write("z1,z2,value\n")
        for i, a in enumerate(z1):
            for j, b in enumerate(z2):
                fh.write(f"{float(a)!r},{float(b)!r},{float(values[i, j])!r}\n")
