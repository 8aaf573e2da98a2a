"""Face-graph extraction: triangle meshes to process graphs, parametric parts
to design graphs, plus feature normalization and a reviewable text cache."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TopologyError
from .mesh import TriMesh, face_areas, face_normals, undirected_edges
from .synth import (OperationLabel, PartSpec, SequenceSample, _deburr_target_index,
                    _final_stage, _poly_area, realize_feature)

RIGHT_ANGLE_TOL = 1e-6  # rad; classify a triangle angle as right within this
EQUILATERAL_COMPACTNESS = 4.0 * math.sqrt(3.0)  # normalizes compactness to 1


# --------------------------------------------------------------------------
# Feature layouts: named column blocks of each feature matrix.

@dataclass(frozen=True)
class Block:
    name: str
    offset: int
    width: int
    onehot: bool


def _build_layout(categories):
    blocks = []
    offset = 0
    for name, width, onehot in categories:
        blocks.append(Block(name, offset, width, onehot))
        offset += width
    return tuple(blocks), offset


STL_NODE_BLOCKS, D_STL = _build_layout([
    ("centroid", 3, False), ("normal", 3, False), ("area", 1, False),
    ("perimeter", 1, False), ("mean_edge_length", 1, False),
    ("angles", 3, False), ("angle_type", 3, True), ("compactness", 1, False),
])
STL_EDGE_BLOCKS, E_STL = _build_layout([
    ("centroid_distance", 1, False), ("normal_distance", 1, False),
    ("shared_edge_length", 1, False), ("edge_midpoint", 3, False),
    ("dihedral_angle", 1, False),
])
BREP_NODE_BLOCKS, D_BREP = _build_layout([
    ("surface_type", 3, True), ("area", 1, False), ("uv_extent", 2, False),
    ("centroid", 3, False),
])
BREP_EDGE_BLOCKS, E_BREP = _build_layout([
    ("shared_edge_length", 1, False), ("dihedral_angle", 1, False),
    ("curve_type", 2, True),
])

SURFACE_TYPES = ("plane", "cylinder", "cone")
CURVE_TYPES = ("line", "circle")


@dataclass(frozen=True)
class FeatureLayout:
    """Column offsets of every feature category in the four feature matrices."""
    stl_node: tuple = STL_NODE_BLOCKS
    stl_edge: tuple = STL_EDGE_BLOCKS
    brep_node: tuple = BREP_NODE_BLOCKS
    brep_edge: tuple = BREP_EDGE_BLOCKS

    def __post_init__(self):
        for blocks in (self.stl_node, self.stl_edge, self.brep_node, self.brep_edge):
            offset = 0
            for b in blocks:
                if b.offset != offset:
                    raise ConfigError(f"layout gap/overlap before block {b.name}")
                offset += b.width

    def widths(self):
        return (sum(b.width for b in self.stl_node),
                sum(b.width for b in self.stl_edge),
                sum(b.width for b in self.brep_node),
                sum(b.width for b in self.brep_edge))

    @staticmethod
    def onehot_columns(blocks):
        cols = []
        for b in blocks:
            if b.onehot:
                cols.extend(range(b.offset, b.offset + b.width))
        return cols


LAYOUT = FeatureLayout()


@dataclass
class ProcessGraph:
    node_features: np.ndarray  # (N, 16)
    edge_index: np.ndarray     # (E, 2) int, both directions
    edge_features: np.ndarray  # (E, 7)
    timestep: int


@dataclass
class DesignGraph:
    node_features: np.ndarray  # (N, 9)
    edge_index: np.ndarray
    edge_features: np.ndarray  # (E, 4)


# --------------------------------------------------------------------------
# Process graphs from meshes.

def stl_to_graph(mesh: TriMesh, t: int) -> ProcessGraph:
    """One node per triangle; an edge wherever two faces share a mesh edge."""
    tri = mesh.triangle_corners()
    normals = face_normals(mesh)
    areas = face_areas(mesh)
    centroids = tri.mean(axis=1)

    sides = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1],
                      tri[:, 0] - tri[:, 2]], axis=1)
    lengths = np.linalg.norm(sides, axis=2)  # (F, 3)
    perimeter = lengths.sum(axis=1)

    # law of cosines per corner, sorted ascending
    a, b, c = lengths[:, 1], lengths[:, 2], lengths[:, 0]  # opposite v0, v1, v2
    angles = np.stack([
        np.arccos(np.clip((b**2 + c**2 - a**2) / (2 * b * c), -1, 1)),
        np.arccos(np.clip((a**2 + c**2 - b**2) / (2 * a * c), -1, 1)),
        np.arccos(np.clip((a**2 + b**2 - c**2) / (2 * a * b), -1, 1)),
    ], axis=1)
    angles = np.sort(angles, axis=1)
    largest = angles[:, 2]
    angle_type = np.zeros((len(tri), 3))
    right = np.abs(largest - math.pi / 2) < RIGHT_ANGLE_TOL
    acute = largest < math.pi / 2 - RIGHT_ANGLE_TOL
    angle_type[acute, 0] = 1.0
    angle_type[right, 1] = 1.0
    angle_type[~(acute | right), 2] = 1.0

    compactness = EQUILATERAL_COMPACTNESS * areas / perimeter**2

    node_features = np.hstack([
        centroids, normals, areas[:, None], perimeter[:, None],
        lengths.mean(axis=1)[:, None], angles, angle_type, compactness[:, None],
    ])

    # Pair faces across shared undirected edges (vectorized): directed edge
    # f*3+k is (corner k, corner k+1) of face f; a closed manifold has every
    # undirected edge appearing exactly twice.
    faces = mesh.faces
    e_all = np.stack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]],
                     axis=1).reshape(-1, 2)
    key = np.sort(e_all, axis=1)
    _uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True,
                                       return_counts=True)
    if np.any(counts != 2):
        bad = int(np.argmax(counts != 2))
        raise TopologyError(
            f"open mesh: an edge has {int(counts[bad])} incident faces")
    grouped = np.argsort(inverse, kind="stable").reshape(-1, 2)
    grouped = grouped[np.argsort(grouped[:, 0], kind="stable")]
    fi = grouped[:, 0] // 3
    fj = grouped[:, 1] // 3
    uv = e_all[grouped[:, 0]]  # edge as traversed by face fi
    p = mesh.vertices[uv[:, 0]]
    q = mesh.vertices[uv[:, 1]]
    shared_len = np.linalg.norm(q - p, axis=1)
    midpoint = (p + q) / 2.0
    cdist = np.linalg.norm(centroids[fi] - centroids[fj], axis=1)
    ndist = np.linalg.norm(normals[fi] - normals[fj], axis=1)
    # Interior dihedral: pi for coplanar faces, < pi across convex ridges,
    # > pi across concave ones.
    e_hat = (q - p) / shared_len[:, None]
    ni, nj = normals[fi], normals[fj]
    phi = np.arctan2(np.einsum("ij,ij->i", np.cross(ni, nj), e_hat),
                     np.einsum("ij,ij->i", ni, nj))
    dihedral = np.mod(math.pi - phi, 2.0 * math.pi)

    feats = np.column_stack([cdist, ndist, shared_len, midpoint, dihedral])
    n_undirected = len(fi)
    edge_index = np.empty((2 * n_undirected, 2), dtype=np.int64)
    edge_index[0::2, 0] = fi
    edge_index[0::2, 1] = fj
    edge_index[1::2, 0] = fj
    edge_index[1::2, 1] = fi
    edge_features = np.repeat(feats, 2, axis=0)
    return ProcessGraph(node_features, edge_index, edge_features, t)


def _interior_dihedral(mesh, fi, ki, ni, nj):
    """Interior angle between two faces across their shared edge, in (0, 2pi):
    pi for coplanar, below pi for convex ridges, above for concave ones."""
    a, b, c = mesh.faces[fi]
    u, v = ((a, b), (b, c), (c, a))[ki]
    e = mesh.vertices[v] - mesh.vertices[u]
    e = e / np.linalg.norm(e)
    phi = math.atan2(float(np.dot(np.cross(ni, nj), e)), float(np.dot(ni, nj)))
    angle = math.pi - phi
    if angle >= 2 * math.pi:
        angle -= 2 * math.pi
    if angle < 0:
        angle += 2 * math.pi
    return angle


def extract_sequence(sample: SequenceSample):
    """Design graph plus one process graph per operation, timesteps 1..T."""
    design = design_to_graph(sample.spec)
    process = [stl_to_graph(mesh, t + 1)
               for t, mesh in enumerate(sample.ipw_meshes)]
    return design, process


# --------------------------------------------------------------------------
# Design graphs from the parametric model.

def _node(surface, area, uv, centroid):
    row = np.zeros(D_BREP)
    row[SURFACE_TYPES.index(surface)] = 1.0
    row[3] = area
    row[4:6] = uv
    row[6:9] = centroid
    return row


def _edge(length, dihedral, curve):
    row = np.zeros(E_BREP)
    row[0] = length
    row[1] = dihedral
    row[2 + CURVE_TYPES.index(curve)] = 1.0
    return row


def _ellipse_perimeter(a, b):
    # Ramanujan approximation; exact for circles
    h = ((a - b) / (a + b)) ** 2
    return math.pi * (a + b) * (1 + 3 * h / (10 + math.sqrt(4 - 3 * h)))


def design_to_graph(spec: PartSpec, segments: int = 32) -> DesignGraph:
    """Enumerate analytic faces of the finished part and their adjacencies."""
    L, W, H = spec.stock_dims
    deburr_idx = _deburr_target_index(spec)
    realized = [realize_feature(f, spec.stock_dims, _final_stage(f, i == deburr_idx),
                                segments)
                for i, f in enumerate(spec.features)]

    nodes = []
    edges = []  # (i, j, feature row)

    def add_node(surface, area, uv, centroid):
        nodes.append(_node(surface, area, uv, centroid))
        return len(nodes) - 1

    def add_edge(i, j, length, dihedral, curve):
        row = _edge(length, dihedral, curve)
        edges.append((i, j, row))
        edges.append((j, i, row))

    through = [rf for rf in realized if rf.through]
    bottom_area = L * W - sum(_poly_area(rf.rings[-1][1]) for rf in through)
    top_area = L * W - sum(_poly_area(rf.footprint) for rf in realized)

    bottom = add_node("plane", bottom_area, (L, W), (L / 2, W / 2, 0.0))
    side_y0 = add_node("plane", L * H, (L, H), (L / 2, 0.0, H / 2))
    side_x1 = add_node("plane", W * H, (W, H), (L, W / 2, H / 2))
    side_y1 = add_node("plane", L * H, (L, H), (L / 2, W, H / 2))
    side_x0 = add_node("plane", W * H, (W, H), (0.0, W / 2, H / 2))
    top = add_node("plane", top_area, (L, W), (L / 2, W / 2, H))

    sides = [side_y0, side_x1, side_y1, side_x0]
    side_lens = [L, W, L, W]
    for s, slen in zip(sides, side_lens):
        add_edge(bottom, s, slen, math.pi / 2, "line")
        add_edge(top, s, slen, math.pi / 2, "line")
    for k in range(4):
        add_edge(sides[k], sides[(k + 1) % 4], H, math.pi / 2, "line")

    for rf in realized:
        cx, cy = rf.center
        if rf.rect_footprint:
            poly = rf.footprint
            z_top, z_bot = rf.rings[0][0], rf.rings[-1][0]
            depth = z_top - z_bot
            walls = []
            for k in range(4):
                p, q = poly[k], poly[(k + 1) % 4]
                wall_len = float(np.linalg.norm(q - p))
                centroid = ((p[0] + q[0]) / 2, (p[1] + q[1]) / 2, (z_top + z_bot) / 2)
                w = add_node("plane", wall_len * depth, (wall_len, depth), centroid)
                walls.append((w, wall_len))
                add_edge(top, w, wall_len, math.pi / 2, "line")
            floor = add_node("plane", _poly_area(poly),
                             (np.ptp(poly[:, 0]), np.ptp(poly[:, 1])),
                             (cx, cy, z_bot))
            for k, (w, wall_len) in enumerate(walls):
                add_edge(w, floor, wall_len, math.pi / 2, "line")
                add_edge(w, walls[(k + 1) % 4][0], depth, math.pi / 2, "line")
        elif rf.kind in ("circ_hole", "contour_cavity"):
            poly = rf.footprint
            a = (poly[:, 0].max() - poly[:, 0].min()) / 2
            b = (poly[:, 1].max() - poly[:, 1].min()) / 2
            z_top, z_bot = rf.rings[0][0], rf.rings[-1][0]
            depth = z_top - z_bot
            perim = _ellipse_perimeter(a, b)
            wall = add_node("cylinder", perim * depth, (perim, depth),
                            (cx, cy, (z_top + z_bot) / 2))
            add_edge(top, wall, perim, math.pi / 2, "circle")
            if rf.through:
                add_edge(bottom, wall, perim, math.pi / 2, "circle")
            else:
                floor = add_node("plane", _poly_area(poly), (2 * a, 2 * b),
                                 (cx, cy, z_bot))
                add_edge(wall, floor, perim, math.pi / 2, "circle")
        else:  # countersink: cone band then cylinder bore
            (z0, outer), (z1, inner), (z2, _inner2) = rf.rings
            R = (outer[:, 0].max() - outer[:, 0].min()) / 2
            r = (inner[:, 0].max() - inner[:, 0].min()) / 2
            cone_h = z0 - z1
            slant = math.hypot(R - r, cone_h)
            cone = add_node("cone", math.pi * (R + r) * slant,
                            (math.pi * (R + r), slant), (cx, cy, (z0 + z1) / 2))
            gamma = math.atan2(R - r, cone_h)  # slant tilt from vertical
            add_edge(top, cone, 2 * math.pi * R, math.pi / 2 + gamma, "circle")
            bore_h = z1 - z2
            bore = add_node("cylinder", 2 * math.pi * r * bore_h,
                            (2 * math.pi * r, bore_h), (cx, cy, (z1 + z2) / 2))
            add_edge(cone, bore, 2 * math.pi * r, math.pi - gamma, "circle")
            if rf.through:
                add_edge(bottom, bore, 2 * math.pi * r, math.pi / 2, "circle")
            else:
                floor = add_node("plane", _poly_area(inner), (2 * r, 2 * r),
                                 (cx, cy, z2))
                add_edge(bore, floor, 2 * math.pi * r, math.pi / 2, "circle")

    node_features = np.array(nodes)
    edge_index = np.array([(i, j) for i, j, _row in edges], dtype=np.int64)
    edge_features = np.array([row for _i, _j, row in edges])
    return DesignGraph(node_features, edge_index, edge_features)


# --------------------------------------------------------------------------
# Normalization.

@dataclass
class NormStats:
    """Per-column affine normalization, fit on the training split only."""
    stl_node: tuple  # (mean, scale)
    stl_edge: tuple
    brep_node: tuple
    brep_edge: tuple

    def matrices(self):
        return {"stl_node": self.stl_node, "stl_edge": self.stl_edge,
                "brep_node": self.brep_node, "brep_edge": self.brep_edge}


def _fit_columns(matrix, onehot_cols):
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    scale = np.where(std > 1e-12, std, 1.0)  # zero-variance: center only
    mean[onehot_cols] = 0.0
    scale[onehot_cols] = 1.0
    return mean, scale


def fit_norm_stats(extracted) -> NormStats:
    """Fit stats over a list of (DesignGraph, [ProcessGraph]) pairs."""
    if not extracted:
        raise ConfigError("cannot fit normalization on an empty dataset")
    stl_nodes = np.vstack([g.node_features for _d, ps in extracted for g in ps])
    stl_edges = np.vstack([g.edge_features for _d, ps in extracted for g in ps])
    brep_nodes = np.vstack([d.node_features for d, _ps in extracted])
    brep_edges = np.vstack([d.edge_features for d, _ps in extracted])
    return NormStats(
        _fit_columns(stl_nodes, FeatureLayout.onehot_columns(STL_NODE_BLOCKS)),
        _fit_columns(stl_edges, FeatureLayout.onehot_columns(STL_EDGE_BLOCKS)),
        _fit_columns(brep_nodes, FeatureLayout.onehot_columns(BREP_NODE_BLOCKS)),
        _fit_columns(brep_edges, FeatureLayout.onehot_columns(BREP_EDGE_BLOCKS)),
    )


def apply_norm_stats(design: DesignGraph, process, stats: NormStats):
    """Return normalized copies of one sample's graphs."""
    bn_mean, bn_scale = stats.brep_node
    be_mean, be_scale = stats.brep_edge
    sn_mean, sn_scale = stats.stl_node
    se_mean, se_scale = stats.stl_edge
    norm_design = DesignGraph(
        (design.node_features - bn_mean) / bn_scale, design.edge_index,
        (design.edge_features - be_mean) / be_scale)
    norm_process = [
        ProcessGraph((g.node_features - sn_mean) / sn_scale, g.edge_index,
                     (g.edge_features - se_mean) / se_scale, g.timestep)
        for g in process]
    return norm_design, norm_process


def normalize_features(extracted, train_index):
    """Normalize a whole dataset with stats fit on the train subset."""
    stats = fit_norm_stats([extracted[i] for i in train_index])
    normalized = [apply_norm_stats(d, ps, stats) for d, ps in extracted]
    return normalized, stats


# --------------------------------------------------------------------------
# Graph cache: one reviewable text file per sample.

_FMT = "%.17g"


def _write_matrix(out, mat):
    for row in np.atleast_2d(mat):
        out.append(" ".join(_FMT % v for v in row))


def _write_graph(out, nodes, edge_index, edge_features):
    out.append(f"nodes {len(nodes)} edges {len(edge_index)}")
    _write_matrix(out, nodes)
    for (i, j), feat in zip(edge_index, edge_features):
        out.append(f"{i} {j} " + " ".join(_FMT % v for v in feat))


def write_graph_cache(sample_id, labels, design: DesignGraph, process) -> str:
    """Serialize one sample's graphs and labels to the cache text format."""
    out = ["machineseq-graphs v1", f"sample {sample_id}"]
    d_stl, e_stl, d_brep, e_brep = LAYOUT.widths()
    out.append(f"layout stl_node {d_stl} stl_edge {e_stl} "
               f"brep_node {d_brep} brep_edge {e_brep}")
    out.append("design")
    _write_graph(out, design.node_features, design.edge_index,
                 design.edge_features)
    out.append(f"process {len(process)}")
    for g in process:
        out.append(f"timestep {g.timestep}")
        _write_graph(out, g.node_features, g.edge_index, g.edge_features)
    out.append(f"labels {len(labels)}")
    for lab in labels:
        out.append(f"{lab.main} {lab.sub}")
    out.append("end")
    return "\n".join(out) + "\n"


def read_graph_cache(text: str):
    """Parse a cache file; returns (sample_id, labels, design, process)."""
    lines = text.splitlines()
    pos = 0

    def take():
        nonlocal pos
        line = lines[pos]
        pos += 1
        return line

    if take() != "machineseq-graphs v1":
        raise ConfigError("not a graph cache file")
    sample_id = take().split(" ", 1)[1]
    layout = take().split()
    widths = {layout[i]: int(layout[i + 1]) for i in range(1, len(layout), 2)}
    if tuple(widths.values()) != LAYOUT.widths():
        raise ConfigError(f"cache layout {widths} does not match current layout")

    def read_graph(node_width, edge_width):
        header = take().split()
        n, e = int(header[1]), int(header[3])
        nodes = np.array([[float(v) for v in take().split()] for _ in range(n)])
        nodes = nodes.reshape(n, node_width)
        idx = np.zeros((e, 2), dtype=np.int64)
        feats = np.zeros((e, edge_width))
        for k in range(e):
            parts = take().split()
            idx[k] = (int(parts[0]), int(parts[1]))
            feats[k] = [float(v) for v in parts[2:]]
        return nodes, idx, feats

    if take() != "design":
        raise ConfigError("missing design section")
    design = DesignGraph(*read_graph(widths["brep_node"], widths["brep_edge"]))
    t_count = int(take().split()[1])
    process = []
    for _ in range(t_count):
        t = int(take().split()[1])
        nodes, idx, feats = read_graph(widths["stl_node"], widths["stl_edge"])
        process.append(ProcessGraph(nodes, idx, feats, t))
    n_labels = int(take().split()[1])
    labels = []
    for _ in range(n_labels):
        main, sub = take().split()
        labels.append(OperationLabel(main, sub))
    if take() != "end":
        raise ConfigError("missing end marker")
    return sample_id, labels, design, process


def write_norm_stats(stats: NormStats) -> str:
    out = ["machineseq-normstats v1"]
    for name, (mean, scale) in stats.matrices().items():
        out.append(f"{name} {len(mean)}")
        out.append(" ".join(_FMT % v for v in mean))
        out.append(" ".join(_FMT % v for v in scale))
    return "\n".join(out) + "\n"


def read_norm_stats(text: str) -> NormStats:
    lines = text.splitlines()
    if lines[0] != "machineseq-normstats v1":
        raise ConfigError("not a normalization stats file")
    values = {}
    pos = 1
    while pos < len(lines):
        name = lines[pos].split()[0]
        mean = np.array([float(v) for v in lines[pos + 1].split()])
        scale = np.array([float(v) for v in lines[pos + 2].split()])
        values[name] = (mean, scale)
        pos += 3
    return NormStats(values["stl_node"], values["stl_edge"],
                     values["brep_node"], values["brep_edge"])
