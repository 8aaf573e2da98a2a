"""Parametric part families and machining-step mesh synthesis.

A part is a rectangular stock with disjoint top-face features (pockets, holes,
countersinks, face reductions, contour cavities).  Each machining operation is
realized analytically: the in-process workpiece after k operations is the
stock minus the features completed so far, built directly as a closed manifold
triangle mesh (no general CSG).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, GeometryError
from .mesh import TriMesh, mesh_from_soup, mesh_volume, validate_mesh

# --------------------------------------------------------------------------
# Operation taxonomy: 3 main classes, 12 sub classes.

MAIN_OPS = ("MillPlanar", "HoleMaking", "MillContour")

SUB_OPS = (
    "FloorWall", "WallFloorProfiling", "WallProfiling", "FaceMillZigzag",
    "PlanarProfiling", "PlanarDeburring",
    "Drilling", "SpotDrilling", "HoleMilling", "Countersinking",
    "CavityMilling", "CurveDrive",
)

SUB_TO_MAIN = {
    "FloorWall": "MillPlanar",
    "WallFloorProfiling": "MillPlanar",
    "WallProfiling": "MillPlanar",
    "FaceMillZigzag": "MillPlanar",
    "PlanarProfiling": "MillPlanar",
    "PlanarDeburring": "MillPlanar",
    "Drilling": "HoleMaking",
    "SpotDrilling": "HoleMaking",
    "HoleMilling": "HoleMaking",
    "Countersinking": "HoleMaking",
    "CavityMilling": "MillContour",
    "CurveDrive": "MillContour",
}

MAIN_INDEX = {name: i for i, name in enumerate(MAIN_OPS)}
SUB_INDEX = {name: i for i, name in enumerate(SUB_OPS)}


@dataclass(frozen=True)
class OperationLabel:
    main: str
    sub: str

    def __post_init__(self):
        if self.main not in MAIN_INDEX:
            raise ConfigError(f"unknown main operation {self.main!r}")
        if self.sub not in SUB_INDEX:
            raise ConfigError(f"unknown sub operation {self.sub!r}")
        if SUB_TO_MAIN[self.sub] != self.main:
            raise ConfigError(f"sub operation {self.sub} does not belong to {self.main}")

    @property
    def main_index(self):
        return MAIN_INDEX[self.main]

    @property
    def sub_index(self):
        return SUB_INDEX[self.sub]

    @classmethod
    def for_sub(cls, sub):
        return cls(SUB_TO_MAIN[sub], sub)


# --------------------------------------------------------------------------
# Feature and part specifications.

FEATURE_KINDS = ("rect_pocket", "circ_hole", "countersink", "face_reduction",
                 "contour_cavity")

BORDER_MARGIN = 2.0     # mm clearance between any feature patch and stock border
PATCH_GAP = 1.0         # mm clearance between feature patches
ANNULUS_MARGIN = 1.5    # mm between a curved footprint and its patch rectangle
SPOT_DEPTH = 1.5        # mm depth of a spot-drill pre-operation
FINISH_ALLOWANCE = 0.8  # mm per-side rough/finish allowance for profiling passes
CAVITY_FINISH_DEPTH = 0.5  # mm extra depth removed by a curve-drive pass
DEBURR_DEPTH = 0.2      # mm skim removed by the final deburring pass
WALL_ASPECT = 3.0       # rect pockets at least this elongated read as wall profiling
DRILL_MAX_DIAMETER = 10.0  # mm; larger holes are milled, not drilled


@dataclass(frozen=True)
class FeatureSpec:
    kind: str
    center: tuple  # (x, y) mm on the stock top face
    dims: tuple    # kind-specific sizes, mm
    depth: float   # mm
    finish: bool = False  # add a profiling/curve-drive finishing pass
    spot: bool = False    # spot-drill before drilling (circ_hole only)

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if any(d <= 0 for d in self.dims) or self.depth <= 0:
            raise ConfigError(f"feature dims/depth must be positive: {self}")


@dataclass(frozen=True)
class PartSpec:
    family: str  # "simple" | "complex"
    stock_dims: tuple  # (length, width, height) mm
    features: tuple = ()
    deburr: bool = False  # final skim pass on the first planar pocket/face

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if self.family not in ("simple", "complex"):
            raise ConfigError(f"unknown family {self.family!r}")


@dataclass
class SequenceSample:
    id: str
    spec: PartSpec
    ipw_meshes: list  # one TriMesh per completed operation
    labels: list      # OperationLabel, parallel to ipw_meshes
    design_mesh: TriMesh


# --------------------------------------------------------------------------
# Footprint polygons.

def _poly_rect(center, lx, ly):
    cx, cy = center
    hx, hy = lx / 2.0, ly / 2.0
    return np.array([
        [cx - hx, cy - hy], [cx + hx, cy - hy],
        [cx + hx, cy + hy], [cx - hx, cy + hy],
    ])


def _poly_ellipse(center, a, b, n, phase=math.pi / 4):
    # phase pi/4 aligns circle vertices with square-patch corner rays, which
    # keeps circular cross-sections exact regular n-gons after augmentation
    cx, cy = center
    th = phase + 2.0 * math.pi * np.arange(n) / n
    return np.stack([cx + a * np.cos(th), cy + b * np.sin(th)], axis=1)


@dataclass
class RealizedFeature:
    """One feature at a specific machining stage, ready for mesh construction."""
    kind: str
    center: tuple
    rings: list          # [(z, poly (n,2))] from top down; same n and angular order
    through: bool
    patch: tuple         # (x0, x1, y0, y1) axis-aligned exclusion rectangle
    rect_footprint: bool  # patch boundary coincides with the footprint

    @property
    def footprint(self):
        return self.rings[0][1]

    def removed_volume(self, height):
        """Analytic volume of removed material (prismatic/frustum bands)."""
        total = 0.0
        for (z_hi, p_hi), (z_lo, p_lo) in zip(self.rings, self.rings[1:]):
            a_hi = _poly_area(p_hi)
            a_lo = _poly_area(p_lo)
            # prismatoid rule is exact for linear ring interpolation
            a_mid = _poly_area((p_hi + p_lo) / 2.0)
            total += (z_hi - z_lo) * (a_hi + 4.0 * a_mid + a_lo) / 6.0
        return total


def _poly_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def realize_feature(f: FeatureSpec, stock_dims, stage: str = "full",
                    segments: int = 32) -> RealizedFeature:
    """Instantiate a feature at a machining stage: 'rough', 'spot', 'full'
    or 'deburred'."""
    H = stock_dims[2]
    kind = f.kind
    depth = f.depth
    dims = f.dims
    if stage == "deburred":
        depth = depth + DEBURR_DEPTH
    if kind in ("rect_pocket", "face_reduction"):
        lx, ly = dims
        if stage == "rough":
            lx, ly = lx - 2 * FINISH_ALLOWANCE, ly - 2 * FINISH_ALLOWANCE
        poly = _poly_rect(f.center, lx, ly)
        rings = [(H, poly), (H - depth, poly)]
        patch = (poly[0, 0], poly[1, 0], poly[0, 1], poly[2, 1])
        return RealizedFeature(kind, f.center, rings, False, patch, True)
    if kind == "circ_hole":
        (r,) = dims
        if stage == "spot":
            depth = SPOT_DEPTH
        poly = _poly_ellipse(f.center, r, r, segments)
        through = depth >= H
        z_bot = 0.0 if through else H - depth
        rings = [(H, poly), (z_bot, poly)]
        m = ANNULUS_MARGIN
        patch = (f.center[0] - r - m, f.center[0] + r + m,
                 f.center[1] - r - m, f.center[1] + r + m)
        return RealizedFeature(kind, f.center, rings, through, patch, False)
    if kind == "countersink":
        r_outer, r_inner, cs_depth = dims
        if r_inner >= r_outer:
            raise ConfigError("countersink needs r_inner < r_outer")
        if cs_depth >= depth:
            raise ConfigError("countersink cone depth must be less than total depth")
        outer = _poly_ellipse(f.center, r_outer, r_outer, segments)
        inner = _poly_ellipse(f.center, r_inner, r_inner, segments)
        through = depth >= H
        z_bot = 0.0 if through else H - depth
        rings = [(H, outer), (H - cs_depth, inner), (z_bot, inner)]
        m = ANNULUS_MARGIN
        patch = (f.center[0] - r_outer - m, f.center[0] + r_outer + m,
                 f.center[1] - r_outer - m, f.center[1] + r_outer + m)
        return RealizedFeature(kind, f.center, rings, through, patch, False)
    if kind == "contour_cavity":
        a, b = dims
        if stage == "rough":
            depth = depth - CAVITY_FINISH_DEPTH
        poly = _poly_ellipse(f.center, a, b, segments)
        rings = [(H, poly), (H - depth, poly)]
        m = ANNULUS_MARGIN
        patch = (f.center[0] - a - m, f.center[0] + a + m,
                 f.center[1] - b - m, f.center[1] + b + m)
        return RealizedFeature(kind, f.center, rings, False, patch, False)
    raise ConfigError(f"unknown feature kind {kind!r}")


# --------------------------------------------------------------------------
# Part validation.

def _final_stage(f: FeatureSpec, deburr_target: bool) -> str:
    return "deburred" if deburr_target else "full"


def _deburr_target_index(spec: PartSpec):
    if not spec.deburr:
        return None
    for i, f in enumerate(spec.features):
        if f.kind in ("rect_pocket", "face_reduction"):
            return i
    return None


def validate_part(spec: PartSpec, segments: int = 32) -> None:
    """Raise GeometryError if the part violates footprint/stock invariants."""
    L, W, H = spec.stock_dims
    if min(L, W, H) <= 0:
        raise GeometryError(f"stock dims must be positive: {spec.stock_dims}")
    deburr_idx = _deburr_target_index(spec)
    if spec.deburr and deburr_idx is None:
        raise GeometryError("deburr pass requires a planar pocket or face feature")
    patches = []
    for i, f in enumerate(spec.features):
        rf = realize_feature(f, spec.stock_dims, _final_stage(f, i == deburr_idx),
                             segments)
        depth = f.depth + (DEBURR_DEPTH if i == deburr_idx else 0.0)
        through_ok = f.kind in ("circ_hole", "countersink")
        if depth > H or (depth >= H and not through_ok):
            raise GeometryError(f"feature {i} depth {depth} exceeds stock height {H}")
        if f.finish:
            if f.kind in ("rect_pocket", "face_reduction"):
                if min(f.dims) <= 2 * FINISH_ALLOWANCE + 1.0:
                    raise GeometryError(f"feature {i} too small for a finishing pass")
            elif f.kind == "contour_cavity":
                if f.depth <= CAVITY_FINISH_DEPTH + 0.5:
                    raise GeometryError(f"feature {i} too shallow for a curve-drive pass")
            else:
                raise GeometryError(f"feature kind {f.kind} does not take a finish pass")
        if f.spot and f.kind != "circ_hole":
            raise GeometryError("spot drilling applies to circular holes only")
        x0, x1, y0, y1 = rf.patch
        if x0 < BORDER_MARGIN or y0 < BORDER_MARGIN or \
                x1 > L - BORDER_MARGIN or y1 > W - BORDER_MARGIN:
            raise GeometryError(f"feature {i} footprint not strictly inside stock top")
        patches.append(rf.patch)
    for i, j in itertools.combinations(range(len(patches)), 2):
        a, b = patches[i], patches[j]
        if (a[0] < b[1] + PATCH_GAP and b[0] < a[1] + PATCH_GAP and
                a[2] < b[3] + PATCH_GAP and b[2] < a[3] + PATCH_GAP):
            raise GeometryError(f"features {i} and {j} footprints overlap")
    # grid cuts from distinct patches must not nearly coincide (sliver cells)
    cuts = sorted(c for p in patches for c in p[:2]) + \
        sorted(c for p in patches for c in p[2:])
    for a, b in zip(cuts, cuts[1:]):
        if 0.0 < b - a < 0.05:
            raise GeometryError("near-coincident feature boundaries (sliver cells)")


# --------------------------------------------------------------------------
# Mesh construction.

_ANGLE_TOL = 1e-9


def _angle(p, c):
    return math.atan2(p[1] - c[1], p[0] - c[0]) % (2.0 * math.pi)


def _patch_boundary_points(rf: RealizedFeature, cuts_x, cuts_y):
    """Patch corners plus grid-cut points on the patch boundary, sorted CCW by
    angle about the patch center."""
    x0, x1, y0, y1 = rf.patch
    c = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    pts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    for cx in cuts_x:
        if x0 + 1e-12 < cx < x1 - 1e-12:
            pts.extend([(cx, y0), (cx, y1)])
    for cy in cuts_y:
        if y0 + 1e-12 < cy < y1 - 1e-12:
            pts.extend([(x0, cy), (x1, cy)])
    pts.sort(key=lambda p: _angle(p, c))
    return c, pts


def _zipper_annulus(outer_pts, inner_poly, c, z, tri, flip=False):
    """Triangulate the region between a sparse outer loop and a dense inner
    polygon (both CCW about c) by an angular merge walk."""
    entries = [(_angle(p, c), 0, tuple(p)) for p in outer_pts]
    entries += [(_angle(p, c), 1, tuple(p)) for p in inner_poly]
    entries.sort(key=lambda e: (e[0], e[1]))
    last = [None, None]
    for theta, tag, p in reversed(entries):
        if last[0] is not None and last[1] is not None:
            break
        if last[tag] is None:
            last[tag] = p
    for theta, tag, p in entries:
        a, b, d = last[0], p, last[1]
        if flip:
            b, d = d, b
        tri((a[0], a[1], z), (b[0], b[1], z), (d[0], d[1], z))
        last[tag] = p


def build_part_mesh(stock_dims, realized, segments: int = 32,
                    validate: bool = True) -> TriMesh:
    """Construct the closed manifold mesh of stock minus the realized features."""
    L, W, H = (float(v) for v in stock_dims)
    for i, j in itertools.combinations(range(len(realized)), 2):
        a, b = realized[i].patch, realized[j].patch
        if a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]:
            raise GeometryError(f"overlapping footprints for features {i} and {j}")

    cuts_x = sorted({0.0, L} | {c for rf in realized for c in rf.patch[:2]})
    cuts_y = sorted({0.0, W} | {c for rf in realized for c in rf.patch[2:]})
    tris = []

    def tri(p0, p1, p2):
        tris.append((p0, p1, p2))

    def in_patch(px, py, patch):
        return patch[0] < px < patch[1] and patch[2] < py < patch[3]

    # top and bottom plates, cell by cell
    through_patches = [rf.patch for rf in realized if rf.through]
    all_patches = [rf.patch for rf in realized]
    for xa, xb in zip(cuts_x, cuts_x[1:]):
        for ya, yb in zip(cuts_y, cuts_y[1:]):
            cx, cy = (xa + xb) / 2.0, (ya + yb) / 2.0
            p00, p10 = (xa, ya, H), (xb, ya, H)
            p11, p01 = (xb, yb, H), (xa, yb, H)
            if not any(in_patch(cx, cy, p) for p in all_patches):
                tri(p00, p10, p11)
                tri(p00, p11, p01)
            if not any(in_patch(cx, cy, p) for p in through_patches):
                q00, q10 = (xa, ya, 0.0), (xb, ya, 0.0)
                q11, q01 = (xb, yb, 0.0), (xa, yb, 0.0)
                tri(q00, q11, q10)
                tri(q00, q01, q11)

    # stock side walls, split at the same cuts as the plates
    def side_band(p, q):
        bp, bq = (p[0], p[1], 0.0), (q[0], q[1], 0.0)
        tp, tq = (p[0], p[1], H), (q[0], q[1], H)
        tri(bp, bq, tq)
        tri(bp, tq, tp)

    for xa, xb in zip(cuts_x, cuts_x[1:]):
        side_band((xa, 0.0), (xb, 0.0))
        side_band((xb, W), (xa, W))
    for ya, yb in zip(cuts_y, cuts_y[1:]):
        side_band((L, ya), (L, yb))
        side_band((0.0, yb), (0.0, ya))

    # features: annulus, walls, floor
    for rf in realized:
        c, boundary = _patch_boundary_points(rf, cuts_x, cuts_y)

        if rf.rect_footprint:
            # the footprint IS the patch: rings gain the boundary subdivision
            aug_rings = [(z, boundary) for z, _poly in rf.rings]
        else:
            aug_rings = [(z, [tuple(p) for p in poly]) for z, poly in rf.rings]
            _zipper_annulus(boundary, rf.footprint, c, H, tri)
            if rf.through:
                _zipper_annulus(boundary, rf.rings[-1][1], c, 0.0, tri, flip=True)

        n = len(aug_rings[0][1])
        for (z_hi, ring_hi), (z_lo, ring_lo) in zip(aug_rings, aug_rings[1:]):
            for k in range(n):
                k1 = (k + 1) % n
                t0 = (ring_hi[k][0], ring_hi[k][1], z_hi)
                t1 = (ring_hi[k1][0], ring_hi[k1][1], z_hi)
                b0 = (ring_lo[k][0], ring_lo[k][1], z_lo)
                b1 = (ring_lo[k1][0], ring_lo[k1][1], z_lo)
                tri(t0, t1, b1)
                tri(t0, b1, b0)

        if not rf.through:
            z_bot, floor = aug_rings[-1]
            centroid = (c[0], c[1], z_bot)
            for k in range(n):
                k1 = (k + 1) % n
                tri(centroid, (floor[k][0], floor[k][1], z_bot),
                    (floor[k1][0], floor[k1][1], z_bot))

    mesh = mesh_from_soup(np.array(tris, dtype=np.float64))
    if validate:
        validate_mesh(mesh)
    return mesh


def apply_operation(stock_dims, prior, feature: RealizedFeature,
                    segments: int = 32) -> TriMesh:
    """Mesh of the workpiece after machining `feature` on top of `prior`."""
    return build_part_mesh(stock_dims, list(prior) + [feature], segments)


# --------------------------------------------------------------------------
# Operation planning: feature list -> ordered (label, realized-state) steps.

@dataclass
class PlanStep:
    label: OperationLabel
    realized: list  # RealizedFeature state after this operation


def _main_label(f: FeatureSpec) -> OperationLabel:
    if f.kind == "rect_pocket":
        aspect = max(f.dims) / min(f.dims)
        sub = "WallProfiling" if aspect >= WALL_ASPECT else "FloorWall"
        return OperationLabel.for_sub(sub)
    if f.kind == "face_reduction":
        return OperationLabel.for_sub("FaceMillZigzag")
    if f.kind == "contour_cavity":
        return OperationLabel.for_sub("CavityMilling")
    if f.kind == "circ_hole":
        sub = "Drilling" if 2 * f.dims[0] <= DRILL_MAX_DIAMETER else "HoleMilling"
        return OperationLabel.for_sub(sub)
    if f.kind == "countersink":
        return OperationLabel.for_sub("Countersinking")
    raise ConfigError(f"unknown feature kind {f.kind!r}")


def _finish_label(f: FeatureSpec) -> OperationLabel:
    if f.kind == "rect_pocket":
        return OperationLabel.for_sub("WallFloorProfiling")
    if f.kind == "face_reduction":
        return OperationLabel.for_sub("PlanarProfiling")
    if f.kind == "contour_cavity":
        return OperationLabel.for_sub("CurveDrive")
    raise ConfigError(f"feature kind {f.kind} has no finishing pass")


def plan_operations(spec: PartSpec, segments: int = 32):
    """Ordered machining steps: faces first, pockets by decreasing area, holes
    (spot drill before drill), deburring last."""
    deburr_idx = _deburr_target_index(spec)

    def area(f):
        rf = realize_feature(f, spec.stock_dims, "full", segments)
        return _poly_area(rf.footprint)

    faces = [i for i, f in enumerate(spec.features) if f.kind == "face_reduction"]
    pockets = [i for i, f in enumerate(spec.features)
               if f.kind in ("rect_pocket", "contour_cavity")]
    holes = [i for i, f in enumerate(spec.features)
             if f.kind in ("circ_hole", "countersink")]
    faces.sort(key=lambda i: (-area(spec.features[i]), i))
    pockets.sort(key=lambda i: (-area(spec.features[i]), i))

    ops = []  # (feature index, stage, label)
    for i in faces + pockets:
        f = spec.features[i]
        if f.finish:
            ops.append((i, "rough", _main_label(f)))
            ops.append((i, "full", _finish_label(f)))
        else:
            ops.append((i, "full", _main_label(f)))
    for i in holes:
        f = spec.features[i]
        if f.spot:
            ops.append((i, "spot", OperationLabel.for_sub("SpotDrilling")))
        ops.append((i, "full", _main_label(f)))
    if deburr_idx is not None:
        ops.append((deburr_idx, "deburred", OperationLabel.for_sub("PlanarDeburring")))

    steps = []
    stage = {}
    order = []
    for idx, st, label in ops:
        if idx not in stage:
            order.append(idx)
        stage[idx] = st
        realized = [realize_feature(spec.features[j], spec.stock_dims, stage[j],
                                    segments) for j in order]
        steps.append(PlanStep(label, realized))
    return steps


def build_sample(spec: PartSpec, sample_id: str, segments: int = 32,
                 validate: bool = True) -> SequenceSample:
    """Synthesize the labeled mesh sequence for one part."""
    if validate:
        validate_part(spec, segments)
    steps = plan_operations(spec, segments)
    if not steps:
        raise GeometryError("part has no machining operations")
    meshes = []
    labels = []
    prev_volume = float(np.prod(spec.stock_dims))
    for step in steps:
        mesh = build_part_mesh(spec.stock_dims, step.realized, segments,
                               validate=validate)
        vol = mesh_volume(mesh)
        if vol >= prev_volume - 1e-9:
            raise GeometryError(
                f"operation {step.label} did not remove material "
                f"({prev_volume} -> {vol})")
        prev_volume = vol
        meshes.append(mesh)
        labels.append(step.label)
    return SequenceSample(sample_id, spec, meshes, labels, meshes[-1])


# --------------------------------------------------------------------------
# Parameter-grid dataset generation.

def _grid_feature_combos(feat_grid):
    """Cartesian product over one feature's parameter choices."""
    keys = []
    values = []
    for key in ("center", "size", "depth"):
        if key in feat_grid:
            keys.append(key)
            values.append(feat_grid[key])
    for combo in itertools.product(*values):
        yield dict(zip(keys, combo))


def _spec_from_combo(stock, template, combo, rng):
    L, W, H = stock
    jitter = template.get("jitter", 0.0)
    features = []
    for feat_grid, params in zip(template["features"], combo):
        fx, fy = params["center"]
        size = list(params["size"])
        if feat_grid.get("size_frac"):
            size = [size[0] * L] + [s * W for s in size[1:]]
        depth = params["depth"]
        if jitter > 0:
            fx *= 1.0 + jitter * (2 * rng.random() - 1)
            fy *= 1.0 + jitter * (2 * rng.random() - 1)
            size = [s * (1.0 + jitter * (2 * rng.random() - 1)) for s in size]
        features.append(FeatureSpec(
            kind=feat_grid["kind"],
            center=(round(fx * L, 3), round(fy * W, 3)),
            dims=tuple(round(s, 3) for s in size),
            depth=float(H) if feat_grid.get("through") else float(depth),
            finish=bool(feat_grid.get("finish", False)),
            spot=bool(feat_grid.get("spot", False)),
        ))
    return PartSpec(template["family"], tuple(float(v) for v in stock),
                    tuple(features), deburr=bool(template.get("deburr", False)))


def enumerate_specs(seed: int, grid: dict):
    """Deterministic enumeration of valid PartSpecs from a parameter grid."""
    if not grid.get("stock") or not grid.get("templates"):
        raise ConfigError("grid must define 'stock' and 'templates'")
    specs = []
    counter = 0
    for template in grid["templates"]:
        if not template.get("features"):
            raise ConfigError("grid template without features")
        stocks = template.get("stock", grid["stock"])
        for stock in stocks:
            per_feature = [list(_grid_feature_combos(fg))
                           for fg in template["features"]]
            for combo in itertools.product(*per_feature):
                rng = np.random.default_rng([int(seed), counter])
                counter += 1
                try:
                    spec = _spec_from_combo(stock, template, combo, rng)
                    validate_part(spec)
                except (GeometryError, ConfigError):
                    continue
                specs.append(spec)
    return specs


def generate_dataset(seed: int, grid: dict, segments: int = 32,
                     limit: int = None, validate: bool = True):
    """Synthesize all valid samples of a parameter grid.

    Pure function of (seed, grid): repeated runs yield identical samples."""
    specs = enumerate_specs(seed, grid)
    if limit is not None:
        specs = specs[:limit]
    samples = []
    for i, spec in enumerate(specs):
        sample_id = f"{spec.family}-{i:05d}"
        samples.append(build_sample(spec, sample_id, segments, validate=validate))
    return samples


def default_grid():
    """Built-in desk-scale parameter grid covering both part families and all
    twelve sub-operations, sized to roughly three thousand valid parts."""
    stocks = [[100, 60, 20], [120, 80, 20], [80, 50, 15],
              [120, 60, 25], [100, 80, 25], [90, 70, 20]]
    pocket_centers = [[0.30, 0.35], [0.28, 0.62], [0.34, 0.50]]
    hole_centers = [[0.74, 0.38], [0.72, 0.66]]
    templates = [
        # simple: pocket + through drill
        {"family": "simple", "features": [
            {"kind": "rect_pocket", "center": pocket_centers,
             "size": [[20, 10], [24, 9], [16, 13]], "depth": [5, 8]},
            {"kind": "circ_hole", "center": hole_centers,
             "size": [[3.5], [4.5]], "through": True, "depth": [0]},
        ]},
        # simple: face reduction band + pocket
        {"family": "simple", "features": [
            {"kind": "face_reduction", "center": [[0.5, 0.26]],
             "size": [[0.80, 0.30], [0.72, 0.26]], "size_frac": True,
             "depth": [2, 3]},
            {"kind": "rect_pocket", "center": [[0.40, 0.70], [0.58, 0.70]],
             "size": [[18, 9], [22, 11]], "depth": [5, 7]},
        ]},
        # simple: small drill + large milled hole
        {"family": "simple", "features": [
            {"kind": "circ_hole", "center": [[0.28, 0.40], [0.26, 0.64]],
             "size": [[3.0], [3.5], [4.0]], "depth": [8, 11]},
            {"kind": "circ_hole", "center": [[0.70, 0.45]],
             "size": [[6.5], [7.5]], "through": True, "depth": [0]},
        ]},
        # simple: elongated wall-profiling pocket + countersink
        {"family": "simple", "features": [
            {"kind": "rect_pocket", "center": [[0.35, 0.32], [0.35, 0.55]],
             "size": [[36, 8], [42, 7], [30, 9]], "depth": [4, 6]},
            {"kind": "countersink", "center": [[0.75, 0.70]],
             "size": [[6, 3, 2], [7, 3.5, 2.5]], "depth": [10, 12]},
        ]},
        # simple: contour cavity + drill
        {"family": "simple", "features": [
            {"kind": "contour_cavity", "center": [[0.34, 0.50], [0.30, 0.40]],
             "size": [[13, 8], [15, 10]], "depth": [5, 6, 7]},
            {"kind": "circ_hole", "center": [[0.76, 0.50], [0.74, 0.30]],
             "size": [[4.0], [5.0]], "through": True, "depth": [0]},
        ]},
        # complex: finished face band, pocket, spot-drilled deep hole, deburr
        {"family": "complex", "deburr": True, "features": [
            {"kind": "face_reduction", "center": [[0.5, 0.25]],
             "size": [[0.78, 0.26]], "size_frac": True, "depth": [2, 3],
             "finish": True},
            {"kind": "rect_pocket", "center": [[0.32, 0.68], [0.42, 0.68]],
             "size": [[20, 10], [24, 12]], "depth": [6, 8]},
            {"kind": "circ_hole", "center": [[0.78, 0.68]],
             "size": [[4.0], [4.8]], "through": True, "depth": [0],
             "spot": True},
        ]},
        # complex: finished pocket, finished cavity, countersink, deburr
        {"family": "complex", "deburr": True, "features": [
            {"kind": "rect_pocket", "center": [[0.28, 0.32]],
             "size": [[24, 12], [28, 14]], "depth": [6, 9], "finish": True},
            {"kind": "contour_cavity", "center": [[0.30, 0.72], [0.38, 0.72]],
             "size": [[12, 7], [14, 8]], "depth": [5, 7], "finish": True},
            {"kind": "countersink", "center": [[0.76, 0.50], [0.78, 0.32]],
             "size": [[6, 3, 2]], "depth": [10, 12]},
        ]},
        # complex: face band, two pockets, milled hole, deburr
        {"family": "complex", "deburr": True, "features": [
            {"kind": "face_reduction", "center": [[0.5, 0.24]],
             "size": [[0.76, 0.24]], "size_frac": True, "depth": [2]},
            {"kind": "rect_pocket", "center": [[0.26, 0.62]],
             "size": [[18, 10], [22, 12]], "depth": [5, 7]},
            {"kind": "rect_pocket", "center": [[0.52, 0.78], [0.55, 0.62]],
             "size": [[14, 8]], "depth": [4, 6]},
            {"kind": "circ_hole", "center": [[0.80, 0.62]],
             "size": [[6.0], [7.0]], "through": True, "depth": [0]},
        ]},
        # complex: cavity, spot-drilled hole, countersink (no deburr target)
        {"family": "complex", "features": [
            {"kind": "contour_cavity", "center": [[0.32, 0.42]],
             "size": [[13, 9], [16, 10]], "depth": [6, 8]},
            {"kind": "circ_hole", "center": [[0.72, 0.26], [0.66, 0.26]],
             "size": [[3.5], [4.2]], "through": True, "depth": [0],
             "spot": True},
            {"kind": "countersink", "center": [[0.74, 0.68]],
             "size": [[6.5, 3, 2], [7, 3.5, 2.5]], "depth": [10, 11]},
        ]},
    ]
    return {"stock": stocks, "templates": templates}


def singleton_grid(stock=(100.0, 60.0, 20.0), features=None):
    """One stock size, fixed feature parameters: exactly one candidate part."""
    if features is None:
        features = [{"kind": "rect_pocket",
                     "center": [[0.3, 0.5]], "size": [[20.0, 10.0]],
                     "depth": [5.0]}]
    return {"stock": [list(stock)],
            "templates": [{"family": "simple", "features": features}]}


# --------------------------------------------------------------------------
# Spec serialization (JSON-compatible dicts).

def spec_to_dict(spec: PartSpec) -> dict:
    return {
        "family": spec.family,
        "stock_dims": list(spec.stock_dims),
        "deburr": spec.deburr,
        "features": [{"kind": f.kind, "center": list(f.center),
                      "dims": list(f.dims), "depth": f.depth,
                      "finish": f.finish, "spot": f.spot}
                     for f in spec.features],
    }


def spec_from_dict(d: dict) -> PartSpec:
    features = tuple(FeatureSpec(kind=f["kind"], center=tuple(f["center"]),
                                 dims=tuple(f["dims"]), depth=float(f["depth"]),
                                 finish=bool(f.get("finish", False)),
                                 spot=bool(f.get("spot", False)))
                     for f in d["features"])
    return PartSpec(d["family"], tuple(float(v) for v in d["stock_dims"]),
                    features, deburr=bool(d.get("deburr", False)))
