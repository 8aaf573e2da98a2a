"""Indexed triangle meshes: topology checks, volume, and STL read/write.

Meshes are millimeter-scale, counter-clockwise wound with outward normals.
All generated geometry must be closed and 2-manifold; the checks here are the
oracle the synthesizer is validated against.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import StlParseError, TopologyError

WELD_TOL = 1e-6  # mm; duplicate-vertex merge tolerance on STL read
DEGENERATE_AREA = 1e-9  # mm^2


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64, CCW winding, outward normals

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def triangle_corners(self):
        """Return (F, 3, 3) array of per-face corner coordinates."""
        return self.vertices[self.faces]

    def translated(self, offset):
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces.copy())

    def scaled(self, s):
        return TriMesh(self.vertices * float(s), self.faces.copy())


def face_areas(mesh: TriMesh) -> np.ndarray:
    tri = mesh.triangle_corners()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def face_normals(mesh: TriMesh) -> np.ndarray:
    tri = mesh.triangle_corners()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(cross, axis=1)
    if np.any(norms <= 0):
        raise TopologyError("degenerate face with zero normal")
    return cross / norms[:, None]


def undirected_edges(mesh: TriMesh):
    """Map (min_v, max_v) -> list of (face index, corner slot) incidences."""
    edges = {}
    faces = mesh.faces
    for f in range(len(faces)):
        a, b, c = faces[f]
        for k, (u, v) in enumerate(((a, b), (b, c), (c, a))):
            key = (u, v) if u < v else (v, u)
            edges.setdefault(key, []).append((f, k))
    return edges


def validate_mesh(mesh: TriMesh) -> None:
    """Raise TopologyError unless the mesh is closed, 2-manifold and
    consistently wound, with no degenerate faces."""
    if mesh.n_faces == 0:
        raise TopologyError("empty mesh")
    if mesh.faces.min(initial=0) < 0 or mesh.faces.max(initial=-1) >= mesh.n_vertices:
        raise TopologyError("face index out of range")
    areas = face_areas(mesh)
    if np.any(areas <= DEGENERATE_AREA):
        bad = int(np.argmin(areas))
        raise TopologyError(f"degenerate face {bad} (area {areas[bad]:.3e} mm^2)")

    # Closed 2-manifold: every undirected edge shared by exactly 2 faces,
    # traversed in opposite directions (consistent winding).
    faces = mesh.faces
    for (u, v), incident in undirected_edges(mesh).items():
        if len(incident) != 2:
            raise TopologyError(
                f"edge {(u, v)} shared by {len(incident)} faces (need exactly 2)")
        dirs = []
        for f, k in incident:
            a, b, c = faces[f]
            tri_edges = ((a, b), (b, c), (c, a))
            dirs.append(tri_edges[k] == (u, v))
        if dirs[0] == dirs[1]:
            raise TopologyError(f"inconsistent winding across edge {(u, v)}")


def is_closed_manifold(mesh: TriMesh) -> bool:
    try:
        validate_mesh(mesh)
        return True
    except TopologyError:
        return False


def mesh_volume(mesh: TriMesh) -> float:
    """Signed divergence-theorem volume; positive for outward CCW winding.

    Requires a closed mesh (every edge shared by exactly 2 faces)."""
    for edge, incident in undirected_edges(mesh).items():
        if len(incident) != 2:
            raise TopologyError(f"open mesh: edge {edge} has {len(incident)} incident faces")
    tri = mesh.triangle_corners()
    return float(np.einsum("ij,ij->", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0)


def weld_vertices(soup: np.ndarray, tol: float = WELD_TOL):
    """Merge duplicate vertices of a (T, 3, 3) triangle soup within tol.

    Returns (vertices, faces) with first-seen vertex ordering."""
    pts = np.asarray(soup, dtype=np.float64).reshape(-1, 3)
    keys = np.round(pts / tol).astype(np.int64)
    seen = {}
    vertices = []
    index = np.empty(len(pts), dtype=np.int64)
    for i, key in enumerate(map(tuple, keys)):
        j = seen.get(key)
        if j is None:
            j = len(vertices)
            seen[key] = j
            vertices.append(pts[i])
        index[i] = j
    faces = index.reshape(-1, 3)
    return np.array(vertices), faces


def mesh_from_soup(soup: np.ndarray, tol: float = WELD_TOL) -> TriMesh:
    vertices, faces = weld_vertices(soup, tol)
    return TriMesh(vertices, faces)


# ---------------------------------------------------------------------------
# STL I/O

_BINARY_HEADER = b"machineseq binary stl" + b" " * 59
_TRI_RECORD = struct.Struct("<12fH")


def write_stl(mesh: TriMesh, flavor: str = "binary") -> bytes:
    """Serialize to STL.  flavor is 'binary' or 'ascii'."""
    tri = mesh.triangle_corners()
    normals = face_normals(mesh)
    if flavor == "binary":
        out = io.BytesIO()
        out.write(_BINARY_HEADER[:80])
        out.write(struct.pack("<I", len(tri)))
        n32 = normals.astype(np.float32)
        t32 = tri.astype(np.float32)
        for i in range(len(tri)):
            out.write(_TRI_RECORD.pack(*n32[i], *t32[i].reshape(9), 0))
        return out.getvalue()
    if flavor == "ascii":
        lines = ["solid machineseq"]
        for i in range(len(tri)):
            n = normals[i]
            lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
            lines.append("    outer loop")
            for v in tri[i]:
                lines.append(f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}")
            lines.append("    endloop")
            lines.append("  endfacet")
        lines.append("endsolid machineseq")
        return ("\n".join(lines) + "\n").encode("ascii")
    raise ValueError(f"unknown STL flavor {flavor!r}")


def read_stl(data: bytes, tol: float = WELD_TOL) -> TriMesh:
    """Parse binary or ASCII STL and weld duplicate vertices within tol."""
    if _looks_ascii(data):
        soup = _parse_ascii(data)
    else:
        soup = _parse_binary(data)
    if not np.all(np.isfinite(soup)):
        raise StlParseError("non-finite coordinate in STL stream")
    return mesh_from_soup(soup, tol)


def _looks_ascii(data: bytes) -> bool:
    head = data[:512].lstrip()
    return head.startswith(b"solid") and b"facet" in data[:4096]


def _parse_binary(data: bytes) -> np.ndarray:
    if len(data) < 84:
        raise StlParseError("truncated binary STL (no header/count)", offset=len(data))
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) != expected:
        raise StlParseError(
            f"binary STL length {len(data)} does not match {count} triangles "
            f"(expected {expected} bytes)", offset=min(len(data), expected))
    raw = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84)
    records = raw.reshape(count, 50)[:, :48].copy().view("<f4").reshape(count, 12)
    return records[:, 3:].astype(np.float64).reshape(count, 3, 3)


def _parse_ascii(data: bytes) -> np.ndarray:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise StlParseError(f"ASCII STL not decodable: {exc}", offset=exc.start)
    tris = []
    current = []
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if stripped.startswith("vertex"):
            parts = stripped.split()
            if len(parts) != 4:
                raise StlParseError(f"bad vertex line {stripped!r}", offset=offset)
            try:
                current.append([float(x) for x in parts[1:]])
            except ValueError:
                raise StlParseError(f"bad vertex line {stripped!r}", offset=offset)
        elif stripped.startswith("endfacet"):
            if len(current) != 3:
                raise StlParseError(
                    f"facet with {len(current)} vertices (need 3)", offset=offset)
            tris.append(current)
            current = []
        offset += len(line)
    if current:
        raise StlParseError("unterminated facet at end of stream", offset=offset)
    if not tris:
        raise StlParseError("ASCII STL contains no facets", offset=0)
    return np.array(tris, dtype=np.float64)
