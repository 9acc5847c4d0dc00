"""Face-based 2D finite-volume mesh.

Cells are polygons, faces are edges. Every face stores a single area vector
pointing from its owner cell to its neighbor cell (outward for boundary
faces). Interior faces come first in the face ordering, followed by the
boundary faces grouped patch by patch.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

PATCH_KINDS = ("wall", "inlet", "outlet", "slip", "symmetry")

GAUSS_TOL = 1e-12
# construction-time sanity bound; strongly graded and sheared cells far from
# the origin lose a few digits to coordinate round-off
BUILD_TOL = 1e-9
LAMBDA_SNAP = 1e-13


class MeshError(ValueError):
    """Raised for invalid mesh input or violated geometric identities."""


@dataclass(frozen=True)
class Patch:
    name: str
    kind: str
    faces: np.ndarray


@dataclass(frozen=True)
class CellGeometry:
    centroid: np.ndarray
    volume: float
    face_indices: np.ndarray
    face_signs: np.ndarray


@dataclass(frozen=True)
class FaceGeometry:
    centroid: np.ndarray
    area_vector: np.ndarray
    owner: int
    neighbor: int
    d: np.ndarray
    weight: float
    perpendicular_point: np.ndarray


@dataclass(eq=False)
class Mesh:
    """Structure-of-arrays mesh. Treat as immutable after construction."""

    points: np.ndarray
    cell_vertices: list
    cell_centroid: np.ndarray
    cell_volume: np.ndarray
    face_vertices: np.ndarray
    face_centroid: np.ndarray
    face_area: np.ndarray
    owner: np.ndarray
    neighbor: np.ndarray
    d: np.ndarray
    lam: np.ndarray
    perp_point: np.ndarray
    n_interior: int
    patches: dict = field(default_factory=dict)
    cell_face_offsets: np.ndarray = None
    cell_face_ids: np.ndarray = None
    cell_face_signs: np.ndarray = None
    face_patch: np.ndarray = None
    shape: tuple | None = None

    @property
    def n_cells(self) -> int:
        return len(self.cell_volume)

    @property
    def n_faces(self) -> int:
        return len(self.owner)

    @property
    def interior(self) -> slice:
        return slice(0, self.n_interior)

    @property
    def boundary(self) -> slice:
        return slice(self.n_interior, self.n_faces)

    @property
    def n_boundary(self) -> int:
        return self.n_faces - self.n_interior

    @property
    def face_magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.face_area, axis=1)

    @property
    def face_normal(self) -> np.ndarray:
        return self.face_area / self.face_magnitude[:, None]

    def cell(self, i: int) -> CellGeometry:
        lo, hi = self.cell_face_offsets[i], self.cell_face_offsets[i + 1]
        return CellGeometry(
            centroid=self.cell_centroid[i].copy(),
            volume=float(self.cell_volume[i]),
            face_indices=self.cell_face_ids[lo:hi].copy(),
            face_signs=self.cell_face_signs[lo:hi].copy(),
        )

    def face(self, f: int) -> FaceGeometry:
        return FaceGeometry(
            centroid=self.face_centroid[f].copy(),
            area_vector=self.face_area[f].copy(),
            owner=int(self.owner[f]),
            neighbor=int(self.neighbor[f]),
            d=self.d[f].copy(),
            weight=float(self.lam[f]),
            perpendicular_point=self.perp_point[f].copy(),
        )

    def patch_mask(self, kinds: Sequence[str]) -> np.ndarray:
        """Boolean mask over boundary faces whose patch kind is in ``kinds``."""
        mask = np.zeros(self.n_boundary, dtype=bool)
        for patch in self.patches.values():
            if patch.kind in kinds:
                mask[patch.faces - self.n_interior] = True
        return mask

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points, dtype=np.float64).tobytes())
        for verts in self.cell_vertices:
            h.update(np.asarray(verts, dtype=np.int64).tobytes())
            h.update(b"|")
        for name in sorted(self.patches):
            patch = self.patches[name]
            h.update(f"{name}:{patch.kind}:".encode())
            h.update(np.asarray(patch.faces, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def total_volume(self) -> float:
        return float(self.cell_volume.sum())

    def cell_sum(self, face_values: np.ndarray) -> np.ndarray:
        """Signed per-cell sum of an owner-oriented face quantity.

        Owner cells receive ``+value``, neighbor cells ``-value``.
        """
        vals = np.asarray(face_values, dtype=float)
        ni, n = self.n_interior, self.n_cells
        flat = vals.reshape(len(vals), -1)
        out = np.empty((n, flat.shape[1]))
        for k in range(flat.shape[1]):
            out[:, k] = np.bincount(self.owner, flat[:, k], minlength=n) - np.bincount(
                self.neighbor[:ni], flat[:ni, k], minlength=n
            )
        out = out.reshape((n,) + vals.shape[1:])
        return out


def _polygon_area_centroid(xy: np.ndarray) -> tuple[float, np.ndarray]:
    # local origin keeps the shoelace sums free of cancellation
    origin = xy.mean(axis=0)
    xy = xy - origin
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, origin
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, origin + np.array([cx, cy])


def compute_geometry(
    points: np.ndarray,
    cells: Sequence[Sequence[int]],
    patches: Mapping[str, tuple[str, Sequence[tuple[int, int]]]],
    shape: tuple | None = None,
) -> Mesh:
    """Build a :class:`Mesh` from vertex coordinates and cell polygons.

    ``cells`` lists vertex indices counter-clockwise. ``patches`` maps a patch
    name to ``(kind, edges)`` where ``edges`` are vertex pairs covering part
    of the boundary. Every boundary edge must belong to exactly one patch.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise MeshError("points must be an (n, 2) array")
    if len(cells) == 0:
        raise MeshError("mesh has no cells")

    nc = len(cells)
    centroid = np.zeros((nc, 2))
    volume = np.zeros(nc)
    cell_vertices = []
    edge_map: dict[tuple[int, int], list] = {}
    for c, verts in enumerate(cells):
        verts = [int(v) for v in verts]
        if len(verts) < 3:
            raise MeshError(f"cell {c} has fewer than 3 vertices")
        if min(verts) < 0 or max(verts) >= len(points):
            raise MeshError(f"cell {c} references a missing vertex")
        area, cen = _polygon_area_centroid(points[verts])
        if not area > 0.0:
            raise MeshError(f"cell {c} has non-positive area {area:g} (vertices must be counter-clockwise)")
        volume[c] = area
        centroid[c] = cen
        cell_vertices.append(np.array(verts, dtype=np.int64))
        for a, b in zip(verts, verts[1:] + verts[:1]):
            key = (min(a, b), max(a, b))
            edge_map.setdefault(key, []).append((c, a, b))

    interior_edges = []
    boundary_edges = {}
    for key, uses in edge_map.items():
        if len(uses) == 2:
            interior_edges.append(uses)
        elif len(uses) == 1:
            boundary_edges[key] = uses[0]
        else:
            raise MeshError(f"edge {key} shared by {len(uses)} cells")

    # assign boundary edges to patches
    ordered_boundary = []
    patch_faces = {}
    kinds = {}
    claimed = set()
    for name, (kind, edges) in patches.items():
        if kind not in PATCH_KINDS:
            raise MeshError(f"patch {name!r} has unknown kind {kind!r}")
        kinds[name] = kind
        ids = []
        for a, b in edges:
            key = (min(int(a), int(b)), max(int(a), int(b)))
            if key not in boundary_edges:
                raise MeshError(f"patch {name!r} edge {key} is not a boundary edge")
            if key in claimed:
                raise MeshError(f"boundary edge {key} claimed by more than one patch")
            claimed.add(key)
            ids.append(len(ordered_boundary))
            ordered_boundary.append(boundary_edges[key])
        patch_faces[name] = ids
    if len(claimed) != len(boundary_edges):
        missing = sorted(set(boundary_edges) - claimed)[:3]
        raise MeshError(f"{len(boundary_edges) - len(claimed)} boundary edges not in any patch, e.g. {missing}")

    ni = len(interior_edges)
    nf = ni + len(ordered_boundary)
    owner = np.empty(nf, dtype=np.int64)
    neighbor = np.full(nf, -1, dtype=np.int64)
    fverts = np.empty((nf, 2), dtype=np.int64)
    for f, uses in enumerate(interior_edges):
        (c0, a, b), (c1, _, _) = uses
        owner[f], neighbor[f] = c0, c1
        fverts[f] = (a, b)
    for k, (c0, a, b) in enumerate(ordered_boundary):
        owner[ni + k] = c0
        fverts[ni + k] = (a, b)

    pa, pb = points[fverts[:, 0]], points[fverts[:, 1]]
    face_centroid = 0.5 * (pa + pb)
    edge = pb - pa
    # counter-clockwise traversal of the owner: outward normal is (dy, -dx)
    face_area = np.column_stack([edge[:, 1], -edge[:, 0]])

    d = np.empty((nf, 2))
    d[:ni] = centroid[neighbor[:ni]] - centroid[owner[:ni]]
    d[ni:] = face_centroid[ni:] - centroid[owner[ni:]]
    lam = np.ones(nf)
    dd = np.einsum("ij,ij->i", d[:ni], d[:ni])
    if np.any(dd == 0.0):
        raise MeshError("coincident cell centroids across an interior face")
    lam[:ni] = np.einsum("ij,ij->i", face_centroid[:ni] - centroid[owner[:ni]], d[:ni]) / dd
    # centroid round-off leaves symmetric faces a few ulps away from one half
    lam[:ni][np.abs(lam[:ni] - 0.5) <= LAMBDA_SNAP] = 0.5
    perp = centroid[owner] + lam[:, None] * d
    perp[ni:] = face_centroid[ni:]

    # per-cell face lists
    cells_of = np.concatenate([owner, neighbor[:ni]])
    faces_of = np.concatenate([np.arange(nf), np.arange(ni)])
    signs_of = np.concatenate([np.ones(nf), -np.ones(ni)])
    order = np.lexsort((faces_of, cells_of))
    counts = np.bincount(cells_of, minlength=nc)
    offsets = np.concatenate([[0], np.cumsum(counts)])

    face_patch = np.full(nf, -1, dtype=np.int64)
    patch_objs = {}
    for idx, (name, ids) in enumerate(patch_faces.items()):
        faces = ni + np.asarray(ids, dtype=np.int64)
        face_patch[faces] = idx
        patch_objs[name] = Patch(name=name, kind=kinds[name], faces=faces)

    mesh = Mesh(
        points=points,
        cell_vertices=cell_vertices,
        cell_centroid=centroid,
        cell_volume=volume,
        face_vertices=fverts,
        face_centroid=face_centroid,
        face_area=face_area,
        owner=owner,
        neighbor=neighbor,
        d=d,
        lam=lam,
        perp_point=perp,
        n_interior=ni,
        patches=patch_objs,
        cell_face_offsets=offsets,
        cell_face_ids=faces_of[order],
        cell_face_signs=signs_of[order],
        face_patch=face_patch,
        shape=shape,
    )
    check_gauss_identities(mesh, BUILD_TOL)
    return mesh


def gauss_defects(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell defects of the two discrete Gauss identities.

    Returns ``(closure, moment)``: ``|sum_F dGamma| / perimeter`` and
    ``max |sum_F (x^F - x^P) dGamma^T - dOmega I| / dOmega``.
    """
    signed_area = mesh.face_area
    closure = mesh.cell_sum(signed_area)
    perimeter = np.zeros(mesh.n_cells)
    mag = mesh.face_magnitude
    np.add.at(perimeter, mesh.owner, mag)
    np.add.at(perimeter, mesh.neighbor[: mesh.n_interior], mag[: mesh.n_interior])

    ni = mesh.n_interior
    moment = np.zeros((mesh.n_cells, 2, 2))
    r_own = mesh.face_centroid - mesh.cell_centroid[mesh.owner]
    np.add.at(moment, mesh.owner, np.einsum("fk,fi->fki", r_own, signed_area))
    r_nb = mesh.face_centroid[:ni] - mesh.cell_centroid[mesh.neighbor[:ni]]
    np.add.at(moment, mesh.neighbor[:ni], -np.einsum("fk,fi->fki", r_nb, signed_area[:ni]))
    moment -= mesh.cell_volume[:, None, None] * np.eye(2)[None]
    closure_defect = np.linalg.norm(closure, axis=1) / perimeter
    moment_defect = np.abs(moment).max(axis=(1, 2)) / mesh.cell_volume
    return closure_defect, moment_defect


def check_gauss_identities(mesh: Mesh, tol: float = GAUSS_TOL) -> None:
    closure, moment = gauss_defects(mesh)
    bad = np.flatnonzero((closure > tol) | (moment > tol))
    if bad.size:
        c = int(bad[0])
        raise MeshError(
            f"cell {c} violates the discrete Gauss identity "
            f"(closure {closure[c]:.3e}, moment {moment[c]:.3e}, tol {tol:g})"
        )


def _graded_nodes(lo: float, hi: float, n: int, ratio: float) -> np.ndarray:
    if ratio == 1.0:
        return np.linspace(lo, hi, n + 1)
    widths = ratio ** np.arange(n)
    nodes = np.concatenate([[0.0], np.cumsum(widths)])
    nodes = lo + (hi - lo) * nodes / nodes[-1]
    nodes[-1] = hi
    return nodes


DEFAULT_PATCHES = {"left": "wall", "right": "wall", "bottom": "wall", "top": "wall"}


def build_structured_mesh(
    nx: int,
    ny: int,
    domain: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0)),
    stretching: tuple[float, float] = (1.0, 1.0),
    skew: float = 0.0,
    patch_kinds: Mapping[str, str] | None = None,
    x_nodes: Sequence[float] | None = None,
    y_nodes: Sequence[float] | None = None,
) -> Mesh:
    """Quadrilateral mesh of a rectangle, optionally graded and sheared.

    ``stretching`` gives the ratio between consecutive cell widths along each
    axis. ``skew`` shears the mesh, ``x -> x + skew * (y - y0)``, which makes
    the faces between vertically adjacent cells non-orthogonal. Explicit node
    coordinates may be given through ``x_nodes`` / ``y_nodes``. Cell ``(i, j)``
    has index ``j * nx + i``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got ({nx}, {ny})")
    nx, ny = int(nx), int(ny)
    (x0, x1), (y0, y1) = domain
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate domain extents {domain}")
    rx, ry = stretching
    if not (rx > 0 and ry > 0):
        raise MeshError(f"stretching ratios must be positive, got {stretching}")
    if not abs(skew) < 0.5:
        raise MeshError(f"|skew| must be below 0.5, got {skew}")

    xs = np.asarray(x_nodes, dtype=float) if x_nodes is not None else _graded_nodes(x0, x1, nx, rx)
    ys = np.asarray(y_nodes, dtype=float) if y_nodes is not None else _graded_nodes(y0, y1, ny, ry)
    if len(xs) != nx + 1 or len(ys) != ny + 1:
        raise MeshError("explicit node arrays must have n + 1 entries")
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise MeshError("node coordinates must be strictly increasing")

    X, Y = np.meshgrid(xs, ys)  # shape (ny+1, nx+1)
    X = X + skew * (Y - ys[0])
    points = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    cells = [
        (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
        for j in range(ny)
        for i in range(nx)
    ]
    kinds = dict(DEFAULT_PATCHES)
    if patch_kinds:
        unknown = set(patch_kinds) - set(kinds)
        if unknown:
            raise MeshError(f"unknown patch names {sorted(unknown)}")
        kinds.update(patch_kinds)
    edges = {
        "bottom": [(vid(i, 0), vid(i + 1, 0)) for i in range(nx)],
        "right": [(vid(nx, j), vid(nx, j + 1)) for j in range(ny)],
        "top": [(vid(i + 1, ny), vid(i, ny)) for i in range(nx)],
        "left": [(vid(0, j + 1), vid(0, j)) for j in range(ny)],
    }
    patches = {name: (kinds[name], edges[name]) for name in ("left", "right", "bottom", "top")}
    return compute_geometry(points, cells, patches, shape=(nx, ny))


# -- plain-text mesh format -------------------------------------------------
#
#   # comment lines start with '#'
#   vertices <n>
#   <x> <y>                       (n lines)
#   cells <m>
#   <k> <v_1> ... <v_k>           (m lines, counter-clockwise)
#   patches <p>
#   patch <name> <kind> <e>
#   <v_a> <v_b>                   (e lines)


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    lines = ["# mwifv mesh", f"vertices {len(mesh.points)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.points]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join([str(len(v))] + [str(int(i)) for i in v]) for v in mesh.cell_vertices]
    lines.append(f"patches {len(mesh.patches)}")
    for patch in mesh.patches.values():
        lines.append(f"patch {patch.name} {patch.kind} {len(patch.faces)}")
        lines += [f"{a} {b}" for a, b in mesh.face_vertices[patch.faces]]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> Mesh:
    raw = Path(path).read_text().splitlines()
    rows = [(n + 1, ln.split()) for n, ln in enumerate(raw) if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def take(keyword):
        nonlocal pos
        if pos >= len(rows):
            raise MeshError(f"unexpected end of file, expected {keyword!r}")
        lineno, tok = rows[pos]
        if tok[0] != keyword:
            raise MeshError(f"line {lineno}: expected {keyword!r}, got {tok[0]!r}")
        pos += 1
        return lineno, tok

    def body(count):
        nonlocal pos
        if pos + count > len(rows):
            raise MeshError("unexpected end of file")
        chunk = rows[pos : pos + count]
        pos += count
        return chunk

    try:
        _, tok = take("vertices")
        pts = np.array([[float(t) for t in r] for _, r in body(int(tok[1]))])
        _, tok = take("cells")
        cells = []
        for lineno, r in body(int(tok[1])):
            k = int(r[0])
            if len(r) != k + 1:
                raise MeshError(f"line {lineno}: expected {k} vertex ids")
            cells.append([int(t) for t in r[1:]])
        _, tok = take("patches")
        patches = {}
        for _ in range(int(tok[1])):
            _, ptok = take("patch")
            name, kind, count = ptok[1], ptok[2], int(ptok[3])
            patches[name] = (kind, [(int(a), int(b)) for _, (a, b) in body(count)])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    return compute_geometry(pts, cells, patches)
