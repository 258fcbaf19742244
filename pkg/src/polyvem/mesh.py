"""Polyhedral RVE meshes on a cube.

Provides Voronoi generation by half-space clipping, watertight polyhedral
cell storage, face geometry, minimal tetrahedralization of convex cells,
red refinement of tetrahedral submeshes, and two text formats (a native
versioned format and a tessellation-file subset). A finished mesh is
immutable by convention and safe to share across threads for queries.

Tolerances are relative to the cube edge length L:
    TAU_MERGE = 1e-9 * L   vertex deduplication (max-norm)
    TAU_PLANE = 1e-8 * L   face planarity
    TAU_BOX   = 1e-9 * L   boundary-node detection
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

TAU_MERGE = 1e-9
TAU_PLANE = 1e-8
TAU_BOX = 1e-9
EPS_VOL = 1e-12


class MeshError(Exception):
    """Invalid geometry or topology."""


class MeshParseError(MeshError):
    """Malformed mesh file."""


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

@dataclass
class SeedSet:
    """Voronoi seed points, all strictly inside the cube."""

    seeds: np.ndarray              # (n, 3)
    rng_seed: int | None = None

    def __post_init__(self):
        self.seeds = np.atleast_2d(np.asarray(self.seeds, dtype=float))
        if self.seeds.shape[1] != 3:
            raise MeshError("seeds must be (n, 3)")
        if not np.all(np.isfinite(self.seeds)):
            raise MeshError("non-finite seed coordinates")


def random_seeds(n: int, L: float, rng_seed: int) -> SeedSet:
    """n uniform seeds in (0, L)^3, reproducible from rng_seed."""
    rng = np.random.default_rng(rng_seed)
    pts = rng.uniform(0.0, L, size=(n, 3))
    return SeedSet(pts, rng_seed)


@dataclass
class PolyCell:
    """One polyhedral grain: oriented face loops over global vertex ids."""

    vertex_ids: np.ndarray                 # unique ids used by this cell
    faces: list                            # list of (k,) int arrays, outward CCW loops
    material_id: int = 0
    volume: float = 0.0


@dataclass
class PolyMesh:
    """Watertight polyhedral cell complex filling the cube [0, L]^3."""

    vertices: np.ndarray                   # (n, 3)
    cells: list                            # list[PolyCell]
    edge_length: float
    _boundary: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def boundary_node_ids(self) -> np.ndarray:
        """Ids of nodes with any coordinate within TAU_BOX*L of 0 or L."""
        if self._boundary is None:
            L = self.edge_length
            tol = TAU_BOX * L
            on_lo = np.abs(self.vertices) <= tol
            on_hi = np.abs(self.vertices - L) <= tol
            self._boundary = np.nonzero((on_lo | on_hi).any(axis=1))[0]
        return self._boundary

    def locate(self, point) -> int:
        """Containing cell id of a point (convex cells), or -1."""
        p = np.asarray(point, dtype=float)
        tol = TAU_PLANE * self.edge_length
        if not hasattr(self, "_planes"):
            planes = []
            for cell in self.cells:
                ns, ds = [], []
                for loop in cell.faces:
                    _, n, c = face_geometry(loop, self.vertices)
                    ns.append(n)
                    ds.append(np.dot(n, c))
                planes.append((np.array(ns), np.array(ds)))
            self._planes = planes
        for ci, (ns, ds) in enumerate(self._planes):
            if np.all(ns @ p - ds <= tol):
                return ci
        return -1


@dataclass
class TetSubmesh:
    """Tetrahedralization of one cell.

    Tet vertex ids < n_mesh refer to mesh vertices; ids >= n_mesh index
    into extra_vertices (interior points added by the non-convex fallback),
    offset by n_mesh.
    """

    cell_id: int
    tets: np.ndarray                       # (m, 4) int
    volumes: np.ndarray                    # (m,)
    n_mesh: int                            # vertex count of the owning mesh
    extra_vertices: np.ndarray             # (k, 3)
    fallback: bool = False

    def points(self, mesh: PolyMesh) -> np.ndarray:
        if len(self.extra_vertices):
            return np.vstack([mesh.vertices, self.extra_vertices])
        return mesh.vertices


@dataclass
class TetMesh:
    """Conforming tetrahedral mesh (union of cell submeshes, or refined)."""

    vertices: np.ndarray                   # (n, 3)
    tets: np.ndarray                       # (m, 4)
    cell_of_tet: np.ndarray                # (m,) owning polyhedral cell id
    edge_length: float
    _boundary: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def boundary_node_ids(self) -> np.ndarray:
        if self._boundary is None:
            L = self.edge_length
            tol = TAU_BOX * L
            on_lo = np.abs(self.vertices) <= tol
            on_hi = np.abs(self.vertices - L) <= tol
            self._boundary = np.nonzero((on_lo | on_hi).any(axis=1))[0]
        return self._boundary


# ---------------------------------------------------------------------------
# Face geometry
# ---------------------------------------------------------------------------

def face_geometry(loop, vertices):
    """(area, unit outward normal, area centroid) of a planar polygon.

    Uses a fan triangulation from the vertex mean, exact for planar
    polygons of any (mild) non-convexity. The normal follows the loop
    winding (CCW seen from outside gives the outward normal).
    """
    pts = vertices[np.asarray(loop, dtype=int)]
    if len(pts) < 3:
        raise MeshError(f"face with {len(pts)} vertices")
    c0 = pts.mean(axis=0)
    v1 = pts - c0
    v2 = np.roll(pts, -1, axis=0) - c0
    cross = np.cross(v1, v2)               # per-triangle 2*area vectors
    area_vec = 0.5 * cross.sum(axis=0)
    area = float(np.linalg.norm(area_vec))
    if area <= 0.0:
        raise MeshError("zero-area face (collinear loop)")
    normal = area_vec / area
    tri_area = 0.5 * cross @ normal        # signed
    tri_cent = (pts + np.roll(pts, -1, axis=0) + c0) / 3.0
    centroid = (tri_area[:, None] * tri_cent).sum(axis=0) / tri_area.sum()
    return area, normal, centroid


def face_planarity(loop, vertices) -> float:
    """Max out-of-plane deviation of a face loop."""
    _, n, c = face_geometry(loop, vertices)
    pts = vertices[np.asarray(loop, dtype=int)]
    return float(np.max(np.abs((pts - c) @ n)))


def _signed_volume_moment(cell: PolyCell, vertices):
    vol = 0.0
    mom = np.zeros(3)
    for loop in cell.faces:
        pts = vertices[loop]
        p0 = pts[0]
        for i in range(1, len(pts) - 1):
            v = np.dot(p0, np.cross(pts[i], pts[i + 1])) / 6.0
            vol += v
            mom += v * (p0 + pts[i] + pts[i + 1]) / 4.0
    return vol, mom


def cell_volume_centroid(cell: PolyCell, vertices):
    """Exact volume and centroid via signed tets against the origin."""
    vol, mom = _signed_volume_moment(cell, vertices)
    if vol <= 0.0:
        raise MeshError("non-positive cell volume (orientation?)")
    return vol, mom / vol


def orient_cell_faces(cell: PolyCell, vertices) -> float:
    """Wind every face of a watertight cell outward; returns the volume.

    Consistency is propagated across shared edges (a closed oriented
    surface traverses each edge once in each direction), then the global
    sign is fixed so the enclosed signed volume is positive. Exact for
    any watertight polyhedron, convex or not.
    """
    loops = [np.asarray(lp, dtype=int) for lp in cell.faces]
    edge_faces = {}
    for fi, loop in enumerate(loops):
        k = len(loop)
        for i in range(k):
            a, b = int(loop[i]), int(loop[(i + 1) % k])
            edge_faces.setdefault(frozenset((a, b)), []).append((fi, (a, b)))
    flip = [None] * len(loops)
    flip[0] = False
    stack = [0]
    while stack:
        fi = stack.pop()
        loop = loops[fi]
        k = len(loop)
        for i in range(k):
            a, b = int(loop[i]), int(loop[(i + 1) % k])
            if flip[fi]:
                a, b = b, a
            for fj, stored in edge_faces[frozenset((a, b))]:
                if fj == fi or flip[fj] is not None:
                    continue
                # the neighbour must traverse this edge as (b, a)
                flip[fj] = stored != (b, a)
                stack.append(fj)
    if any(f is None for f in flip):
        raise MeshError("cell surface is not edge-connected")
    cell.faces[:] = [lp[::-1].copy() if fl else lp
                     for lp, fl in zip(loops, flip)]
    vol, _ = _signed_volume_moment(cell, vertices)
    if vol < 0.0:
        cell.faces[:] = [lp[::-1].copy() for lp in cell.faces]
        vol = -vol
    return vol


# ---------------------------------------------------------------------------
# Convex polyhedron clipping (working representation: local verts + loops)
# ---------------------------------------------------------------------------

def _cube_poly(L: float):
    verts = np.array([[0, 0, 0], [L, 0, 0], [L, L, 0], [0, L, 0],
                      [0, 0, L], [L, 0, L], [L, L, L], [0, L, L]], dtype=float)
    faces = [[0, 3, 2, 1],    # z = 0, outward -z
             [4, 5, 6, 7],    # z = L, outward +z
             [0, 1, 5, 4],    # y = 0
             [2, 3, 7, 6],    # y = L
             [0, 4, 7, 3],    # x = 0
             [1, 2, 6, 5]]    # x = L
    return verts, faces


def _clip_halfspace(verts, faces, normal, offset, eps):
    """Clip convex polyhedron to {x : normal.x <= offset}.

    Returns (verts, faces) or None when empty. Watertight by keying
    edge intersections on the original edge, so both adjacent faces
    receive the identical cut point.
    """
    d = verts @ normal - offset
    side = np.where(d > eps, 1, np.where(d < -eps, -1, 0))
    if not np.any(side > 0):
        return verts, faces
    if not np.any(side < 0):
        return None

    new_pts = [verts]
    n_old = len(verts)
    cut_cache = {}
    next_id = n_old

    def cut_point(a, b):
        nonlocal next_id
        key = (a, b) if a < b else (b, a)
        if key not in cut_cache:
            t = d[a] / (d[a] - d[b])
            new_pts.append((verts[a] + t * (verts[b] - verts[a]))[None, :])
            cut_cache[key] = next_id
            next_id += 1
        return cut_cache[key]

    on_plane = set(np.nonzero(side == 0)[0].tolist())
    new_faces = []
    for loop in faces:
        out = []
        k = len(loop)
        for i in range(k):
            a, b = loop[i], loop[(i + 1) % k]
            if side[a] <= 0:
                out.append(a)
            if side[a] * side[b] < 0:
                out.append(cut_point(a, b))
        # drop consecutive duplicates
        dedup = [v for j, v in enumerate(out) if v != out[(j - 1) % len(out)]] if out else []
        if len(dedup) >= 3:
            new_faces.append(dedup)

    verts2 = np.vstack(new_pts)

    # cap face: chain the on-plane edges of the clipped faces, reversed
    cap_ids = on_plane | set(cut_cache.values())
    succ = {}
    for loop in new_faces:
        k = len(loop)
        for i in range(k):
            a, b = loop[i], loop[(i + 1) % k]
            if a in cap_ids and b in cap_ids:
                succ[b] = a
    if len(succ) >= 3:
        start = next(iter(succ))
        cap = [start]
        cur = succ[start]
        while cur != start:
            cap.append(cur)
            if len(cap) > len(succ):
                raise MeshError("open cap loop while clipping")
            cur = succ[cur]
        new_faces.append(cap)

    # compact unused vertices
    used = sorted({v for loop in new_faces for v in loop})
    remap = {v: i for i, v in enumerate(used)}
    verts3 = verts2[used]
    faces3 = [np.array([remap[v] for v in loop], dtype=int) for loop in new_faces]
    return verts3, [list(f) for f in faces3]


# ---------------------------------------------------------------------------
# Voronoi generation
# ---------------------------------------------------------------------------

class _PointMerger:
    """Spatial-hash vertex dedup within a max-norm tolerance."""

    def __init__(self, tol: float):
        self.tol = tol
        self.buckets = {}
        self.points = []

    def add(self, p) -> int:
        key = tuple(np.floor(p / self.tol).astype(np.int64))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for idx in self.buckets.get((key[0] + dx, key[1] + dy, key[2] + dz), ()):
                        if np.max(np.abs(p - self.points[idx])) <= self.tol:
                            return idx
        idx = len(self.points)
        self.points.append(np.asarray(p, dtype=float))
        self.buckets.setdefault(key, []).append(idx)
        return idx

    def array(self) -> np.ndarray:
        return np.array(self.points) if self.points else np.zeros((0, 3))


def _voronoi_cells(seeds: np.ndarray, L: float):
    """Clip the cube per seed by nearest-first bisector planes."""
    n = len(seeds)
    eps = TAU_MERGE * L
    cells = []
    for i in range(n):
        verts, faces = _cube_poly(L)
        if n > 1:
            dist = np.linalg.norm(seeds - seeds[i], axis=1)
            order = np.argsort(dist)
            for j in order:
                if j == i:
                    continue
                # security radius: farther bisectors cannot cut
                radius = np.max(np.linalg.norm(verts - seeds[i], axis=1))
                if dist[j] / 2.0 > radius:
                    break
                normal = (seeds[j] - seeds[i]) / dist[j]
                offset = normal @ (seeds[i] + seeds[j]) / 2.0
                clipped = _clip_halfspace(verts, faces, normal, offset, eps)
                if clipped is None:
                    raise MeshError(f"seed {i} produced an empty Voronoi cell")
                verts, faces = clipped
        cells.append((verts, faces))
    return cells


def generate_voronoi(seeds, L: float, lloyd: int = 0) -> PolyMesh:
    """Voronoi tessellation of [0, L]^3, one convex cell per seed.

    Cells are the cube clipped by seed-pair bisector half-spaces (pruned
    by a nearest-first security-radius bound); shared faces conform and
    vertices are merged within TAU_MERGE*L. lloyd > 0 applies that many
    Lloyd relaxation steps (seeds moved to cell centroids) before the
    final tessellation.
    """
    ss = seeds if isinstance(seeds, SeedSet) else SeedSet(np.asarray(seeds, dtype=float))
    pts = ss.seeds
    if len(pts) < 1:
        raise MeshError("need at least one seed")
    if np.any(pts <= 0.0) or np.any(pts >= L):
        raise MeshError("seeds must lie strictly inside the cube")
    if len(pts) > 1:
        from scipy.spatial.distance import pdist
        if pdist(pts).min() <= TAU_MERGE * L:
            raise MeshError("coincident seeds")

    for _ in range(int(lloyd)):
        raw = _voronoi_cells(pts, L)
        cents = []
        for verts, faces in raw:
            cell = PolyCell(np.arange(len(verts)), [np.asarray(f) for f in faces])
            _, c = cell_volume_centroid(cell, verts)
            cents.append(c)
        pts = np.array(cents)

    raw = _voronoi_cells(pts, L)
    merger = _PointMerger(TAU_MERGE * L)
    cells = []
    for ci, (verts, faces) in enumerate(raw):
        gids = np.array([merger.add(v) for v in verts], dtype=int)
        loops = []
        for loop in faces:
            g = gids[np.asarray(loop, dtype=int)]
            # merging may collapse sliver edges
            g = np.array([v for k, v in enumerate(g) if v != g[(k - 1) % len(g)]])
            if len(np.unique(g)) >= 3:
                loops.append(g)
        cell = PolyCell(np.unique(np.concatenate(loops)), loops, material_id=0)
        cells.append(cell)

    mesh = PolyMesh(merger.array(), cells, float(L))
    _finalize_cells(mesh)
    return mesh


def _finalize_cells(mesh: PolyMesh):
    """Orient faces outward, cache volumes, validate closure."""
    total = 0.0
    for ci, cell in enumerate(mesh.cells):
        vol = orient_cell_faces(cell, mesh.vertices)
        if vol < EPS_VOL * mesh.edge_length ** 3:
            raise MeshError(f"degenerate cell {ci} (volume {vol:g})")
        cell.volume = vol
        total += vol
    L3 = mesh.edge_length ** 3
    if abs(total - L3) > 1e-10 * L3:
        raise MeshError(f"cell volumes sum to {total:.15g}, expected {L3:.15g}")


def cell_watertight(cell: PolyCell) -> bool:
    """Each edge used exactly twice, in opposite directions."""
    count = {}
    for loop in cell.faces:
        k = len(loop)
        for i in range(k):
            a, b = int(loop[i]), int(loop[(i + 1) % k])
            count[(a, b)] = count.get((a, b), 0) + 1
    for (a, b), c in count.items():
        if c != 1 or count.get((b, a), 0) != 1:
            return False
    return True


def interior_face_conformity(mesh: PolyMesh) -> bool:
    """Every face is either on the box surface or shared by exactly two
    cells with opposite windings."""
    seen = {}
    for ci, cell in enumerate(mesh.cells):
        for loop in cell.faces:
            key = frozenset(int(v) for v in loop)
            seen.setdefault(key, []).append(ci)
    L, tol = mesh.edge_length, TAU_BOX * mesh.edge_length
    for key, owners in seen.items():
        if len(owners) == 2:
            continue
        if len(owners) != 1:
            return False
        pts = mesh.vertices[list(key)]
        on_box = False
        for ax in range(3):
            for val in (0.0, L):
                if np.all(np.abs(pts[:, ax] - val) <= tol):
                    on_box = True
        if not on_box:
            return False
    return True


# ---------------------------------------------------------------------------
# Tetrahedralization and refinement
# ---------------------------------------------------------------------------

def _cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _ear_clip(pts2d):
    """Deterministic ear clipping; returns position triples into pts2d."""
    n = len(pts2d)
    area2 = np.sum(pts2d[:, 0] * np.roll(pts2d[:, 1], -1)
                   - np.roll(pts2d[:, 0], -1) * pts2d[:, 1])
    orient = 1.0 if area2 >= 0 else -1.0
    scale2 = max(np.ptp(pts2d[:, 0]), np.ptp(pts2d[:, 1])) ** 2
    eps = 1e-12 * scale2
    active = list(range(n))
    tris = []
    while len(active) > 3:
        found = False
        for k in range(len(active)):
            ia = active[k - 1]
            ib = active[k]
            ic = active[(k + 1) % len(active)]
            a, b, c = pts2d[ia], pts2d[ib], pts2d[ic]
            if orient * _cross2(b - a, c - b) <= eps:
                continue
            blocked = False
            for j in active:
                if j in (ia, ib, ic):
                    continue
                p = pts2d[j]
                s0 = orient * _cross2(b - a, p - a)
                s1 = orient * _cross2(c - b, p - b)
                s2 = orient * _cross2(a - c, p - c)
                if s0 > -eps and s1 > -eps and s2 > -eps:
                    blocked = True
                    break
            if blocked:
                continue
            tris.append((ia, ib, ic))
            del active[k]
            found = True
            break
        if not found:
            raise MeshError("ear clipping failed (degenerate polygon)")
    tris.append(tuple(active))
    return tris


def _triangulate_face(loop, vertices):
    """Triangulate a planar face into triangles wound like the loop.

    The triangle set depends only on the vertex-id cycle (canonicalized
    start and direction), so the two cells sharing a face produce the
    identical triangles and the union tet mesh conforms.
    """
    loop = np.asarray(loop, dtype=int)
    pivot = int(np.argmin(loop))
    canon = np.roll(loop, -pivot)
    flipped = False
    if len(canon) > 2 and canon[-1] < canon[1]:
        canon = np.concatenate([canon[:1], canon[1:][::-1]])
        flipped = True

    pts = vertices[canon]
    _, nrm, _ = face_geometry(canon, vertices)
    drop = int(np.argmax(np.abs(nrm)))
    keep = [ax for ax in range(3) if ax != drop]
    pts2d = pts[:, keep]

    # convex polygons take the plain fan from the canonical start
    v1 = pts2d - np.roll(pts2d, 1, axis=0)
    v2 = np.roll(pts2d, -1, axis=0) - pts2d
    turns = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    scale2 = max(np.ptp(pts2d[:, 0]), np.ptp(pts2d[:, 1])) ** 2
    if np.all(turns >= -1e-12 * scale2) or np.all(turns <= 1e-12 * scale2):
        tris = [(0, i, i + 1) for i in range(1, len(canon) - 1)]
    else:
        tris = _ear_clip(pts2d)

    out = [(int(canon[a]), int(canon[b]), int(canon[c])) for a, b, c in tris]
    if flipped:
        out = [(a, c, b) for a, b, c in out]
    return out


def _tet_volumes(points, tets):
    p = points[tets]
    return np.einsum("ij,ij->i", p[:, 1] - p[:, 0],
                     np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])) / 6.0


def triangulate_cell(mesh: PolyMesh, cell_id: int) -> TetSubmesh:
    """Minimal tetrahedralization by vertex-apex fan.

    Apex is the cell's lowest vertex id; each face not containing the apex
    is fanned from its own lowest-id vertex. This induces the identical
    triangle set on both sides of a shared face, so the union over cells
    conforms. Non-convex cells (negative or non-closing fans) fall back to
    a flagged centroid-apex construction with one added interior point.
    """
    cell = mesh.cells[cell_id]
    apex = int(cell.vertex_ids.min())
    face_tris = [_triangulate_face(loop, mesh.vertices) for loop in cell.faces]
    tets = []
    for loop, tris in zip(cell.faces, face_tris):
        if apex in set(int(v) for v in loop):
            continue
        for (a, b, c) in tris:
            tets.append((a, c, b, apex))      # outward face -> positive tet
    tets = np.array(tets, dtype=int)
    vols = _tet_volumes(mesh.vertices, tets)
    ok = len(tets) > 0 and np.all(vols > 0.0) and \
        abs(vols.sum() - cell.volume) <= 1e-10 * cell.volume
    if ok:
        return TetSubmesh(cell_id, tets, vols, mesh.n_vertices, np.zeros((0, 3)))

    # fallback: star from the centroid, one interior node
    _, cent = cell_volume_centroid(cell, mesh.vertices)
    cid = mesh.n_vertices
    tets = []
    for tris in face_tris:
        for (a, b, c) in tris:
            tets.append((a, c, b, cid))
    tets = np.array(tets, dtype=int)
    pts = np.vstack([mesh.vertices, cent[None, :]])
    vols = _tet_volumes(pts, tets)
    if not (np.all(vols > 0.0) and abs(vols.sum() - cell.volume) <= 1e-10 * cell.volume):
        raise MeshError(f"cell {cell_id} is not star-shaped w.r.t. its centroid")
    return TetSubmesh(cell_id, tets, vols, mesh.n_vertices, cent[None, :], fallback=True)


def union_submeshes(mesh: PolyMesh, subs) -> TetMesh:
    """Conforming union tet mesh over all cells (the coarse FEM mesh)."""
    extra = []
    all_tets = []
    owner = []
    offset = mesh.n_vertices
    for sub in subs:
        t = sub.tets.copy()
        if len(sub.extra_vertices):
            # remap this submesh's extras into the shared global range
            hi = t >= sub.n_mesh
            t[hi] = offset + len(extra) + (t[hi] - sub.n_mesh)
            extra.extend(sub.extra_vertices)
        all_tets.append(t)
        owner.extend([sub.cell_id] * len(t))
    verts = np.vstack([mesh.vertices] + ([np.array(extra)] if extra else []))
    return TetMesh(verts, np.vstack(all_tets), np.array(owner, dtype=int), mesh.edge_length)


_EDGE_LOCAL = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def _refine_once(points, tets):
    """Red refinement: each tet into 8 via edge midpoints (conforming)."""
    pts = [points]
    nid = len(points)
    cache = {}

    def mid(a, b):
        nonlocal nid
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            pts.append((points[a] + points[b])[None, :] / 2.0)
            cache[key] = nid
            nid += 1
        return cache[key]

    out = np.empty((len(tets) * 8, 4), dtype=int)
    for k, (v0, v1, v2, v3) in enumerate(tets):
        m01, m02, m03 = mid(v0, v1), mid(v0, v2), mid(v0, v3)
        m12, m13, m23 = mid(v1, v2), mid(v1, v3), mid(v2, v3)
        out[8 * k:8 * k + 8] = [
            (v0, m01, m02, m03), (v1, m01, m12, m13),
            (v2, m02, m12, m23), (v3, m03, m13, m23),
            # octahedron split around the (m02, m13) diagonal
            (m02, m13, m01, m03), (m02, m13, m03, m23),
            (m02, m13, m23, m12), (m02, m13, m12, m01),
        ]
    all_pts = np.vstack(pts)
    vols = _tet_volumes(all_pts, out)
    flip = vols < 0.0
    out[flip] = out[flip][:, [0, 1, 3, 2]]
    return all_pts, out


def refine_submesh(mesh: PolyMesh, sub: TetSubmesh, levels: int) -> TetSubmesh:
    """Red-refine one cell's submesh `levels` times (volume conserving)."""
    if levels < 0:
        raise MeshError("levels must be >= 0")
    if levels == 0:
        return sub
    points = sub.points(mesh)
    tets = sub.tets
    for _ in range(levels):
        points, tets = _refine_once(points, tets)
    vols = _tet_volumes(points, tets)
    return TetSubmesh(sub.cell_id, tets, vols, mesh.n_vertices,
                      points[mesh.n_vertices:], fallback=sub.fallback)


def refine_tet_mesh(tmesh: TetMesh, levels: int) -> TetMesh:
    """Red-refine a conforming tet mesh globally (shared midpoints)."""
    points, tets = tmesh.vertices, tmesh.tets
    owner = tmesh.cell_of_tet
    for _ in range(int(levels)):
        points, tets = _refine_once(points, tets)
        owner = np.repeat(owner, 8)
    return TetMesh(points, tets, owner, tmesh.edge_length)


# ---------------------------------------------------------------------------
# Native text format
# ---------------------------------------------------------------------------

_NATIVE_MAGIC = "polyvem-mesh 1"


def _native_payload(mesh: PolyMesh) -> str:
    lines = [f"VERTICES {mesh.n_vertices}"]
    for i, v in enumerate(mesh.vertices):
        lines.append(f"{i} {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    lines.append(f"CELLS {len(mesh.cells)}")
    for i, cell in enumerate(mesh.cells):
        lines.append(f"{i} {cell.material_id} {len(cell.faces)}")
    lines.append("FACES")
    for i, cell in enumerate(mesh.cells):
        for loop in cell.faces:
            lines.append(f"{i} " + " ".join(str(int(v)) for v in loop))
    return "\n".join(lines) + "\n"


def write_mesh(mesh: PolyMesh) -> str:
    """Serialize to the native format (round-trip stable, checksummed)."""
    payload = _native_payload(mesh)
    digest = hashlib.sha256(payload.encode()).hexdigest()
    return (f"{_NATIVE_MAGIC}\nL {float(mesh.edge_length)!r}\n"
            f"CHECKSUM {digest}\n{payload}")


def read_mesh(text: str) -> PolyMesh:
    """Parse the native format; verifies the checksum and all invariants."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != _NATIVE_MAGIC:
        raise MeshParseError("not a native mesh file (bad magic)")
    if not lines[1].startswith("L "):
        raise MeshParseError("missing L header")
    L = float(lines[1].split()[1])
    idx = 2
    if lines[idx].startswith("CHECKSUM"):
        stated = lines[idx].split()[1]
        payload = "\n".join(lines[idx + 1:]) + "\n"
        if hashlib.sha256(payload.encode()).hexdigest() != stated:
            raise MeshParseError("checksum mismatch")
        idx += 1

    def expect(tag):
        nonlocal idx
        parts = lines[idx].split()
        if parts[0] != tag:
            raise MeshParseError(f"expected {tag} at line {idx + 1}")
        idx += 1
        return parts

    nv = int(expect("VERTICES")[1])
    verts = np.empty((nv, 3))
    for k in range(nv):
        parts = lines[idx].split()
        verts[int(parts[0])] = [float(parts[1]), float(parts[2]), float(parts[3])]
        idx += 1
    nc = int(expect("CELLS")[1])
    mats = np.zeros(nc, dtype=int)
    nfaces = np.zeros(nc, dtype=int)
    for k in range(nc):
        parts = lines[idx].split()
        mats[int(parts[0])] = int(parts[1])
        nfaces[int(parts[0])] = int(parts[2])
        idx += 1
    expect("FACES")
    face_lists = [[] for _ in range(nc)]
    while idx < len(lines) and lines[idx].strip():
        parts = [int(x) for x in lines[idx].split()]
        ci, loop = parts[0], np.array(parts[1:], dtype=int)
        if np.any(loop >= nv) or np.any(loop < 0):
            raise MeshParseError(f"dangling vertex reference in face of cell {ci}")
        face_lists[ci].append(loop)
        idx += 1
    cells = []
    for ci in range(nc):
        if len(face_lists[ci]) != nfaces[ci]:
            raise MeshParseError(f"cell {ci}: {len(face_lists[ci])} faces, header says {nfaces[ci]}")
        vids = np.unique(np.concatenate(face_lists[ci]))
        cells.append(PolyCell(vids, face_lists[ci], material_id=int(mats[ci])))
    mesh = PolyMesh(verts, cells, L)
    _validate_parsed(mesh)
    return mesh


def _validate_parsed(mesh: PolyMesh):
    tol = TAU_PLANE * mesh.edge_length
    for ci, cell in enumerate(mesh.cells):
        if not cell_watertight(cell):
            raise MeshParseError(f"cell {ci} is not watertight")
        for loop in cell.faces:
            if face_planarity(loop, mesh.vertices) > tol:
                raise MeshParseError(f"non-planar face in cell {ci}")
    _finalize_cells(mesh)


# ---------------------------------------------------------------------------
# Tessellation-file subset (documented in docs/formats.md)
# ---------------------------------------------------------------------------

def write_tess(mesh: PolyMesh) -> str:
    """Write the tessellation subset grammar (1-based ids)."""
    out = ["***tess", " **format", "   1"]
    out.append(" **vertex")
    out.append(f"   {mesh.n_vertices}")
    for i, v in enumerate(mesh.vertices):
        out.append(f"   {i + 1} {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")

    edges = {}
    for cell in mesh.cells:
        for loop in cell.faces:
            k = len(loop)
            for i in range(k):
                a, b = int(loop[i]), int(loop[(i + 1) % k])
                key = (a, b) if a < b else (b, a)
                edges.setdefault(key, len(edges))
    out.append(" **edge")
    out.append(f"   {len(edges)}")
    for (a, b), eid in sorted(edges.items(), key=lambda kv: kv[1]):
        out.append(f"   {eid + 1} {a + 1} {b + 1}")

    faces = {}
    cell_faces = []
    for cell in mesh.cells:
        refs = []
        for loop in cell.faces:
            key = frozenset(int(v) for v in loop)
            if key in faces:
                refs.append(-(faces[key][0] + 1))      # second owner sees it flipped
            else:
                faces[key] = (len(faces), [int(v) for v in loop])
                refs.append(faces[key][0] + 1)
        cell_faces.append(refs)
    out.append(" **face")
    out.append(f"   {len(faces)}")
    for fid, loop in sorted(faces.values(), key=lambda kv: kv[0]):
        out.append(f"   {fid + 1}")
        out.append(f"   {len(loop)} " + " ".join(str(v + 1) for v in loop))
        eids = []
        for i in range(len(loop)):
            a, b = loop[i], loop[(i + 1) % len(loop)]
            key = (a, b) if a < b else (b, a)
            eids.append((edges[key] + 1) if a < b else -(edges[key] + 1))
        out.append(f"   {len(eids)} " + " ".join(str(e) for e in eids))
        _, n, c = face_geometry(np.array(loop), mesh.vertices)
        out.append(f"   {float(np.dot(n, c))!r} {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}")
    out.append(" **polyhedron")
    out.append(f"   {len(mesh.cells)}")
    for ci, refs in enumerate(cell_faces):
        out.append(f"   {ci + 1} {len(refs)} " + " ".join(str(r) for r in refs))
    out.append("***end")
    return "\n".join(out) + "\n"


def parse_tess(text: str, edge_length: float | None = None) -> PolyMesh:
    """Parse the tessellation subset; fails loudly on unknown sections.

    Accepted sections: **format, **vertex, **edge (validated, then
    unused), **face, **polyhedron, wrapped in ***tess ... ***end.
    Face orientations are normalized (outward) on import.
    """
    lines = [ln.rstrip() for ln in text.splitlines()]
    pos = 0

    def peek():
        return lines[pos].strip() if pos < len(lines) else None

    def take():
        nonlocal pos
        ln = lines[pos].strip()
        pos += 1
        return ln

    if take() != "***tess":
        raise MeshParseError("missing ***tess header")

    verts = None
    face_loops = {}
    polys = []
    while pos < len(lines):
        tag = take()
        if tag == "***end":
            break
        if not tag.startswith("**"):
            raise MeshParseError(f"expected a section, got {tag!r}")
        name = tag[2:]
        if name == "format":
            take()
        elif name == "vertex":
            n = int(take())
            verts = np.empty((n, 3))
            seen = np.zeros(n, dtype=bool)
            for _ in range(n):
                parts = take().split()
                i = int(parts[0]) - 1
                verts[i] = [float(parts[1]), float(parts[2]), float(parts[3])]
                seen[i] = True
            if not seen.all():
                raise MeshParseError("missing vertex ids")
        elif name == "edge":
            n = int(take())
            for _ in range(n):
                parts = take().split()
                if len(parts) < 3:
                    raise MeshParseError("malformed edge line")
        elif name == "face":
            n = int(take())
            for _ in range(n):
                fid = int(take()) - 1
                parts = take().split()
                nvert = int(parts[0])
                loop = np.array([int(x) - 1 for x in parts[1:1 + nvert]], dtype=int)
                if len(loop) != nvert:
                    raise MeshParseError(f"face {fid + 1}: vertex count mismatch")
                take()                      # edge list line, unused
                take()                      # plane line, unused
                face_loops[fid] = loop
        elif name == "polyhedron":
            n = int(take())
            for _ in range(n):
                parts = take().split()
                ci = int(parts[0]) - 1
                nf = int(parts[1])
                refs = [int(x) for x in parts[2:2 + nf]]
                if len(refs) != nf:
                    raise MeshParseError(f"polyhedron {ci + 1}: face count mismatch")
                polys.append((ci, refs))
        else:
            raise MeshParseError(f"unsupported section **{name}")
    else:
        raise MeshParseError("missing ***end")

    if verts is None or not polys:
        raise MeshParseError("file lacks **vertex or **polyhedron data")
    nv = len(verts)
    cells = [None] * len(polys)
    for ci, refs in polys:
        loops = []
        for r in refs:
            fid = abs(r) - 1
            if fid not in face_loops:
                raise MeshParseError(f"polyhedron {ci + 1} references unknown face {fid + 1}")
            loop = face_loops[fid]
            if np.any(loop >= nv) or np.any(loop < 0):
                raise MeshParseError(f"dangling vertex reference in face {fid + 1}")
            loops.append(loop[::-1].copy() if r < 0 else loop.copy())
        vids = np.unique(np.concatenate(loops))
        cells[ci] = PolyCell(vids, loops)

    L = float(edge_length) if edge_length else float(np.max(verts))
    mesh = PolyMesh(verts, list(cells), L)
    _validate_parsed(mesh)
    return mesh


def mesh_hash(mesh: PolyMesh) -> str:
    """Stable content hash used for caching and provenance."""
    return hashlib.sha256(write_mesh(mesh).encode()).hexdigest()
