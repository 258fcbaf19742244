"""Linear and quadratic tetrahedral elements for the coupled problem.

Nodal unknowns are ordered node-major: for each node the active fields
follow as (u1, u2, u3[, electric potential][, magnetic potential]).
The element operators map nodal unknowns to the coupled state
P = [strain(6, engineering), E(3)[, H(3)]] with E = -grad(potential).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, TetMesh, _EDGE_LOCAL

__all__ = [
    "FIELD_COUNT", "tet_gradient", "field_operator", "tet_state_operator",
    "tet_stiffness", "kernel_dimension", "TetMeshO2", "promote_to_quadratic",
    "GAUSS4_BARY", "GAUSS4_WEIGHTS", "quadratic_state_operators",
    "batch_o1_operators",
]

# active scalar fields per coupling mode (3 displacements + potentials)
FIELD_COUNT = {"electroMech": 4, "magnetoMech": 4, "fullyCoupled": 5}

# 4-point Gauss rule on the reference tet (degree-2 exact), barycentric
_GA = 0.5854101966249685      # (5 + 3 sqrt(5)) / 20
_GB = 0.1381966011250105      # (5 - sqrt(5)) / 20
GAUSS4_BARY = np.array([
    [_GA, _GB, _GB, _GB],
    [_GB, _GA, _GB, _GB],
    [_GB, _GB, _GA, _GB],
    [_GB, _GB, _GB, _GA],
])
GAUSS4_WEIGHTS = np.array([0.25, 0.25, 0.25, 0.25])


def kernel_dimension(n_fields: int) -> int:
    """Zero-energy modes: 3 translations, 3 rotations, one constant per
    potential field."""
    return 6 + (n_fields - 3)


def tet_gradient(coords: np.ndarray):
    """Constant shape-function gradients of a 4-node tet.

    Returns (grads, volume) with grads[a] = d N_a / d x; raises on an
    inverted or degenerate tet.
    """
    coords = np.asarray(coords, dtype=float)
    J = coords[1:] - coords[0]            # rows are edge vectors
    det = np.linalg.det(J)
    vol = det / 6.0
    if vol <= 0.0:
        raise MeshError(f"inverted or degenerate tet (volume {vol:g})")
    Jinv = np.linalg.inv(J)               # d(bary 1..3)/dx = Jinv columns
    grads = np.empty((4, 3))
    grads[1:] = Jinv.T
    grads[0] = -grads[1:].sum(axis=0)
    return grads, vol


def field_operator(grads: np.ndarray, n_fields: int) -> np.ndarray:
    """State operator B from nodal shape gradients.

    grads is (n_nodes, 3) of scalar shape-function gradients; the result
    B is (6 + 3*(n_fields-3)) x (n_nodes*n_fields) and maps node-major
    dofs to [strain Voigt (engineering shears), -grad(potentials)...].
    """
    n_nodes = grads.shape[0]
    n_rows = 6 + 3 * (n_fields - 3)
    B = np.zeros((n_rows, n_nodes * n_fields))
    for a in range(n_nodes):
        gx, gy, gz = grads[a]
        base = a * n_fields
        # strain rows (Voigt 11,22,33,23,13,12 with engineering shears)
        B[0, base + 0] = gx
        B[1, base + 1] = gy
        B[2, base + 2] = gz
        B[3, base + 1] = gz
        B[3, base + 2] = gy
        B[4, base + 0] = gz
        B[4, base + 2] = gx
        B[5, base + 0] = gy
        B[5, base + 1] = gx
        # field rows: E = -grad(phi), H = -grad(psi)
        for f in range(3, n_fields):
            row = 6 + 3 * (f - 3)
            B[row + 0, base + f] = -gx
            B[row + 1, base + f] = -gy
            B[row + 2, base + f] = -gz
    return B


def tet_state_operator(coords: np.ndarray, n_fields: int):
    """(B, volume) of the linear tet: P = B.dofs, constant over the tet."""
    grads, vol = tet_gradient(coords)
    return field_operator(grads, n_fields), vol


def _quadratic_shape_gradients(bary: np.ndarray, corner_grads: np.ndarray):
    """Gradients of the 10 quadratic shape functions at one bary point."""
    grads = np.empty((10, 3))
    for a in range(4):
        grads[a] = (4.0 * bary[a] - 1.0) * corner_grads[a]
    for k, (a, b) in enumerate(_EDGE_LOCAL):
        grads[4 + k] = 4.0 * (bary[a] * corner_grads[b] + bary[b] * corner_grads[a])
    return grads


def quadratic_state_operators(coords4: np.ndarray, n_fields: int):
    """Per-Gauss-point (B_g, w_g*volume) for the 10-node quadratic tet."""
    corner_grads, vol = tet_gradient(coords4)
    out = []
    for g in range(len(GAUSS4_BARY)):
        grads10 = _quadratic_shape_gradients(GAUSS4_BARY[g], corner_grads)
        out.append((field_operator(grads10, n_fields), GAUSS4_WEIGHTS[g] * vol))
    return out


def tet_stiffness(coords: np.ndarray, G: np.ndarray, order: int,
                  n_fields: int) -> np.ndarray:
    """Element stiffness V * B^T G B (order 1) or its 4-point Gauss sum
    over the 10-node element (order 2)."""
    G = np.asarray(G, dtype=float)
    if order == 1:
        B, vol = tet_state_operator(coords, n_fields)
        return vol * (B.T @ G @ B)
    if order == 2:
        K = None
        for B, w in quadratic_state_operators(np.asarray(coords, float)[:4], n_fields):
            term = w * (B.T @ G @ B)
            K = term if K is None else K + term
        return K
    raise ValueError(f"unsupported element order {order}")


# ---------------------------------------------------------------------------
# Quadratic (10-node) mesh promotion
# ---------------------------------------------------------------------------

@dataclass
class TetMeshO2:
    """Conforming 10-node tet mesh (corners first, then unique midpoints)."""
    points: np.ndarray          # (n_points, 3)
    tets: np.ndarray            # (n_tets, 10) corner ids then edge midpoints
    cell_of_tet: np.ndarray
    edge_length: float

    @property
    def n_points(self):
        return len(self.points)

    @property
    def boundary_node_ids(self) -> np.ndarray:
        tol = 1e-9 * self.edge_length
        p = self.points
        on = (np.abs(p) < tol) | (np.abs(p - self.edge_length) < tol)
        return np.nonzero(on.any(axis=1))[0]


def promote_to_quadratic(tmesh: TetMesh) -> TetMeshO2:
    """Insert unique shared mid-edge nodes into a conforming tet mesh."""
    points = [tmesh.vertices]
    next_id = tmesh.n_vertices
    midpoint = {}
    tets10 = np.empty((len(tmesh.tets), 10), dtype=int)
    for t, tet in enumerate(tmesh.tets):
        tets10[t, :4] = tet
        for k, (a, b) in enumerate(_EDGE_LOCAL):
            key = (min(tet[a], tet[b]), max(tet[a], tet[b]))
            nid = midpoint.get(key)
            if nid is None:
                nid = next_id
                midpoint[key] = nid
                points.append(((tmesh.vertices[tet[a]] + tmesh.vertices[tet[b]]) / 2.0)[None, :])
                next_id += 1
            tets10[t, 4 + k] = nid
    return TetMeshO2(np.vstack(points), tets10, tmesh.cell_of_tet.copy(),
                     tmesh.edge_length)


# ---------------------------------------------------------------------------
# Vectorized linear-tet operators (refined reference meshes)
# ---------------------------------------------------------------------------

def batch_o1_operators(points: np.ndarray, tets: np.ndarray, n_fields: int):
    """Vectorized (B, volume) over many linear tets.

    Returns (B_all (m, n_rows, 4*n_fields), volumes (m,)); row layout
    matches field_operator.
    """
    p = points[tets]                       # (m, 4, 3)
    J = p[:, 1:] - p[:, 0:1]               # (m, 3, 3)
    det = np.linalg.det(J)
    if np.any(det <= 0.0):
        raise MeshError("inverted tet in batch")
    vols = det / 6.0
    Jinv = np.linalg.inv(J)
    grads = np.empty((len(tets), 4, 3))
    grads[:, 1:] = np.transpose(Jinv, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)

    m = len(tets)
    n_rows = 6 + 3 * (n_fields - 3)
    B = np.zeros((m, n_rows, 4 * n_fields))
    gx, gy, gz = grads[:, :, 0], grads[:, :, 1], grads[:, :, 2]
    for a in range(4):
        base = a * n_fields
        B[:, 0, base + 0] = gx[:, a]
        B[:, 1, base + 1] = gy[:, a]
        B[:, 2, base + 2] = gz[:, a]
        B[:, 3, base + 1] = gz[:, a]
        B[:, 3, base + 2] = gy[:, a]
        B[:, 4, base + 0] = gz[:, a]
        B[:, 4, base + 2] = gx[:, a]
        B[:, 5, base + 0] = gy[:, a]
        B[:, 5, base + 1] = gx[:, a]
        for f in range(3, n_fields):
            row = 6 + 3 * (f - 3)
            B[:, row + 0, base + f] = -gx[:, a]
            B[:, row + 1, base + f] = -gy[:, a]
            B[:, row + 2, base + f] = -gz[:, a]
    return B, vols
