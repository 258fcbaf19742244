"""First-order virtual element on a polyhedral cell.

The element carries the coupled fields (displacements plus one or two
scalar potentials) with point values at the cell vertices as the only
unknowns. Gradients are projected to constants via exact face integrals
of the first-order face reconstruction; the energy blends that projected
(consistency) part with a linear-tet (stabilization) part on the cell's
tet submesh, weighted (1-beta) / beta.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .element_fem import field_operator, kernel_dimension, tet_state_operator
from .mesh import MeshError, PolyMesh, TetSubmesh, face_geometry, triangulate_cell

__all__ = [
    "ProjectedGradients", "VemElement",
    "face_integral_weights", "scalar_gradient_operator", "projected_gradient",
    "element_energy", "element_residual_tangent", "stabilization_required",
]


def face_integral_weights(loop, vertices):
    """Weights w (len(loop),) with sum_i w[i] s[loop[i]] equal to the
    exact integral over the face of the first-order face reconstruction
    of vertex data s; also returns (area, outward normal).

    The rule is area * (vertex mean + tangential gradient . (centroid -
    vertex mean position)) with the tangential gradient from edge
    trapezoids; its value is independent of the loop orientation.
    """
    area, normal, centroid = face_geometry(loop, vertices)
    pts = vertices[loop]
    vbar = pts.mean(axis=0)
    shift = centroid - vbar
    k = len(loop)
    w = np.full(k, area / k)
    for i in range(k):
        j = (i + 1) % k
        edge = pts[j] - pts[i]
        ell = np.linalg.norm(edge)
        nu = np.cross(edge / ell, normal)           # in-plane outward normal
        c = 0.5 * ell * float(nu @ shift)
        w[i] += c
        w[j] += c
    return w, area, normal


def scalar_gradient_operator(mesh: PolyMesh, cell_id: int) -> np.ndarray:
    """Matrix D (3 x n_vertices) with D.s = projected gradient of the
    scalar vertex data s.

    Row j of the operator accumulates (1/V) sum_F n_F[j] * I_F with I_F
    the exact face-reconstruction integral of face_integral_weights.
    Exact for globally linear fields.
    """
    cell = mesh.cells[cell_id]
    if cell.volume <= 0.0:
        raise MeshError(f"cell {cell_id} has non-positive volume")
    loc = {int(g): i for i, g in enumerate(cell.vertex_ids)}
    D = np.zeros((3, len(cell.vertex_ids)))
    for loop in cell.faces:
        w_loop, _, normal = face_integral_weights(loop, mesh.vertices)
        w = np.zeros(D.shape[1])
        for pos, v in enumerate(loop):
            w[loc[int(v)]] += w_loop[pos]
        D += np.outer(normal, w)
    return D / cell.volume


@dataclass(frozen=True)
class ProjectedGradients:
    """Constant projected gradients of one element state."""
    displacement_gradient: np.ndarray     # (3, 3), entry [i, j] = du_i/dx_j
    potential_gradients: np.ndarray       # (n_potentials, 3)

    def state_vector(self) -> np.ndarray:
        """P = [strain Voigt (engineering), -grad of each potential]."""
        g = self.displacement_gradient
        strain = np.array([g[0, 0], g[1, 1], g[2, 2],
                           g[1, 2] + g[2, 1], g[0, 2] + g[2, 0],
                           g[0, 1] + g[1, 0]])
        return np.concatenate([strain] + [-p for p in self.potential_gradients]) \
            if len(self.potential_gradients) else strain


def projected_gradient(mesh: PolyMesh, cell_id: int,
                       nodal_values: np.ndarray) -> ProjectedGradients:
    """Project vertex data (n_vertices, n_fields) to constant gradients."""
    values = np.asarray(nodal_values, dtype=float)
    D = scalar_gradient_operator(mesh, cell_id)
    if values.shape[0] != D.shape[1]:
        raise MeshError(
            f"expected {D.shape[1]} vertex rows, got {values.shape[0]}")
    all_grads = D @ values                 # (3, n_fields): column f = grad of field f
    disp = all_grads[:, 0:3].T             # [i, j] = du_i/dx_j
    pots = all_grads[:, 3:].T
    return ProjectedGradients(disp, pots)


def stabilization_required(n_vertices: int, n_fields: int) -> bool:
    """True when the consistency term alone cannot control all dofs:
    its rank is at most the state size, so cells with more non-kernel
    dofs than that need beta > 0."""
    state_size = 6 + 3 * (n_fields - 3)
    return n_vertices * n_fields - kernel_dimension(n_fields) > state_size


class VemElement:
    """Cached operators of one polyhedral element.

    Builds the projected state operator, the blended stiffness, and the
    volume-weighted average-state operator; an interior fallback node of
    a non-star-shaped triangulation is condensed out statically.
    """

    def __init__(self, mesh: PolyMesh, cell_id: int, G: np.ndarray,
                 beta: float, n_fields: int = 5,
                 submesh: Optional[TetSubmesh] = None):
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {beta}")
        G = np.asarray(G, dtype=float)
        state_size = 6 + 3 * (n_fields - 3)
        if G.shape != (state_size, state_size):
            raise ValueError(
                f"modulus must be {state_size}x{state_size} for "
                f"{n_fields} fields, got {G.shape}")
        cell = mesh.cells[cell_id]
        self.cell_id = cell_id
        self.node_ids = cell.vertex_ids.copy()
        self.n_fields = n_fields
        self.beta = float(beta)
        self.volume = cell.volume
        self.modulus = G

        if submesh is None and beta > 0.0:
            submesh = triangulate_cell(mesh, cell_id)
        self.submesh = submesh

        self.gradient_op = scalar_gradient_operator(mesh, cell_id)
        self.B_proj = field_operator(self.gradient_op.T, n_fields)

        n_loc = len(self.node_ids)
        nf = n_fields
        ndof_v = n_loc * nf
        n_extra = len(submesh.extra_vertices) if submesh is not None else 0
        ndof = ndof_v + n_extra * nf

        K = np.zeros((ndof, ndof))
        A = np.zeros((state_size, ndof))
        K[:ndof_v, :ndof_v] = (1.0 - beta) * self.volume * \
            (self.B_proj.T @ G @ self.B_proj)
        A[:, :ndof_v] = (1.0 - beta) * self.volume * self.B_proj

        self._tet_ops = []
        if beta > 0.0:
            loc = {int(g): i for i, g in enumerate(self.node_ids)}
            points = submesh.points(mesh)
            for tet in submesh.tets:
                lids = [loc[int(t)] if int(t) < submesh.n_mesh
                        else n_loc + (int(t) - submesh.n_mesh) for t in tet]
                cols = np.concatenate([np.arange(l * nf, l * nf + nf) for l in lids])
                Bt, vol = tet_state_operator(points[tet], nf)
                K[np.ix_(cols, cols)] += (beta * vol) * (Bt.T @ G @ Bt)
                A[:, cols] += (beta * vol) * Bt
                self._tet_ops.append((cols, Bt, vol))

        if n_extra and beta > 0.0:
            Kvv = K[:ndof_v, :ndof_v]
            Kvc = K[:ndof_v, ndof_v:]
            Kcc = K[ndof_v:, ndof_v:]
            self.interior_recovery = -np.linalg.solve(Kcc, Kvc.T)
            Kc = Kvv + Kvc @ self.interior_recovery
            self.stiffness = (Kc + Kc.T) / 2.0
            self.average_op = A[:, :ndof_v] + A[:, ndof_v:] @ self.interior_recovery
        else:
            self.interior_recovery = None
            self.stiffness = (K[:ndof_v, :ndof_v] + K[:ndof_v, :ndof_v].T) / 2.0
            self.average_op = A[:, :ndof_v]

    # -- derived quantities ------------------------------------------------

    @property
    def consistency_rank_deficient(self) -> bool:
        """True when beta = 0 leaves uncontrolled non-kernel dofs."""
        return self.beta == 0.0 and stabilization_required(
            len(self.node_ids), self.n_fields)

    def full_dofs(self, vertex_dofs: np.ndarray) -> np.ndarray:
        """Vertex dofs extended by the recovered interior-node dofs."""
        p = np.asarray(vertex_dofs, dtype=float).ravel()
        if self.interior_recovery is None:
            return p
        return np.concatenate([p, self.interior_recovery @ p])

    def energy(self, vertex_dofs: np.ndarray) -> float:
        p = np.asarray(vertex_dofs, dtype=float).ravel()
        return 0.5 * float(p @ self.stiffness @ p)

    def residual(self, vertex_dofs: np.ndarray) -> np.ndarray:
        return self.stiffness @ np.asarray(vertex_dofs, dtype=float).ravel()

    def average_state(self, vertex_dofs: np.ndarray) -> np.ndarray:
        """Volume average of P over the element (consistency/stabilization
        blend), including the condensed interior node."""
        p = np.asarray(vertex_dofs, dtype=float).ravel()
        return (self.average_op @ p) / self.volume

    def tet_states(self, vertex_dofs: np.ndarray):
        """Per-tet (P, volume) of the stabilization submesh."""
        p = self.full_dofs(vertex_dofs)
        return [(Bt @ p[cols], vol) for cols, Bt, vol in self._tet_ops]


def element_energy(mesh: PolyMesh, cell_id: int, G: np.ndarray, beta: float,
                   nodal_values: np.ndarray, n_fields: int = 5,
                   submesh: Optional[TetSubmesh] = None) -> float:
    """Blended element energy for given vertex data (n_vertices, n_fields)."""
    elem = VemElement(mesh, cell_id, G, beta, n_fields, submesh)
    return elem.energy(np.asarray(nodal_values, dtype=float).ravel())


def element_residual_tangent(mesh: PolyMesh, cell_id: int, G: np.ndarray,
                             beta: float, n_fields: int = 5,
                             submesh: Optional[TetSubmesh] = None):
    """(residual callable, constant tangent) of one element."""
    elem = VemElement(mesh, cell_id, G, beta, n_fields, submesh)
    return elem.residual, elem.stiffness
