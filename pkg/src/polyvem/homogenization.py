"""Dirichlet load-case battery, volume averaging, effective modulus.

Each load case prescribes a linear boundary field whose exact volume
average is a unit vector in the generalized-gradient space: six unit
macroscopic strains (engineering-shear convention), then unit electric
fields via a linear electric potential, then unit magnetic fields via a
linear magnetic potential. One factorization of the interior operator
is shared by every case; column m of the effective modulus is the
volume-averaged generalized flux of case m.
"""

from __future__ import annotations

import hashlib
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .assembly import AssemblyError, DofMap, assemble, system_from_triplets
from .element_fem import (FIELD_COUNT, batch_o1_operators,
                          promote_to_quadratic, quadratic_state_operators,
                          tet_state_operator)
from .element_vem import VemElement, face_integral_weights, ProjectedGradients
from .materials import (MODE_PINDEX, GeneralizedModulus, MaterialRecord,
                        build_modulus, datasheet_matrix, rotate_modulus)
from .mesh import (PolyMesh, TetMesh, mesh_hash, refine_tet_mesh,
                   triangulate_cell, union_submeshes, TAU_BOX)

__all__ = [
    "HomogenizationError", "HomogenizationResult", "GrainLayout",
    "case_count", "case_kind", "unit_macro_state", "boundary_values",
    "reduce_modulus", "grain_moduli",
    "homogenize_vem", "homogenize_fem", "surface_average_state",
    "result_to_json", "result_from_json", "result_to_csv",
]

STATE_LABELS = {
    "fullyCoupled": ("eps11", "eps22", "eps33", "eps23", "eps13", "eps12",
                     "E1", "E2", "E3", "H1", "H2", "H3"),
    "electroMech": ("eps11", "eps22", "eps33", "eps23", "eps13", "eps12",
                    "E1", "E2", "E3"),
    "magnetoMech": ("eps11", "eps22", "eps33", "eps23", "eps13", "eps12",
                    "H1", "H2", "H3"),
}
FLUX_LABELS = {
    "fullyCoupled": ("sig11", "sig22", "sig33", "sig23", "sig13", "sig12",
                     "negD1", "negD2", "negD3", "negB1", "negB2", "negB3"),
    "electroMech": ("sig11", "sig22", "sig33", "sig23", "sig13", "sig12",
                    "negD1", "negD2", "negD3"),
    "magnetoMech": ("sig11", "sig22", "sig33", "sig23", "sig13", "sig12",
                    "negB1", "negB2", "negB3"),
}

_VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


class HomogenizationError(RuntimeError):
    """Invalid load case or inconsistent battery configuration."""


def case_count(mode: str) -> int:
    if mode not in FIELD_COUNT:
        raise HomogenizationError(f"unknown mode {mode!r}")
    return 6 + 3 * (FIELD_COUNT[mode] - 3)


def case_kind(case: int, mode: str):
    """(kind, index) of 1-based load case: ('strain', voigt index) or
    ('electric'|'magnetic', axis)."""
    n = case_count(mode)
    if not 1 <= case <= n:
        raise HomogenizationError(
            f"case {case} invalid for mode {mode!r} (1..{n})")
    if case <= 6:
        return "strain", case - 1
    axis = (case - 7) % 3
    if mode == "magnetoMech" or (mode == "fullyCoupled" and case > 9):
        return "magnetic", axis
    return "electric", axis


def unit_macro_state(case: int, mode: str) -> np.ndarray:
    """Exact volume-averaged generalized gradient of load case `case`."""
    e = np.zeros(6 + 3 * (FIELD_COUNT[mode] - 3))
    case_kind(case, mode)                 # validates
    e[case - 1] = 1.0
    return e


def boundary_values(case: int, coords: np.ndarray, mode: str) -> np.ndarray:
    """Prescribed nodal values (n_nodes, n_fields) at coordinates `coords`.

    Strain cases set u = eps_bar . x with tensor off-diagonals of 1/2 so
    the engineering-shear slot averages to one; potential cases set the
    potential to -x_axis so the corresponding field averages to +1.
    """
    kind, index = case_kind(case, mode)
    coords = np.asarray(coords, dtype=float)
    nf = FIELD_COUNT[mode]
    values = np.zeros((len(coords), nf))
    if kind == "strain":
        i, j = _VOIGT_PAIRS[index]
        eps = np.zeros((3, 3))
        if i == j:
            eps[i, i] = 1.0
        else:
            eps[i, j] = eps[j, i] = 0.5
        values[:, 0:3] = coords @ eps
    else:
        if mode == "fullyCoupled":
            col = 3 if kind == "electric" else 4
        else:
            col = 3
        values[:, col] = -coords[:, index]
    return values


def reduce_modulus(G, mode: str) -> np.ndarray:
    """Active-row/column submatrix of a full 12x12 modulus for `mode`."""
    M = G.matrix if isinstance(G, GeneralizedModulus) else np.asarray(G, float)
    if M.shape != (12, 12):
        raise HomogenizationError(f"expected a 12x12 modulus, got {M.shape}")
    idx = np.asarray(MODE_PINDEX[mode], dtype=int)
    return M[np.ix_(idx, idx)]


def grain_moduli(records, angles, mode: str):
    """Per-cell reduced moduli from material records and Euler angles."""
    if len(records) != len(angles):
        raise HomogenizationError("records and angles must pair up per cell")
    out = []
    for rec, ang in zip(records, angles):
        G = rec if isinstance(rec, GeneralizedModulus) else build_modulus(rec)
        out.append(reduce_modulus(rotate_modulus(G, ang), mode))
    return out


# ---------------------------------------------------------------------------
# Result container and battery driver
# ---------------------------------------------------------------------------

@dataclass
class HomogenizationResult:
    mode: str
    method: str
    beta: float | None
    effective: np.ndarray                 # (nP, nP), column m = <L> of case m
    average_states: np.ndarray            # (n_cases, nP), <P> per case
    average_fluxes: np.ndarray            # (n_cases, nP), <L> per case
    hill_residuals: np.ndarray            # (n_cases,)
    asymmetry: float
    mesh_digest: str
    material_names: tuple
    n_dofs: int
    n_factorizations: int
    n_solves: int
    scaling_report: dict
    solve_seconds: tuple = ()
    surface_states: np.ndarray | None = None

    @property
    def modulus(self) -> GeneralizedModulus | None:
        """Full generalized modulus view (symmetrized; fullyCoupled only)."""
        if self.mode != "fullyCoupled":
            return None
        return GeneralizedModulus((self.effective + self.effective.T) / 2.0)

    @property
    def effective_datasheet(self) -> np.ndarray:
        """Effective matrix converted to data-sheet block units."""
        return datasheet_matrix(self.effective, self.mode)


def _battery(system, dof_map, coords, mode, volume, averager,
             method, beta, mesh_digest, material_names, surface_fn=None):
    n_cases = case_count(mode)
    nP = 6 + 3 * (FIELD_COUNT[mode] - 3)
    states = np.zeros((n_cases, nP))
    fluxes = np.zeros((n_cases, nP))
    hills = np.zeros(n_cases)
    surf = np.zeros((n_cases, nP)) if surface_fn else None
    times = []
    system.factorize()
    bnodes = dof_map.boundary_nodes
    for case in range(1, n_cases + 1):
        t0 = time.perf_counter()
        vals = boundary_values(case, coords[bnodes], mode)
        full = system.solve_dirichlet(vals.ravel())
        avgP, avgL = averager(full)
        times.append(time.perf_counter() - t0)
        states[case - 1] = avgP
        fluxes[case - 1] = avgL
        micro = 2.0 * system.energy(full) / volume
        macro = float(avgP @ avgL)
        hills[case - 1] = abs(micro - macro) / max(abs(macro), 1e-300)
        if surface_fn is not None:
            surf[case - 1] = surface_fn(full)
    effective = fluxes.T.copy()
    scale = np.abs(effective).max()
    asym = np.abs(effective - effective.T).max() / scale if scale else 0.0
    return HomogenizationResult(
        mode=mode, method=method, beta=beta, effective=effective,
        average_states=states, average_fluxes=fluxes, hill_residuals=hills,
        asymmetry=float(asym), mesh_digest=mesh_digest,
        material_names=tuple(material_names), n_dofs=dof_map.n_dofs,
        n_factorizations=system.n_factorizations, n_solves=system.n_solves,
        scaling_report=system.scaling_report, solve_seconds=tuple(times),
        surface_states=surf)


# ---------------------------------------------------------------------------
# Virtual-element path
# ---------------------------------------------------------------------------

def homogenize_vem(mesh: PolyMesh, moduli, beta: float = 0.1,
                   mode: str = "fullyCoupled", material_names=(),
                   check_surface: bool = False) -> HomogenizationResult:
    """Effective modulus on the polyhedral mesh, one element per grain."""
    if len(moduli) != len(mesh.cells):
        raise HomogenizationError(
            f"need one modulus per cell ({len(mesh.cells)}), got {len(moduli)}")
    nf = FIELD_COUNT[mode]
    elements = [VemElement(mesh, c, moduli[c], beta, nf)
                for c in range(len(mesh.cells))]
    dof_map = DofMap(mesh.n_vertices, mesh.boundary_node_ids, mode)
    system = assemble(elements, dof_map)
    volume = mesh.edge_length ** 3

    def averager(full):
        avgP = np.zeros(6 + 3 * (nf - 3))
        avgL = np.zeros_like(avgP)
        for elem in elements:
            dofs = (elem.node_ids[:, None] * nf + np.arange(nf)).ravel()
            intP = elem.average_op @ full[dofs]
            avgP += intP
            avgL += elem.modulus @ intP
        return avgP / volume, avgL / volume

    surface_fn = None
    if check_surface:
        def surface_fn(full):
            vals = full.reshape(mesh.n_vertices, nf)
            return surface_average_state(mesh, vals)

    return _battery(system, dof_map, mesh.vertices, mode, volume, averager,
                    "VEM-VO", float(beta), mesh_hash(mesh), material_names,
                    surface_fn)


def surface_average_state(mesh: PolyMesh, nodal_values: np.ndarray) -> np.ndarray:
    """Volume-averaged generalized gradient evaluated purely from surface
    integrals of the nodal data over the box boundary (divergence form)."""
    values = np.asarray(nodal_values, dtype=float)
    nf = values.shape[1]
    L = mesh.edge_length
    tol = TAU_BOX * L
    acc = np.zeros((3, nf))
    for cell in mesh.cells:
        for loop in cell.faces:
            pts = mesh.vertices[loop]
            on_box = ((np.abs(pts) <= tol).all(axis=0)
                      | (np.abs(pts - L) <= tol).all(axis=0)).any()
            if not on_box:
                continue
            w, _, normal = face_integral_weights(loop, mesh.vertices)
            acc += np.outer(normal, w @ values[loop])
    acc /= L ** 3
    return ProjectedGradients(acc[:, 0:3].T, acc[:, 3:].T).state_vector()


# ---------------------------------------------------------------------------
# Tetrahedral finite-element paths
# ---------------------------------------------------------------------------

def _fem_o1_system(points, tets, owners, moduli, dof_map):
    """Triplet assembly + averaging closure for linear tets, vectorized
    per grain so refined meshes never materialize per-element objects."""
    nf = dof_map.n_fields
    B_all, vols = batch_o1_operators(points, tets, nf)
    dofs = (tets[:, :, None] * nf + np.arange(nf)).reshape(len(tets), -1)
    rows, cols, valchunks = [], [], []
    nd = dofs.shape[1]
    for cid in np.unique(owners):
        idx = np.nonzero(owners == cid)[0]
        Bg = B_all[idx]
        K = np.einsum("mpa,pq,mqb->mab", Bg, moduli[cid], Bg,
                      optimize=True) * vols[idx, None, None]
        K = (K + K.transpose(0, 2, 1)) / 2.0
        dg = dofs[idx]
        rows.append(np.repeat(dg, nd, axis=1).ravel())
        cols.append(np.tile(dg, (1, nd)).ravel())
        valchunks.append(K.ravel())
    system = system_from_triplets(np.concatenate(rows), np.concatenate(cols),
                                  np.concatenate(valchunks), dof_map)

    def averager(full):
        P = np.einsum("mpa,ma->mp", B_all, full[dofs], optimize=True)
        nP = P.shape[1]
        avgP = vols @ P
        avgL = np.zeros(nP)
        for cid in np.unique(owners):
            idx = owners == cid
            avgL += moduli[cid] @ (vols[idx] @ P[idx])
        return avgP, avgL

    return system, averager


def _fem_o2_system(tmesh, o2, moduli, dof_map):
    nf = dof_map.n_fields
    rows, cols, vals = [], [], []
    tet_ops = []
    for t in range(len(o2.tets)):
        ids = o2.tets[t]
        ops = quadratic_state_operators(tmesh.vertices[tmesh.tets[t]], nf)
        G = moduli[int(o2.cell_of_tet[t])]
        K = np.zeros((10 * nf, 10 * nf))
        for B, w in ops:
            K += w * (B.T @ G @ B)
        K = (K + K.T) / 2.0
        dofs = (ids[:, None] * nf + np.arange(nf)).ravel()
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(K.ravel())
        tet_ops.append((dofs, ops, G))
    system = system_from_triplets(np.concatenate(rows), np.concatenate(cols),
                                  np.concatenate(vals), dof_map)

    def averager(full):
        nP = 6 + 3 * (nf - 3)
        avgP = np.zeros(nP)
        avgL = np.zeros(nP)
        for dofs, ops, G in tet_ops:
            p = full[dofs]
            intP = np.zeros(nP)
            for B, w in ops:
                intP += w * (B @ p)
            avgP += intP
            avgL += G @ intP
        return avgP, avgL

    return system, averager


def homogenize_fem(mesh: PolyMesh, moduli, order: int = 1, levels: int = 0,
                   mode: str = "fullyCoupled",
                   material_names=()) -> HomogenizationResult:
    """Effective modulus on the tetrahedralized grains.

    order 1 with levels 0 is the coarse linear baseline; levels > 0
    red-refines every grain conformingly; order 2 promotes the coarse
    mesh to 10-node quadratic tets (levels must be 0).
    """
    if len(moduli) != len(mesh.cells):
        raise HomogenizationError(
            f"need one modulus per cell ({len(mesh.cells)}), got {len(moduli)}")
    if order not in (1, 2):
        raise HomogenizationError(f"order must be 1 or 2, got {order}")
    if order == 2 and levels:
        raise HomogenizationError("quadratic path supports levels=0 only")
    subs = [triangulate_cell(mesh, c) for c in range(len(mesh.cells))]
    tmesh = union_submeshes(mesh, subs)
    if levels:
        tmesh = refine_tet_mesh(tmesh, levels)
    volume = mesh.edge_length ** 3

    if order == 1:
        dof_map = DofMap(tmesh.n_vertices, tmesh.boundary_node_ids, mode)
        system, averager = _fem_o1_system(
            tmesh.vertices, tmesh.tets, tmesh.cell_of_tet, moduli, dof_map)
        coords = tmesh.vertices
        method = f"FEM-O1-refined({levels})" if levels else "FEM-O1-coarse"
    else:
        o2 = promote_to_quadratic(tmesh)
        dof_map = DofMap(o2.n_points, o2.boundary_node_ids, mode)
        system, averager = _fem_o2_system(tmesh, o2, moduli, dof_map)
        coords = o2.points
        method = "FEM-O2-coarse"

    def scaled_averager(full):
        avgP, avgL = averager(full)
        return avgP / volume, avgL / volume

    return _battery(system, dof_map, coords, mode, volume, scaled_averager,
                    method, None, mesh_hash(mesh), material_names)


# ---------------------------------------------------------------------------
# Grain layouts (material + orientation per cell)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrainLayout:
    """Material name and Euler angles for every grain of a mesh."""
    names: tuple
    angles: tuple                          # of 3-tuples

    @staticmethod
    def random(library: dict, name, n_cells: int, seed: int,
               names_override=None) -> "GrainLayout":
        """Uniformly random orientations, single material everywhere
        unless an explicit per-cell name sequence is given."""
        rng = np.random.default_rng(seed)
        angles = tuple(tuple(float(a) for a in rng.uniform(0.0, 2.0 * np.pi, 3))
                       for _ in range(n_cells))
        if names_override is not None:
            names = tuple(names_override)
            if len(names) != n_cells:
                raise HomogenizationError("one material name per cell required")
        else:
            names = (name,) * n_cells
        for nm in names:
            if nm not in library:
                raise HomogenizationError(f"material {nm!r} not in library")
        return GrainLayout(names, angles)

    def moduli(self, library: dict, mode: str):
        records = [library[nm] for nm in self.names]
        return grain_moduli(records, self.angles, mode)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _config_digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def result_to_json(result: HomogenizationResult, config: dict | None = None) -> str:
    """Deterministic JSON document (no timestamps or timings)."""
    payload = {
        "format": "polyvem-result",
        "version": __version__,
        "mode": result.mode,
        "method": result.method,
        "beta": result.beta,
        "mesh_digest": result.mesh_digest,
        "materials": list(result.material_names),
        "n_dofs": result.n_dofs,
        "n_factorizations": result.n_factorizations,
        "n_solves": result.n_solves,
        "state_labels": list(STATE_LABELS[result.mode]),
        "flux_labels": list(FLUX_LABELS[result.mode]),
        "effective_row_major": [float(x) for x in result.effective.ravel()],
        "average_states": [[float(x) for x in row]
                           for row in result.average_states],
        "average_fluxes": [[float(x) for x in row]
                           for row in result.average_fluxes],
        "hill_residuals": [float(x) for x in result.hill_residuals],
        "asymmetry": float(result.asymmetry),
        "scaling_report": result.scaling_report,
    }
    payload["config_digest"] = _config_digest(config if config is not None
                                              else {"mesh": result.mesh_digest,
                                                    "mode": result.mode,
                                                    "method": result.method,
                                                    "beta": result.beta})
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def result_from_json(text: str) -> HomogenizationResult:
    """Rebuild a result from its JSON document (cache loading)."""
    doc = json.loads(text)
    if doc.get("format") != "polyvem-result":
        raise HomogenizationError("not a polyvem result document")
    nP = len(doc["state_labels"])
    return HomogenizationResult(
        mode=doc["mode"], method=doc["method"], beta=doc["beta"],
        effective=np.array(doc["effective_row_major"]).reshape(nP, nP),
        average_states=np.array(doc["average_states"]),
        average_fluxes=np.array(doc["average_fluxes"]),
        hill_residuals=np.array(doc["hill_residuals"]),
        asymmetry=float(doc["asymmetry"]),
        mesh_digest=doc["mesh_digest"],
        material_names=tuple(doc["materials"]),
        n_dofs=int(doc["n_dofs"]),
        n_factorizations=int(doc["n_factorizations"]),
        n_solves=int(doc["n_solves"]),
        scaling_report=doc["scaling_report"])


def result_to_csv(result: HomogenizationResult) -> str:
    """Flat spreadsheet table of the effective modulus (data-sheet units)."""
    import csv

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = STATE_LABELS[result.mode]
    rows = FLUX_LABELS[result.mode]
    writer.writerow(["units", "GPa | C/m^2 | N/Am | mC/kVm | N/kA^2 | s/m"])
    writer.writerow(["flux\\state", *cols])
    table = result.effective_datasheet
    for i, label in enumerate(rows):
        writer.writerow([label] + [f"{v:.12e}" for v in table[i]])
    writer.writerow([])
    writer.writerow(["case", "hill_residual"])
    for m, h in enumerate(result.hill_residuals, start=1):
        writer.writerow([m, f"{h:.3e}"])
    writer.writerow(["asymmetry", f"{result.asymmetry:.3e}"])
    return buf.getvalue()
