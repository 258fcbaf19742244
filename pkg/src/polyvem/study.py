"""Method-comparison studies: error metrics, stabilization-weight sweeps,
volume-fraction sweeps, and refined-reference management.

Errors are percent deviations of Frobenius norms of target modulus
blocks against a refined linear-tet reference. Sweep outputs are
plot-ready CSV tables with fixed-format floats and no timing columns,
so reruns with identical configurations are byte-identical; wall times
live only in the run-diagnostics sidecar.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .element_fem import FIELD_COUNT
from .homogenization import (GrainLayout, HomogenizationResult,
                             grain_moduli, homogenize_fem, homogenize_vem,
                             result_from_json, result_to_json)
from .materials import anisotropy_index, datasheet_matrix
from .mesh import PolyMesh, mesh_hash, triangulate_cell

__all__ = [
    "StudyError", "StudyConfig", "ComparisonRow", "FractionRow",
    "frobenius", "computational_error", "relative_deviation",
    "target_block", "assign_volume_fraction",
    "build_reference", "method_comparison", "beta_sweep", "beta_opt",
    "fraction_sweep", "comparison_csv", "beta_sweep_csv", "fraction_csv",
]

DEFAULT_BETA = 0.1
DEFAULT_BETA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 21))
DEFAULT_FRACTION_GRID = tuple(round(0.05 + 0.1 * k, 2) for k in range(10))
MEMORY_GUARD_TETS = 2_000_000

METHODS = ("VEM-VO", "FEM-O1-coarse", "FEM-O2-coarse", "FEM-O1-refined")


class StudyError(RuntimeError):
    """Invalid study configuration or resource guard violation."""


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------

def frobenius(M) -> float:
    """Square root of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(M, dtype=float)))


def relative_deviation(M, M_ref) -> float:
    """Signed percent deviation of Frobenius norms."""
    ref = frobenius(M_ref)
    if ref == 0.0:
        raise StudyError("reference modulus has zero norm")
    return 100.0 * (frobenius(M) - ref) / ref


def computational_error(M, M_ref) -> float:
    """Unsigned percent deviation of Frobenius norms."""
    return abs(relative_deviation(M, M_ref))


def target_block(effective: np.ndarray, mode: str, target: str) -> np.ndarray:
    """Extract a named modulus block from an effective matrix.

    Targets: G (whole), C (mechanical), e (piezoelectric), q
    (piezomagnetic), eps (dielectric), mu (magnetic), alpha
    (electromagnetic; fully coupled only). Blocks convert to
    data-sheet units first, so whole-matrix norms weight entries the
    way reported tables print them; per-block norm ratios are
    unaffected by the conversion.
    """
    M = datasheet_matrix(np.asarray(effective, dtype=float), mode)
    has_e = mode in ("fullyCoupled", "electroMech")
    has_m = mode in ("fullyCoupled", "magnetoMech")
    erow = slice(6, 9)
    mrow = slice(9, 12) if mode == "fullyCoupled" else slice(6, 9)
    if target == "G":
        return M
    if target == "C":
        return M[:6, :6]
    if target == "e":
        if not has_e:
            raise StudyError(f"target 'e' undefined for mode {mode!r}")
        return -M[erow, :6]
    if target == "q":
        if not has_m:
            raise StudyError(f"target 'q' undefined for mode {mode!r}")
        return -M[mrow, :6]
    if target == "eps":
        if not has_e:
            raise StudyError(f"target 'eps' undefined for mode {mode!r}")
        return -M[erow, erow]
    if target == "mu":
        if not has_m:
            raise StudyError(f"target 'mu' undefined for mode {mode!r}")
        return -M[mrow, mrow]
    if target == "alpha":
        if mode != "fullyCoupled":
            raise StudyError("target 'alpha' requires the fully coupled mode")
        return -M[erow, mrow]
    raise StudyError(f"unknown target {target!r}")


# ---------------------------------------------------------------------------
# Configuration and rows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    """Inputs of one comparison/sweep study."""
    n_grains: int = 20
    mesh_seed: int = 1
    edge_length: float = 1.0
    lloyd: int = 0
    material: str = "hex_high_anisotropy"
    orientation_seed: int = 2
    mode: str = "electroMech"
    methods: tuple = ("VEM-VO", "FEM-O1-coarse")
    beta: float = DEFAULT_BETA
    beta_grid: tuple = DEFAULT_BETA_GRID
    fraction_grid: tuple = DEFAULT_FRACTION_GRID
    fraction_seed: int = 3
    targets: tuple = ("G", "C")
    reference_levels: int = 2

    def __post_init__(self):
        if self.mode not in FIELD_COUNT:
            raise StudyError(f"unknown mode {self.mode!r}")
        if not all(0.0 <= b <= 1.0 for b in self.beta_grid):
            raise StudyError("beta grid must lie in [0, 1]")
        if not all(0.0 <= p <= 1.0 for p in self.fraction_grid):
            raise StudyError("fraction grid must lie in [0, 1]")
        for m in self.methods:
            base = m.split("(")[0]
            if base not in METHODS:
                raise StudyError(f"unknown method {m!r}")
        if self.reference_levels < 1:
            raise StudyError("reference needs at least one refinement level")


@dataclass
class ComparisonRow:
    method: str
    n_nodes: int
    n_dofs: int
    e_c: dict                       # target -> percent error
    d_rel: dict                     # target -> signed percent deviation
    wall_seconds: float


@dataclass
class FractionRow:
    fraction_target: float
    fraction_achieved: float
    n_active_grains: int
    beta_opt: float
    e_c: dict                       # target -> percent error at DEFAULT_BETA
    d_rel_opt: dict                 # target -> deviation at beta_opt
    wall_seconds: float


# ---------------------------------------------------------------------------
# Grain assignment for hybrid sweeps
# ---------------------------------------------------------------------------

def assign_volume_fraction(mesh: PolyMesh, fraction: float, rng_seed: int,
                           active: str = "CoFe2O4", passive: str = "BaTiO3"):
    """Greedy seeded assignment of grains to the `active` phase until its
    cumulative volume reaches fraction * L^3; independent random
    orientations for every grain. Returns (layout, achieved fraction)."""
    if not 0.0 <= fraction <= 1.0:
        raise StudyError(f"volume fraction must be in [0, 1], got {fraction}")
    rng = np.random.default_rng(rng_seed)
    n = len(mesh.cells)
    order = rng.permutation(n)
    angles = tuple(tuple(float(a) for a in rng.uniform(0.0, 2.0 * np.pi, 3))
                   for _ in range(n))
    volume = mesh.edge_length ** 3
    target = fraction * volume
    names = [passive] * n
    covered = 0.0
    taken = 0
    for cid in order:
        if covered >= target - 1e-12 * volume:
            break
        names[cid] = active
        covered += mesh.cells[cid].volume
        taken += 1
    layout = GrainLayout(tuple(names), angles)
    return layout, covered / volume, taken


# ---------------------------------------------------------------------------
# References
# ---------------------------------------------------------------------------

def _reference_digest(mesh: PolyMesh, moduli, mode: str, levels: int) -> str:
    h = hashlib.sha256()
    h.update(mesh_hash(mesh).encode())
    h.update(f"|{mode}|{levels}|fem-o1".encode())
    for M in moduli:
        h.update(np.ascontiguousarray(M, dtype=float).tobytes())
    return h.hexdigest()


def build_reference(mesh: PolyMesh, moduli, mode: str, levels: int,
                    cache_dir: str | None = None) -> HomogenizationResult:
    """Refined linear-tet reference run, cached by configuration digest."""
    if levels < 1:
        raise StudyError("reference needs at least one refinement level")
    n_coarse = sum(len(triangulate_cell(mesh, c).tets)
                   for c in range(len(mesh.cells)))
    if n_coarse * 8 ** levels > MEMORY_GUARD_TETS:
        raise StudyError(
            f"refined mesh would have {n_coarse * 8 ** levels} tets "
            f"(guard {MEMORY_GUARD_TETS}); lower the refinement level")
    path = None
    if cache_dir is not None:
        digest = _reference_digest(mesh, moduli, mode, levels)
        path = os.path.join(cache_dir, f"reference-{digest}.json")
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return result_from_json(fh.read())
    result = homogenize_fem(mesh, moduli, order=1, levels=levels, mode=mode)
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(result_to_json(result))
    return result


# ---------------------------------------------------------------------------
# Comparisons and sweeps
# ---------------------------------------------------------------------------

def _run_method(mesh, moduli, mode, method, beta):
    base, _, arg = method.partition("(")
    if base == "VEM-VO":
        return homogenize_vem(mesh, moduli, beta=beta, mode=mode)
    if base == "FEM-O1-coarse":
        return homogenize_fem(mesh, moduli, order=1, mode=mode)
    if base == "FEM-O2-coarse":
        return homogenize_fem(mesh, moduli, order=2, mode=mode)
    if base == "FEM-O1-refined":
        levels = int(arg.rstrip(")")) if arg else 1
        return homogenize_fem(mesh, moduli, order=1, levels=levels, mode=mode)
    raise StudyError(f"unknown method {method!r}")


def _errors(result, reference, targets, mode):
    e_c, d_rel = {}, {}
    for t in targets:
        M = target_block(result.effective, mode, t)
        R = target_block(reference.effective, mode, t)
        d_rel[t] = relative_deviation(M, R)
        e_c[t] = abs(d_rel[t])
    return e_c, d_rel


def method_comparison(mesh: PolyMesh, moduli, mode: str, methods,
                      reference: HomogenizationResult, targets,
                      beta: float = DEFAULT_BETA):
    """One ComparisonRow per method against a shared reference."""
    rows = []
    nf = FIELD_COUNT[mode]
    for method in methods:
        result = _run_method(mesh, moduli, mode, method, beta)
        e_c, d_rel = _errors(result, reference, targets, mode)
        rows.append(ComparisonRow(
            method=result.method, n_nodes=result.n_dofs // nf,
            n_dofs=result.n_dofs, e_c=e_c, d_rel=d_rel,
            wall_seconds=float(sum(result.solve_seconds))))
    return rows


def beta_sweep(mesh: PolyMesh, moduli, mode: str, beta_grid,
               reference: HomogenizationResult, targets):
    """Deviation curve over the stabilization-weight grid.

    Returns (curve, fem_row): curve is a list of (beta, d_rel dict); the
    companion coarse linear-tet row shares the reference, and the grid
    endpoint beta = 1 coincides with it by construction.
    """
    curve = []
    for b in beta_grid:
        result = homogenize_vem(mesh, moduli, beta=float(b), mode=mode)
        _, d_rel = _errors(result, reference, targets, mode)
        curve.append((float(b), d_rel))
    fem = homogenize_fem(mesh, moduli, order=1, mode=mode)
    _, fem_d = _errors(fem, reference, targets, mode)
    return curve, fem_d


def beta_opt(curve, target: str = "G") -> float:
    """Grid argmin of |D_rel| for one target; ties go to the smaller
    stabilization weight (the curve is scanned in ascending order)."""
    if not curve:
        raise StudyError("empty sweep curve")
    ordered = sorted(curve, key=lambda item: item[0])
    best_beta, best = None, None
    for b, d_rel in ordered:
        err = abs(d_rel[target])
        if best is None or err < best:
            best_beta, best = b, err
    return float(best_beta)


def fraction_sweep(mesh: PolyMesh, library: dict, fractions, rng_seed: int,
                   beta_grid, mode: str = "fullyCoupled",
                   targets=("G",), reference_levels: int = 2,
                   cache_dir: str | None = None):
    """Hybrid volume-fraction sweep: per fraction, assign phases, build
    the refined reference, sweep beta, and report beta_opt plus the
    error at the default stabilization weight."""
    rows = []
    for frac in fractions:
        layout, achieved, taken = assign_volume_fraction(mesh, frac, rng_seed)
        moduli = layout.moduli(library, mode)
        reference = build_reference(mesh, moduli, mode, reference_levels,
                                    cache_dir)
        curve, _ = beta_sweep(mesh, moduli, mode, beta_grid, reference,
                              targets)
        b_opt = beta_opt(curve, targets[0])
        default = homogenize_vem(mesh, moduli, beta=DEFAULT_BETA, mode=mode)
        e_c, _ = _errors(default, reference, targets, mode)
        d_opt = dict(next(d for b, d in curve if b == b_opt))
        rows.append(FractionRow(
            fraction_target=float(frac), fraction_achieved=float(achieved),
            n_active_grains=taken, beta_opt=b_opt, e_c=e_c, d_rel_opt=d_opt,
            wall_seconds=float(sum(default.solve_seconds))))
    return rows


# ---------------------------------------------------------------------------
# CSV writers (deterministic: no timing columns)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.12e}"


def comparison_csv(rows, targets) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["method", "n_nodes", "n_dofs"]
    head += [f"E_C_{t}_pct" for t in targets]
    head += [f"D_rel_{t}_pct" for t in targets]
    w.writerow(head)
    for r in rows:
        w.writerow([r.method, r.n_nodes, r.n_dofs]
                   + [_fmt(r.e_c[t]) for t in targets]
                   + [_fmt(r.d_rel[t]) for t in targets])
    return buf.getvalue()


def beta_sweep_csv(curve, fem_d, targets) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta"] + [f"D_rel_{t}_pct" for t in targets])
    for b, d in sorted(curve, key=lambda item: item[0]):
        w.writerow([f"{b:.6g}"] + [_fmt(d[t]) for t in targets])
    w.writerow(["FEM-O1-coarse"] + [_fmt(fem_d[t]) for t in targets])
    return buf.getvalue()


def fraction_csv(rows, targets) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fraction_target", "fraction_achieved", "n_active_grains",
                "beta_opt"]
               + [f"E_C_{t}_pct_beta_default" for t in targets]
               + [f"D_rel_{t}_pct_beta_opt" for t in targets])
    for r in rows:
        w.writerow([f"{r.fraction_target:.6g}", _fmt(r.fraction_achieved),
                    r.n_active_grains, f"{r.beta_opt:.6g}"]
                   + [_fmt(r.e_c[t]) for t in targets]
                   + [_fmt(r.d_rel_opt[t]) for t in targets])
    return buf.getvalue()
