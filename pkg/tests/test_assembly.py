"""Tests for global assembly and the shared-factorization Dirichlet solver."""

import numpy as np
import pytest
import scipy.sparse as sp

import polyvem.assembly as pa
import polyvem.element_fem as pf
import polyvem.element_vem as pv
import polyvem.mesh as pm

from test_element_fem import coupled_linear_field, random_modulus

RNG = np.random.default_rng(20260816)


def voronoi_mesh(n_seeds, seed=7, L=1.0):
    seeds = np.random.default_rng(seed).uniform(0.05, 0.95, (n_seeds, 3)) * L
    return pm.generate_voronoi(seeds, L)


class TetElem:
    """Minimal element wrapper for assembly tests."""

    def __init__(self, node_ids, coords, G, n_fields, order=1):
        self.node_ids = np.asarray(node_ids, dtype=int)
        self.stiffness = pf.tet_stiffness(coords, G, order, n_fields)


def two_tet_points_tets():
    points = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
    ])
    tets = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    return points, tets


class TestDofMap:
    def test_counts_and_indexing(self):
        dm = pa.DofMap(10, [0, 9], "fullyCoupled")
        assert dm.n_fields == 5
        assert dm.n_dofs == 50
        assert dm.dof(3, 2) == 17

    def test_partition_is_disjoint_union(self):
        dm = pa.DofMap(7, [1, 4, 5], "electroMech")
        b = set(dm.boundary_dofs.tolist())
        i = set(dm.interior_dofs.tolist())
        assert b | i == set(range(dm.n_dofs))
        assert b & i == set()
        assert len(b) == 3 * 4

    def test_unknown_mode_rejected(self):
        with pytest.raises(pa.AssemblyError, match="mode"):
            pa.DofMap(4, [], "thermal")

    def test_out_of_range_boundary_rejected(self):
        with pytest.raises(pa.AssemblyError, match="range"):
            pa.DofMap(4, [4], "fullyCoupled")


class TestAssemble:
    def test_single_element_matches_dense(self):
        mesh = voronoi_mesh(1)
        G = random_modulus(5, RNG)
        elem = pv.VemElement(mesh, 0, G, beta=0.1)
        dm = pa.DofMap(len(mesh.vertices), mesh.boundary_node_ids, "fullyCoupled")
        system = pa.assemble([elem], dm)
        assert np.allclose(system.K.toarray(), elem.stiffness, atol=1e-14)

    def test_disconnected_elements_block_diagonal(self):
        points, _ = two_tet_points_tets()
        points = np.vstack([points[:4], points[:4] + 5.0])
        G = random_modulus(4, RNG)
        elems = [TetElem([0, 1, 2, 3], points[:4], G, 4),
                 TetElem([4, 5, 6, 7], points[4:], G, 4)]
        dm = pa.DofMap(8, [], "electroMech")
        K = pa.assemble(elems, dm).K.toarray()
        assert np.allclose(K[:16, 16:], 0.0)
        assert np.allclose(K[:16, :16], elems[0].stiffness)
        assert np.allclose(K[16:, 16:], elems[1].stiffness)

    def test_shared_nodes_are_summed(self):
        points, tets = two_tet_points_tets()
        G = random_modulus(4, RNG)
        elems = [TetElem(t, points[t], G, 4) for t in tets]
        dm = pa.DofMap(5, [], "electroMech")
        K = pa.assemble(elems, dm).K.toarray()
        dense = np.zeros((20, 20))
        for e in elems:
            dofs = (e.node_ids[:, None] * 4 + np.arange(4)).ravel()
            dense[np.ix_(dofs, dofs)] += e.stiffness
        assert np.allclose(K, dense, atol=1e-14)

    def test_asymmetric_element_fails_audit(self):
        class Bad:
            node_ids = np.array([0, 1, 2, 3])
            stiffness = RNG.normal(size=(20, 20))

        dm = pa.DofMap(4, [], "fullyCoupled")
        with pytest.raises(pa.AssemblyError, match="asymmetry"):
            pa.assemble([Bad()], dm)

    def test_node_out_of_map_rejected(self):
        points, tets = two_tet_points_tets()
        G = random_modulus(4, RNG)
        elems = [TetElem(tets[1], points[tets[1]], G, 4)]
        dm = pa.DofMap(3, [], "electroMech")
        with pytest.raises(pa.AssemblyError, match="outside"):
            pa.assemble(elems, dm)

    def test_global_kernel_contains_translations_and_constants(self):
        mesh = voronoi_mesh(5)
        G = random_modulus(5, RNG)
        elems = [pv.VemElement(mesh, c, G, beta=0.1) for c in range(5)]
        dm = pa.DofMap(len(mesh.vertices), mesh.boundary_node_ids, "fullyCoupled")
        K = pa.assemble(elems, dm).K
        scale = abs(K).max()
        for f in range(5):
            u = np.zeros(dm.n_dofs)
            u[f::5] = 1.0
            assert np.abs(K @ u).max() < 1e-9 * scale


class TestSolve:
    def test_dense_oracle(self):
        points, tets = two_tet_points_tets()
        G = random_modulus(4, RNG)
        elems = [TetElem(t, points[t], G, 4) for t in tets]
        dm = pa.DofMap(5, [0, 1, 2, 4], "electroMech")
        system = pa.assemble(elems, dm)
        ub = RNG.normal(size=len(dm.boundary_dofs))
        u = system.solve_dirichlet(ub)

        Kd = system.K.toarray()
        ii, ib = dm.interior_dofs, dm.boundary_dofs
        ui = np.linalg.solve(Kd[np.ix_(ii, ii)], -Kd[np.ix_(ii, ib)] @ ub)
        assert np.allclose(u[ii], ui, rtol=1e-10, atol=1e-10 * np.abs(ui).max())
        assert np.allclose(u[ib], ub)

    def test_patch_solution_through_solver(self):
        # a homogeneous material and linear boundary data must reproduce
        # the exact linear field at interior nodes
        mesh = voronoi_mesh(8, seed=3)
        G = random_modulus(5, RNG)
        elems = [pv.VemElement(mesh, c, G, beta=0.1)
                 for c in range(len(mesh.cells))]
        dm = pa.DofMap(len(mesh.vertices), mesh.boundary_node_ids, "fullyCoupled")
        system = pa.assemble(elems, dm).factorize()

        values, _ = coupled_linear_field(mesh.vertices, 5, RNG)
        exact = values.ravel()
        u = system.solve_dirichlet(exact[dm.boundary_dofs])
        assert np.abs(u - exact).max() < 1e-10 * max(1.0, np.abs(exact).max())

    def test_single_factorization_many_solves(self):
        mesh = voronoi_mesh(4, seed=11)
        G = random_modulus(5, RNG)
        elems = [pv.VemElement(mesh, c, G, beta=0.1)
                 for c in range(len(mesh.cells))]
        dm = pa.DofMap(len(mesh.vertices), mesh.boundary_node_ids, "fullyCoupled")
        system = pa.assemble(elems, dm)
        for _ in range(12):
            system.solve_dirichlet(RNG.normal(size=len(dm.boundary_dofs)))
        assert system.n_factorizations == 1
        assert system.n_solves == 12

    def test_all_boundary_system(self):
        mesh = voronoi_mesh(1)
        G = random_modulus(5, RNG)
        elem = pv.VemElement(mesh, 0, G, beta=0.1)
        dm = pa.DofMap(len(mesh.vertices), np.arange(len(mesh.vertices)),
                       "fullyCoupled")
        system = pa.assemble([elem], dm)
        ub = RNG.normal(size=len(dm.boundary_dofs))
        u = system.solve_dirichlet(ub)
        assert np.allclose(u, ub)

    def test_singular_factorization_names_cells(self):
        rows = np.array([0, 1, 2, 3])
        cols = np.array([0, 1, 2, 3])
        vals = np.array([1.0, 1.0, 0.0, 1.0])
        dm = pa.DofMap(1, [], "electroMech")
        system = pa.system_from_triplets(rows, cols, vals, dm,
                                         deficient_cells=[3])
        with pytest.raises(pa.AssemblyError, match=r"\[3\]"):
            system.factorize()

    def test_wrong_boundary_value_count(self):
        mesh = voronoi_mesh(1)
        G = random_modulus(5, RNG)
        elem = pv.VemElement(mesh, 0, G, beta=0.1)
        dm = pa.DofMap(len(mesh.vertices), [0, 1], "fullyCoupled")
        system = pa.assemble([elem], dm)
        with pytest.raises(pa.AssemblyError, match="boundary values"):
            system.solve_dirichlet(np.zeros(3))

    def test_permutation_invariance(self):
        points, tets = two_tet_points_tets()
        G = random_modulus(4, RNG)
        perm = np.array([3, 0, 4, 1, 2])  # new id of each old node
        boundary = np.array([0, 1, 2, 4])
        ub_by_node = {n: RNG.normal(size=4) for n in boundary}

        elems_a = [TetElem(t, points[t], G, 4) for t in tets]
        dm_a = pa.DofMap(5, boundary, "electroMech")
        ub_a = np.concatenate([ub_by_node[n] for n in dm_a.boundary_nodes])
        u_a = pa.assemble(elems_a, dm_a).solve_dirichlet(ub_a)

        points_b = np.empty_like(points)
        points_b[perm] = points
        tets_b = perm[tets]
        elems_b = [TetElem(t, points_b[t], G, 4) for t in tets_b]
        dm_b = pa.DofMap(5, perm[boundary], "electroMech")
        inv = {int(perm[n]): n for n in boundary}
        ub_b = np.concatenate([ub_by_node[inv[int(n)]]
                               for n in dm_b.boundary_nodes])
        u_b = pa.assemble(elems_b, dm_b).solve_dirichlet(ub_b)

        scale = np.abs(u_a).max()
        for old in range(5):
            new = perm[old]
            assert np.abs(u_a[old * 4:(old + 1) * 4]
                          - u_b[new * 4:(new + 1) * 4]).max() < 1e-11 * scale


class TestScalingAndDump:
    def test_scaling_is_exactly_undone(self):
        # same solve with scaling forced to identity must agree closely
        points, tets = two_tet_points_tets()
        G = random_modulus(4, RNG)
        elems = [TetElem(t, points[t], G, 4) for t in tets]
        dm = pa.DofMap(5, [0, 1, 2, 4], "electroMech")
        ub = RNG.normal(size=len(dm.boundary_dofs))

        scaled = pa.assemble(elems, dm)
        u_scaled = scaled.solve_dirichlet(ub)
        plain = pa.assemble(elems, dm)
        plain.scaling = np.ones(dm.n_dofs)
        u_plain = plain.solve_dirichlet(ub)
        assert np.allclose(u_scaled, u_plain, rtol=1e-9,
                           atol=1e-12 * np.abs(u_plain).max())

    def test_scaling_report_fields(self):
        mesh = voronoi_mesh(2)
        G = random_modulus(5, RNG)
        elems = [pv.VemElement(mesh, c, G, beta=0.1) for c in range(2)]
        dm = pa.DofMap(len(mesh.vertices), mesh.boundary_node_ids, "fullyCoupled")
        system = pa.assemble(elems, dm)
        assert set(system.scaling_report) == {f"field{f}" for f in range(5)}
        for rec in system.scaling_report.values():
            assert rec["diag_max"] >= rec["diag_mean"] >= rec["diag_min"]

    def test_coo_dump_round_trips(self):
        rows = np.array([0, 1, 1])
        cols = np.array([0, 1, 0])
        vals = np.array([2.0, 3.0, 0.0])
        dm = pa.DofMap(1, [], "magnetoMech")
        # symmetric: include the transposed entry of the zero
        rows = np.append(rows, 0)
        cols = np.append(cols, 1)
        vals = np.append(vals, 0.0)
        system = pa.system_from_triplets(rows, cols, vals, dm)
        text = system.dump_coo()
        lines = text.strip().split("\n")
        n, m, nnz = (int(x) for x in lines[0].split())
        assert (n, m) == (4, 4)
        entries = [ln.split() for ln in lines[1:]]
        assert len(entries) == nnz
        K2 = sp.coo_matrix(
            ([float(v) for _, _, v in entries],
             ([int(r) for r, _, _ in entries], [int(c) for _, c, _ in entries])),
            shape=(n, m)).tocsc()
        assert abs(K2 - system.K).max() == 0.0
