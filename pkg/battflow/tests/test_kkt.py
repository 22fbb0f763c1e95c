"""
Tests for arrowhead reordering, Schur pattern prediction and both KKT backends.
"""

from unittest import mock

import numpy as np
import pytest
import scipy.sparse as sp

from battflow import case_io
from battflow.derivatives import hess_lagrangian, jac_all
from battflow.exceptions import LayoutError, SingularMatrixError, SparseAssemblyError
from battflow.formulation import build_problem, initial_point
from battflow.kkt import (
    ArrowheadSystem,
    DirectBackend,
    SchurBackend,
    direct_factorize,
    direct_solve,
    make_backend,
    original_matrix,
    predict_schur_nnz,
    reorder_arrowhead,
    schur_factorize,
    schur_solve,
)
from battflow.ordering import amd_order
from battflow.sparse import Permutation
from battflow.solver import IterState, newton_system
from battflow.tests.base import BattflowTestCase, DYNAMIC_SCHEDULE, bits


def newton_inputs(problem):
    """M blocks, N, G_X and G of the first Newton step from the flat start."""
    x = initial_point(problem)
    derivs = jac_all(problem, x)
    z = np.maximum(1.0, -derivs.h)
    state = IterState(x=x, z=z, lam=np.zeros(problem.cons.N_g), mu=1.0 / z, gamma=1.0)
    hess = hess_lagrangian(problem, x, state.lam, state.mu)
    return newton_system(problem, state, derivs, hess)


def system_for(case):
    """Problem and arrowhead system of the first Newton step of ``case``."""
    problem = build_problem(case)
    m_blocks, n, g_x, g = newton_inputs(problem)
    return problem, reorder_arrowhead(problem, m_blocks, g_x, n, g)


class TestPredictSchurNnz(BattflowTestCase):
    def test_static_schedule(self):
        """Five always-available devices over ten steps give 340 positions."""
        ones = np.ones((5, 10), dtype=np.int8)
        pattern = predict_schur_nnz(ones, ones, ones)
        self.assertEqual(pattern.total, 340)
        self.assertEqual(pattern.per_block[0], 40)
        self.assertEqual(pattern.per_block[-1], 25)
        self.assertEqual(pattern.n, 50)

    def test_dynamic_schedule(self):
        """The charge-only EV schedule gives 202 positions."""
        avbp = bits(DYNAMIC_SCHEDULE)
        pattern = predict_schur_nnz(avbp, avbp, np.zeros_like(avbp))
        self.assertEqual(pattern.total, 202)
        self.assertEqual(pattern.per_block[0], 20)

    def test_single_device(self):
        """One device over two steps gives the 2x2 tridiagonal."""
        ones = np.ones((1, 2), dtype=np.int8)
        self.assertEqual(predict_schur_nnz(ones, ones, ones).total, 4)

    def test_idle_devices_only_on_diagonal(self):
        """Devices that can neither charge nor discharge couple with nobody at t."""
        avbp = np.ones((3, 1), dtype=np.int8)
        zeros = np.zeros_like(avbp)
        self.assertEqual(predict_schur_nnz(avbp, zeros, zeros).total, 3)

    def test_lookup(self):
        """Predicted positions map to their slots in the key array."""
        ones = np.ones((2, 2), dtype=np.int8)
        pattern = predict_schur_nnz(ones, ones, ones)
        slots = pattern.lookup([0, 3], [0, 3])
        np.testing.assert_array_equal(pattern.keys[slots], [0, 3 * 4 + 3])
        np.testing.assert_array_equal(pattern.contains([0, 3, 0], [0, 3, 3]), [True, True, False])

    def test_lookup_rejects_unpredicted_position(self):
        """Scattering into a position outside the pattern is an error, not a drop."""
        ones = np.ones((2, 2), dtype=np.int8)
        pattern = predict_schur_nnz(ones, ones, ones)
        with self.assertRaisesRegex(SparseAssemblyError, r"\(0, 3\)"):
            pattern.lookup([0, 3, 0], [0, 3, 3])

    def test_numerical_pattern_is_contained(self):
        """Every numerically nonzero entry of the dense sigma_c is predicted."""
        cases = [self.dynamic_case()] + [
            self.scenario(T=6, n_y=6, strategy=strategy) for strategy in case_io.STRATEGIES
        ]
        for case in cases:
            problem, system = system_for(case)
            pattern = predict_schur_nnz(
                problem.case.avbp, problem.case.conch, problem.case.condi, problem.link
            )
            dense = np.zeros((system.n_gs, system.n_gs))
            for upsilon, rho in zip(system.upsilon, system.rho):
                R = rho.toarray()
                dense -= R @ np.linalg.solve(upsilon.toarray(), R.T)
            rows, cols = np.nonzero(np.abs(dense) > 1e-10 * (1.0 + np.abs(dense).max()))
            with self.subTest(T=problem.vars.T, n_y=problem.vars.n_storage):
                self.assertTrue(np.all(pattern.contains(rows, cols)))


class TestReorder(BattflowTestCase):
    def test_symmetric_permutation_of_original(self):
        """The arrowhead matrix is a symmetric permutation of the original system."""
        problem = build_problem(self.dynamic_case())
        m_blocks, n, g_x, g = newton_inputs(problem)
        system = reorder_arrowhead(problem, m_blocks, g_x, n, g)
        original = original_matrix(sp.block_diag(m_blocks), g_x).toarray()
        forward = system.perm_to_original.forward
        np.testing.assert_array_equal(system.assemble().toarray(), original[forward][:, forward])
        np.testing.assert_array_equal(system.rhs(), -np.r_[n, g][forward])
        self.assertEqual(system.T, 10)
        self.assertEqual(system.n_gs, 50)
        self.assertEqual(system.size, original.shape[0])

    def test_border_touches_neighbouring_steps_only(self):
        """rho_t only has rows for storage rows at t and t+1."""
        problem = build_problem(self.scenario(T=4, n_y=2))
        m_blocks, n, g_x, g = newton_inputs(problem)
        system = reorder_arrowhead(problem, m_blocks, g_x, n, g)
        for t in range(4):
            rows = np.flatnonzero(np.diff(sp.csr_matrix(system.rho[t]).indptr))
            allowed = set(range(2 * t, 2 * t + 4))
            self.assertTrue(set(rows.tolist()) <= allowed)

    def test_layout_mismatch(self):
        """Wrong block counts are rejected."""
        problem = build_problem(self.scenario(T=2, n_y=1))
        m_blocks, n, g_x, g = newton_inputs(problem)
        with self.assertRaises(LayoutError):
            reorder_arrowhead(problem, m_blocks[:1], g_x, n, g)
        with self.assertRaises(LayoutError):
            reorder_arrowhead(problem, m_blocks, g_x, n[:-1], g)


class TestSchurBackend(BattflowTestCase):
    def test_matches_dense_schur_complement(self):
        """sigma_c equals the dense sum of -rho Upsilon^-1 rho^T."""
        problem, system = system_for(self.dynamic_case())
        pattern = predict_schur_nnz(
            problem.case.avbp, problem.case.conch, problem.case.condi, problem.link
        )
        cache = schur_factorize(system, False, pattern)
        dense = np.zeros((system.n_gs, system.n_gs))
        rhs = np.zeros(system.n_gs)
        for upsilon, rho, zeta in zip(system.upsilon, system.rho, system.zeta):
            R = rho.toarray()
            U = upsilon.toarray()
            dense -= R @ np.linalg.solve(U, R.T)
            rhs -= R @ np.linalg.solve(U, zeta)
        dense = 0.5 * (dense + dense.T)
        scale = 1.0 + np.abs(dense).max()
        np.testing.assert_allclose(cache.schur.toarray(), dense, atol=1e-9 * scale)
        np.testing.assert_allclose(cache.schur_rhs, rhs, atol=1e-9 * (1.0 + np.abs(rhs).max()))
        self.assertLessEqual(cache.schur.nnz, pattern.total)

    def test_agrees_with_direct_and_dense(self):
        """Schur, direct LU and a dense solve give the same step."""
        for case in (self.scenario(T=3, n_y=3), self.dynamic_case()):
            problem, system = system_for(case)
            with self.subTest(T=problem.vars.T, n_y=problem.vars.n_storage):
                dense = np.linalg.solve(system.assemble().toarray(), system.rhs())
                lam_s, omega = SchurBackend(problem).solve(system)
                lam_d, omega_d = direct_solve(system)
                schur = system.to_original(omega, lam_s)
                direct = system.to_original(omega_d, lam_d)
                reference = system.perm_to_original.apply(dense)
                tol = 1e-8 * (1.0 + np.abs(reference).max())
                np.testing.assert_allclose(schur, reference, atol=tol)
                np.testing.assert_allclose(direct, reference, atol=tol)

    def test_static_structure_orders_once(self):
        """Stationary storage reuses one ordering for every block and every call."""
        problem, system = system_for(self.scenario(T=4, n_y=2))
        self.assertTrue(problem.stationary)
        backend = SchurBackend(problem)
        backend.solve(system)
        backend.solve(system)
        self.assertEqual(backend.orderings.computed, 1)
        self.assertGreater(backend.peak_nnz, 0)
        ledger = backend.last.ledger
        self.assertEqual(ledger["peak"], sum(ledger["blocks"]) + ledger["schur"])

    def test_dynamic_structure_orders_per_pattern(self):
        """Each distinct block structure is ordered once."""
        problem, system = system_for(self.dynamic_case())
        self.assertFalse(problem.stationary)
        backend = SchurBackend(problem)
        backend.solve(system)
        backend.solve(system)
        self.assertEqual(backend.orderings.computed, len(set(system.structure_keys)))
        self.assertGreater(backend.orderings.computed, 1)

    def test_failed_ldl_falls_back_to_lu(self):
        """When LDL of sigma_c fails the reduced system is solved by LU."""
        problem, system = system_for(self.scenario(T=3, n_y=2))
        pattern = predict_schur_nnz(
            problem.case.avbp, problem.case.conch, problem.case.condi, problem.link
        )
        failing = mock.Mock(side_effect=SingularMatrixError("no diagonal pivot"))
        with mock.patch("battflow.kkt.ldl_factor", failing):
            with self.assertLogs("battflow.kkt", level="WARNING"):
                cache = schur_factorize(system, True, pattern)
        self.assertTrue(cache.schur_uses_lu)
        lam_lu, omega_lu = schur_solve(cache, system)
        reference = schur_factorize(system, True, pattern)
        self.assertFalse(reference.schur_uses_lu)
        lam_ldl, omega_ldl = schur_solve(reference, system)
        np.testing.assert_allclose(lam_lu, lam_ldl, rtol=1e-8, atol=1e-10)

    def test_sigma_c_uses_sparse_ldl(self):
        """sigma_c is factorized by the sparse diagonal-pivot LDL."""
        problem, system = system_for(self.scenario(T=6, n_y=3))
        pattern = predict_schur_nnz(
            problem.case.avbp, problem.case.conch, problem.case.condi, problem.link
        )
        cache = schur_factorize(system, True, pattern)
        self.assertFalse(cache.schur_uses_lu)
        self.assertFalse(cache.schur_factors.two_by_two)

    def test_pattern_size_mismatch(self):
        """A pattern for another coupling size is rejected."""
        problem, system = system_for(self.scenario(T=2, n_y=1))
        ones = np.ones((3, 2), dtype=np.int8)
        with self.assertRaises(LayoutError):
            schur_factorize(system, True, predict_schur_nnz(ones, ones, ones))

    def test_singular_block_names_step(self):
        """A singular diagonal block reports its step."""
        upsilon = [sp.identity(2, format="csc"), sp.csc_matrix((2, 2))]
        rho = [sp.csc_matrix(([1.0], ([0], [0])), shape=(1, 2))] * 2
        system = ArrowheadSystem(
            upsilon=upsilon,
            rho=rho,
            zeta=[np.ones(2), np.ones(2)],
            gamma=np.zeros(1),
            perm_to_original=Permutation.identity(5),
            structure_keys=["a", "b"],
        )
        ones = np.ones((1, 1), dtype=np.int8)
        with self.assertRaises(SingularMatrixError) as ctx:
            schur_factorize(system, False, predict_schur_nnz(ones, ones, ones))
        self.assertEqual(ctx.exception.block, 1)


class TestDirectBackend(BattflowTestCase):
    def test_uses_configured_ordering(self):
        """The direct backend takes its ordering from the settings."""
        problem = build_problem(self.scenario(T=2, n_y=1))
        with mock.patch.dict("os.environ", {"BATTFLOW_DIRECT_ORDERING": "NATURAL"}):
            backend = DirectBackend(problem)
        self.assertEqual(backend.ordering, "NATURAL")
        m_blocks, n, g_x, g = newton_inputs(problem)
        system = reorder_arrowhead(problem, m_blocks, g_x, n, g)
        lam, omega = backend.solve(system)
        self.assertEqual(lam.size, system.n_gs)
        self.assertEqual(backend.peak_nnz, backend.last.nnz)

    def test_default_ordering_is_symmetric_amd(self):
        """By default the assembled matrix is AMD-ordered once per pattern."""
        problem, system = system_for(self.scenario(T=3, n_y=2))
        backend = DirectBackend(problem)
        self.assertEqual(backend.ordering, "AMD")
        with mock.patch("battflow.ordering.amd_order", wraps=amd_order) as ordered:
            lam, omega = backend.solve(system)
            backend.solve(system)
        ordered.assert_called_once()
        self.assertEqual(ordered.call_args[0][0].shape, (system.size, system.size))
        self.assertEqual(backend.orderings.computed, 1)
        lam_colamd, omega_colamd = direct_solve(system, direct_factorize(system, "COLAMD"))
        scale = 1.0 + np.abs(lam_colamd).max()
        np.testing.assert_allclose(lam, lam_colamd, atol=1e-9 * scale)

    def test_make_backend(self):
        """Backends are created by name."""
        problem = build_problem(self.scenario(T=2, n_y=1))
        self.assertIsInstance(make_backend("schur", problem), SchurBackend)
        self.assertIsInstance(make_backend("direct-lu", problem), DirectBackend)
        with self.assertRaises(ValueError):
            make_backend("cholesky", problem)


@pytest.mark.slow
class TestFactorMemory(BattflowTestCase):
    def test_schur_halves_factor_memory_at_scale(self):
        """At 118-bus scale over 96 steps with ten devices Schur needs at most half the nnz."""
        base = case_io.synthetic_case(118, seed=0)
        problem, system = system_for(case_io.build_scenario(base, 96, 10))
        schur, direct = SchurBackend(problem), DirectBackend(problem)
        schur.solve(system)
        direct.solve(system)
        self.assertGreater(schur.peak_nnz, 0)
        self.assertLessEqual(schur.peak_nnz, 0.5 * direct.peak_nnz)
