import numpy as np
import pytest

from greedyopt.atoms import FiniteAtomSet, L2Ball, SignedCoordinates, atomic_norm
from greedyopt.core import fit_rate, make_rng
from greedyopt.mp import (AffineCurvature, DegenerateSamplingError, _positive_root,
                          build_sampling_geometry, estimate_curvature_LA,
                          run_accelerated_mp, run_accelerated_random_pursuit,
                          run_affine_mp, run_mp, run_random_pursuit, run_steepest_cd)
from greedyopt.objectives import CallableObjective, LeastSquaresObjective, QuadraticObjective


class TestRunMp:
    def test_single_step_recovery(self):
        obj = LeastSquaresObjective(np.array([2.0, 0.0]))
        combo, trace = run_mp(obj, SignedCoordinates(2), L=1.0, max_iter=5)
        assert np.array_equal(combo.point, [2.0, 0.0])
        assert trace.step_kinds[-1] == "stationary"
        assert trace.step_kinds[0] == "mp"

    def test_orthogonal_two_step_recovery(self):
        obj = LeastSquaresObjective(np.array([2.0, 1.0]))
        combo, trace = run_mp(obj, SignedCoordinates(2), L=1.0, max_iter=5)
        assert np.allclose(combo.point, [2.0, 1.0], atol=1e-15)
        # steepest coordinate first: e1 (residual 2), then e2
        assert np.array_equal(combo.atoms[0].vector, [1.0, 0.0])

    def test_rank_deficient_quadratic_decay(self):
        rng = make_rng(55, 0)
        B = rng.standard_normal((10, 20)) / np.sqrt(10)
        obj = LeastSquaresObjective(B @ rng.standard_normal(20), A=B)
        _, trace = run_mp(obj, SignedCoordinates(20), obj.smoothness, 2000)
        fit = fit_rate(trace, "powerLaw", (10, 2000), optimum=0.0)
        assert fit.slope <= -0.8

    def test_descent_invariant(self):
        rng = make_rng(19, 7)
        for _ in range(5):
            B = rng.standard_normal((6, 6))
            obj = QuadraticObjective(B.T @ B / 6, rng.standard_normal(6))
            _, trace = run_mp(obj, SignedCoordinates(6), obj.smoothness, 200)
            assert np.all(np.diff(trace.objective_array()) <= 1e-12)


class TestSteepestCd:
    def test_first_coordinate_update(self):
        obj = QuadraticObjective(np.eye(2), np.array([3.0, -1.0]))
        combo, _ = run_steepest_cd(obj, 2, L=1.0, max_iter=1)
        assert np.array_equal(combo.point, [-3.0, 0.0])

    def test_equals_mp_on_signed_coordinates(self):
        rng = make_rng(4, 44)
        for _ in range(5):
            B = rng.standard_normal((8, 8))
            obj = QuadraticObjective(B.T @ B / 8, rng.standard_normal(8))
            L = obj.smoothness
            mp_combo, mp_trace = run_mp(obj, SignedCoordinates(8), L, 100)
            cd_combo, cd_trace = run_steepest_cd(obj, 8, L, 100)
            assert np.max(np.abs(mp_combo.point - cd_combo.point)) <= 1e-12
            assert np.max(np.abs(mp_trace.objective_array()
                                 - cd_trace.objective_array())) <= 1e-12

    def test_isotropic_diagonal_converges_in_dim_steps(self):
        dim = 6
        obj = QuadraticObjective(2.0 * np.eye(dim), np.arange(1.0, dim + 1.0))
        combo, trace = run_steepest_cd(obj, dim, L=2.0, max_iter=dim + 2)
        assert trace.step_kinds[-1] == "stationary"
        assert trace.iters[-1] <= dim
        assert np.allclose(combo.point, -np.arange(1.0, dim + 1.0) / 2.0, atol=1e-14)


class TestAffineMp:
    def test_unit_atoms_match_plain_mp(self):
        rng = make_rng(5, 3)
        B = rng.standard_normal((5, 5))
        obj = QuadraticObjective(B.T @ B / 5, rng.standard_normal(5))
        curvature = AffineCurvature(obj.smoothness, "radiusBound")
        a, _ = run_mp(obj, SignedCoordinates(5), obj.smoothness, 50)
        b, _ = run_affine_mp(obj, SignedCoordinates(5), curvature, 50)
        assert np.max(np.abs(a.point - b.point)) <= 1e-12

    @staticmethod
    def _base_and_transformed(seed, dim=4):
        rng = make_rng(seed, 0xAFF)
        while True:
            M = rng.standard_normal((dim, dim))
            if np.linalg.cond(M) <= 10:
                break
        B = rng.standard_normal((dim, dim))
        Q = B.T @ B / dim + 0.1 * np.eye(dim)
        b = rng.standard_normal(dim)
        base_obj = QuadraticObjective(Q, b)
        base_atoms = FiniteAtomSet(np.vstack([np.eye(dim), -np.eye(dim)]), symmetric=True)
        l_a = float(np.max(np.diag(Q)))  # sup of z^T Q z over the l1 ball
        hat_obj = CallableObjective(
            dim,
            lambda th: base_obj.value(M @ th),
            lambda th: M.T @ base_obj.gradient(M @ th),
        )
        Minv = np.linalg.inv(M)
        hat_atoms = FiniteAtomSet(np.vstack([Minv @ e for e in
                                             np.vstack([np.eye(dim), -np.eye(dim)])]))
        return base_obj, base_atoms, hat_obj, hat_atoms, M, AffineCurvature(l_a, "sampledSup")

    def test_affine_invariance_of_iterates(self):
        for seed in range(3):
            base_obj, base_atoms, hat_obj, hat_atoms, M, curv = \
                self._base_and_transformed(seed)
            combo_base, trace_base = run_affine_mp(base_obj, base_atoms, curv, 50)
            combo_hat, trace_hat = run_affine_mp(hat_obj, hat_atoms, curv, 50)
            mapped = M @ combo_hat.point
            scale = max(1.0, np.linalg.norm(combo_base.point))
            assert np.linalg.norm(mapped - combo_base.point) <= 1e-8 * scale
            assert np.allclose(trace_base.objective_array(),
                               trace_hat.objective_array(), rtol=1e-8, atol=1e-10)

    def test_l2_ball_recovers_gradient_descent(self):
        rng = make_rng(9, 9)
        B = rng.standard_normal((4, 4))
        obj = QuadraticObjective(B.T @ B / 4, rng.standard_normal(4))
        l_a = obj.smoothness  # radius-1 ball: L_A = L * radius^2
        curvature = AffineCurvature(l_a, "radiusBound")
        combo, _ = run_affine_mp(obj, L2Ball(4, 1.0), curvature, 30)
        # replay: plain gradient descent with step 1/L_A
        theta = np.zeros(4)
        for _ in range(30):
            theta = theta - obj.gradient(theta) / l_a
        assert np.allclose(combo.point, theta, atol=1e-10)


class TestEstimateCurvature:
    def test_identity_hessian(self):
        obj = QuadraticObjective(np.eye(3))
        est = estimate_curvature_LA(obj, SignedCoordinates(3), 50, seed=0)
        assert 1.0 <= est.l_a <= 1.2 + 1e-12

    def test_diagonal_hessian_capped_by_radius_bound(self):
        obj = QuadraticObjective(np.diag([1.0, 4.0]))
        est = estimate_curvature_LA(obj, SignedCoordinates(2), 50, seed=1)
        assert 3.9 <= est.l_a <= 4.0 * 1.2 + 1e-12

    def test_radius_bound_holds(self):
        rng = make_rng(2, 22)
        for _ in range(20):
            B = rng.standard_normal((4, 4))
            obj = QuadraticObjective(B.T @ B / 4)
            est = estimate_curvature_LA(obj, SignedCoordinates(4), 60,
                                        seed=int(rng.integers(1 << 30)))
            # oracle: dense Hessian largest eigenvalue, radius 1 for +-e_i
            assert est.l_a <= obj.smoothness * 1.0 * (1 + 1e-9)


class TestSamplingGeometry:
    def test_uniform_coordinates_closed_form(self):
        geom = build_sampling_geometry(np.eye(4), np.full(4, 0.25))
        assert not geom.estimated
        assert np.allclose(geom.pinv, 4.0 * np.eye(4))
        assert geom.nu_prime == 4.0
        assert geom.nu == 4.0

    def test_point_mass_pseudo_inverse(self):
        geom = build_sampling_geometry(np.array([[1.0, 0.0]]), np.array([1.0]))
        assert np.allclose(geom.ptilde, np.diag([1.0, 0.0]))
        assert np.allclose(geom.pinv, np.diag([1.0, 0.0]))

    def test_two_atom_geometry_matches_dense_oracle(self):
        s = 1.0 / np.sqrt(2.0)
        atoms = np.array([[1.0, 0.0], [s, s]])
        geom = build_sampling_geometry(atoms, np.array([0.5, 0.5]))
        expected_ptilde = 0.5 * (np.outer([1, 0], [1, 0]) + 0.5 * np.ones((2, 2)))
        assert np.allclose(geom.ptilde, expected_ptilde)
        assert np.allclose(geom.pinv, np.linalg.pinv(expected_ptilde), atol=1e-8)
        assert np.allclose(geom.pinv @ geom.ptilde @ geom.pinv, geom.pinv, atol=1e-8)

    def test_degenerate_sampling_rejected(self):
        with pytest.raises(DegenerateSamplingError):
            build_sampling_geometry(np.eye(2), np.array([1.0, 0.0]))


class TestAcceleratedSchedule:
    def test_first_alpha(self):
        assert _positive_root(0.0, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_second_alpha_golden(self):
        assert _positive_root(1.0, 1.0) == pytest.approx((1 + np.sqrt(5)) / 2, abs=1e-12)

    def test_recursion_satisfied_along_fifty_steps(self):
        l_nu = 3.7
        beta = 0.0
        for _ in range(50):
            alpha = _positive_root(beta, l_nu)
            assert alpha ** 2 * l_nu - alpha - beta == pytest.approx(0.0, abs=1e-10)
            beta += alpha


class TestAcceleratedRuns:
    @staticmethod
    def _instance(seed, dim=30, rank=15):
        rng = make_rng(seed, 0x57E)
        U, _ = np.linalg.qr(rng.standard_normal((rank, rank)))
        V, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        sigma = 1.0 / np.arange(1, rank + 1) ** 0.7
        B = U @ np.diag(sigma) @ V[:rank]
        obj = LeastSquaresObjective(B @ rng.standard_normal(dim), A=B)
        return obj

    def test_acdm_beats_vanilla_mp_slope(self):
        geom = build_sampling_geometry(np.eye(30), np.full(30, 1.0 / 30.0))
        slopes_mp, slopes_acc = [], []
        for seed in range(3):
            obj = self._instance(seed)
            L = obj.smoothness
            _, tr_mp = run_mp(obj, SignedCoordinates(30), L, 3000)
            _, tr_acc = run_accelerated_mp(obj, SignedCoordinates(30), geom, L,
                                           3000, seed=seed)
            slopes_mp.append(fit_rate(tr_mp, "powerLaw", (50, 3000), optimum=0.0).slope)
            slopes_acc.append(fit_rate(tr_acc, "powerLaw", (50, 3000), optimum=0.0).slope)
        assert np.median(slopes_acc) < np.median(slopes_mp) - 0.4

    def test_ramp_beats_random_pursuit_final(self):
        geom = build_sampling_geometry(np.eye(30), np.full(30, 1.0 / 30.0))
        finals_rp, finals_ramp = [], []
        for seed in range(5):
            obj = self._instance(seed)
            L = obj.smoothness
            _, tr_rp = run_random_pursuit(obj, geom, L, 3000, seed=seed)
            _, tr_ramp = run_accelerated_random_pursuit(obj, geom, L, 3000, seed=seed)
            finals_rp.append(tr_rp.final_objective())
            finals_ramp.append(tr_ramp.final_objective())
        assert np.median(finals_ramp) < np.median(finals_rp)

    def test_ramp_single_atom_moves_both_sequences_together(self):
        atoms = np.array([[1.0, 0.0]])
        geom = build_sampling_geometry(atoms, np.array([1.0]))
        obj = QuadraticObjective(np.diag([1.0, 1.0]), np.array([-2.0, 3.0]))
        combo, _ = run_accelerated_random_pursuit(obj, geom, L=1.0, max_iter=50,
                                                  seed=0, nu=1.0)
        # both sequences only ever move along e1
        assert combo.point[1] == 0.0
        assert combo.point[0] == pytest.approx(2.0, abs=1e-6)

    def test_seed_determinism(self):
        geom = build_sampling_geometry(np.eye(30), np.full(30, 1.0 / 30.0))
        obj = self._instance(0)
        _, a = run_accelerated_random_pursuit(obj, geom, obj.smoothness, 100, seed=3)
        _, b = run_accelerated_random_pursuit(obj, geom, obj.smoothness, 100, seed=3)
        assert np.array_equal(a.objective_array(), b.objective_array())
        _, c = run_accelerated_random_pursuit(obj, geom, obj.smoothness, 100, seed=4)
        assert not np.array_equal(a.objective_array(), c.objective_array())

    def test_lmo_atom_must_be_representable(self):
        atoms = np.array([[1.0, 0.0]])
        geom = build_sampling_geometry(atoms, np.array([1.0]))
        obj = QuadraticObjective(np.eye(2), np.array([0.0, -1.0]))
        with pytest.raises(DegenerateSamplingError):
            run_accelerated_mp(obj, SignedCoordinates(2), geom, 1.0, 10, seed=0, nu=1.0)


class TestRandomPursuit:
    def test_monte_carlo_descent_envelope(self):
        dim = 5
        geom = build_sampling_geometry(np.eye(dim), np.full(dim, 1.0 / dim))
        rng = make_rng(1, 111)
        # condition number <= 3 so the k = 20n envelope is comfortably met
        basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        Q = basis @ np.diag(rng.uniform(0.5, 1.5, dim)) @ basis.T
        obj = QuadraticObjective(Q, rng.standard_normal(dim))
        traces = []
        for seed in range(50):
            _, trace = run_random_pursuit(obj, geom, obj.smoothness, 20 * dim, seed)
            traces.append(trace.objective_array())
        mean_curve = np.mean(np.stack(traces), axis=0)
        fstar = float(-0.5 * obj.b @ np.linalg.solve(obj.Q, obj.b))
        eps = mean_curve - fstar
        assert np.all(np.diff(eps) < 0)
        assert eps[-1] <= eps[0] / 10.0

    def test_single_atom_exact_convergence(self):
        geom = build_sampling_geometry(np.array([[1.0, 0.0]]), np.array([1.0]))
        obj = CallableObjective(2, lambda x: 0.5 * (x[0] - 2.0) ** 2,
                                lambda x: np.array([x[0] - 2.0, 0.0]), smoothness=1.0)
        combo, _ = run_random_pursuit(obj, geom, 1.0, 3, seed=0)
        assert combo.point[0] == pytest.approx(2.0, abs=1e-15)

    def test_seed_determinism(self):
        geom = build_sampling_geometry(np.eye(4), np.full(4, 0.25))
        rng = make_rng(2, 4)
        B = rng.standard_normal((4, 4))
        obj = QuadraticObjective(B.T @ B / 4, rng.standard_normal(4))
        _, a = run_random_pursuit(obj, geom, obj.smoothness, 50, seed=9)
        _, b = run_random_pursuit(obj, geom, obj.smoothness, 50, seed=9)
        assert np.array_equal(a.objective_array(), b.objective_array())
