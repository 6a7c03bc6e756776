import csv

import numpy as np
import pytest
import scipy.sparse as sp

from stereolift.engine.errors import DimensionMismatchError, SolverError
from stereolift.imaging.raster import FlowField
from stereolift.models import PenaltyKind, SolverConfig
from stereolift.solver import (
    LinearOperator,
    OperatorKind,
    Preconditioner,
    RobustTerm,
    TermStack,
    compose,
    flow_difference,
    frame_block,
    grad_x,
    grad_y,
    identity,
    incomplete_cholesky,
    irls_minimize,
    normal_equations,
    objective_gradient,
    objective_value,
    pcg_solve,
    robust_phi,
    selection,
    solve_quadratic,
)

KERSHAW = np.array([
    [3.0, -2.0, 0.0, 2.0],
    [-2.0, 3.0, -2.0, 0.0],
    [0.0, -2.0, 3.0, -2.0],
    [2.0, 0.0, -2.0, 3.0],
])


def _spd(n: int, seed: int = 0) -> np.ndarray:
    m = np.random.default_rng(seed).normal(size=(n, n))
    return m @ m.T + n * np.eye(n)


def _tridiagonal(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2.01 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


H, W, T = 3, 4, 2
N = H * W * T


def _operator(kind: str) -> LinearOperator:
    rng = np.random.default_rng(3)
    if kind == "identity":
        return identity(N)
    if kind == "grad_x":
        return grad_x(H, W, frames=T)
    if kind == "grad_y":
        return grad_y(H, W, frames=T)
    if kind == "flow_difference":
        return flow_difference(H, W, [FlowField(u=rng.normal(size=(H, W)), v=rng.normal(size=(H, W)))])
    if kind == "selection":
        return selection(rng.random(N) > 0.5)
    return compose(grad_x(H, W), frame_block(1, T, H * W))


OPERATOR_KINDS = ["identity", "grad_x", "grad_y", "flow_difference", "selection", "composition"]


def _assert_gradient_matches(stack: TermStack, x: np.ndarray, eps: float = 1e-2) -> None:
    g = objective_gradient(stack, x, eps)
    step = 1e-6
    numeric = np.array([
        (objective_value(stack, x + step * e, eps) - objective_value(stack, x - step * e, eps)) / (2 * step)
        for e in np.eye(stack.n)
    ])
    np.testing.assert_allclose(g, numeric, rtol=1e-5, atol=1e-5)


class TestRobustPhi:
    def test_floor_at_zero(self):
        assert robust_phi(0.0, 1e-4) == pytest.approx(0.01)

    def test_even(self):
        xs = np.linspace(-5, 5, 11)
        np.testing.assert_array_equal(robust_phi(xs), robust_phi(-xs))

    def test_large_argument(self):
        assert robust_phi(3.0, 1e-4) == pytest.approx(3.0000167, abs=1e-7)

    def test_epsilon_must_be_positive(self):
        with pytest.raises(ValueError):
            robust_phi(1.0, 0.0)


class TestOperators:
    def test_forward_differences_with_empty_boundary_rows(self):
        h, w = 3, 4
        ramp = np.tile(np.arange(w, dtype=float), h)
        np.testing.assert_array_equal(grad_x(h, w).apply(ramp).reshape(h, w), [[1, 1, 1, 0]] * h)
        assert not grad_y(h, w).apply(ramp).any()

    def test_gradients_do_not_cross_frames(self):
        h, w = 2, 2
        x = np.concatenate([np.zeros(4), np.full(4, 5.0)])
        assert not grad_y(h, w, frames=2).apply(x).any()

    def test_flow_difference_follows_rounded_flow(self):
        h, w = 1, 4
        flow = FlowField(u=np.array([[1.2, 0.0, 0.0, 3.0]]), v=np.zeros((1, 4)))
        op = flow_difference(h, w, [flow])
        # the last pixel's target leaves the frame
        assert op.n_rows == 3
        x = np.array([0.0, 0.0, 0.0, 0.0, 10.0, 20.0, 30.0, 40.0])
        np.testing.assert_array_equal(op.apply(x), [20.0, 20.0, 30.0])
        np.testing.assert_array_equal(op.row_pixels, [0, 1, 2])

    def test_selection_and_frame_block(self):
        op = selection(np.array([True, False, True]))
        np.testing.assert_array_equal(op.apply(np.array([4.0, 5.0, 6.0])), [4.0, 6.0])
        block = frame_block(1, 3, 2)
        np.testing.assert_array_equal(block.apply(np.arange(6.0)), [2.0, 3.0])

    def test_compose_maps_rows_to_stacked_pixels(self):
        op = compose(grad_x(1, 3), frame_block(1, 2, 3))
        assert op.shape == (3, 6)
        np.testing.assert_array_equal(op.apply(np.array([0, 0, 0, 1.0, 3.0, 6.0])), [2.0, 3.0, 0.0])
        np.testing.assert_array_equal(op.row_pixels, [3, 4, 5])

    def test_compose_rejects_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            compose(identity(3), identity(4))

    @pytest.mark.parametrize("kind", OPERATOR_KINDS)
    def test_adjoint_consistency(self, kind):
        op = _operator(kind)
        rng = np.random.default_rng(11)
        x = rng.normal(size=op.n_cols)
        y = rng.normal(size=op.n_rows)
        assert np.dot(op.apply(x), y) == pytest.approx(np.dot(x, op.adjoint(y)), rel=1e-12, abs=1e-12)


class TestTerms:
    def test_term_rejects_wrong_target_length(self):
        with pytest.raises(ValueError):
            RobustTerm(name="data", op=identity(3), target=np.zeros(2), weight=np.ones(3))

    def test_stack_rejects_mixed_sizes(self):
        with pytest.raises(ValueError):
            TermStack(terms=[RobustTerm(name="d", op=identity(3), target=np.zeros(3), weight=np.ones(3))], n=4)

    @pytest.mark.parametrize("penalty", [PenaltyKind.ROBUST, PenaltyKind.QUADRATIC])
    @pytest.mark.parametrize("kind", OPERATOR_KINDS)
    def test_gradient_matches_finite_differences(self, kind, penalty):
        rng = np.random.default_rng(1)
        op = _operator(kind)
        stack = TermStack(n=N, terms=[
            RobustTerm(
                name=kind,
                op=op,
                target=rng.normal(size=op.n_rows),
                weight=rng.random(op.n_rows),
                penalty=penalty,
                multiplier=1.7,
            ),
        ])
        _assert_gradient_matches(stack, rng.normal(size=N))

    def test_full_clip_objective_gradient(self):
        rng = np.random.default_rng(4)

        def term(name, kind, multiplier, penalty=PenaltyKind.ROBUST, zero_target=False):
            op = _operator(kind)
            target = np.zeros(op.n_rows) if zero_target else rng.normal(size=op.n_rows)
            return RobustTerm(name=name, op=op, target=target, weight=rng.random(op.n_rows), penalty=penalty, multiplier=multiplier)

        stack = TermStack(n=N, terms=[
            term("data", "identity", 1.0),
            term("data_grad_x", "grad_x", 10.0),
            term("data_grad_y", "grad_y", 10.0),
            term("smooth_x", "grad_x", 10.0, zero_target=True),
            term("prior", "identity", 0.5),
            term("coherence", "flow_difference", 100.0, zero_target=True),
            term("motion", "selection", 5.0),
            term("frame_smooth", "composition", 2.0, penalty=PenaltyKind.QUADRATIC, zero_target=True),
        ])
        _assert_gradient_matches(stack, rng.normal(size=N))

    def test_majorizer_bounds_objective(self):
        rng = np.random.default_rng(2)
        n = 6
        term = RobustTerm(name="data", op=identity(n), target=rng.normal(size=n), weight=np.ones(n))
        x = rng.normal(size=n)
        c = term.majorizer_weights(x, 1e-4)
        r = term.residual(x)
        offset = float(np.sum(robust_phi(r, 1e-4) - c * r * r))
        for y in (x, rng.normal(size=n), x + 0.1):
            ry = term.residual(y)
            assert float(np.dot(c, ry * ry)) + offset >= term.value(y, 1e-4) - 1e-12
        assert float(np.dot(c, r * r)) + offset == pytest.approx(term.value(x, 1e-4))

    def test_zero_multiplier_terms_are_inactive(self):
        stack = TermStack(n=2, terms=[
            RobustTerm(name="a", op=identity(2), target=np.zeros(2), weight=np.ones(2)),
            RobustTerm(name="b", op=identity(2), target=np.zeros(2), weight=np.ones(2), multiplier=0.0),
        ])
        assert [t.name for t in stack.active_terms()] == ["a"]
        lhs, _ = normal_equations(stack, np.zeros(2))
        assert lhs.shape == (2, 2)


class TestPcg:
    def test_identity_converges_in_one_step(self):
        b = np.array([1.0, -2.0, 3.0])
        result = pcg_solve(sp.identity(3, format="csr"), b)
        np.testing.assert_allclose(result.x, b)
        assert result.iterations == 1 and result.converged

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_dense_solve(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 201))
        upper = sp.triu(sp.random(n, n, density=min(1.0, 6.0 / n), random_state=rng, data_rvs=lambda k: rng.uniform(-1.0, 1.0, k)), k=1)
        sym = (upper + upper.T).tocsr()
        diag = np.asarray(abs(sym).sum(axis=1)).ravel() + rng.uniform(0.1, 2.0, n)
        a = (sym + sp.diags(diag)).tocsr()
        b = rng.normal(size=n)

        result = pcg_solve(a, b, incomplete_cholesky(a), tol=1e-13, max_iters=1000)
        expected = np.linalg.solve(a.toarray(), b)
        assert result.converged
        assert np.linalg.norm(result.x - expected) / np.linalg.norm(expected) <= 1e-8

    def test_dense_spd_system(self):
        a = _spd(10)
        b = np.random.default_rng(5).normal(size=10)
        result = pcg_solve(sp.csr_matrix(a), b, incomplete_cholesky(a), tol=1e-13, max_iters=100)
        expected = np.linalg.solve(a, b)
        assert np.linalg.norm(result.x - expected) / np.linalg.norm(expected) <= 1e-8

    def test_zero_rhs(self):
        result = pcg_solve(sp.csr_matrix(_spd(4)), np.zeros(4))
        assert not result.x.any() and result.iterations == 0

    def test_reports_non_convergence(self):
        a = _tridiagonal(200)
        result = pcg_solve(a, np.ones(200), tol=1e-14, max_iters=3)
        assert not result.converged
        assert result.iterations == 3


class TestIncompleteCholesky:
    def test_diagonal_matrix_is_exact(self):
        a = sp.diags([1.0, 4.0, 9.0, 16.0], format="csr")
        precond = incomplete_cholesky(a)
        assert precond.kind == "ic0"
        result = pcg_solve(a, np.ones(4), precond, tol=1e-12)
        assert result.iterations == 1
        np.testing.assert_allclose(result.x, [1.0, 0.25, 1 / 9, 1 / 16])

    def test_beats_unpreconditioned_on_tridiagonal(self):
        a = _tridiagonal(100)
        b = np.random.default_rng(0).normal(size=100)
        plain = pcg_solve(a, b, Preconditioner.identity(), tol=1e-10, max_iters=1000)
        ic = pcg_solve(a, b, incomplete_cholesky(a), tol=1e-10, max_iters=1000)
        assert ic.converged and plain.converged
        assert ic.iterations < plain.iterations

    def test_pivot_breakdown_falls_back_to_jacobi(self):
        precond = incomplete_cholesky(sp.csr_matrix(KERSHAW))
        assert precond.kind == "jacobi"
        b = np.array([1.0, 2.0, 3.0, 4.0])
        result = pcg_solve(sp.csr_matrix(KERSHAW), b, precond, tol=1e-12, max_iters=50)
        assert result.converged
        np.testing.assert_allclose(KERSHAW @ result.x, b, atol=1e-9)


def _scalar_stack(targets):
    op = LinearOperator(OperatorKind.COMPOSITION, sp.csr_matrix(np.ones((len(targets), 1))))
    return TermStack(n=1, terms=[RobustTerm(name="fit", op=op, target=targets, weight=np.ones(len(targets)))])


class TestIrls:
    def test_single_quadratic_term_is_exact(self):
        b = np.array([0.5, -1.0, 2.0, 4.0])
        stack = TermStack(n=4, terms=[
            RobustTerm(name="data", op=identity(4), target=b, weight=np.ones(4), penalty=PenaltyKind.QUADRATIC)
        ])
        result = irls_minimize(stack, np.zeros(4))
        np.testing.assert_allclose(result.solution, b, atol=1e-10)
        assert result.trace[1] == pytest.approx(0.0, abs=1e-18)

    def test_scalar_robust_fit_approaches_median(self):
        stack = _scalar_stack(np.array([1.0, 2.0, 10.0]))
        cfg = SolverConfig(irls_iters=300, epsilon=1e-6, early_exit_tol=0.0, pcg_tol=1e-12)
        result = irls_minimize(stack, np.array([13.0 / 3.0]), cfg)
        assert abs(result.solution[0] - 2.0) <= 0.05

    def test_trace_is_monotone_on_image_problem(self):
        rng = np.random.default_rng(7)
        h = w = 16
        n = h * w
        stack = TermStack(n=n, terms=[
            RobustTerm(name="data", op=identity(n), target=rng.normal(size=n), weight=rng.random(n)),
            RobustTerm(name="smooth_x", op=grad_x(h, w), target=np.zeros(n), weight=np.ones(n), multiplier=2.0),
            RobustTerm(name="smooth_y", op=grad_y(h, w), target=np.zeros(n), weight=np.ones(n), multiplier=2.0),
        ])
        result = irls_minimize(stack, np.zeros(n), SolverConfig(irls_iters=30))
        trace = np.array(result.trace)
        assert len(trace) >= 2
        assert np.all(trace[1:] <= trace[:-1] * (1 + 1e-9))
        assert trace[-1] < trace[0]

    def test_difference_only_stack_gets_tikhonov(self):
        h, w = 3, 3
        n = h * w
        stack = TermStack(n=n, terms=[
            RobustTerm(name="smooth_x", op=grad_x(h, w), target=np.zeros(n), weight=np.ones(n)),
        ])
        result = irls_minimize(stack, np.arange(n, dtype=float))
        assert result.regularized
        assert np.all(np.isfinite(result.solution))

    def test_writes_convergence_log(self, tmp_path):
        stack = _scalar_stack(np.array([1.0, 3.0]))
        path = tmp_path / "conv.csv"
        irls_minimize(stack, np.array([0.0]), SolverConfig(irls_iters=5, convergence_log=str(path)))
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["iter", "objective", "pcg_iters", "residual"]
        assert rows[1][0] == "0"

    def test_requires_active_terms(self):
        stack = TermStack(n=1, terms=[
            RobustTerm(name="off", op=identity(1), target=[0.0], weight=[1.0], multiplier=0.0)
        ])
        with pytest.raises(SolverError):
            irls_minimize(stack)

    def test_solve_quadratic_refuses_robust_terms(self):
        with pytest.raises(SolverError):
            solve_quadratic(_scalar_stack(np.array([1.0])))
