import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import block_diag, toeplitz

from bsblfr.errors import (
    CombinatorialGuardError,
    DimensionError,
    InputValidationError,
    NumericError,
    SolverDivergenceError,
)
from bsblfr.solvers import (
    BlockPartition,
    BsblHyperparams,
    SensingProblem,
    SolverOptions,
    block_l1_solve,
    brute_force_oracle,
    bsbl_solve,
    compute_cost,
    em_update,
    l1_solve,
    posterior_moments,
)
from bsblfr.solvers import bsbl as bsbl_mod
from bsblfr.solvers.convex import soft_threshold
from bsblfr.solvers.homotopy import lasso_homotopy
from bsblfr.solvers.instances import planted_instance, relative_error


def random_hyper(rng, k, lam=0.3):
    return BsblHyperparams(
        gamma=rng.uniform(0.2, 2.0, k), corr=rng.uniform(-0.9, 0.9, k), lam=lam, active=np.ones(k, bool)
    )


def dense_sigma0(hyper, partition):
    blocks = [
        hyper.gamma[i] * toeplitz(hyper.corr[i] ** np.arange(size)) for i, size in enumerate(partition.sizes)
    ]
    return block_diag(*blocks)


# ---------------------------------------------------------------------------
# types


@given(st.lists(st.integers(1, 6), min_size=1, max_size=8))
def test_partition_covers_indices(sizes):
    part = BlockPartition(sizes)
    assert part.total == sum(sizes)
    assert part.offsets[0] == 0
    assert all(a < b for a, b in zip(part.offsets, part.offsets[1:]))
    covered = np.concatenate([np.arange(sl.start, sl.stop) for sl in part.slices()])
    assert covered.tolist() == list(range(part.total))


@pytest.mark.parametrize("sizes", [[], [0, 2], [3, -1]])
def test_partition_rejects_bad_sizes(sizes):
    with pytest.raises(InputValidationError):
        BlockPartition(sizes)


def test_problem_validation():
    part = BlockPartition([2, 2])
    with pytest.raises(DimensionError):
        SensingProblem(np.ones((3, 5)), np.ones(3), part)
    with pytest.raises(DimensionError):
        SensingProblem(np.ones((3, 4)), np.ones(2), part)
    phi = np.ones((3, 4))
    phi[1, 1] = np.nan
    with pytest.raises(InputValidationError):
        SensingProblem(phi, np.ones(3), part)
    with pytest.raises(InputValidationError):
        SensingProblem(np.ones((3, 4)), [1.0, np.inf, 0.0], part)


def test_hyperparams_invariants():
    with pytest.raises(InputValidationError):
        BsblHyperparams([1.0, -1.0], [0, 0], 1.0, [True, True])
    with pytest.raises(InputValidationError):
        BsblHyperparams([1.0], [1.0], 1.0, [True])
    with pytest.raises(InputValidationError):
        BsblHyperparams([1.0], [0.0], 0.0, [True])
    h = BsblHyperparams([1.0, 0.0, 2.0], [0, 0, 0], 1.0, [True, True, False])
    assert h.active.tolist() == [True, False, False]
    assert h.gamma.tolist() == [1.0, 0.0, 0.0]
    assert np.linalg.eigvalsh(h.prior_cov(BlockPartition([2, 2, 2]))).min() >= 0


def test_options_validation():
    with pytest.raises(InputValidationError):
        SolverOptions(max_iters=0)
    with pytest.raises(InputValidationError):
        SolverOptions(prune_threshold=0)
    with pytest.raises(InputValidationError):
        SolverOptions(lam=-1.0)
    assert SolverOptions().learn_lambda and not SolverOptions(lam=0.1).learn_lambda


# ---------------------------------------------------------------------------
# cost and posterior


def test_cost_trivial_cases():
    part = BlockPartition([2, 2])
    hyper = BsblHyperparams(np.zeros(2), np.zeros(2), 1.0, np.zeros(2, bool))
    phi = np.arange(12.0).reshape(3, 4)
    assert compute_cost(hyper, SensingProblem(phi, np.zeros(3), part)) == 0.0
    y = np.array([1.0, -2.0, 0.5])
    assert compute_cost(hyper, SensingProblem(phi, y, part)) == pytest.approx(y @ y, rel=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_cost_matches_dense_evaluation(seed):
    rng = np.random.default_rng(seed)
    part = BlockPartition([3, 2, 3])
    phi = rng.standard_normal((5, 8))
    y = rng.standard_normal(5)
    hyper = random_hyper(rng, 3)
    cov = hyper.lam * np.eye(5) + phi @ dense_sigma0(hyper, part) @ phi.T
    expected = np.linalg.slogdet(cov)[1] + y @ np.linalg.solve(cov, y)
    got = compute_cost(hyper, SensingProblem(phi, y, part))
    assert abs(got - expected) <= 1e-10 * abs(expected)


def test_cost_rejects_indefinite_covariance():
    part = BlockPartition([1])
    hyper = BsblHyperparams._trusted(np.array([-5.0]), np.zeros(1), 1.0, np.ones(1, bool))
    with pytest.raises(NumericError):
        compute_cost(hyper, SensingProblem(np.ones((2, 1)), np.ones(2), part))


def test_posterior_degenerate_prior():
    part = BlockPartition([2, 2])
    hyper = BsblHyperparams(np.zeros(2), np.zeros(2), 1.0, np.zeros(2, bool))
    mu, sigma = posterior_moments(hyper, SensingProblem(np.eye(4), np.ones(4), part))
    assert not mu.any() and not sigma.any()


def test_posterior_wiener_identity():
    part = BlockPartition.uniform(3, 1)
    hyper = BsblHyperparams.initial(3, lam=1.0, gamma=1.0)
    y = np.array([2.0, -4.0, 1.0])
    mu, sigma = posterior_moments(hyper, SensingProblem(np.eye(3), y, part))
    np.testing.assert_allclose(mu, y / 2, atol=1e-14)
    np.testing.assert_allclose(sigma, np.eye(3) / 2, atol=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_posterior_matches_dual_form(seed):
    rng = np.random.default_rng(100 + seed)
    part = BlockPartition([4, 3, 3])
    phi = rng.standard_normal((6, 10))
    y = rng.standard_normal(6)
    hyper = random_hyper(rng, 3, lam=0.5)
    s0 = dense_sigma0(hyper, part)
    precision = np.linalg.inv(s0) + phi.T @ phi / hyper.lam
    mu_ref = np.linalg.solve(precision, phi.T @ y / hyper.lam)
    sigma_ref = np.linalg.inv(precision)
    mu, sigma = posterior_moments(hyper, SensingProblem(phi, y, part))
    assert np.linalg.norm(mu - mu_ref) <= 1e-8 * np.linalg.norm(mu_ref)
    assert np.abs(sigma - sigma_ref).max() <= 1e-8 * np.abs(sigma_ref).max()
    assert np.abs(sigma - sigma.T).max() <= 1e-10
    assert np.linalg.eigvalsh(sigma).min() >= -1e-10 * np.trace(sigma)


def test_posterior_zero_on_pruned_blocks():
    rng = np.random.default_rng(5)
    part = BlockPartition([2, 3, 2])
    hyper = BsblHyperparams([1.0, 0.0, 0.5], [0.3, 0.0, -0.2], 0.1, [True, False, True])
    mu, sigma = posterior_moments(hyper, SensingProblem(rng.standard_normal((4, 7)), rng.standard_normal(4), part))
    assert not mu[2:5].any() and not sigma[2:5].any() and not sigma[:, 2:5].any()


# ---------------------------------------------------------------------------
# EM


def test_em_zero_moment_prunes_block():
    rng = np.random.default_rng(1)
    part = BlockPartition([2, 2])
    problem = SensingProblem(rng.standard_normal((3, 4)), rng.standard_normal(3), part)
    hyper = BsblHyperparams.initial(2, lam=1.0)
    mu = np.array([0.0, 0.0, 1.0, -1.0])
    sigma = np.zeros((4, 4))
    sigma[2:, 2:] = 0.1 * np.eye(2)
    new = em_update(hyper, mu, sigma, problem)
    assert new.gamma[0] == 0.0 and not new.active[0]
    assert new.gamma[1] > 0


def test_em_symmetric_duplicate_blocks():
    rng = np.random.default_rng(2)
    base = rng.standard_normal((6, 3))
    phi = np.hstack([base, base, rng.standard_normal((6, 3))])
    part = BlockPartition([3, 3, 3])
    problem = SensingProblem(phi, rng.standard_normal(6), part)
    hyper = BsblHyperparams([0.7, 0.7, 1.3], [0.2, 0.2, -0.1], 0.4, np.ones(3, bool))
    mu, sigma = posterior_moments(hyper, problem)
    new = em_update(hyper, mu, sigma, problem, learn_correlation=False)
    assert new.gamma[0] == pytest.approx(new.gamma[1], rel=1e-10)


def test_em_fixed_point_at_convergence():
    problem = planted_instance(20, 8, 5, n_active=2, corr=0.8, snr_db=20, seed=3).problem
    result = bsbl_solve(problem, SolverOptions(max_iters=5000, convergence_tol=1e-12))
    assert result.converged
    hyper = result.hyper
    mu, sigma = posterior_moments(hyper, problem)
    new = em_update(hyper, mu, sigma, problem)
    act = hyper.active
    assert np.all(np.abs(new.gamma[act] - hyper.gamma[act]) <= 1e-6 * hyper.gamma[act])
    assert abs(new.lam - hyper.lam) <= 1e-6 * hyper.lam
    assert np.all(np.abs(new.corr[act] - hyper.corr[act]) <= 1e-6 * np.maximum(np.abs(hyper.corr[act]), 1e-12))


@pytest.mark.parametrize("seed", range(5))
def test_em_step_does_not_raise_cost(seed):
    problem = planted_instance(20, 8, 5, n_active=2, snr_db=20, seed=seed).problem
    hyper = bsbl_mod.initial_hyperparams(problem, SolverOptions())
    for _ in range(20):
        before = compute_cost(hyper, problem)
        mu, sigma = posterior_moments(hyper, problem)
        hyper = em_update(hyper, mu, sigma, problem)
        assert compute_cost(hyper, problem) <= before + 1e-8 * abs(before)


# ---------------------------------------------------------------------------
# bsbl_solve


def test_bsbl_zero_data():
    rng = np.random.default_rng(0)
    part = BlockPartition.uniform(3, 2)
    result = bsbl_solve(SensingProblem(rng.standard_normal((4, 6)), np.zeros(4), part))
    assert not result.x_hat.any()
    assert not result.active.any()


def test_bsbl_identity_dictionary():
    y = np.zeros(8)
    y[4:6] = 1.0
    problem = SensingProblem(np.eye(8), y, BlockPartition.uniform(4, 2))
    result = bsbl_solve(problem, SolverOptions(lam=1e-10))
    assert relative_error(result.x_hat, y) < 1e-4
    assert result.active.tolist() == [False, False, True, False]


@pytest.mark.parametrize("seed", range(5))
def test_bsbl_matches_oracle_noiseless(seed):
    problem = planted_instance(10, 4, 4, seed=seed).problem
    assert relative_error(bsbl_solve(problem).x_hat, brute_force_oracle(problem, 1)) < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_bsbl_trace_monotone_and_pruned_zero(seed):
    problem = planted_instance(20, 8, 5, n_active=2, snr_db=20, seed=seed).problem
    result = bsbl_solve(problem)
    trace = result.cost_trace
    assert all(b <= a + 1e-8 * abs(a) for a, b in zip(trace, trace[1:]))
    mask = ~np.repeat(result.active, problem.partition.sizes)
    assert np.all(result.x_hat[mask] == 0.0)
    assert result.final_cost == trace[-1]


@pytest.mark.parametrize("c", [1e-3, 0.5, 7.0, 1e4])
def test_bsbl_scaling_covariance(c):
    problem = planted_instance(20, 8, 5, n_active=2, snr_db=20, seed=11).problem
    base = bsbl_solve(problem).x_hat
    scaled = bsbl_solve(SensingProblem(problem.phi, c * problem.y, problem.partition)).x_hat
    assert np.linalg.norm(scaled - c * base) <= 1e-6 * np.linalg.norm(c * base)


def test_bsbl_deterministic():
    problem = planted_instance(20, 8, 5, n_active=2, snr_db=20, seed=4).problem
    a, b = bsbl_solve(problem), bsbl_solve(problem)
    assert a.x_hat.tobytes() == b.x_hat.tobytes() and a.cost_trace == b.cost_trace


def test_bsbl_divergence_error_carries_trace(monkeypatch):
    problem = planted_instance(20, 8, 5, n_active=2, snr_db=20, seed=0).problem
    real = bsbl_mod._em_from_stats

    def sabotaged(hyper, *args, **kwargs):
        new = real(hyper, *args, **kwargs)
        return BsblHyperparams._trusted(new.gamma * 50.0, new.corr, new.lam * 1e-3, new.active)

    monkeypatch.setattr(bsbl_mod, "_em_from_stats", sabotaged)
    with pytest.raises(SolverDivergenceError) as info:
        bsbl_solve(problem)
    assert len(info.value.trace) >= 2
    assert info.value.trace[-1] > info.value.trace[-2]


def test_bsbl_heterogeneous_blocks():
    rng = np.random.default_rng(9)
    part = BlockPartition([1, 3, 2, 4, 2])
    phi = rng.standard_normal((10, 12))
    x = np.zeros(12)
    x[4:6] = [1.0, -2.0]
    result = bsbl_solve(SensingProblem(phi, phi @ x, part))
    assert relative_error(result.x_hat, x) < 1e-3


# ---------------------------------------------------------------------------
# convex baselines


def kkt_violation(phi, y, x, rho):
    """Independent lasso optimality check from the subgradient conditions."""
    g = phi.T @ (y - phi @ x)
    on = x != 0
    v_on = np.abs(g[on] - rho * np.sign(x[on])).max(initial=0.0)
    v_off = np.maximum(np.abs(g[~on]) - rho, 0).max(initial=0.0)
    return max(v_on, v_off) / rho


def test_l1_orthonormal_soft_threshold():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    y = rng.standard_normal(8)
    rho = 0.4
    result = l1_solve(SensingProblem(q, y, BlockPartition.uniform(8, 1)), SolverOptions(rho=rho))
    np.testing.assert_allclose(result.x_hat, soft_threshold(q.T @ y, rho), atol=1e-8)


def test_l1_null_threshold():
    rng = np.random.default_rng(1)
    phi, y = rng.standard_normal((6, 10)), rng.standard_normal(6)
    rho = np.abs(phi.T @ y).max()
    result = l1_solve(SensingProblem(phi, y, BlockPartition.uniform(10, 1)), SolverOptions(rho=rho))
    assert not result.x_hat.any()


@pytest.mark.parametrize("seed", range(5))
def test_l1_recovers_two_sparse(seed):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((10, 16))
    x = np.zeros(16)
    x[rng.choice(16, 2, replace=False)] = rng.standard_normal(2) + np.sign(rng.standard_normal(2))
    problem = SensingProblem(phi, phi @ x, BlockPartition.uniform(16, 1))
    oracle = brute_force_oracle(problem, 2)
    result = l1_solve(problem)  # epsilon = 0 -> rho = 1e-6 ||Phi^T y||_inf
    # at rho > 0 the lasso keeps O(rho) entries off the support; count only significant ones
    significant = np.abs(result.x_hat) > 1e-4 * np.abs(result.x_hat).max()
    assert set(np.flatnonzero(significant)) == set(np.flatnonzero(oracle))
    assert relative_error(result.x_hat, oracle) < 1e-3
    assert result.converged and result.kkt_residual < 1e-6


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(3, 12), n=st.integers(2, 20), frac=st.floats(0.01, 0.9))
def test_l1_satisfies_optimality_conditions(seed, m, n, frac):
    rng = np.random.default_rng(seed)
    phi, y = rng.standard_normal((m, n)), rng.standard_normal(m)
    rho = frac * np.abs(phi.T @ y).max()
    result = l1_solve(SensingProblem(phi, y, BlockPartition.uniform(n, 1)), SolverOptions(rho=rho))
    assert kkt_violation(phi, y, result.x_hat, rho) < 1e-5


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(3, 12), n=st.integers(2, 20), frac=st.floats(0.05, 0.95))
def test_homotopy_hits_residual_level(seed, m, n, frac):
    rng = np.random.default_rng(seed)
    phi, y = rng.standard_normal((m, n)), rng.standard_normal(m)
    ls = np.linalg.lstsq(phi, y, rcond=None)[0]
    floor = np.linalg.norm(y - phi @ ls)
    eps = floor + frac * (np.linalg.norm(y) - floor)
    point = lasso_homotopy(phi, y, eps_target=eps)
    if point is None:  # numerically singular path; callers fall back to iteration
        return
    assert point.residual_norm == pytest.approx(eps, rel=1e-6)
    assert kkt_violation(phi, y, point.x, point.rho) < 1e-6


@pytest.mark.parametrize("solver", [l1_solve, block_l1_solve])
@pytest.mark.parametrize("eps", [0.05, 0.3])
def test_epsilon_band(solver, eps):
    inst = planted_instance(12, 5, 4, n_active=1, seed=7)
    p = inst.problem
    y = p.y / np.linalg.norm(p.y)
    problem = SensingProblem(p.phi, y, p.partition)
    result = solver(problem, SolverOptions(epsilon=eps))
    res = np.linalg.norm(y - p.phi @ result.x_hat)
    assert 0.9 * eps <= res <= 1.1 * eps


def test_epsilon_infeasible_band_falls_back():
    rng = np.random.default_rng(3)
    phi, y = rng.standard_normal((12, 3)), rng.standard_normal(12)
    result = l1_solve(SensingProblem(phi, y, BlockPartition.uniform(3, 1)), SolverOptions(epsilon=1e-6))
    ls = np.linalg.lstsq(phi, y, rcond=None)[0]
    assert relative_error(result.x_hat, ls) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_block_l1_size_one_blocks_equal_l1(seed):
    rng = np.random.default_rng(seed)
    phi, y = rng.standard_normal((8, 12)), rng.standard_normal(8)
    problem = SensingProblem(phi, y, BlockPartition.uniform(12, 1))
    opts = SolverOptions(rho=0.1 * np.abs(phi.T @ y).max())
    a, b = l1_solve(problem, opts), block_l1_solve(problem, opts)
    assert np.abs(a.x_hat - b.x_hat).max() < 1e-6


def test_block_l1_null_threshold():
    rng = np.random.default_rng(4)
    part = BlockPartition.uniform(4, 3)
    phi, y = rng.standard_normal((6, 12)), rng.standard_normal(6)
    rho = part.block_norms(phi.T @ y).max()
    assert not block_l1_solve(SensingProblem(phi, y, part), SolverOptions(rho=rho)).x_hat.any()


@pytest.mark.parametrize("seed", range(5))
def test_block_l1_single_block_oracle(seed):
    problem = planted_instance(12, 5, 4, n_active=1, seed=seed).problem
    rho = 1e-6 * np.abs(problem.phi.T @ problem.y).max()
    result = block_l1_solve(problem, SolverOptions(rho=rho))
    assert relative_error(result.x_hat, brute_force_oracle(problem, 1)) < 1e-3
    assert result.converged and result.kkt_residual < 1e-6


def test_convex_iteration_cap_flags_not_converged():
    problem = planted_instance(12, 5, 4, n_active=2, seed=1).problem
    result = block_l1_solve(problem, SolverOptions(max_prox_iters=3))
    assert not result.converged
    assert result.x_hat.shape == (problem.n,)


# ---------------------------------------------------------------------------
# oracle


def test_oracle_exact_span():
    rng = np.random.default_rng(0)
    part = BlockPartition.uniform(5, 3)
    phi = rng.standard_normal((8, 15))
    y = phi[:, 9:12] @ np.array([1.0, -1.0, 2.0])
    x = brute_force_oracle(SensingProblem(phi, y, part), 2)
    assert part.support(x) == [3]
    assert np.linalg.norm(y - phi @ x) < 1e-10


def test_oracle_zero_data_prefers_empty_support():
    rng = np.random.default_rng(0)
    x = brute_force_oracle(SensingProblem(rng.standard_normal((4, 8)), np.zeros(4), BlockPartition.uniform(4, 2)), 2)
    assert not x.any()


def test_oracle_planted_block():
    inst = planted_instance(10, 4, 4, support=[2], seed=0)
    x = brute_force_oracle(inst.problem, 1)
    assert inst.problem.partition.support(x) == [2]
    assert np.linalg.norm(inst.problem.y - inst.problem.phi @ x) < 1e-10


def test_oracle_guard():
    part = BlockPartition.uniform(40, 1)
    problem = SensingProblem(np.ones((2, 40)), np.ones(2), part)
    with pytest.raises(CombinatorialGuardError):
        brute_force_oracle(problem, 5)
