import itertools
import math

import numpy as np
import pytest

from stochascope import solvers
from stochascope.errors import ConfigError, DivergenceError
from stochascope.experiment import run_experiment
from stochascope.operators import ForwardOperator, identity_operator
from stochascope.partitions import make_partition
from stochascope.problems import (Problem, backprojection, block_gradient, full_gradient,
                                  objective, primal_dual_gap, synthesize_problem)
from stochascope.prox import ProxTerm, RegularizerSpec
from stochascope.safactor import batch_lipschitz, expected_smoothness, full_lipschitz
from stochascope.solvers import (acc_pd_sgd, acc_pd_sgd_steps, fista, initial_point,
                                 katyusha_x_momentum, minibatch_sgd, pdhg, pdhg_steps, pgd,
                                 prox_svrg, solve)
from stochascope.traces import SolverConfig, Trace, TraceRecord, load_configs

NONNEG = RegularizerSpec(h=ProxTerm('nonneg_indicator'))


def gaussian_problem(n, d, seed, reg=None, noiseless=True):
    rng = np.random.default_rng(seed)
    A = ForwardOperator(rng.standard_normal((n, d)), f'gaussian{n}x{d}')
    x_true = np.abs(rng.standard_normal(d))
    return synthesize_problem(A, x_true, snr=None if noiseless else 2., seed=seed, reg=reg)


def tv_denoising_problem(d1, d2, lam, seed=0):
    b = np.random.default_rng(seed).standard_normal(d1 * d2)
    return Problem(identity_operator(d1 * d2), b, reg=RegularizerSpec.total_variation(lam, (d1, d2)))


def config(algorithm, **kwargs):
    return SolverConfig(name=kwargs.pop('name', algorithm), algorithm=algorithm, **kwargs)


def test_pgd_identity_converges_in_one_step():
    b = np.arange(8.)
    problem = Problem(identity_operator(8), b, x_true=b)
    x, trace = pgd(problem, config('pgd', epochs=1))
    assert np.allclose(x, b, atol=1e-12)
    assert trace.epochs.tolist() == [0., 1.]


@pytest.mark.parametrize('solver', [pgd, fista])
def test_l1_zero_fixed_point(solver):
    rng = np.random.default_rng(3)
    A = rng.standard_normal((10, 6))
    b = rng.standard_normal(10)
    lam = np.abs(A.T @ b / 10).max() * 1.01
    problem = Problem(A, b, reg=RegularizerSpec(g='l1', lam=lam))
    x, _ = solver(problem, config(solver.__name__, epochs=5, x0='zeros'))
    assert np.array_equal(x, np.zeros(6))


def test_pgd_linear_envelope():
    problem = gaussian_problem(20, 10, seed=1, reg=NONNEG)
    M = problem.A.matrix
    spectrum = np.linalg.eigvalsh(M.T @ M)
    rate = 1. - spectrum[0] / spectrum[-1]
    _, trace = pgd(problem, config('pgd', epochs=40))
    errors = np.sqrt(trace.est_errors)
    envelope = rate ** np.arange(41) * errors[0]
    assert np.all(errors <= envelope * (1 + 1e-9) + 1e-14)


def test_pgd_trace_counts_datapasses():
    problem = gaussian_problem(12, 5, seed=0)
    _, trace = pgd(problem, config('pgd', epochs=7))
    assert trace.records[-1].epoch == 7.
    assert np.all(np.diff(trace.objectives) <= 1e-15)


def test_initial_point_is_projected_backprojection():
    A = ForwardOperator(np.array([[1., -2.], [3., 0.], [0., -1.]]), 'small')
    b = np.array([1., 1., 2.])
    np.testing.assert_allclose(backprojection(Problem(A, b)), [4. / 3, -4. / 3])
    np.testing.assert_allclose(initial_point(Problem(A, b, reg=NONNEG), config('pgd')),
                               [4. / 3, 0.])
    assert not initial_point(Problem(A, b), config('pgd', x0='zeros')).any()


def test_fista_envelope_and_acceleration():
    problem = gaussian_problem(30, 20, seed=2, reg=RegularizerSpec(g='l1', lam=0.05),
                               noiseless=False)
    x_star, _ = fista(problem, config('fista', epochs=5000, record_every=5000))
    f_star = objective(problem, x_star)
    _, trace = fista(problem, config('fista', epochs=200))
    _, pgd_trace = pgd(problem, config('pgd', epochs=200))
    x0 = initial_point(problem, trace.config)
    bound = 4 * full_lipschitz(problem.A) * np.sum((x0 - x_star) ** 2)
    k = np.arange(1, 201)
    assert np.all(trace.objectives[1:] - f_star <= bound / (k + 1) ** 2 + 1e-12)
    assert trace.objectives[-1] <= pgd_trace.objectives[-1] + 1e-12


def test_fista_with_total_variation():
    problem = tv_denoising_problem(6, 6, 0.01)
    problem = problem.with_reg(RegularizerSpec.total_variation(0.01, (6, 6),
                                                               h=ProxTerm('nonneg_indicator')))
    x, trace = fista(problem, config('fista', epochs=30))
    assert x.min() >= 0
    assert trace.objectives[-1] < trace.objectives[0]


def test_fista_rejects_l1_h_with_tv():
    problem = tv_denoising_problem(4, 4, 0.1).with_reg(
        RegularizerSpec.total_variation(0.1, (4, 4), h=ProxTerm('l1', 0.1)))
    with pytest.raises(ConfigError):
        fista(problem, config('fista'))


@pytest.mark.parametrize('solver', [pgd, minibatch_sgd, prox_svrg])
def test_single_prox_solvers_reject_tv(solver):
    problem = tv_denoising_problem(4, 4, 0.1)
    with pytest.raises(ConfigError):
        solver(problem, config(solver.__name__))


def test_sgd_rejects_g_and_h_together():
    reg = RegularizerSpec(g='l1', lam=0.1, h=ProxTerm('nonneg_indicator'))
    problem = gaussian_problem(12, 4, seed=0, reg=reg)
    with pytest.raises(ConfigError):
        minibatch_sgd(problem, config('minibatch_sgd', K=3))


def test_k_larger_than_n():
    problem = gaussian_problem(6, 3, seed=0)
    with pytest.raises(ConfigError):
        minibatch_sgd(problem, config('minibatch_sgd', K=7))
    with pytest.raises(ConfigError):
        acc_pd_sgd(problem, config('acc_pd_sgd', K=7))


def test_full_batch_sgd_is_pgd():
    problem = gaussian_problem(12, 5, seed=4, reg=NONNEG, noiseless=False)
    assert expected_smoothness(problem.A, 12) == pytest.approx(full_lipschitz(problem.A))
    x_pgd, pgd_trace = pgd(problem, config('pgd', epochs=10))
    x_sgd, sgd_trace = minibatch_sgd(problem, config('minibatch_sgd', epochs=10,
                                                     sampling='with_replacement', m=12))
    assert np.allclose(x_sgd, x_pgd, rtol=1e-10, atol=1e-12)
    assert np.array_equal(sgd_trace.epochs, pgd_trace.epochs)


def test_single_row_sgd_fixes_coordinates():
    x_true = np.linspace(-1., 1., 8)
    problem = Problem(identity_operator(8), x_true, x_true=x_true)
    _, trace = minibatch_sgd(problem, config('minibatch_sgd', epochs=4, step=1., x0='zeros',
                                             sampling='with_replacement', m=1,
                                             record_every=1))
    assert np.all(np.diff(trace.est_errors) <= 0)
    assert len(trace.records) == 33


def test_sgd_epoch_accounting():
    problem = gaussian_problem(12, 4, seed=0)
    _, trace = minibatch_sgd(problem, config('minibatch_sgd', epochs=3, K=4))
    assert trace.epochs.tolist() == [0., 1., 2., 3.]
    _, trace = minibatch_sgd(problem, config('minibatch_sgd', epochs=3, m=5,
                                             sampling='with_replacement'))
    assert np.allclose(trace.epochs, [0., 1.25, 2.5, 3.75])


def test_partition_estimator_is_unbiased(gaussian_12x8):
    problem = Problem(gaussian_12x8, np.random.default_rng(0).standard_normal(12))
    x = np.random.default_rng(1).standard_normal(8)
    for K in (1, 2, 3, 4, 6, 12):
        P = make_partition('random', 12, K, seed=K)
        mean = np.mean([block_gradient(problem, b, x, K / 12) for b in P.blocks], axis=0)
        assert np.allclose(mean, full_gradient(problem, x), rtol=0., atol=1e-12)


@pytest.mark.parametrize('n,m', [(4, 1), (5, 2), (6, 2), (6, 1)])
def test_with_replacement_estimator_is_unbiased(n, m):
    rng = np.random.default_rng(n * 10 + m)
    problem = Problem(rng.standard_normal((n, 3)), rng.standard_normal(n))
    x = rng.standard_normal(3)
    subsets = [np.array(s) for s in itertools.combinations(range(n), m)]
    mean = np.mean([block_gradient(problem, s, x, 1. / m) for s in subsets], axis=0)
    assert np.allclose(mean, full_gradient(problem, x), rtol=0., atol=1e-12)


def test_sgd_mean_error_envelope():
    base = gaussian_problem(40, 16, seed=11, reg=NONNEG)
    M = base.A.matrix
    mu_c = np.linalg.eigvalsh(M.T @ M)[0] / 40
    L_b = batch_lipschitz(M, make_partition('interleaved', 40, 4))
    errors, iterations = [], None
    for seed in range(20):
        _, trace = minibatch_sgd(base, config('minibatch_sgd', epochs=10, K=4, seed=seed))
        errors.append(np.sqrt(trace.est_errors))
        iterations = np.array([r.iteration for r in trace.records])
    envelope = (1. - mu_c / L_b) ** (iterations / 2.) * errors[0][0]
    assert np.all(np.mean(errors, axis=0) <= 1.1 * envelope)


def test_svrg_full_batch_is_pgd():
    problem = gaussian_problem(12, 5, seed=6, reg=RegularizerSpec(g='l1', lam=0.02),
                               noiseless=False)
    step = 1. / full_lipschitz(problem.A)
    x_pgd, _ = pgd(problem, config('pgd', epochs=10, step=step))
    x_svrg, trace = prox_svrg(problem, config('prox_svrg', epochs=10, step=step, K=1))
    assert np.allclose(x_svrg, x_pgd, rtol=1e-10, atol=1e-12)
    assert trace.epochs.tolist() == [0., 2., 4., 6., 8., 10., 12., 14., 16., 18., 20.]


def test_svrg_converges_linearly():
    reg = RegularizerSpec(g='l1', lam=0.05)
    problem = gaussian_problem(60, 10, seed=8, reg=reg, noiseless=False)
    x_star, _ = pgd(problem, config('pgd', epochs=3000, record_every=3000))
    problem = Problem(problem.A, problem.b, x_true=x_star, reg=reg)
    _, trace = prox_svrg(problem, config('prox_svrg', epochs=50, K=10, seed=2))
    outer = trace.epochs / 2
    keep = (outer >= 5) & (trace.est_errors > 1e-24)
    logs = np.log(trace.est_errors[keep])
    slope, intercept = np.polyfit(outer[keep], logs, 1)
    fitted = slope * outer[keep] + intercept
    r_squared = 1. - np.sum((logs - fitted) ** 2) / np.sum((logs - logs.mean()) ** 2)
    assert slope < 0
    assert r_squared >= 0.95


def test_pdhg_without_regularizer_is_gradient_descent():
    problem = gaussian_problem(15, 6, seed=5, noiseless=False)
    cfg = config('pdhg', epochs=25)
    _, tau = pdhg_steps(problem, cfg)
    x_pdhg, trace = pdhg(problem, cfg)
    x_gd, _ = pgd(problem, config('pgd', epochs=25, step=tau))
    assert np.allclose(x_pdhg, x_gd, rtol=1e-12, atol=1e-14)
    assert np.array_equal(trace.dual, np.zeros(6))


def test_pdhg_step_condition():
    problem = tv_denoising_problem(4, 4, 0.1)
    with pytest.raises(ConfigError):
        pdhg(problem, config('pdhg', step=10., step_policy='scaled'))
    sigma, tau = pdhg_steps(problem, config('pdhg', step_policy='scaled'))
    assert tau * (full_lipschitz(problem.A) + sigma * problem.reg.D_norm_sq) == pytest.approx(1.)


def test_pdhg_gap_closes():
    problem = tv_denoising_problem(4, 4, 0.02)
    x, trace = pdhg(problem, config('pdhg', epochs=10000, step_policy='scaled',
                                    record_every=1000))
    assert primal_dual_gap(problem, x, trace.dual) <= 1e-6
    assert trace.residuals[-1] <= trace.residuals[1]


def test_primal_dual_gap_checks():
    problem = gaussian_problem(6, 6, seed=0)
    with pytest.raises(ValueError):
        primal_dual_gap(problem, np.zeros(6), np.zeros(6))


def test_katyusha_momentum_initialization():
    x0 = np.array([1., -2., 3.])
    assert np.allclose(katyusha_x_momentum(1, x0, x0, x0), x0)
    assert np.allclose(katyusha_x_momentum(2, x0, 2 * x0, x0), (4 * 2 * x0 + 2 * x0) / 6)


def test_acc_pd_sgd_reduces_to_gradient_descent():
    problem = gaussian_problem(15, 6, seed=5, noiseless=False)
    eta = 0.5 / full_lipschitz(problem.A)
    x_acc, trace = acc_pd_sgd(problem, config('acc_pd_sgd', K=1, n_outer=1, n_inner=20,
                                              theta=0., eta=eta))
    x_gd, _ = pgd(problem, config('pgd', epochs=20, step=eta))
    assert np.allclose(x_acc, x_gd, rtol=1e-10, atol=1e-12)
    assert trace.epochs.tolist() == [0., 20.]


def test_acc_pd_sgd_default_steps():
    problem = tv_denoising_problem(4, 4, 0.1)
    cfg = config('acc_pd_sgd', K=4)
    partition = make_partition('interleaved', 16, 4)
    alpha, eta, theta = acc_pd_sgd_steps(problem, cfg, partition)
    L_b = batch_lipschitz(problem.A, partition)
    assert alpha(0) == pytest.approx(1. / math.sqrt(problem.reg.D_norm_sq))
    assert eta(3) == pytest.approx(1. / (L_b + problem.reg.D_norm_sq * alpha(3)))
    assert theta(0) == pytest.approx(0.8)
    scaled = acc_pd_sgd_steps(problem, config('acc_pd_sgd', K=4, step_policy='scaled'), partition)
    assert scaled[0](0) == pytest.approx(L_b / math.sqrt(problem.reg.D_norm_sq))
    listed = config('acc_pd_sgd', K=4, theta=[0.1, 0.2])
    assert acc_pd_sgd_steps(problem, listed, partition)[2](5) == 0.2


def test_acc_pd_sgd_default_policy_converges():
    problem = tv_denoising_problem(4, 4, 0.02)
    _, trace = acc_pd_sgd(problem, config('acc_pd_sgd', K=1, n_outer=3, n_inner=5000, theta=1.))
    assert trace.residuals[-1] <= trace.residuals[1]
    assert trace.residuals[-1] < 1e-6


def test_acc_pd_sgd_steps_follow_the_inner_counter():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    lam = 0.05
    problem = Problem(A, b, reg=RegularizerSpec(g='l1', lam=lam))
    x, _ = acc_pd_sgd(problem, config('acc_pd_sgd', K=1, n_outer=1, n_inner=2, theta=0.,
                                      eta=[0.1, 0.2]))

    def grad(v):
        return A.T @ (A @ v - b) / 4

    x0 = A.T @ b / 4
    y1 = np.clip(x0 + x0, -lam, lam)
    x1 = x0 - 0.1 * (y1 + grad(x0))
    y2 = np.clip(y1 + x1, -lam, lam)
    x2 = x1 - 0.2 * (y2 + grad(x1))
    np.testing.assert_allclose(x, x2, rtol=1e-12, atol=1e-14)


def test_acc_pd_sgd_without_outer_momentum():
    problem = gaussian_problem(15, 6, seed=5, noiseless=False)
    eta = 0.5 / full_lipschitz(problem.A)
    x_gd, _ = pgd(problem, config('pgd', epochs=6, step=eta))
    plain, trace = acc_pd_sgd(problem, config('acc_pd_sgd', K=1, n_outer=2, n_inner=3, theta=0.,
                                              eta=eta, outer_momentum=False))
    np.testing.assert_allclose(plain, x_gd, rtol=1e-10, atol=1e-12)
    assert trace.epochs.tolist() == [0., 3., 6.]
    accelerated, _ = acc_pd_sgd(problem, config('acc_pd_sgd', K=1, n_outer=2, n_inner=3,
                                                theta=0., eta=eta))
    assert not np.allclose(accelerated, x_gd)


def test_acc_pd_sgd_epoch_accounting():
    problem = tv_denoising_problem(4, 4, 0.1)
    _, trace = acc_pd_sgd(problem, config('acc_pd_sgd', K=4, n_outer=4, step_policy='scaled'))
    assert trace.epochs.tolist() == [0., 1., 2., 3., 4.]


def test_acc_pd_sgd_saddle_residual():
    problem = tv_denoising_problem(4, 4, 0.02)
    _, trace = acc_pd_sgd(problem, config('acc_pd_sgd', K=1, n_outer=3, n_inner=5000,
                                          theta=1., step_policy='scaled'))
    assert trace.residuals[-1] < 1e-6


def test_divergence_guard():
    problem = gaussian_problem(20, 10, seed=0)
    with pytest.raises(DivergenceError) as info:
        pgd(problem, config('pgd', epochs=100, step=100. / full_lipschitz(problem.A)))
    assert info.value.algorithm == 'pgd'
    assert info.value.iteration < 100


def test_solve_dispatches():
    problem = gaussian_problem(12, 4, seed=0)
    x, trace = solve(problem, config('fista', epochs=3))
    assert x.shape == (4,) and len(trace.records) == 4


def test_run_experiment_is_deterministic_and_isolates_failures():
    problem = gaussian_problem(20, 10, seed=0, noiseless=False)
    configs = [config('minibatch_sgd', name='a', K=4, seed=3, epochs=5),
               config('minibatch_sgd', name='b', K=4, seed=3, epochs=5),
               config('pgd', name='bad', epochs=50, step=100. / full_lipschitz(problem.A)),
               config('pgd', name='p0', seed=0, epochs=5),
               config('pgd', name='p9', seed=9, epochs=5)]
    traces = run_experiment(problem, configs)
    assert [t.config.name for t in traces] == ['a', 'b', 'bad', 'p0', 'p9']
    assert np.array_equal(traces[0].objectives, traces[1].objectives)
    assert not traces[2].completed and 'DivergenceError' in traces[2].error
    assert traces[2].records and traces[2].records[0].epoch == 0.
    assert np.array_equal(traces[3].objectives, traces[4].objectives)
    assert traces[3].records[-1].epoch == 5.
    with pytest.raises(ValueError):
        run_experiment(problem, [])


def test_run_experiment_keeps_partial_trace_of_any_failure(monkeypatch):
    def crashing(problem, config, trace=None):
        trace.append(TraceRecord(epoch=0., iteration=0, objective=1., est_error=0.,
                                 wall_ms=0.))
        raise RuntimeError('solver crashed')

    monkeypatch.setitem(solvers.SOLVERS, 'fista', crashing)
    problem = gaussian_problem(10, 4, seed=0)
    traces = run_experiment(problem, [config('fista', name='crash'), config('pgd', epochs=3)])
    assert traces[0].error == 'RuntimeError: solver crashed'
    assert [r.objective for r in traces[0].records] == [1.]
    assert traces[1].completed and traces[1].records[-1].epoch == 3.


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(name='x', algorithm='adam')
    with pytest.raises(ConfigError):
        SolverConfig(name='x', algorithm='pgd', step=-1.)
    with pytest.raises(ConfigError):
        SolverConfig(name='x', algorithm='minibatch_sgd', sampling='with_replacement')
    with pytest.raises(ConfigError):
        SolverConfig(name='x', algorithm='acc_pd_sgd', theta=[0.5, 2.])
    with pytest.raises(ConfigError):
        SolverConfig.from_dict({'name': 'x', 'algorithm': 'pgd', 'momentum': 0.9})
    cfg = SolverConfig.from_dict({'name': 'x', 'algorithm': 'acc_pd_sgd', 'alpha': [1., 2.]})
    assert cfg.alpha == (1., 2.)
    assert cfg.to_dict()['alpha'] == [1., 2.]
    assert cfg.outer_momentum is True
    with pytest.raises(ConfigError):
        SolverConfig.from_dict({'name': 'x', 'algorithm': 'acc_pd_sgd', 'outer_momentum': 'no'})


def test_load_configs(tmp_path):
    path = tmp_path / 'configs.json'
    path.write_text('[{"name": "a", "algorithm": "pgd"}, {"name": "b", "algorithm": "fista"}]')
    assert [c.algorithm for c in load_configs(str(path))] == ['pgd', 'fista']
    path.write_text('[{"name": "spd", "algorithm": "acc_pd_sgd", "outer_momentum": false}]')
    assert load_configs(str(path))[0].outer_momentum is False
    path.write_text('[{"name": "a", "algorithm": "pgd"}, {"name": "a", "algorithm": "fista"}]')
    with pytest.raises(ConfigError):
        load_configs(str(path))
    path.write_text('{not json')
    with pytest.raises(ConfigError):
        load_configs(str(path))


def test_trace_invariants():
    trace = Trace(config('pgd'))
    trace.append(TraceRecord(0., 0, 1., float('nan'), 0.))
    with pytest.raises(ValueError):
        trace.append(TraceRecord(0., 1, 1., 1., 1.))
    with pytest.raises(ValueError):
        trace.append(TraceRecord(1., 1, 1., 1., -1.))
    record = trace.to_dict()
    assert record['records'][0]['est_error'] is None
    assert record['completed']
