import itertools
import math

import numpy as np
import pytest

from stochascope.linalg import l1to2_norm_sq, spectral_norm_sq
from stochascope.operators import build_random_ensemble
from stochascope.partitions import Partition, make_partition, subset_operator
from stochascope.safactor import (batch_lipschitz, beta_index, bound_alpha_ell, bound_alpha_r,
                                  bound_alpha_s, bound_alpha_sigma, bound_alpha_u, bound_beta,
                                  expected_sa_curve, expected_sa_with_replacement,
                                  full_lipschitz, in_validity_window, iteration_counts,
                                  max_dim_for_delta, pgd_envelope, random_partition_probability,
                                  restricted_strong_convexity, sa_curve, sa_factor,
                                  sgd_envelope, summarize_operator)

REL = 1e-9


def test_full_lipschitz_examples(identity8, identical_rows12):
    assert full_lipschitz(identity8) == pytest.approx(1. / 8)
    assert full_lipschitz(identical_rows12) == pytest.approx(1. + 4. + 0.25 + 9.)
    A = np.random.default_rng(0).standard_normal((5, 3))
    assert full_lipschitz(A) == pytest.approx(np.linalg.eigvalsh(A.T @ A)[-1] / 5, rel=1e-10)


@pytest.mark.parametrize('K', [1, 2, 4, 8])
def test_batch_lipschitz_identity(identity8, K):
    P = make_partition('interleaved', 8, K)
    assert batch_lipschitz(identity8, P) == pytest.approx(K / 8)


@pytest.mark.parametrize('K', [1, 2, 3, 4, 6, 12])
def test_batch_lipschitz_identical_rows(identical_rows12, K):
    P = make_partition('consecutive', 12, K)
    assert batch_lipschitz(identical_rows12, P) == pytest.approx(14.25, rel=1e-12)


def test_batch_lipschitz_matches_block_oracle(gaussian_12x8):
    P = make_partition('random', 12, 3, seed=2)
    M = gaussian_12x8.matrix
    oracle = max(np.linalg.norm(M[b], 2) ** 2 for b in P.blocks) * 3 / 12
    assert batch_lipschitz(gaussian_12x8, P) == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize('scheme', ['interleaved', 'random', 'consecutive'])
@pytest.mark.parametrize('K', [1, 2, 3, 4, 6, 12])
def test_identical_rows_tightness(identical_rows12, scheme, K):
    report = sa_factor(identical_rows12, make_partition(scheme, 12, K, seed=K))
    assert report.upsilon == pytest.approx(K, rel=1e-12)
    assert report.alpha_u == pytest.approx(K, rel=1e-12)
    assert report.alpha_ell == pytest.approx(K, rel=1e-12)


@pytest.mark.parametrize('K', [1, 2, 4, 8])
def test_identity_upsilon_is_one(identity8, K):
    for scheme in ('interleaved', 'random', 'consecutive'):
        report = sa_factor(identity8, make_partition(scheme, 8, K, seed=0))
        assert report.upsilon == pytest.approx(1., rel=1e-12)
        assert report.alpha_u == pytest.approx(K / 8)
        assert report.beta == pytest.approx(1.)


def test_single_block_upsilon(gaussian_12x8):
    assert sa_factor(gaussian_12x8, make_partition('interleaved', 12, 1)).upsilon == \
        pytest.approx(1., rel=1e-12)


@pytest.mark.parametrize('scheme', ['interleaved', 'random'])
def test_single_block_upsilon_with_close_top_singular_values(scheme):
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.standard_normal((100, 100)))
    V, _ = np.linalg.qr(rng.standard_normal((100, 100)))
    s = np.concatenate([[1., 0.9995], np.linspace(0.5, 0.1, 98)])
    A = (U * s) @ V.T
    report = sa_factor(A, make_partition(scheme, 100, 1, seed=3))
    assert report.upsilon >= 1. - 1e-9
    assert report.upsilon == pytest.approx(1., rel=1e-12)
    assert full_lipschitz(A) == pytest.approx(0.01, rel=1e-10)
    assert batch_lipschitz(A, make_partition(scheme, 100, 1, seed=3)) == \
        pytest.approx(full_lipschitz(A), rel=1e-10)


def test_zero_operator_is_rejected():
    A = np.zeros((4, 3))
    with pytest.raises(ValueError):
        bound_alpha_ell(A, make_partition('interleaved', 4, 2))
    with pytest.raises(ValueError):
        sa_factor(A, make_partition('interleaved', 4, 2))


def test_alpha_s_equals_alpha_u_for_tight_rho(gaussian_12x8):
    assert bound_alpha_s(gaussian_12x8, 3) == pytest.approx(bound_alpha_u(gaussian_12x8, 3))
    assert bound_alpha_s(gaussian_12x8, 3, rho=10.) < bound_alpha_u(gaussian_12x8, 3)
    with pytest.raises(ValueError):
        bound_alpha_s(gaussian_12x8, 3, rho=0.5)


def test_beta_index():
    assert beta_index(8, 2) == 5
    assert beta_index(8, 8) == 8
    assert beta_index(8, 1) == 1
    assert beta_index(7, 2) == 4


def test_beta_infinite_when_index_exceeds_d():
    A = np.random.default_rng(1).standard_normal((10, 4))
    assert math.isinf(bound_beta(A, 2))
    report = sa_factor(A, make_partition('interleaved', 10, 2))
    record = report.to_dict()
    assert record['beta'] is None and record['beta_finite'] is False


def test_beta_bounds_every_equal_bipartition():
    rng = np.random.default_rng(77)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    A = Q @ np.diag(np.linspace(1., 3., 8))
    beta = bound_beta(A, 2)
    upsilons = []
    for first in itertools.combinations(range(1, 8), 3):
        block = (0,) + first
        rest = tuple(i for i in range(8) if i not in block)
        upsilons.append(sa_factor(A, Partition((block, rest), 'custom', 8)).upsilon)
    assert len(upsilons) == 35
    assert max(upsilons) <= beta * (1 + REL)


def check_chain(report):
    assert report.upsilon >= 1 - 1e-9
    assert report.alpha_s <= report.alpha_u * (1 + REL)
    assert report.alpha_u <= report.alpha_ell * (1 + REL)
    assert report.alpha_ell <= report.upsilon * (1 + REL)
    assert report.upsilon <= report.beta * (1 + REL)


@pytest.mark.parametrize('seed', range(100))
def test_bound_chain(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.choice([1, 2, 4, 8]))
    n = K * int(rng.integers(1, 32 // K + 1))
    d = int(rng.integers(1, 33))
    kind = ['gaussian', 'uniform01', 'subsampled_wishart'][seed % 3]
    if kind == 'subsampled_wishart':
        d = max(d, n)
    A = build_random_ensemble(kind, n, d, seed=seed).matrix
    for scheme in ('interleaved', 'random', 'consecutive'):
        check_chain(sa_factor(A, make_partition(scheme, n, K, seed=seed)))


def test_chain_with_unequal_blocks_keeps_beta(gaussian_12x8):
    report = sa_factor(gaussian_12x8, make_partition('consecutive', 12, 5))
    assert 1 - 1e-9 <= report.upsilon <= report.beta * (1 + REL)


@pytest.mark.parametrize('c', [-3., 0.01, 7.5])
def test_scale_invariance(gaussian_12x8, c):
    P = make_partition('random', 12, 4, seed=3)
    base = sa_factor(gaussian_12x8.matrix, P)
    scaled = sa_factor(c * gaussian_12x8.matrix, P)
    for field in ('upsilon', 'alpha_ell', 'alpha_u', 'alpha_s', 'beta', 'alpha_r', 'alpha_sigma'):
        assert getattr(scaled, field) == pytest.approx(getattr(base, field), rel=1e-9)


def test_row_permutation_equivariance(gaussian_12x8):
    rng = np.random.default_rng(4)
    perm = rng.permutation(12)
    M = gaussian_12x8.matrix
    P = make_partition('interleaved', 12, 3)
    inverse = np.argsort(perm)
    Q = Partition(tuple(inverse[b] for b in P.blocks), 'custom', 12)
    base, permuted = sa_factor(M, P), sa_factor(M[perm], Q)
    for field in ('L_f', 'L_b', 'upsilon', 'mu_ell', 'alpha_ell', 'alpha_u', 'alpha_s', 'beta'):
        assert getattr(permuted, field) == pytest.approx(getattr(base, field), rel=1e-9)


@pytest.mark.parametrize('delta,expected', [(15, 1.16e5), (17, 1.85e6), (25, 3.51e11)])
def test_max_dim_for_delta(delta, expected):
    assert max_dim_for_delta(delta, 0.9) == pytest.approx(expected, rel=0.01)


def test_max_dim_monotone_and_checked():
    values = [max_dim_for_delta(delta, 0.9) for delta in (5, 10, 15, 20, 25)]
    assert all(a < b for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        max_dim_for_delta(2., 0.9)
    with pytest.raises(ValueError):
        max_dim_for_delta(15., 1.)


def test_random_partition_probability():
    assert random_partition_probability(32, 15.) == pytest.approx(1., abs=1e-6)
    assert random_partition_probability(10 ** 6, 15.) == 0.
    d = max_dim_for_delta(15., 0.9)
    assert random_partition_probability(d, 15.) == pytest.approx(0.9, rel=1e-9)


def test_alpha_r_limit(gaussian_12x8):
    M = gaussian_12x8.matrix
    limit = spectral_norm_sq(M) / (15. * l1to2_norm_sq(M))
    assert bound_alpha_r(M, 10 ** 9, 15.) == pytest.approx(limit, rel=1e-6)
    assert bound_alpha_sigma(M, 4, 15.) == pytest.approx(bound_alpha_r(M, 4, 15.), rel=1e-10)
    with pytest.raises(ValueError):
        bound_alpha_r(M, 4, 0.)


def test_report_carries_certified_and_heuristic(gaussian_12x8):
    report = sa_factor(gaussian_12x8, make_partition('interleaved', 12, 4))
    assert report.certified.delta == 15.
    assert report.heuristic.delta == 2.
    assert report.heuristic.alpha_r > report.certified.alpha_r
    assert report.certified.in_window == in_validity_window(gaussian_12x8, 4)
    assert len(report.to_row()) == 14


def test_expected_sa_full_batch(gaussian_12x8):
    report = expected_sa_with_replacement(gaussian_12x8, 12)
    assert report.upsilon_e_lower == pytest.approx(2.)
    assert report.L_e_bound == pytest.approx(report.L_f * 11 / (12 * 11))
    assert report.delta_free


def test_expected_sa_identity_single_row(identity8):
    report = expected_sa_with_replacement(identity8, 1)
    assert report.upsilon_e_lower == pytest.approx(1. / (7. / 14.))
    assert report.L_e_bound == pytest.approx(1.)
    assert report.upsilon_e_plugin == pytest.approx(8. / 2. * (1. / 8.) / 1.)


def test_expected_sa_identical_rows(identical_rows12):
    n = 12
    report = expected_sa_with_replacement(identical_rows12, 1)
    ratio = 1. / n
    assert report.upsilon_e_lower == pytest.approx(1. / ((n - 1) / (2 * (n - 1)) * ratio))
    with pytest.raises(ValueError):
        expected_sa_with_replacement(identical_rows12, 13)


def test_expected_sa_curve_order(gaussian_12x8):
    reports = expected_sa_curve(gaussian_12x8, [1, 3, 6, 12])
    assert [r.m for r in reports] == [1, 3, 6, 12]
    assert all(r.upsilon_e_lower >= 0 for r in reports)


def test_sa_curve_closed_forms(identical_rows12, identity8):
    assert [r.upsilon for r in sa_curve(identical_rows12, 'interleaved', [1, 2, 3, 4, 6, 12])] \
        == pytest.approx([1, 2, 3, 4, 6, 12], rel=1e-12)
    assert [r.upsilon for r in sa_curve(identity8, 'consecutive', [1, 2, 4, 8])] \
        == pytest.approx([1., 1., 1., 1.], rel=1e-12)
    with pytest.raises(ValueError):
        sa_curve(identity8, 'interleaved', [9])
    with pytest.raises(ValueError):
        sa_curve(identity8, 'interleaved', [])


def test_restricted_strong_convexity():
    A = np.diag([3., 2., 1.])
    assert restricted_strong_convexity(A) == pytest.approx(1. / 3)
    assert restricted_strong_convexity(np.ones((2, 3))) == 0.


def test_envelopes_and_iteration_counts():
    assert np.allclose(pgd_envelope(1., 4., 2., [0, 1, 2]), [2., 1.5, 1.125])
    assert np.allclose(sgd_envelope(1., 4., 2., [0, 2]), [2., 1.5])
    counts = iteration_counts(L_f=1., L_e=2., mu_c=0.5, err0=1., eps=math.exp(-1.), n=10, m=2)
    assert counts.full == pytest.approx(2.)
    assert counts.stochastic == pytest.approx(8.)
    assert counts.datapass_ratio == pytest.approx(5 * 2. / 8.)


def test_heuristic_bound_has_no_probability(gaussian_12x8):
    report = sa_factor(gaussian_12x8, make_partition('interleaved', 12, 4))
    assert report.heuristic.probability == 0.
    assert report.certified.probability > 0.9


def test_alpha_r_holds_on_random_partitions():
    A = build_random_ensemble('gaussian', 32, 32, seed=5).matrix
    summary = summarize_operator(A)
    K = min(32, math.ceil(summary.norm_sq / summary.l1to2_sq))
    assert in_validity_window(A, K, summary=summary)
    alpha_r = bound_alpha_r(A, K, 15., summary=summary)
    hits = sum(sa_factor(A, make_partition('random', 32, K, seed=seed), summary=summary).upsilon
               >= alpha_r for seed in range(200))
    assert hits >= 198
