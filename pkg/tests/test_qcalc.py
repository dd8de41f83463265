"""Tests for q-special functions: frozen values, identities, sampler laws."""

import math

import mpmath as mp
import numpy as np
import pytest

from hs6v import qcalc
from hs6v.errors import (
    DivergentArgument,
    IndexOutOfRange,
    InvalidRegime,
    PoleAtNegativeIndex,
)

RNG = np.random.default_rng(20240817)


# ---------------------------------------------------------------- qpoch


def test_qpoch_empty_product():
    assert qcalc.qpoch(0.7, 0.3, 0) == 1.0


def test_qpoch_direct_product():
    # (1-0.5)(1-0.25)
    assert qcalc.qpoch(0.5, 0.5, 2) == pytest.approx(0.375, abs=1e-15)


def test_qpoch_negative_order():
    # 1/(1 - 0.25/0.5)
    assert qcalc.qpoch(0.25, 0.5, -1) == pytest.approx(2.0, abs=1e-15)


def test_qpoch_negative_order_pole():
    with pytest.raises(PoleAtNegativeIndex):
        qcalc.qpoch(0.5, 0.5, -1)


def test_qpoch_functional_equation():
    # (z;q)_{m+n} = (z;q)_m (z q^m;q)_n
    for _ in range(25):
        z = complex(RNG.uniform(-0.9, 0.9), RNG.uniform(-0.5, 0.5))
        q = RNG.uniform(0.0, 0.95)
        m, n = RNG.integers(0, 6, size=2)
        lhs = qcalc.qpoch(z, q, m + n)
        rhs = qcalc.qpoch(z, q, m) * qcalc.qpoch(z * q**m, q, n)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)


def test_qpoch_inf_vs_mpmath():
    for _ in range(10):
        z = RNG.uniform(-0.9, 0.9)
        q = RNG.uniform(0.0, 0.9)
        ours = qcalc.qpoch_inf(z, q)
        ref = float(mp.qp(z, q))
        assert ours == pytest.approx(ref, rel=1e-12)


def test_qpoch_inf_vectorized_matches_scalar():
    z = np.array([0.1 + 0.2j, -0.5, 0.97])
    q = 0.6
    vec = qcalc.qpoch_inf(z, q)
    for i, zi in enumerate(z):
        assert vec[i] == pytest.approx(qcalc.qpoch_inf(complex(zi), q), rel=1e-13)


# ---------------------------------------------------------------- qbinom


def test_qbinom_trivial_edges():
    assert qcalc.qbinom(3, 0, 0.4) == 1.0
    assert qcalc.qbinom(4, 2, 0.0) == 1.0


def test_qbinom_value():
    # (1-q^2)/(1-q) = 1+q
    assert qcalc.qbinom(2, 1, 0.5) == pytest.approx(1.5, abs=1e-15)


def test_qbinom_symmetry():
    for _ in range(20):
        q = RNG.uniform(0, 0.95)
        n = int(RNG.integers(0, 10))
        k = int(RNG.integers(0, n + 1))
        assert qcalc.qbinom(n, k, q) == pytest.approx(qcalc.qbinom(n, n - k, q), rel=1e-13)


def test_qbinom_range_error():
    with pytest.raises(IndexOutOfRange):
        qcalc.qbinom(3, 5, 0.5)


# ---------------------------------------------------------------- 4phi3


def test_4phi3_order_zero_is_one():
    val = qcalc.qhyp_reg_4phi3(0, (0.2, 0.3, 0.4), (0.5, 0.6, 0.7), 0.5, 1.0)
    assert val == pytest.approx(1.0, abs=1e-15)


def test_4phi3_z_zero_keeps_first_term():
    a, b, q, n = (0.2, 0.3, 0.4), (0.5, 0.6, 0.7), 0.5, 3
    val = qcalc.qhyp_reg_4phi3(n, a, b, q, 0.0)
    expect = np.prod([complex(qcalc.qpoch(bj, q, n)) for bj in b])
    assert val == pytest.approx(expect, rel=1e-13)


def test_4phi3_against_mpmath_termwise():
    a, b, q, z, n = (0.2, 0.3, 0.4), (0.5, 0.6, 0.7), 0.5, 1.0, 1
    with mp.workdps(40):
        total = mp.mpf(0)
        for k in range(n + 1):
            term = mp.qp(q**-n, q, k) / mp.qp(q, q, k) * mp.mpf(z) ** k
            for aj in a:
                term *= mp.qp(aj, q, k)
            for bj in b:
                term *= mp.qp(bj * q**k, q, n - k)
            total += term
        ref = float(total)
    ours = qcalc.qhyp_reg_4phi3(n, a, b, q, z)
    assert ours == pytest.approx(ref, rel=1e-12)


# ---------------------------------------------------------------- polygamma


def test_qpolygamma_zero_argument():
    for k in range(4):
        assert qcalc.qpolygamma(k, 0.0, 0.3) == 0.0


def test_qpolygamma_geometric_limit():
    # q=0: psi_0(z) = z/(1-z)
    assert qcalc.qpolygamma(0, 0.5, 0.0) == pytest.approx(1.0, abs=1e-14)


def test_qpolygamma_brute_force_oracle():
    q, z, k = 0.2, 0.3, 1
    with mp.workdps(40):
        ref = float(mp.nsum(lambda m: m**k * mp.mpf(z) ** m / (1 - mp.mpf(q) ** m), [1, mp.inf]))
    assert qcalc.qpolygamma(k, z, q) == pytest.approx(ref, rel=1e-13)


def test_qpolygamma_derivative_relation():
    # psi_{k+1}(z) = z d/dz psi_k(z), central differences
    q, z = 0.35, 0.4
    h = 1e-6
    for k in range(3):
        dk = (qcalc.qpolygamma(k, z + h, q) - qcalc.qpolygamma(k, z - h, q)) / (2 * h)
        assert z * dk == pytest.approx(qcalc.qpolygamma(k + 1, z, q), rel=1e-7)


def test_qpolygamma_divergence_guard():
    with pytest.raises(DivergentArgument):
        qcalc.qpolygamma(0, 1.0, 0.3)


def test_psi0_continued_matches_series_and_extends():
    q = 0.4
    assert qcalc.psi0_continued(0.3, q) == pytest.approx(qcalc.qpolygamma(0, 0.3, q), rel=1e-13)
    # outside the unit disk the partial-fraction form still converges
    val = qcalc.psi0_continued(-2.0, q)
    ref = sum(-2.0 * q**j / (1 + 2.0 * q**j) for j in range(200))
    assert val == pytest.approx(ref, rel=1e-13)


# ---------------------------------------------------------------- identities


def test_q_binomial_theorem():
    # sum_k (a;q)_k/(q;q)_k z^k = (za;q)_inf/(z;q)_inf
    for _ in range(20):
        a = RNG.uniform(-0.9, 0.9)
        z = RNG.uniform(-0.85, 0.85)
        q = RNG.uniform(0.0, 0.9)
        acc, term_scale = 0.0, 1.0
        k = 0
        while True:
            term = qcalc.qpoch(a, q, k) / qcalc.qpoch(q, q, k) * z**k
            acc += term
            if abs(term) < 1e-16 and k > 5:
                break
            k += 1
            assert k < 4000
        rhs = qcalc.qpoch_inf(z * a, q) / qcalc.qpoch_inf(z, q)
        assert acc == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def _qgauss_lhs(a, b, c, q, nmax=4000):
    acc = 0.0
    for n in range(nmax):
        term = (c / (a * b)) ** n * qcalc.qpoch(a, q, n) * qcalc.qpoch(b, q, n)
        term /= qcalc.qpoch(c, q, n) * qcalc.qpoch(q, q, n)
        acc += term
        if abs(term) < 1e-17 and n > 8:
            return acc
    return acc


def test_q_gauss_summation_standard_branch():
    # |c/(ab)| < 1 branch
    for _ in range(20):
        q = RNG.uniform(0.0, 0.85)
        a = RNG.uniform(0.3, 0.9)
        b = RNG.uniform(0.3, 0.9)
        c = RNG.uniform(0.0, 0.8) * a * b
        lhs = _qgauss_lhs(a, b, c, q)
        rhs = (qcalc.qpoch_inf(c / a, q) * qcalc.qpoch_inf(c / b, q)) / (
            qcalc.qpoch_inf(c, q) * qcalc.qpoch_inf(c / (a * b), q)
        )
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_q_gauss_summation_terminating_branch():
    # b = q^-n branch: finite sum, no ratio constraint
    for _ in range(20):
        q = RNG.uniform(0.05, 0.8)
        n = int(RNG.integers(1, 6))
        b = q ** (-n)
        a = RNG.uniform(0.2, 0.9)
        c = RNG.uniform(1.2, 3.0) * a * b  # outside the |c/ab|<1 ball
        lhs = sum(
            (c / (a * b)) ** k
            * qcalc.qpoch(a, q, k)
            * qcalc.qpoch(b, q, k)
            / (qcalc.qpoch(c, q, k) * qcalc.qpoch(q, q, k))
            for k in range(n + 1)
        )
        rhs = (qcalc.qpoch_inf(c / a, q) * qcalc.qpoch_inf(c / b, q)) / (
            qcalc.qpoch_inf(c, q) * qcalc.qpoch_inf(c / (a * b), q)
        )
        assert lhs == pytest.approx(rhs, rel=1e-10)


def _poch_frac(z, q, n):
    from fractions import Fraction

    out = Fraction(1)
    for j in range(n):
        out *= 1 - z * q**j
    return out


def test_q_chu_vandermonde_exact():
    # 2phibar1(q^-n, a; c | q, q) = a^n (c/a;q)_n; the alternating terms grow
    # like q^{-n(n-1)/2}, so the n <= 8 identity is checked in exact rationals
    from fractions import Fraction

    for _ in range(20):
        q = Fraction(int(RNG.integers(1, 9)), 10)
        n = int(RNG.integers(0, 9))
        a = Fraction(int(RNG.integers(1, 19)) - 9 or 1, 10)
        c = Fraction(int(RNG.integers(1, 19)) - 9 or 1, 10)
        lhs = Fraction(0)
        for k in range(n + 1):
            qbin = _poch_frac(q, q, n) / (_poch_frac(q, q, k) * _poch_frac(q, q, n - k))
            coeff = (-1) ** k * q ** (k * (k - 1) // 2) / q ** (n * k) * qbin
            lhs += coeff * q**k * _poch_frac(a, q, k) * _poch_frac(c * q**k, q, n - k)
        rhs = a**n * _poch_frac(c / a, q, n)
        assert lhs == rhs  # identically, no tolerance needed


def test_q_chu_vandermonde_float_path_small_n():
    # double-precision evaluation agrees with the closed form while the
    # alternating coefficients stay moderate
    for _ in range(20):
        q = RNG.uniform(0.3, 0.9)
        n = int(RNG.integers(0, 5))
        a = RNG.uniform(0.2, 0.9)
        c = RNG.uniform(-0.8, 0.9)
        lhs = 0.0
        for k in range(n + 1):
            coeff = (-1) ** k * q ** (k * (k - 1) // 2 - n * k) * qcalc.qbinom(n, k, q)
            lhs += coeff * q**k * qcalc.qpoch(a, q, k) * qcalc.qpoch(c * q**k, q, n - k)
        rhs = a**n * qcalc.qpoch(c / a, q, n)
        scale = max(1.0, q ** (-n * (n - 1) / 2))
        assert abs(lhs - rhs) < 1e-12 * scale


# ---------------------------------------------------------------- qNB law


def test_pmf_qnb_normalization_standard():
    for _ in range(10):
        q = RNG.uniform(0.0, 0.85)
        b = RNG.uniform(0.0, 0.9)
        p = RNG.uniform(0.0, 0.9)
        pmf = qcalc.qnb_pmf_table(qcalc.QNBParams(b, p), q)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-10)
        assert (pmf >= 0).all()


def test_pmf_qnb_normalization_terminating():
    for _ in range(10):
        q = RNG.uniform(0.1, 0.8)
        K = int(RNG.integers(1, 6))
        rho = RNG.uniform(0.1, 2.0)
        params = qcalc.QNBParams(q**-K, -(q**K) * rho, K)
        pmf = np.array([qcalc.pmf_qnb(n, params, q) for n in range(K + 3)])
        assert pmf.sum() == pytest.approx(1.0, abs=1e-10)
        assert pmf[K + 1] == 0.0 and pmf[K + 2] == 0.0


def test_pmf_qnb_q0_closed_form():
    # q=0, b=0.2, p=0.5: P(0) = (1-p)/(1-pb)
    params = qcalc.QNBParams(0.2, 0.5)
    assert qcalc.pmf_qnb(0, params, 0.0) == pytest.approx(0.5 / 0.9, rel=1e-14)


def test_pmf_qnb_p0_from_qpoch():
    # b=0: P(0) = (p;q)_inf
    q, p = 0.5, 0.4
    assert qcalc.pmf_qnb(0, qcalc.QNBParams(0.0, p), q) == pytest.approx(
        qcalc.qpoch_inf(p, q), rel=1e-13
    )


def test_pmf_qnb_out_of_support_is_zero():
    assert qcalc.pmf_qnb(-3, qcalc.QNBParams(0.2, 0.5), 0.3) == 0.0


def test_qnb_invalid_regime():
    with pytest.raises(InvalidRegime):
        qcalc.pmf_qnb(1, qcalc.QNBParams(0.5, -0.2), 0.3)


def test_qnb_mean_matches_polygamma_difference():
    q, b, p = 0.3, 0.4, 0.5
    mean = qcalc.qnb_mean(qcalc.QNBParams(b, p), q)
    ref = qcalc.qpolygamma(0, p, q) - qcalc.qpolygamma(0, p * b, q)
    assert mean == pytest.approx(ref, rel=1e-10)


# ---------------------------------------------------------------- samplers


def test_sample_qnb_p_zero_degenerate():
    rng = np.random.default_rng(1)
    assert qcalc.sample_qnb(qcalc.QNBParams(0.3, 0.0), 0.4, rng) == 0


def test_sample_qnb_empirical_pmf():
    q, b, p = 0.4, 0.3, 0.55
    params = qcalc.QNBParams(b, p)
    rng = np.random.default_rng(7)
    n_draw = 200_000
    draws = qcalc.sample_qnb(params, q, rng, size=n_draw)
    pmf = qcalc.qnb_pmf_table(params, q)
    for n in range(10):
        phat = np.mean(draws == n)
        sigma = math.sqrt(pmf[n] * (1 - pmf[n]) / n_draw)
        assert abs(phat - pmf[n]) < 4 * sigma + 1e-12


def test_sample_qnb_terminating_bernoulli():
    # J=1, rho=1: Bernoulli(1/2)
    q = 0.5
    params = qcalc.QNBParams(1 / q, -q * 1.0, 1)
    rng = np.random.default_rng(11)
    draws = qcalc.sample_qnb(params, q, rng, size=100_000)
    assert set(np.unique(draws)) <= {0, 1}
    assert abs(draws.mean() - 0.5) < 4 * 0.5 / math.sqrt(100_000)


def test_sample_qpoi_zero_probability_and_mean():
    q, p = 0.35, 0.5
    rng = np.random.default_rng(3)
    draws = qcalc.sample_qpoi(p, q, rng, size=150_000)
    pmf = qcalc.qnb_pmf_table(qcalc.QNBParams(0.0, p), q)
    mean_ref = float(np.dot(np.arange(len(pmf)), pmf))
    p0_ref = qcalc.qpoch_inf(p, q)
    sd = math.sqrt(np.dot(np.arange(len(pmf)) ** 2, pmf) - mean_ref**2)
    assert abs(draws.mean() - mean_ref) < 4 * sd / math.sqrt(len(draws))
    p0_sigma = math.sqrt(p0_ref * (1 - p0_ref) / len(draws))
    assert abs(np.mean(draws == 0) - p0_ref) < 4 * p0_sigma


# ---------------------------------------------------------------- q-Laplace


def test_qlaplace_weight_trivials():
    assert qcalc.qlaplace_weight(0, 0.0, 0.5) == 1.0
    # n -> +inf sends the argument to zero
    assert qcalc.qlaplace_weight(400, -1.0, 0.5) == pytest.approx(1.0, abs=1e-15)


def test_qlaplace_weight_from_qpoch():
    q = 0.5
    assert qcalc.qlaplace_weight(0, -1.0, q) == pytest.approx(
        1.0 / qcalc.qpoch_inf(-1.0, q), rel=1e-13
    )


# ---------------------------------------------------------------- a_k / h_k


def test_ak_hk_vanish_at_zero_density():
    assert qcalc.a_k(1, 0.0, -1.0, 2, 0.3) == 0.0
    assert qcalc.h_k(1, 0.0, [1.0, 1.0], [0.5, 0.5], 0.3) == 0.0


def test_hk_homogeneous_site_independence():
    q, d = 0.25, 0.2
    v1 = qcalc.h_k(1, d, [1.0] * 3, [0.5] * 3, q) * 4
    v2 = qcalc.h_k(1, d, [1.0] * 7, [0.5] * 7, q) * 8
    # per-site summand identical: totals scale with the site count
    assert v1 / 3 == pytest.approx(v2 / 7, rel=1e-12)


def test_a1_explicit_sum():
    q, d, u, J = 0.3, 0.4, -1.2, 3
    explicit = -sum(d * u * q**j / (1 - d * u * q**j) ** 2 for j in range(J))
    assert qcalc.a_k(1, d, u, J, q) == pytest.approx(explicit, abs=1e-12)


def test_ak_divergence_guard():
    with pytest.raises(DivergentArgument):
        qcalc.a_k(1, 0.9, -1.2, 1, 0.3)
