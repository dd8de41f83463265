"""q-deformed special functions, q-distributions and their samplers.

Conventions: 0 <= q < 1 everywhere.  Infinite products and series truncate
adaptively once the certified geometric tail drops below ~1e-16 relative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    DivergentArgument,
    IndexOutOfRange,
    InvalidRegime,
    PoleAtNegativeIndex,
    PoleAtZeta,
)

_EPS = 1e-16
_TINY = 1e-300


def qpoch(z, q: float, n=None):
    """q-Pochhammer symbol (z;q)_n; n=None (or inf) means the infinite product.

    Supports scalar or ndarray z.  Negative n uses the reciprocal product
    1/[(1-z q^-1)...(1-z q^n)] and raises PoleAtNegativeIndex on a vanishing
    factor.
    """
    if n is None or (isinstance(n, float) and math.isinf(n)):
        return qpoch_inf(z, q)
    n = int(n)
    z = np.asarray(z)
    scalar = z.ndim == 0
    out = np.ones_like(np.asarray(z, dtype=np.result_type(z, 1.0)))
    if n > 0:
        for k in range(n):
            out = out * (1.0 - z * q**k)
    elif n < 0:
        for k in range(1, -n + 1):
            if q == 0.0:
                raise PoleAtNegativeIndex("q=0 makes negative-order factors singular")
            fac = 1.0 - z * q ** (-k)
            if np.any(np.abs(fac) < 1e-14):
                raise PoleAtNegativeIndex(f"factor 1 - z q^-{k} vanishes")
            out = out / fac
    return out.item() if scalar else out


def qpoch_inf(z, q: float):
    """(z;q)_inf, truncated once |z| q^N falls below machine tail tolerance."""
    if not 0.0 <= q < 1.0:
        raise DivergentArgument("infinite q-Pochhammer needs 0 <= q < 1")
    z = np.asarray(z)
    scalar = z.ndim == 0
    out = np.ones_like(np.asarray(z, dtype=np.result_type(z, 1.0)))
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    if zmax == 0.0:
        return out.item() if scalar else out
    qk = 1.0
    k = 0
    while zmax * qk > 1e-18:
        out = out * (1.0 - z * qk)
        qk *= q
        k += 1
        if q == 0.0:
            break
        if k > 100000:  # pragma: no cover - q extremely close to 1
            raise DivergentArgument("q too close to 1 for product truncation")
    return out.item() if scalar else out


def log_qpoch_inf(z, q: float):
    """log (z;q)_inf with the principal branch per factor (no factor on cut)."""
    z = np.asarray(z)
    scalar = z.ndim == 0
    out = np.zeros_like(np.asarray(z, dtype=np.result_type(z, 1.0j)))
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    qk, k = 1.0, 0
    while zmax * qk > 1e-18 and zmax > 0:
        out = out + np.log(1.0 - z * qk)
        qk *= q
        k += 1
        if q == 0.0:
            break
    return out.item() if scalar else out


def qbinom(n: int, k: int, q: float) -> float:
    """Gaussian binomial coefficient [n choose k]_q."""
    if not 0 <= k <= n:
        raise IndexOutOfRange(f"need 0 <= k <= n, got n={n}, k={k}")
    # product form avoids (q;q)_n cancellation at q=0
    out = 1.0
    for j in range(1, k + 1):
        out *= (1.0 - q ** (n - k + j)) / (1.0 - q**j)
    return out


def qhyp_reg_4phi3(n: int, a, b, q: float, z):
    """Regularized terminating 4-phi-3 sum with n+1 terms.

    sum_{k=0}^n z^k (q^-n;q)_k/(q;q)_k prod_j (a_j;q)_k (q^k b_j;q)_{n-k};
    entire in all parameters since no Pochhammer sits in a denominator.
    """
    if n < 0:
        raise IndexOutOfRange("terminating order n must be >= 0")
    a = [complex(v) for v in a]
    b = [complex(v) for v in b]
    total = 0.0 + 0.0j
    for k in range(n + 1):
        # (q^-n;q)_k / (q;q)_k = (-1)^k q^{k(k-1)/2 - nk} [n choose k]_q
        coeff = (-1) ** k * q ** (k * (k - 1) // 2 - n * k) * qbinom(n, k, q)
        term = coeff * complex(z) ** k
        for aj in a:
            term *= qpoch(aj, q, k)
        for bj in b:
            term *= qpoch(bj * q**k, q, n - k)
        total += term
    return total


def qpolygamma(k: int, z: float, q: float) -> float:
    """psi_k(z) = sum_{m>=1} m^k z^m / (1-q^m), for |z| < 1."""
    if k < 0:
        raise IndexOutOfRange("polygamma order must be >= 0")
    if abs(z) >= 1.0:
        raise DivergentArgument(f"qpolygamma series needs |z| < 1, got {z}")
    if z == 0.0:
        return 0.0
    acc = 0.0
    m = 1
    zm = z
    while True:
        term = (m**k) * zm / (1.0 - q**m)
        acc += term
        # geometric envelope once m^k growth is dominated by |z|^m decay
        if abs(term) < _EPS * (abs(acc) + _TINY) and m > k + 4:
            break
        m += 1
        zm *= z
        if m > 400000:  # pragma: no cover
            raise DivergentArgument("qpolygamma truncation failed")
    return acc


def psi0_continued(z, q: float):
    """Meromorphic continuation psi_0(z) = sum_j z q^j/(1 - z q^j).

    Agrees with qpolygamma(0, z, q) for |z| < 1 and extends to any complex z
    off the pole lattice {q^-j}.
    """
    z = np.asarray(z)
    scalar = z.ndim == 0
    out = np.zeros_like(np.asarray(z, dtype=np.result_type(z, 1.0)))
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    qj, j = 1.0, 0
    while zmax * qj > 1e-18 and zmax > 0:
        w = z * qj
        out = out + w / (1.0 - w)
        qj *= q
        j += 1
        if q == 0.0:
            break
    return out.item() if scalar else out


@dataclass(frozen=True)
class QNBParams:
    """Parameters of the two-parameter q-negative binomial law qNB(b, p).

    Standard regime: 0 <= p < 1, 0 <= b < 1 (support Z>=0).
    Terminating regime: p < 0 and b = q^-K for a positive integer K
    (support {0..K}).
    """

    b: float
    p: float
    K: int | None = None  # set in the terminating regime, b = q^-K

    def regime(self, q: float) -> str:
        if self.K is not None:
            if self.p >= 0 or self.K < 1:
                raise InvalidRegime("terminating regime needs p < 0 and K >= 1")
            if abs(self.b * q**self.K - 1.0) > 1e-12:
                raise InvalidRegime("terminating regime needs b = q^-K exactly")
            return "terminating"
        if 0.0 <= self.p < 1.0 and 0.0 <= self.b < 1.0:
            return "standard"
        raise InvalidRegime(f"qNB parameters out of range: b={self.b}, p={self.p}")


def pmf_qnb(n: int, params: QNBParams, q: float) -> float:
    """P(X=n) = p^n (b;q)_n/(q;q)_n * (p;q)_inf/(pb;q)_inf; 0 off support."""
    regime = params.regime(q)
    if n < 0:
        return 0.0
    if regime == "terminating" and n > params.K:
        return 0.0
    b, p = params.b, params.p
    out = qpoch_inf(p, q) / qpoch_inf(p * b, q)
    for j in range(n):
        # accumulate p^n (b;q)_n/(q;q)_n factor by factor to avoid overflow
        out *= p * (1.0 - b * q**j) / (1.0 - q ** (j + 1))
    return float(out)


@lru_cache(maxsize=256)
def _qnb_cdf_table(b: float, p: float, K: int | None, q: float):
    """Cumulative table up to mass 1 - 1e-14 (cached; keyed by parameters)."""
    params = QNBParams(b, p, K)
    pmf = []
    total = 0.0
    n = 0
    while total < 1.0 - 1e-14:
        val = pmf_qnb(n, params, q)
        pmf.append(val)
        total += val
        n += 1
        if K is not None and n > K:
            break
        if n > 100000:  # pragma: no cover
            raise InvalidRegime("qNB mass accumulation failed; check parameters")
    return np.cumsum(np.array(pmf)), np.array(pmf)


def qnb_cdf(params: QNBParams, q: float) -> np.ndarray:
    cdf, _ = _qnb_cdf_table(params.b, params.p, params.K, q)
    return cdf


def qnb_pmf_table(params: QNBParams, q: float) -> np.ndarray:
    _, pmf = _qnb_cdf_table(params.b, params.p, params.K, q)
    return pmf


def qnb_mean(params: QNBParams, q: float) -> float:
    """E[X] = psi_0(p) - psi_0(p b) (finite sum over the pmf in both regimes)."""
    pmf = qnb_pmf_table(params, q)
    return float(np.dot(np.arange(len(pmf)), pmf))


def sample_qnb(params: QNBParams, q: float, rng: np.random.Generator, size=None):
    """Draw from qNB(b,p): inverse CDF (standard) or Bernoulli sum (terminating)."""
    regime = params.regime(q)
    if regime == "terminating":
        # b = q^-J, p = -q^J rho: sum of J Bernoullis of mean q^{i-1}rho/(1+q^{i-1}rho)
        J = params.K
        rho = -params.p * params.b  # = -p q^-J
        n = 1 if size is None else int(np.prod(size))
        u = rng.random((J, n))
        means = np.array([q**i * rho / (1.0 + q**i * rho) for i in range(J)])
        out = (u < means[:, None]).sum(axis=0)
        return int(out[0]) if size is None else out.reshape(size)
    cdf = qnb_cdf(params, q)
    u = rng.random(size if size is not None else 1)
    out = np.searchsorted(cdf, u, side="right")
    # beyond-table mass is < 1e-14; clamp rather than walk the tail recursion
    out = np.minimum(out, len(cdf) - 1)
    return int(out[0]) if size is None else out


def sample_qnb_from_uniforms(params: QNBParams, q: float, u: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF sampling from precomputed uniforms."""
    cdf = qnb_cdf(params, q)
    out = np.searchsorted(cdf, u, side="right")
    return np.minimum(out, len(cdf) - 1)


def sample_qpoi(p: float, q: float, rng: np.random.Generator, size=None):
    """q-Poisson(p) = qNB(0, p)."""
    if p == 0.0:
        return 0 if size is None else np.zeros(size, dtype=int)
    return sample_qnb(QNBParams(0.0, p), q, rng, size)


def qlaplace_weight(n: int, zeta, q: float):
    """1/(zeta q^n; q)_inf, the q-Laplace kernel weight."""
    return qlaplace_weight_vec(np.asarray(n), zeta, q).item()


def qlaplace_weight_vec(n, zeta, q: float):
    """Vectorized 1/(zeta q^n;q)_inf; log-space product for negative real
    zeta (every factor exceeds 1, so the direct product overflows early)."""
    n = np.asarray(n)
    if np.isrealobj(np.asarray(zeta)) and np.real(zeta) <= 0.0:
        amp = -float(np.real(zeta))
        with np.errstate(over="ignore"):
            base = amp * np.exp(n.astype(float) * (math.log(q) if q > 0 else -745.0))
        logs = np.where(np.isfinite(base), 0.0, np.inf)
        base = np.where(np.isfinite(base), base, 0.0)
        qk = 1.0
        for _ in range(100000):
            term = base * qk
            if term.size == 0 or np.max(term) < 1e-18:
                break
            logs = logs + np.log1p(term)
            qk *= q
            if q == 0.0:
                break
        with np.errstate(over="ignore"):
            return np.exp(-logs)
    denom = qpoch_inf(zeta * np.power(q + 0j, n.astype(float)), q)
    if np.min(np.abs(np.asarray(denom))) < 1e-140:
        raise PoleAtZeta(f"zeta={zeta} lies on (or too close to) q^Z")
    return 1.0 / denom


def a_k(k: int, d: float, u: float, J: int, q: float) -> float:
    """a_k(d) = psi_k(q^J u d) - psi_k(u d); spectral-side scaling function."""
    for arg in (q**J * u * d, u * d):
        if abs(arg) >= 1.0:
            raise DivergentArgument(f"a_k argument {arg} outside (-1,1)")
    return qpolygamma(k, q**J * u * d, q) - qpolygamma(k, u * d, q)


def h_k(k: int, d: float, xi, s, q: float) -> float:
    """h_k(d) = (1/x) sum_{y=2}^x [psi_k(d/(xi_y s_y)) - psi_k(d s_y/xi_y)].

    xi, s are the site sequences for sites 2..x; the 1/x normalization uses
    x = len(xi) + 1 to match the height-column convention.
    """
    xi = np.asarray(xi, dtype=float)
    s = np.asarray(s, dtype=float)
    if xi.shape != s.shape:
        raise IndexOutOfRange("xi and s slices must have equal length")
    x = len(xi) + 1
    acc = 0.0
    for xy, sy in zip(xi, s):
        for arg in (d / (xy * sy), d * sy / xy):
            if abs(arg) >= 1.0:
                raise DivergentArgument(f"h_k argument {arg} outside (-1,1)")
        acc += qpolygamma(k, d / (xy * sy), q) - qpolygamma(k, d * sy / xy, q)
    return acc / x
