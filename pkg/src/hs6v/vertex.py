"""Vertex weights (unfused and fused), transfer updates and height observables.

Weight conventions: the single-row weight family is L_{u,s} where u stands for
the product (inhomogeneity * spectral) = xi_x u_t, matching the lattice usage
L_{xi_x u_t, s_x}.  The fused family L^(J)_{u,s} takes q^J either as an exact
integer power (stochastic sampling) or as a free scalar (analytic
continuation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import qcalc
from .errors import (
    ConservationViolation,
    OutOfWindow,
    PochhammerPole,
    RegimeViolation,
    ScaleExceeded,
    WindowOverflow,
)

_NEG_CLAMP = -1e-12


@dataclass(frozen=True)
class ModelParams:
    """All constants of the model.

    xi, s hold the site parameters for columns x = 2, 3, ... (index 0 is
    column 2); u holds the row spectral parameters for t = 1, 2, ...
    (index 0 is row 1).  J is the row-fusion level; mu_hat optionally
    replaces q^J for analytic continuation in the kernel formulas.
    """

    q: float
    xi: tuple
    s: tuple
    u: tuple
    J: int = 1
    mu_hat: float | None = None
    v: float = 0.0
    d: float = 0.0
    wp: float = 0.0

    @staticmethod
    def homogeneous(q, xi, s, u, n_sites, n_rows, J=1, v=0.0, d=0.0, wp=0.0,
                    mu_hat=None):
        return ModelParams(q, (xi,) * n_sites, (s,) * n_sites, (u,) * n_rows,
                           J, mu_hat, v, d, wp)

    @property
    def qJ(self) -> float:
        return self.mu_hat if self.mu_hat is not None else self.q**self.J

    def xi_s(self) -> np.ndarray:
        return np.array(self.xi) * np.array(self.s)

    def xi_over_s(self) -> np.ndarray:
        return np.array(self.xi) / np.array(self.s)

    def site(self, x: int) -> tuple[float, float]:
        """(xi_x, s_x) for a lattice column x >= 2."""
        return self.xi[x - 2], self.s[x - 2]

    def row_u(self, t: int) -> float:
        return self.u[t - 1]

    def check_basic(self):
        if not 0.0 <= self.q < 1.0:
            raise RegimeViolation(f"need 0 <= q < 1, got {self.q}")
        if any(not 0.0 <= sx < 1.0 for sx in self.s):
            raise RegimeViolation("need 0 <= s_x < 1 for all sites")
        if any(xx <= 0.0 for xx in self.xi):
            raise RegimeViolation("need xi_x > 0 for all sites")
        if any(ut >= 0.0 for ut in self.u):
            raise RegimeViolation("need u_t < 0 for all rows")

    def check_placements(self):
        """Spacing needed by the determinant formulas."""
        xs = self.xi_s()
        xos = self.xi_over_s()
        if not (self.q * xs.max() < self.d < xs.min() <= xs.max() < xos.min()):
            raise RegimeViolation(
                "need q*sup(xi s) < d < inf(xi s) <= sup(xi s) < inf(xi/s); got "
                f"q*sup={self.q * xs.max():.4g}, d={self.d}, inf={xs.min():.4g}, "
                f"sup={xs.max():.4g}, inf(xi/s)={xos.min():.4g}")

    def check_boundary_regime(self):
        if self.wp == 0.0:
            if not 0.0 <= self.v < self.xi_s().min():
                raise RegimeViolation("need 0 <= v < inf(xi_x s_x)")
        elif self.wp < 1.0 and self.v >= 0.0:
            if not self.v < self.xi_s().min():
                raise RegimeViolation("need v < inf(xi_x s_x) when wp < 1")
        elif not (self.v < 0.0):
            raise RegimeViolation("coupled regime needs (v >= 0, wp < 1) or "
                                  "(v < 0, wp = q^-K)")


def weight_L(g: int, jin: int, gout: int, jout: int, xi: float, s: float,
             u: float, q: float) -> float:
    """Single-row stochastic weight L_{xi u, s}(g, jin | gout, jout).

    Zero on inadmissible configurations (conservation g + jin = gout + jout
    with jin, jout in {0,1}).
    """
    if g < 0 or gout < 0 or jin not in (0, 1) or jout not in (0, 1):
        return 0.0
    if g + jin != gout + jout:
        return 0.0
    su = s * xi * u
    denom = 1.0 - su
    qg = q**g
    if jin == 0 and jout == 0:
        return (1.0 - qg * su) / denom
    if jin == 0 and jout == 1:
        return (-su + qg * su) / denom
    if jin == 1 and jout == 1:
        return (-su + s * s * qg) / denom
    return (1.0 - s * s * qg) / denom


def _poch_qpow(e0: int, q: float, n: int) -> float:
    """(q^e0; q)_n with the exponent tracked as an integer.

    Exact zeros (a factor with exponent 0) are detected on the integers, never
    through float cancellation.  Negative n uses the reciprocal convention and
    raises PochhammerPole when a reciprocal factor vanishes.
    """
    if n >= 0:
        if n > 0 and e0 <= 0 <= e0 + n - 1:
            return 0.0
        out = 1.0
        for j in range(n):
            out *= 1.0 - q ** (e0 + j)
        return out
    for k in range(1, -n + 1):
        if e0 - k == 0:
            raise PochhammerPole(f"(q^{e0};q)_{n} has a vanishing factor")
    out = 1.0
    for k in range(1, -n + 1):
        out /= 1.0 - q ** (e0 - k)
    return out


def _inv_poch_qpow(e0: int, q: float, n: int) -> float:
    """1/(q^e0;q)_n: returns 0.0 when the Pochhammer is infinite (negative
    order hitting exponent zero), raises PochhammerPole when dividing by an
    exact zero."""
    if n >= 0:
        val = _poch_qpow(e0, q, n)
        if val == 0.0:
            raise PochhammerPole(f"1/(q^{e0};q)_{n} divides by zero")
        return 1.0 / val
    out = 1.0
    for k in range(1, -n + 1):
        out *= 1.0 - q ** (e0 - k)  # exact zero -> whole expression is zero
    return out


def weight_LJ(i1: int, j1: int, i2: int, j2: int, u: float, s: float,
              q: float, qJ: float, J: int | None = None) -> float:
    """Fused weight L^(J)_{u,s}(i1, j1 | i2, j2).

    qJ is q^J or its analytic continuation; pass the integer J when qJ is an
    exact power so that terminating zeros are resolved on integer exponents.
    Closed form: prefactor times a regularized 4-phi-3 at argument (q, q).
    """
    if min(i1, j1, i2, j2) < 0:
        return 0.0
    if i1 + j1 != i2 + j2:
        return 0.0
    if J is None and qJ > 0:
        # recognize exact integer powers so the terminating zeros stay exact
        guess = round(np.log(qJ) / np.log(q)) if 0 < q < 1 and qJ != 1.0 else 0
        if guess >= 0 and qJ == q ** int(guess):
            J = int(guess)

    qq_poch = qcalc.qpoch(q, q, i2)
    su_poch = qcalc.qpoch(s * u, q, i2 + j2)
    if su_poch == 0.0:
        raise PochhammerPole("(su;q)_{i2+j2} denominator vanishes")
    if J is not None:
        inv_dpoch = _inv_poch_qpow(J + 1 - j1, q, j1 - j2)
        if inv_dpoch == 0.0:
            return 0.0  # j2 > J is unreachable for integer fusion level
    else:
        inv_dpoch = 1.0
        n = j1 - j2
        if n >= 0:
            val = 1.0
            for j in range(n):
                val *= 1.0 - qJ * q ** (1 - j1 + j)
            if val == 0.0:
                raise PochhammerPole("(q^(J+1-j1);q)_(j1-j2) vanishes")
            inv_dpoch = 1.0 / val
        else:
            for k in range(1, -n + 1):
                inv_dpoch *= 1.0 - qJ * q ** (1 - j1 - k)
    try:
        us_poch = qcalc.qpoch(u / s, q, j2 - i1)
    except Exception as exc:
        raise PochhammerPole(str(exc)) from exc
    e_pref = (i1 * (i1 + 2 * j1 - 1)) // 2
    pref = ((-1.0) ** i1 * q**e_pref * u**i1 * s ** (j1 + j2 - i2) * us_poch
            * inv_dpoch / (qq_poch * su_poch))

    # regularized 4phi3, with integer-exponent arguments handled exactly:
    # sum_k q^k (q^-i2;q)_k/(q;q)_k (q^-i1;q)_k (suq^J;q)_k (qs/u;q)_k
    #       * (q^k s^2;q)_{i2-k} (q^{k+1+j2-i1};q)_{i2-k} (q^{k+J+1-i2-j2};q)_{i2-k}
    hyp = 0.0
    qq_i1 = qcalc.qpoch(q, q, i1)
    for k in range(min(i1, i2) + 1):  # (q^-i1;q)_k kills k > i1
        c2 = (-1.0) ** k * q ** (k * (k - 1) // 2 - i2 * k) * qcalc.qbinom(i2, k, q)
        a1 = ((-1.0) ** k * q ** (k * (k - 1) // 2 - i1 * k) * qq_i1
              / qcalc.qpoch(q, q, i1 - k))
        term = q**k * c2 * a1
        term *= qcalc.qpoch(s * u * qJ, q, k) * qcalc.qpoch(q * s / u, q, k)
        term *= qcalc.qpoch(s * s * q**k, q, i2 - k)
        term *= _poch_qpow(k + 1 + j2 - i1, q, i2 - k)
        if J is not None:
            term *= _poch_qpow(k + J + 1 - i2 - j2, q, i2 - k)
        else:
            for j in range(i2 - k):
                term *= 1.0 - qJ * q ** (k + 1 - i2 - j2 + j)
        hyp += term
    return float(pref * hyp)


def transition_weights(i1: int, j1: int, u: float, s: float, q: float,
                       J: int) -> tuple[np.ndarray, np.ndarray]:
    """All outcomes (i2, j2 = i1+j1-i2) with j2 <= J and their probabilities.

    Clamps tiny negative round-off to zero and renormalizes; larger
    negativity is a regime violation.
    """
    tot = i1 + j1
    j2s = np.arange(0, min(J, tot) + 1)
    i2s = tot - j2s
    if J == 1:
        w = np.array([weight_L(i1, j1, int(i2), int(j2), 1.0, s, u, q)
                      for i2, j2 in zip(i2s, j2s)])
    else:
        w = np.array([weight_LJ(i1, j1, int(i2), int(j2), u, s, q, q**J, J=J)
                      for i2, j2 in zip(i2s, j2s)])
    if np.any(w < _NEG_CLAMP):
        raise RegimeViolation(
            f"negative fused weight {w.min():.3e} at (i1={i1}, j1={j1}); "
            "parameters violate stochasticity")
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise RegimeViolation(f"degenerate outcome row at (i1={i1}, j1={j1})")
    return i2s, w / total


def fusion_oracle(i1: int, j1: int, i2: int, j2: int, u: float, s: float,
                  q: float, J: int) -> float:
    """Brute-force fused weight: sum over q-exchangeable input arrangements.

    Enumerates h, h' in {0,1}^J with |h| = j1, |h'| = j2 and multiplies
    single-row weights at spectral parameters (u, qu, ..., q^(J-1) u).
    """
    if J > 4 or max(i1, j1, i2, j2) > 6:
        raise ScaleExceeded("fusion oracle is restricted to J <= 4, occupancies <= 6")
    if i1 + j1 != i2 + j2 or j1 > J or j2 > J:
        return 0.0
    from itertools import combinations

    def arrangements(total):
        for pos in combinations(range(J), total):
            h = [0] * J
            for p in pos:
                h[p] = 1
            yield tuple(h)

    z_j1 = sum(q ** sum(k * h[k] for k in range(J)) for h in arrangements(j1))
    acc = 0.0
    for h in arrangements(j1):
        p_h = q ** sum(k * h[k] for k in range(J)) / z_j1
        for hp in arrangements(j2):
            w = p_h
            i_cur = i1
            for k in range(J):
                i_next = i_cur + h[k] - hp[k]
                if i_next < 0:
                    w = 0.0
                    break
                w *= weight_L(i_cur, h[k], i_next, hp[k], 1.0, s, q ** k * u, q)
                i_cur = i_next
            acc += w
    return acc


def qhahn_weight_limit(i1: int, j1: int, i2: int, j2: int, q: float, s: float,
                       J: int) -> float:
    """Fused weight under (s_k=s, xi_k=1/s, u_t=s^2): the q-deformed
    beta-binomial jump law phi_{q, q^J s^2, s^2}(j2 | i1)."""
    if i1 + j1 != i2 + j2 or j2 > i1:
        return 0.0
    from .degen import qhahn_phi

    return qhahn_phi(j2, i1, q, q**J * s * s, s * s)


@dataclass
class PathEnsemble:
    """Occupation numbers on a window: m[x][t] vertical, j[x][t] horizontal.

    Arrays are indexed [x - x_min, t] with t = 0 holding the boundary row
    m_x^0 and j[:, t] for t >= 1 holding horizontal exits of row t.
    """

    x_min: int
    x_max: int
    t_max: int
    m: np.ndarray = field(default=None)  # shape (n_sites, t_max+1)
    j: np.ndarray = field(default=None)  # shape (n_sites, t_max+1); j[:,0] unused
    j_left: np.ndarray = field(default=None)  # j_{x_min-1}^t, the injected paths

    def __post_init__(self):
        n = self.x_max - self.x_min + 1
        if self.m is None:
            self.m = np.zeros((n, self.t_max + 1), dtype=int)
        if self.j is None:
            self.j = np.zeros((n, self.t_max + 1), dtype=int)
        if self.j_left is None:
            self.j_left = np.zeros(self.t_max + 1, dtype=int)

    def col(self, x: int) -> int:
        if not self.x_min <= x <= self.x_max:
            raise OutOfWindow(f"column {x} outside [{self.x_min}, {self.x_max}]")
        return x - self.x_min

    def assert_conservation(self):
        for t in range(1, self.t_max + 1):
            j_in = self.j_left[t]
            for ix in range(self.m.shape[0]):
                if self.m[ix, t - 1] + j_in != self.m[ix, t] + self.j[ix, t]:
                    raise ConservationViolation(
                        f"vertex (x={self.x_min + ix}, t={t}) violates conservation")
                j_in = self.j[ix, t]


def transfer_step(row_m: np.ndarray, j_in: int, t: int, params: ModelParams,
                  rng: np.random.Generator, strict: bool = False):
    """One sequential left-to-right row update.

    row_m holds m_x^{t-1} for x = 2..x_max; returns (new row, horizontal
    exits j_x^t, j at the right edge).
    """
    u_t = params.row_u(t)
    new_m = np.zeros_like(row_m)
    j_row = np.zeros_like(row_m)
    j_cur = int(j_in)
    for ix in range(len(row_m)):
        xi, s = params.xi[ix], params.s[ix]
        i2s, probs = _cached_transition(int(row_m[ix]), j_cur, xi * u_t, s,
                                        params.q, params.J)
        k = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        k = min(k, len(i2s) - 1)
        new_m[ix] = i2s[k]
        j_cur = int(row_m[ix]) + j_cur - int(i2s[k])
        j_row[ix] = j_cur
    if strict and j_cur != 0:
        raise WindowOverflow(f"paths left the window at row t={t}")
    return new_m, j_row, j_cur


@lru_cache(maxsize=200000)
def _cached_transition(i1: int, j1: int, u: float, s: float, q: float, J: int):
    i2s, probs = transition_weights(i1, j1, u, s, q, J)
    return i2s, probs


def height_H(ens: PathEnsemble, x: int, t: int) -> int:
    """H(x,t) = -(m_2^0 + ... + m_x^0) + (j_x^1 + ... + j_x^t)."""
    if x < 1:
        raise OutOfWindow("height column must be >= 1")
    if x == 1:
        minus = 0
    else:
        c = ens.col(x)
        minus = int(ens.m[: c + 1, 0].sum())
    if t > ens.t_max:
        raise OutOfWindow(f"row {t} beyond simulated window")
    plus = 0 if x == 1 else int(ens.j[ens.col(x), 1 : t + 1].sum())
    if x == 1:
        plus = int(ens.j_left[1 : t + 1].sum())
    return plus - minus


def height_frak(ens: PathEnsemble, x: int, t: int) -> int:
    """frak-h(x,t) = sum_{y >= x} m_y^t, window-truncated."""
    c = ens.col(x)
    return int(ens.m[c:, t].sum())
