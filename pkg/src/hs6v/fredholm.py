"""Exact q-Laplace transforms of the height distribution via finite-rank
Fredholm determinants, plus the small-x torus oracle.

The kernel fK acting on l2(Z) has rank <= x, with factor tables
  B_l = phi_l, A_l = psi_l (l = 1..x-1),   B_x = Phi_x, A_x = (d - v) Psi_x,
so det(1 - fK) = det(I_x - M) with the Gram matrix
  M[a, b] = sum_n B_a(n) f(n) A_b(n).
All tables are exact contour integrals; the z-side contour is chosen per sign
of n (small circle hugging {v q^k} for n >= 0, large circle below inf(xi/s)
for n < 0) so every table value is well conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from . import qcalc
from .contour import Contour, make_C_D
from .errors import (
    NoAdmissibleContour,
    PoleHit,
    RegimeViolation,
    ResolventSingular,
    ScaleExceeded,
    SeriesStall,
    WindowInsufficient,
)
from .vertex import ModelParams

_TAIL_TOL = 1e-13
_MAX_HALF_WINDOW = 400


@dataclass(frozen=True)
class TauWeights:
    """Two-sided geometric regularizer tau(n) = b^n (n>=0), c^n (n<0)."""

    b: float
    c: float

    def validate(self, params: ModelParams, analytic_continuation: bool = False):
        v, d, q = params.v, params.d, params.q
        lo = q * v if analytic_continuation else v
        xs, xos = params.xi_s(), params.xi_over_s()
        if not (lo < self.b < d <= xs.min() <= xs.max() < self.c < xos.min()):
            raise RegimeViolation(
                f"tau weights out of range: need {lo:.4g} < b < {d} <= "
                f"{xs.min():.4g} and {xs.max():.4g} < c < {xos.min():.4g}; "
                f"got b={self.b}, c={self.c}")

    def table(self, window: np.ndarray) -> np.ndarray:
        return np.where(window >= 0, self.b ** window.astype(float),
                        self.c ** window.astype(float))


def default_tau(params: ModelParams) -> TauWeights:
    # b in (v, d) normally; the analytic-continuation regime (v >= d, e.g.
    # stationary v = d) relaxes the lower barrier to qv
    lo = params.q * params.v if params.v >= params.d else params.v
    b = 0.5 * (lo + params.d)
    xs, xos = params.xi_s(), params.xi_over_s()
    c = math.sqrt(xs.max() * xos.min())
    return TauWeights(b, c)


def F_factor(z, params: ModelParams, x: int, t: int):
    """F(z) = (v wp/z;q)_inf prod_j (z u_j;q)_J (qz/d;q)_inf
    * prod_k (qz/(xi_k s_k);q)_inf / (z s_k/xi_k;q)_inf, sites k = 2..x."""
    q, v, d, wp = params.q, params.v, params.d, params.wp
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) < 1e-140):
        raise PoleHit("F has an essential singularity at z = 0")
    out = np.ones_like(z)
    if wp != 0.0 and v != 0.0:
        out = out * qcalc.qpoch_inf(v * wp / z, q)
    for j in range(t):
        out = out * _poch_J(z * params.u[j], q, params.J, params.mu_hat)
    out = out * qcalc.qpoch_inf(q * z / d, q)
    for k in range(x - 1):
        a = params.xi[k] * params.s[k]
        denom = qcalc.qpoch_inf(z * params.s[k] / params.xi[k], q)
        if np.any(np.abs(denom) < 1e-140):
            raise PoleHit("F evaluated on a pole z = xi_k/s_k q^-j")
        out = out * qcalc.qpoch_inf(q * z / a, q) / denom
    return out


def _poch_J(w, q: float, J: int, mu_hat: float | None):
    """(w;q)_J, or its analytic continuation (w;q)_inf/(w mu_hat;q)_inf."""
    if mu_hat is None:
        out = 1.0
        for r in range(J):
            out = out * (1.0 - w * q**r)
        return out
    return qcalc.qpoch_inf(w, q) / qcalc.qpoch_inf(w * mu_hat, q)


class HeightKernel:
    """Factor tables of the rank-x kernel for one (params, x, t) tuple."""

    def __init__(self, params: ModelParams, x: int, t: int,
                 window=None, n_per: int = 512, tau: TauWeights | None = None):
        params.check_basic()
        params.check_placements()
        if x < 1:
            raise RegimeViolation("height column x must be >= 1")
        self.params, self.x, self.t = params, x, t
        self.q, self.v, self.d = params.q, params.v, params.d
        analytic = params.v >= params.d
        self.tau = tau if tau is not None else default_tau(params)
        self.tau.validate(params, analytic_continuation=analytic)
        self.contours = make_C_D(params, x, t, n_per)
        self._node_cache = {}
        if window is None:
            window = self._auto_window()
        self.window = np.asarray(window, dtype=int)
        self._build_tables()

    # ---------------------------------------------------------- contours

    def _weights(self, name: str, kind: str):
        """Per-node integrand weight (everything except the z^n power and tau)."""
        key = (name, kind)
        if key in self._node_cache:
            return self._node_cache[key]
        cont = self.contours[kind]
        z = cont.nodes
        p, x, t = self.params, self.x, self.t
        xs = p.xi_s()[: x - 1]
        F = F_factor(z, p, x, t)
        if name.startswith("phi"):
            l = int(name.split("_")[1])
            g = qcalc.qpoch_inf(p.q * p.v / z, p.q) / F / z ** (x - l + 1)
            for k in range(l):
                g = g / (z - xs[k])
        elif name.startswith("psi"):
            l = int(name.split("_")[1])
            g = F / qcalc.qpoch_inf(p.q * p.v / z, p.q) * z ** (x - l - 1) * xs[l - 1]
            for k in range(l - 1):
                g = g * (z - xs[k])
        elif name == "Phi":
            g = qcalc.qpoch_inf(p.q * p.v / z, p.q) / F / (z * (z - p.d))
            for a in xs:
                g = g / (z - a)
        elif name == "Psi":
            g = F * z ** (-1)
            if p.v != 0.0:
                g = g / qcalc.qpoch_inf(p.v / z, p.q)
            for a in xs:
                g = g * (z - a)
        else:  # pragma: no cover
            raise ValueError(name)
        out = (g * cont.dz) / (2j * np.pi)
        self._node_cache[key] = (cont.nodes, out)
        return self._node_cache[key]

    def _table_from(self, name: str, kind: str, exps: np.ndarray) -> np.ndarray:
        nodes, w = self._weights(name, kind)
        # z^exps via exp(e log z): exact for integer e regardless of branch
        powers = np.exp(np.multiply.outer(exps.astype(float), np.log(nodes)))
        vals = powers @ w
        return vals

    def _ctype_table(self, name: str, n: np.ndarray, inner: str) -> np.ndarray:
        """C-side integral: inner contour for n >= 0, outer circle for n < 0."""
        out = np.empty(len(n), dtype=complex)
        pos = n >= 0
        if pos.any():
            out[pos] = self._table_from(name, inner, n[pos])
        if (~pos).any():
            out[~pos] = self._table_from(name, "C_out", n[~pos])
        return _realify(out, name)

    # ------------------------------------------------------------ window

    def _auto_window(self):
        try:
            a0 = sum(qcalc.a_k(0, self.d, ut, self.params.J, self.q)
                     for ut in self.params.u[: self.t])
            h0 = qcalc.h_k(0, self.d, self.params.xi[: self.x - 1],
                           self.params.s[: self.x - 1], self.q) * self.x \
                if self.x > 1 else 0.0
            center = int(round(a0 - h0))
        except Exception:
            center = 0
        half = 40
        return np.arange(center - half, center + half + 1)

    def ensure_window(self, zeta: float, shift_max: int = 0,
                      mode: str = "gram"):
        """Extend the window until every |B_a f A_b| edge product certifies
        a geometric tail below 1e-13 (for f at zeta and its q^-k shifts).

        mode="gram" certifies the plain Gram pairs including the full
        (Phi, Psi) product (which decays like (v/d)^n and is only practical
        for v comfortably below d); mode="split" certifies the resummed
        assembly where the (Phi1, Psi1) part is handled in closed form.
        """
        for _ in range(24):
            fvals = [f_table(self.window + k, zeta, self.q)
                     for k in range(shift_max + 1)]
            grow_lo = grow_hi = False
            for f in fvals:
                for B, A in self._certified_pairs(mode):
                    prod = np.abs(B * f * A)
                    scale = max(prod.max(), 1e-30)
                    if not _tail_ok(prod[::-1], scale):
                        grow_lo = True
                    if not _tail_ok(prod, scale):
                        grow_hi = True
            if not grow_lo and not grow_hi:
                return
            lo = self.window[0] - (24 if grow_lo else 0)
            hi = self.window[-1] + (24 if grow_hi else 0)
            if hi - lo > 2 * _MAX_HALF_WINDOW:
                raise WindowInsufficient(
                    f"tail certification failed on window [{lo}, {hi}]")
            self.window = np.arange(lo, hi + 1)
            self._build_tables()
        raise WindowInsufficient("window extension did not converge")

    def _certified_pairs(self, mode: str = "gram"):
        """Every (B, A) product the requested assembly sums over the window."""
        phis = [self.phi[l] for l in range(self.x - 1)]
        psis = [self.psi[l] for l in range(self.x - 1)]
        pairs = [(B, A) for B in phis for A in psis]
        pairs += [(self.Phi, A) for A in psis]
        pairs += [(B, self.Psi) for B in phis]
        if mode == "gram":
            if self.v >= self.d - 1e-12:
                raise RegimeViolation(
                    "the plain Gram route needs v strictly below d; use the "
                    "split assembly near or at v = d")
            pairs.append((self.Phi, self.Psi))
        else:
            if self.v > 0:
                pairs += [(self.Phi1, self.Psi2), (self.Phi2, self.Psi1),
                          (self.Phi2, self.Psi2)]
            else:
                pairs.append((self.Phi, self.Psi))
        return pairs

    # ------------------------------------------------------------- tables

    def _build_tables(self):
        n = self.window
        x = self.x
        taun = self.tau.table(n)
        self.phi = np.empty((x - 1, len(n)))
        self.psi = np.empty((x - 1, len(n)))
        for l in range(1, x):
            # phi_l has poles only at {xi_k s_k}: integrating on the d-free
            # contour D1 avoids noise amplified by (xi s / d)^n at large n;
            # psi_l has poles only at {q v q^j, 0}, so it lives on the C1
            # family (inner radius hugging qv) rather than on C
            self.phi[l - 1] = taun * _realify(
                self._table_from(f"phi_{l}", "D1", -n), "phi")
            self.psi[l - 1] = self._ctype_table(f"psi_{l}", n, "C1_in") / taun
        # pole splits: the w = d and z = v residues are exact closed forms and
        # the complementary parts live on contours with generous pole
        # clearance; the synthesized Phi = Phi1 + Phi2, Psi = Psi1 + Psi2 are
        # then accurate at every n (the one-contour D/C quadratures survive
        # as mutual oracles, see Phi_direct / Psi_direct)
        self.Phi1 = self._phi1_closed_form()
        if x > 1:
            self.Phi2 = taun * _realify(self._table_from("Phi", "D1", -n), "Phi2")
        else:
            self.Phi2 = np.zeros_like(self.Phi1)
        self.Phi = self.Phi1 + self.Phi2
        if self.v > 0:
            self.Psi1 = self.psi1_closed_form()
            out = np.empty(len(n), dtype=complex)
            pos = n >= 0
            if pos.any():
                out[pos] = self._table_from("Psi", "C1_in", n[pos])
            if (~pos).any():
                out[~pos] = self._table_from("Psi", "C1_out", n[~pos])
            self.Psi2 = _realify(out, "Psi2") / taun
            self.Psi = self.Psi1 + self.Psi2
        else:
            self.Psi = self._ctype_table("Psi", n, "C_in") / taun
            self.Psi1 = np.zeros_like(self.Psi)
            self.Psi2 = self.Psi

    def Phi_direct(self) -> np.ndarray:
        """Phi by one quadrature over the full D contour (test oracle)."""
        taun = self.tau.table(self.window)
        return taun * _realify(self._table_from("Phi", "D", -self.window), "PhiD")

    def Psi_direct(self) -> np.ndarray:
        """Psi by quadrature over the C contour family (test oracle)."""
        return self._ctype_table("Psi", self.window, "C_in") / self.tau.table(self.window)

    def _phi1_closed_form(self):
        """Residue of the Phi integrand at w = d (independent check value)."""
        p, x, t = self.params, self.x, self.t
        xs = p.xi_s()[: x - 1]
        const = complex(qcalc.qpoch_inf(p.q * p.v / p.d, p.q)
                        / F_factor(np.array([p.d + 0j]), p, x, t)[0])
        const /= np.prod(p.d - xs) if len(xs) else 1.0
        n = self.window
        return self.tau.table(n) * const.real * p.d ** (-(n.astype(float) + 1))

    def psi1_closed_form(self):
        """Residue of the Psi integrand at z = v (v > 0 only)."""
        p, x, t = self.params, self.x, self.t
        if p.v <= 0:
            raise RegimeViolation("Psi1 closed form needs v > 0")
        xs = p.xi_s()[: x - 1]
        const = complex(F_factor(np.array([p.v + 0j]), p, x, t)[0]
                        / qcalc.qpoch_inf(p.q, p.q))
        const *= np.prod(p.v - xs) if len(xs) else 1.0
        n = self.window
        return p.v ** n.astype(float) / self.tau.table(n) * const.real

    # -------------------------------------------------------- determinants

    def _A_list(self):
        return [self.psi[l] for l in range(self.x - 1)] + [(self.d - self.v) * self.Psi]

    def _B_list(self):
        return [self.phi[l] for l in range(self.x - 1)] + [self.Phi]

    def gram(self, f: np.ndarray) -> np.ndarray:
        A = np.vstack(self._A_list())
        B = np.vstack(self._B_list())
        return (B * f) @ A.T

    def det(self, zeta: float) -> float:
        f = f_table(self.window, zeta, self.q)
        M = self.gram(f)
        return float(np.linalg.det(np.eye(self.x) - M))

    def det_dense(self, zeta: float) -> float:
        """Oracle: LU determinant of (I - fK) on the truncated window."""
        f = f_table(self.window, zeta, self.q)
        K = self.kernel_matrix()
        return float(np.linalg.det(np.eye(len(self.window)) - f[:, None] * K))

    def kernel_matrix(self) -> np.ndarray:
        """K(n, m) = sum_l phi_l(m) psi_l(n) + (d - v) Phi(m) Psi(n)."""
        K = self.psi.T @ self.phi if self.x > 1 else 0.0
        return K + (self.d - self.v) * np.outer(self.Psi, self.Phi)

    def kernel_A(self, n: int, m: int) -> float:
        """A(n, m) = sum_l phi_l(n) psi_l(m) from the factor tables."""
        i, j = _locate(self.window, n), _locate(self.window, m)
        return float(self.phi[:, i] @ self.psi[:, j]) if self.x > 1 else 0.0

    def kernel_A_double(self, n: int, m: int) -> float:
        """A(n, m) by the double contour integral (mutual oracle).

        A(n,m) = tau(n)/tau(m) * (1/2 pi i)^2 * int_D dw int_C dz
                 z^m / w^{n+1} * G(z)/G(w) / (z - w),
        with G(z) = F(z) prod_k (z - xi_k s_k) / (qv/z;q)_inf; the dropped
        -1/(z-w) completion term integrates to zero because the w-integrand
        carries no singularity inside D.
        """
        p, x, t = self.params, self.x, self.t
        D = self.contours["D"]
        C = self.contours["C1_in" if m >= 0 else "C_out"]
        zs, ws = C.nodes, D.nodes
        gap = np.abs(zs[:, None] - ws[None, :]).min()
        if gap < 1e-6:
            raise NoAdmissibleContour("C and D contours nearly touch")
        xs = p.xi_s()[: x - 1]

        def G(u):
            out = F_factor(u, p, x, t) / qcalc.qpoch_inf(p.q * p.v / u, p.q)
            for a in xs:
                out = out * (u - a)
            return out

        core = (zs[:, None] ** m / ws[None, :] ** (n + 1)
                * G(zs)[:, None] / G(ws)[None, :]
                / (zs[:, None] - ws[None, :]))
        val = np.sum(core * C.dz[:, None] * D.dz[None, :]) / (2j * np.pi) ** 2
        taun = self.tau.table(np.array([n, m]))
        return float(np.real(val) * taun[0] / taun[1])

    # ------------------------------------------------------- resolvent path

    def stationary_V(self, zeta: float) -> float:
        """V_x(zeta) for the stationary model (v = d), rank-reduced resolvent."""
        p = self.params
        if abs(self.v - self.d) > 1e-12:
            raise RegimeViolation("stationary assembly needs v = d")
        f = f_table(self.window, zeta, self.q)
        det_fA, S_res = self._resolvent_reduced(f)
        S_cross = self._cross_sum(f)
        psi_terms = (-qcalc.psi0_continued(1.0 / zeta, self.q)
                     + qcalc.psi0_continued(self.q * zeta, self.q)
                     - 2.0 * qcalc.qpolygamma(0, self.q, self.q))
        a0_sum = sum(qcalc.a_k(0, self.d, ut, p.J, self.q) for ut in p.u[: self.t])
        h0 = (qcalc.h_k(0, self.d, p.xi[: self.x - 1], p.s[: self.x - 1], self.q)
              * self.x if self.x > 1 else 0.0)
        bracket = (psi_terms - h0 + a0_sum
                   - self.d * S_cross - self.d * S_res)
        return float(det_fA * bracket)

    def _resolvent_reduced(self, f: np.ndarray):
        """(det(1-fA), sum_n (fA rho f Phi)(n) Psi(n)) via the rank-(x-1) system."""
        if self.x == 1:
            return 1.0, 0.0
        M = (self.psi * f) @ self.phi.T  # M[l,m] = <psi_l, f phi_m>
        I_M = np.eye(self.x - 1) - M
        det_fA = float(np.linalg.det(I_M))
        if abs(det_fA) < 1e-140:
            raise ResolventSingular("1 - fA numerically singular")
        c = (self.psi * f) @ self.Phi
        dvec = self.phi @ (f * self.Psi)
        y = np.linalg.solve(I_M, c)
        return det_fA, float(dvec @ y)

    def resolvent_dense(self, zeta: float):
        """Oracle: dense-window det(1-fA) and resolvent sum.

        A(n, m) = sum_l phi_l(n) psi_l(m) acts as (A g)(n) = sum_m A(n,m)g(m).
        """
        f = f_table(self.window, zeta, self.q)
        A = self.phi.T @ self.psi if self.x > 1 else np.zeros((len(f), len(f)))
        fA = f[:, None] * A
        I_fA = np.eye(len(f)) - fA
        det_fA = float(np.linalg.det(I_fA))
        y = np.linalg.solve(I_fA, f * self.Phi)
        s = float((fA @ y) @ self.Psi)
        return det_fA, s

    def ramanujan_S11(self, zeta: float) -> float:
        """sum_n f(n) Phi1(n) Psi1(n) in closed form (bilateral 1-psi-1 sum):

        (1/d) (v/(d zeta), q zeta d/v, q;q)_inf / ((v/d, 1/zeta, q zeta;q)_inf)
        * F(v)/F(d) * prod_k (v - xi_k s_k)/(d - xi_k s_k).
        Valid for v < d; for v -> d use the stationary psi0 expansion instead.
        """
        p, q, v, d = self.params, self.q, self.v, self.d
        if not 0 < v < d:
            raise RegimeViolation("Ramanujan resummation needs 0 < v < d")
        xs = p.xi_s()[: self.x - 1]
        # sum_n f(n)(v/d)^n = (v/(d zeta), q zeta d/v, q, q;q)_inf
        #                     / (v/d, q d/v, 1/zeta, q zeta;q)_inf
        # times the constant (qv/d;q)_inf F(v) prod(v - xs)
        #                     / ((q;q)_inf F(d) prod(d - xs)) / d
        num = (qcalc.qpoch_inf(v / (d * zeta), q)
               * qcalc.qpoch_inf(q * zeta * d / v, q)
               * qcalc.qpoch_inf(q, q) ** 2)
        den = (qcalc.qpoch_inf(v / d, q) * qcalc.qpoch_inf(q * d / v, q)
               * qcalc.qpoch_inf(1.0 / zeta, q) * qcalc.qpoch_inf(q * zeta, q))
        const = qcalc.qpoch_inf(q * v / d, q) / qcalc.qpoch_inf(q, q)
        Fv = complex(F_factor(np.array([v + 0j]), p, self.x, self.t)[0])
        Fd = complex(F_factor(np.array([d + 0j]), p, self.x, self.t)[0])
        ratio = np.prod((v - xs) / (d - xs)) if len(xs) else 1.0
        return float((num / den).real * const * (Fv / Fd).real * ratio / d)

    def det_split(self, zeta: float) -> float:
        """det(1 - fK) via det(1-fA) (1 - (d-v)[S11 + S_cross + S_res]).

        Numerically stable uniformly in d - v (the slowly decaying
        Phi1 f Psi1 sum is resummed in closed form).
        """
        f = f_table(self.window, zeta, self.q)
        det_fA, S_res = self._resolvent_reduced(f)
        S11 = self.ramanujan_S11(zeta)
        S_cross = self._cross_sum(f)
        return float(det_fA * (1.0 - (self.d - self.v) * (S11 + S_cross + S_res)))

    def _cross_sum(self, f: np.ndarray) -> float:
        tot = 0.0
        for Phi_i in (self.Phi1, self.Phi2):
            for Psi_j in (self.Psi1, self.Psi2):
                if Phi_i is self.Phi1 and Psi_j is self.Psi1:
                    continue
                tot += float(np.sum(f * Phi_i * Psi_j))
        return tot


def _tail_ok(prod: np.ndarray, scale: float) -> bool:
    """Edge of `prod` certifies a geometric tail below the tolerance."""
    edge = prod[-1]
    if edge < _TAIL_TOL * scale:
        return True
    ref = prod[-7] if len(prod) > 7 else prod[0]
    ratio = (edge / ref) ** (1.0 / 6.0) if ref > 0 else 1.0
    return ratio < 1.0 and edge * ratio / (1.0 - ratio) < _TAIL_TOL * scale


def _realify(vals: np.ndarray, name: str) -> np.ndarray:
    from .errors import NonConvergent

    vals = np.asarray(vals)
    scale = np.max(np.abs(vals)) + 1e-300
    rel = float(np.max(np.abs(vals.imag)) / scale)
    if rel > 1e-7:
        raise NonConvergent(f"table {name} has spurious imaginary part {rel:.2e}")
    return vals.real.copy()


def _locate(window: np.ndarray, n: int) -> int:
    i = int(n - window[0])
    if not 0 <= i < len(window):
        raise WindowInsufficient(f"n={n} outside kernel window")
    return i


def f_table(window: np.ndarray, zeta, q: float) -> np.ndarray:
    """f(n) = 1/(1 - q^n/zeta) over the window; overflow-free for zeta < 0."""
    n = np.asarray(window, dtype=float)
    if np.isrealobj(np.asarray(zeta)) and np.real(zeta) < 0:
        return expit(math.log(-float(np.real(zeta))) - n * math.log(q))
    return 1.0 / (1.0 - np.power(q + 0j, n) / zeta)


# ------------------------------------------------------------------ public ops


def build_kernel(params: ModelParams, x: int, t: int, *, v=None, d=None,
                 wp=None, window=None, n_per: int = 512,
                 tau: TauWeights | None = None) -> HeightKernel:
    if v is not None or d is not None or wp is not None:
        params = replace(params,
                         v=params.v if v is None else v,
                         d=params.d if d is None else d,
                         wp=params.wp if wp is None else wp)
    return HeightKernel(params, x, t, window=window, n_per=n_per, tau=tau)


def det_fK(zeta: float, params: ModelParams, x: int, t: int, *, v=None,
           d=None, wp=None, kernel: HeightKernel | None = None) -> float:
    """det(1 - fK): equals E[1/(zeta q^Hbar;q)_inf] under the coupled measure."""
    if kernel is None:
        kernel = build_kernel(params, x, t, v=v, d=d, wp=wp)
    kernel.ensure_window(zeta)
    return kernel.det(zeta)


def qlaplace_doublesided(zeta: float, params: ModelParams, x: int, t: int, *,
                         v=None, d=None,
                         kernel: HeightKernel | None = None) -> float:
    """E[1/(zeta q^H;q)_inf] for double-sided qNB boundaries, qv < d < v/q."""
    if kernel is None:
        kernel = build_kernel(params, x, t, v=v, d=d, wp=0.0)
    p = kernel.params
    if p.v == 0.0:
        # the q-Poisson shift degenerates to 0 and the series to its k=0 term
        kernel.ensure_window(zeta, mode="gram")
        return kernel.det(zeta)
    upper = p.v / p.q if p.q > 0 else math.inf
    if not (p.q * p.v < p.d < upper):
        raise RegimeViolation("need qv < d < v/q for the double-sided series")
    ratio = p.v / p.d
    kmax = _series_kmax(kernel.q, ratio)
    kernel.ensure_window(zeta, shift_max=kmax, mode="split")
    acc = 0.0
    for k in range(kmax + 1):
        pref = ((-1.0) ** k * kernel.q ** (k * (k - 1) // 2) * ratio**k
                / qcalc.qpoch(kernel.q, kernel.q, k))
        Vk = kernel.det_split(zeta * kernel.q ** (-k)) / (1.0 - ratio)
        acc += pref * Vk
    return float(acc / qcalc.qpoch_inf(kernel.q * ratio, kernel.q))


def _series_kmax(q: float, ratio: float) -> int:
    k = 0
    while q ** (k * (k - 1) // 2) * abs(ratio) ** k > 1e-14:
        k += 1
        if k > 200:
            raise SeriesStall("shift series prefactors do not decay")
    return k


def V_x_stationary(zeta: float, params: ModelParams, x: int, t: int, *,
                   d=None, kernel: HeightKernel | None = None) -> float:
    if kernel is None:
        dd = params.d if d is None else d
        kernel = build_kernel(params, x, t, v=dd, d=dd)
    kernel.ensure_window(zeta, mode="split")
    return kernel.stationary_V(zeta)


def qlaplace_stationary(zeta: float, params: ModelParams, x: int, t: int, *,
                        d=None, kernel: HeightKernel | None = None) -> float:
    """E[1/(zeta q^H;q)_inf] for the stationary model (v = d)."""
    if kernel is None:
        dd = params.d if d is None else d
        kernel = build_kernel(params, x, t, v=dd, d=dd)
    q = kernel.q
    kmax = _series_kmax(q, q)
    kernel.ensure_window(zeta, shift_max=kmax + 1, mode="split")
    V = [kernel.stationary_V(zeta * q ** (-k)) for k in range(kmax + 2)]
    acc = 0.0
    for k in range(kmax + 1):
        pref = ((-1.0) ** k * q ** (k * (k - 1) // 2 + k)
                / qcalc.qpoch(q, q, k))
        acc += pref * (V[k] - V[k + 1])
    return float(acc / qcalc.qpoch_inf(q, q))


def biorthogonality_check(params: ModelParams, x: int, t: int,
                          kernel: HeightKernel | None = None) -> float:
    """max_{l,m} |sum_n phi_l(n) psi_m(n) - delta_lm| over the window."""
    if kernel is None:
        kernel = build_kernel(params, x, t)
    G = kernel.phi @ kernel.psi.T
    return float(np.max(np.abs(G - np.eye(x - 1)))) if x > 1 else 0.0


# ------------------------------------------------------------- torus oracle


def torus_pmf_table(params: ModelParams, x: int, t: int, l_max: int, *,
                    n_theta: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """P(Hbar(x,t) = l) for l in [-l_max, l_max] by x-fold torus quadrature.

    The x-dimensional integral's site list is (d, xi_2 s_2, ..., xi_x s_x)
    with the first column carrying (a_1, alpha_1) = (d, 0).
    """
    if x > 3:
        raise ScaleExceeded("torus oracle restricted to x <= 3")
    p = params
    q, v, wp = p.q, p.v, p.wp
    a = np.array([p.d] + [p.xi[k] * p.s[k] for k in range(x - 1)])
    alpha = np.array([0.0] + [p.s[k] / p.xi[k] for k in range(x - 1)])
    _check_torus_bounds(p, a, alpha, x, t)

    def pi_tilde(zv):
        out = np.ones_like(zv)
        for al in alpha[1:]:
            out = out / qcalc.qpoch_inf(zv * al, q)
        for j in range(t):
            out = out * _poch_J(zv * p.u[j], q, p.J, p.mu_hat)
        return out

    def site_factor(zv):
        out = np.ones_like(zv)
        if wp != 0.0 and v != 0.0:
            out = out * qcalc.qpoch_inf(wp * v / zv, q)
        if v != 0.0:
            out = out / qcalc.qpoch_inf(v / zv, q)
        return out

    norm = np.prod(pi_tilde(a.astype(complex)) * site_factor(a.astype(complex)))
    A_prod = float(np.prod(a))

    def pmf_branch(rho: float, ls: np.ndarray) -> np.ndarray:
        # the integrand depends on the total angle only through (A/Z)^l and
        # (A/Z;q)_inf: bin the x-fold node sums by (k_1+...+k_x) mod n and
        # finish with a 1-d Fourier sum per l
        n = n_theta
        th = 2.0 * np.pi * np.arange(n) / n
        z1 = rho * np.exp(1j * th)
        one_d = pi_tilde(z1) * site_factor(z1)
        for ai in a:
            one_d = one_d / qcalc.qpoch_inf(ai / z1, q)
        S = qcalc.qpoch_inf(np.exp(1j * th), q)  # (z_i/z_j;q)_inf, diff table
        bins = np.zeros(n, dtype=complex)
        if x == 1:
            bins = one_d.astype(complex)
        elif x == 2:
            dk = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
            M = np.outer(one_d, one_d) * S[dk] * S[(-dk) % n]
            tot = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
            np.add.at(bins, tot.ravel(), M.ravel())
        else:
            dk = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
            pair = S[dk] * S[(-dk) % n]  # coupling of any two angles
            tot2 = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
            flat = tot2.ravel()
            for k1 in range(n):
                c1 = one_d[k1] * pair[k1]  # couples k1 with k2 (vector in k2)
                M = (np.outer(c1 * one_d, pair[k1] * one_d) * pair)
                sub = np.zeros(n, dtype=complex)
                np.add.at(sub, flat, M.ravel())
                bins += np.roll(sub, k1)
        Theta = 2.0 * np.pi * np.arange(n) / n
        Zred = rho**x * np.exp(1j * Theta)
        T = qcalc.qpoch_inf(A_prod / Zred, q)
        core = bins * T / norm * qcalc.qpoch_inf(q, q) ** (x - 1) / math.factorial(x)
        core = core / n**x
        phase = np.exp(-1j * np.outer(ls, Theta))
        vals = phase @ core
        return np.real(vals * (A_prod / rho**x) ** ls.astype(float))

    # two-radius torus: the integral is radius-independent inside the
    # analyticity annulus (max(v, a_i), min over poles of pi_tilde), but the
    # l < 0 coefficients are only well conditioned near the inner edge.  The
    # inner radius balances trapezoid decay (lo/rho)^n against coefficient
    # noise growth (rho^x/prod a)^|l|.
    hi_cap = min(1.0 / alpha.max() if alpha.max() > 0 else 4.0, 2.0)
    lo = max(abs(v), a.max())
    rho_lo = min(lo * math.exp(24.0 / n_theta), lo + 0.5 * (hi_cap - lo))
    ls = np.arange(-l_max, l_max + 1)
    pmf = np.empty(len(ls))
    pmf[ls < 0] = pmf_branch(rho_lo, ls[ls < 0])
    pmf[ls >= 0] = pmf_branch(1.0, ls[ls >= 0])
    return ls, pmf


def _check_torus_bounds(p: ModelParams, a, alpha, x, t):
    if a.max() >= 1.0 or a.max() * alpha.max() >= 1.0:
        raise RegimeViolation("torus oracle needs sup(xi s) < 1 and "
                              "sup(xi_i s_i s_j/xi_j) < 1")
    if alpha.max() >= 1.0:
        raise RegimeViolation("torus oracle needs sup(s/xi) < 1")
    for ut in p.u[:t]:
        if np.max(np.abs(ut) * a) >= 1.0:
            raise RegimeViolation("torus oracle needs |u_j xi_i s_i| < 1")
    if abs(p.v) >= a.min():
        raise RegimeViolation("torus oracle needs |v| < inf(xi s)")
    if abs(p.wp) * abs(p.v) >= a.min():
        raise RegimeViolation("torus oracle needs |wp| < inf(xi s)/|v|")


def torus_pmf_oracle(l: int, params: ModelParams, x: int, t: int, *,
                     l_max: int = 48, n_theta: int = 512) -> float:
    ls, pmf = torus_pmf_table(params, x, t, l_max, n_theta=n_theta)
    total = pmf.sum()
    if abs(total - 1.0) > 1e-6:
        raise SeriesStall(f"torus pmf sums to {total}, not 1")
    i = int(l + l_max)
    if not 0 <= i < len(ls):
        return 0.0
    return float(pmf[i])
