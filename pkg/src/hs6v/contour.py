"""Closed complex contours and quadrature for all kernel-building integrals.

All curves are unions of circles with trapezoid nodes on the angle; the
trapezoid rule is spectrally accurate for integrands analytic in an annulus
around each component.  Orientation is counterclockwise unless stated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoAdmissibleContour, NonConvergent

_CLEARANCE = 1e-3  # minimum relative pole clearance per contour component


@dataclass(frozen=True)
class Contour:
    """Discretized closed curve: nodes z_k and dz_k = z'(theta_k) dtheta.

    ``integrate`` computes (1/2 pi i) sum f(z_k) dz_k.  Components may be
    several disjoint circles; nodes/dz concatenate over components.
    """

    kind: str
    centers: tuple
    radii: tuple
    n_per: int
    nodes: np.ndarray = field(repr=False, default=None)
    dz: np.ndarray = field(repr=False, default=None)

    @staticmethod
    def circles(centers, radii, n_per=256, kind="circle") -> "Contour":
        centers = tuple(complex(c) for c in np.atleast_1d(centers))
        radii = tuple(float(r) for r in np.atleast_1d(radii))
        nodes, dz = _build_nodes(centers, radii, n_per)
        return Contour(kind, centers, radii, n_per, nodes, dz)

    def refine(self, factor: int = 2) -> "Contour":
        return Contour.circles(self.centers, self.radii, self.n_per * factor,
                               self.kind)

    def quad(self, fvals: np.ndarray) -> complex:
        """(1/2 pi i) * sum f(z_k) dz_k for precomputed node values."""
        return np.sum(fvals * self.dz) / (2j * np.pi)

    def winding(self, p: complex) -> int:
        """Numerical winding number around p (exact for off-curve points)."""
        val = self.quad(1.0 / (self.nodes - p))
        return int(np.rint(val.real))

    def min_clearance(self, points) -> float:
        """Smallest relative distance from the curve to any of the points."""
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        if pts.size == 0:
            return np.inf
        d = np.abs(self.nodes[:, None] - pts[None, :]).min(axis=0)
        return float((d / np.maximum(np.abs(pts), 1e-30)).min())


def _build_nodes(centers, radii, n_per):
    nodes, dz = [], []
    for c, r in zip(centers, radii):
        th = 2.0 * np.pi * np.arange(n_per) / n_per
        z = c + r * np.exp(1j * th)
        nodes.append(z)
        dz.append(1j * r * np.exp(1j * th) * (2.0 * np.pi / n_per))
    return np.concatenate(nodes), np.concatenate(dz)


def integrate(f, contour: Contour, rtol: float = 1e-10, max_doublings: int = 4):
    """Adaptive contour integral (1/2 pi i) * oint f(z) dz.

    Doubles the node count until two consecutive resolutions agree to rtol.
    """
    cur = contour
    prev_val = cur.quad(f(cur.nodes))
    for _ in range(max_doublings):
        cur = cur.refine()
        val = cur.quad(f(cur.nodes))
        if abs(val - prev_val) <= rtol * max(1.0, abs(val)):
            return val
        prev_val = val
    raise NonConvergent(
        f"contour integral did not stabilize to rtol={rtol} after "
        f"{max_doublings} doublings")


def _cluster(points: np.ndarray, gap_factor: float = 0.18):
    """Group sorted positive reals into clusters separated by relative gaps."""
    pts = np.sort(np.asarray(points, dtype=float))
    clusters = [[pts[0]]]
    for p in pts[1:]:
        if p - clusters[-1][-1] <= gap_factor * p:
            clusters[-1].append(p)
        else:
            clusters.append([p])
    return [(min(c), max(c)) for c in clusters]


def enclosing_circles(include, exclude, n_per=256, pad_frac=0.3,
                      inner_limit=0.0, kind="pole-hug") -> Contour:
    """Union of circles that encircle every `include` point and no `exclude`
    point, hugging the pole clusters for quadrature conditioning.

    inner_limit: every circle must stay strictly right of this radius
    (used to keep the D family clear of the C family around the origin).
    """
    include = np.asarray(sorted(include), dtype=float)
    exclude = np.asarray(sorted(exclude), dtype=float) if len(exclude) else np.array([])
    centers, radii = [], []
    for lo, hi in _cluster(include):
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        # clearance to everything this circle must not swallow
        room = center - inner_limit - half
        if len(exclude):
            gaps = np.abs(exclude - center) - half
            room = min(room, float(gaps.min()))
        if room <= _CLEARANCE * center:
            raise NoAdmissibleContour(
                f"no room around cluster [{lo:.4g}, {hi:.4g}]: clearance "
                f"{room:.3g} below {_CLEARANCE * center:.3g}")
        # hug the poles: tight circles keep |w|^n well conditioned over the
        # kernel window while the trapezoid rule stays spectrally accurate
        pad = min(pad_frac * room, 0.04 * center)
        pad = min(max(pad, 1.5 * _CLEARANCE * center), 0.9 * room)
        centers.append(center)
        radii.append(half + pad)
    cont = Contour.circles(centers, radii, n_per, kind)
    _verify_windings(cont, include, exclude)
    return cont


def origin_circle(radius: float, n_per: int = 256) -> Contour:
    return Contour.circles([0.0], [radius], n_per, kind="origin-circle")


def _verify_windings(contour: Contour, include, exclude):
    for p in include:
        if contour.winding(p) != 1:
            raise NoAdmissibleContour(f"built contour fails to encircle {p:.5g}")
    for p in exclude:
        if contour.winding(p) != 0:
            raise NoAdmissibleContour(f"built contour wrongly encircles {p:.5g}")


def make_C_D(params, x: int, t: int, n_per: int = 512):
    """Kernel contours for the height-transform determinant at (x, t).

    Returns a dict with:
      C_in   small circle around {0} u {v q^k}, used for n >= 0 rows,
      C_out  large circle (same enclosed poles) inside inf(xi/s), for n < 0,
      D      union of circles around {d} u {xi_k s_k},
      C1_in / C1_out  like C but excluding v itself (poles {v q^k, k>=1}),
      D1     circles around {xi_k s_k} only, excluding d.
    All encirclement predicates are verified by winding numbers.
    """
    params.check_basic()
    params.check_placements()
    q, v, d = params.q, params.v, params.d
    xs = params.xi_s()[: max(x - 1, 0)]
    xos = params.xi_over_s()[: max(x - 1, 0)]
    d_poles = [d] + list(xs)
    # excluded from D: zeros of the F-ratio and everything C encircles
    d_excl = [p / q for p in d_poles] if q > 0 else []
    d_excl += list(xos)
    # poles of 1/F at w = wp v q^j all sit below v < leftmost(D): no exclusion
    # work needed for the coupling factor in either wp regime
    inf_right = min(xos) if len(xos) else (min(d_excl) if d_excl else 2.0 * d)
    r_cap = min(d_poles)  # D must stay right of C
    cap = min(xs) if len(xs) else 2.0 * d  # Psi may pass above d; not above xi s
    if v > 0:
        # C hugs v from above (Psi's outermost pole); C1 excludes v but keeps
        # {v q^k, k >= 1} and their limit 0: inner radius hugs qv for n >= 0,
        # outer radius hugs v from below for n < 0
        r_C_in = v + 0.25 * (min(cap, 2.0 * v) - v)
        r_C1_in = q * v + 0.15 * (v - q * v) if q > 0 else 0.3 * v
        r_C1_out = v - 0.08 * (v - q * v)
        c1_poles = ([0.0] + [v * q**k for k in range(1, 40)]) if q > 0 else [0.0]
    else:
        r_C_in = 0.35 * min(cap, d)
        r_C1_in = 0.2 * min(cap, d)
        r_C1_out = 0.3 * min(cap, d)
        c1_poles = [0.0]
    c_poles = [0.0] + ([v * q**k for k in range(40)] if v > 0 else [])
    r_C_out_hi = min(xos) if len(xos) else d / q if q > 0 else 4 * d
    r_C_out = max(xs.max() if len(xs) else d, d) * 0.15 + 0.85 * r_C_out_hi
    inner_gap = r_C1_in  # the D family only needs to clear the C1/A contour
    contours = {
        "C_in": origin_circle(r_C_in, n_per),
        "C_out": origin_circle(r_C_out, n_per),
        "C1_in": origin_circle(r_C1_in, n_per),
        "C1_out": origin_circle(r_C1_out, n_per),
        "D": enclosing_circles(d_poles, d_excl, n_per, inner_limit=inner_gap),
        "D1": (enclosing_circles(list(xs), d_excl + [d], n_per,
                                 inner_limit=inner_gap)
               if len(xs) else None),
    }
    for p in c_poles:
        if contours["C_in"].winding(p) != 1 or contours["C_out"].winding(p) != 1:
            raise NoAdmissibleContour(f"C fails to encircle pole {p:.5g}")
    for p in c1_poles:
        if contours["C1_in"].winding(p) != 1:
            raise NoAdmissibleContour(f"C1 fails to encircle pole {p:.5g}")
    if v > 0 and contours["C1_in"].winding(v) != 0:
        raise NoAdmissibleContour("C1 must exclude v")
    if t >= 1:
        for ut in params.u[:t]:
            if contours["D"].winding(1.0 / ut) != 0:
                raise NoAdmissibleContour("D must exclude 1/u_t")
    return contours


def steep_check(g, contour: Contour, varsigma: float) -> dict:
    """Diagnostic: is Re g extremal at the node nearest varsigma, and is it
    monotone along each angular half of every component?

    Returns a report dict; never raises (purely diagnostic).
    """
    report = {"components": [], "extremum_at_varsigma": True, "monotone": True}
    n = contour.n_per
    for ci in range(len(contour.centers)):
        nodes = contour.nodes[ci * n : (ci + 1) * n]
        vals = np.real(g(nodes))
        i_near = int(np.argmin(np.abs(nodes - varsigma)))
        i_max = int(np.argmax(vals))
        i_min = int(np.argmin(vals))
        # monotonicity along theta in (0, pi): finite differences of Re g
        upper = vals[: n // 2 + 1]
        diffs = np.diff(upper)
        mono_dec = bool(np.all(diffs <= 1e-12 * np.max(np.abs(vals))))
        mono_inc = bool(np.all(diffs >= -1e-12 * np.max(np.abs(vals))))
        comp = {
            "max_re_g": float(vals[i_max]),
            "min_re_g": float(vals[i_min]),
            "argmax_node": complex(nodes[i_max]),
            "argmin_node": complex(nodes[i_min]),
            "nearest_node": complex(nodes[i_near]),
            "extremum_is_nearest": i_max == i_near or i_min == i_near,
            "monotone_half": mono_dec or mono_inc,
            "flat": bool(np.ptp(vals) < 1e-12 * (1 + np.max(np.abs(vals)))),
        }
        report["components"].append(comp)
        report["extremum_at_varsigma"] &= comp["extremum_is_nearest"] or comp["flat"]
        report["monotone"] &= comp["monotone_half"] or comp["flat"]
    return report
