"""Boundary-condition generators, vectorized ensemble simulation, empirical
statistics, and the translation-invariance (Burke) test harness.

All randomness flows through counter-based Philox blocks keyed by
(seed, row/site label); replica r always reads slot r of each block, so
results are bit-identical under any chunking of the replica range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import qcalc
from .errors import RegimeViolation
from .rngstreams import block_uniforms, label_hash
from .vertex import ModelParams, transition_weights

_LBL_M0 = 1
_LBL_JBC = 2
_LBL_BULK = 3
_LBL_SHIFT = 4


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary law on the two lattice axes.

    kinds: step (j = J, m = 0 deterministically), step_qnb (m = 0,
    j ~ qNB(q^-J, q^J xi1 s1 u_t) with edge_weight = xi1 s1), double_qnb,
    stationary (double_qnb at v = d), coupled (wp-correlated m-axis plus an
    overall qNB shift variable m).
    """

    kind: str
    v: float = 0.0
    d: float = 0.0
    wp: float = 0.0
    edge_weight: float = 1.0  # xi_1 s_1 for the step_qnb kind

    def effective(self, params: ModelParams) -> "BoundarySpec":
        if self.kind == "stationary":
            return BoundarySpec("double_qnb", v=self.d, d=self.d)
        if self.kind == "step_bernoulli":
            return BoundarySpec("step_qnb", edge_weight=self.edge_weight)
        return self

    def validate(self, params: ModelParams):
        xs_min = params.xi_s().min()
        k = self.effective(params)
        if k.kind == "double_qnb":
            if not 0.0 <= k.v < xs_min:
                raise RegimeViolation("double-sided boundary needs 0 <= v < inf(xi s)")
            if not 0.0 < k.d < xs_min:
                raise RegimeViolation("boundary needs 0 < d < inf(xi s)")
        elif k.kind == "coupled":
            if k.d <= max(0.0, k.v):
                raise RegimeViolation("coupled boundary needs d > max(0, v)")
            if k.wp >= 1.0 and k.v >= 0.0:
                raise RegimeViolation("coupled regime needs wp < 1 when v >= 0")
        elif k.kind not in ("step", "step_qnb"):
            raise RegimeViolation(f"unknown boundary kind {self.kind}")


def _j_boundary_pmfs(spec: BoundarySpec, params: ModelParams, t_max: int):
    """Per-row pmf tables of j_1^t on {0..J}."""
    q, J = params.q, params.J
    out = []
    for t in range(1, t_max + 1):
        if spec.kind == "step":
            pmf = np.zeros(J + 1)
            pmf[J] = 1.0
        else:
            dd = spec.edge_weight if spec.kind == "step_qnb" else spec.d
            par = qcalc.QNBParams(q**-J, q**J * params.row_u(t) * dd, J)
            pmf = np.array([qcalc.pmf_qnb(k, par, q) for k in range(J + 1)])
        out.append(pmf)
    return out


def _m_boundary_pmfs(spec: BoundarySpec, params: ModelParams, n_sites: int):
    """Per-site CDFs of m_x^0 (independent kinds only)."""
    out = []
    for ix in range(n_sites):
        if spec.kind in ("step", "step_qnb"):
            out.append(np.array([1.0]))
        else:
            xi, s = params.xi[ix], params.s[ix]
            par = qcalc.QNBParams(s * s, spec.v / (xi * s))
            out.append(qcalc.qnb_cdf(par, params.q))
    return out


def coupled_site_weight(i_site: int, M: int, Mbar: int, spec: BoundarySpec,
                        params: ModelParams) -> float:
    """Sequential coupled boundary mass function l^(i)(M; Mbar) for column
    i_site (lattice x = i_site, so site arrays index i_site - 2)."""
    xi, s = params.site(i_site)
    q, v, wp = params.q, spec.v, spec.wp
    a = wp * q**Mbar
    out = (v / (xi * s)) ** M
    out *= qcalc.qpoch(s * s, q, M) * qcalc.qpoch(a, q, M)
    out /= qcalc.qpoch(v * a * s / xi, q, M) * qcalc.qpoch(q, q, M)
    out *= qcalc.qpoch_inf(v * a * s / xi, q) * qcalc.qpoch_inf(v / (xi * s), q)
    out /= qcalc.qpoch_inf(v * a / (xi * s), q) * qcalc.qpoch_inf(v * s / xi, q)
    return float(out)


def _coupled_cdf(i_site, Mbar, spec, params, tail=1e-12):
    vals = []
    tot = 0.0
    M = 0
    while tot < 1.0 - tail and M < 400:
        w = coupled_site_weight(i_site, M, Mbar, spec, params)
        vals.append(w)
        tot += w
        M += 1
    return np.cumsum(vals)


def sample_boundary(spec: BoundarySpec, params: ModelParams, window: int,
                    rng: np.random.Generator):
    """One replica's boundary draw: (m_x^0 for x=2..window+1, j_1^t table
    callable is left to the row sampler, shift m)."""
    spec.validate(params)
    eff = spec.effective(params)
    q = params.q
    if eff.kind in ("step", "step_qnb"):
        return np.zeros(window, dtype=int), 0
    if eff.kind == "double_qnb":
        m0 = np.empty(window, dtype=int)
        for ix in range(window):
            xi, s = params.xi[ix], params.s[ix]
            m0[ix] = qcalc.sample_qnb(qcalc.QNBParams(s * s, eff.v / (xi * s)), q, rng)
        return m0, 0
    # coupled: the overall shift m ~ qNB(wp, v/d), then sequential l-weights
    if eff.wp == 0.0:
        m = int(qcalc.sample_qpoi(eff.v / eff.d, q, rng))
    else:
        m = int(qcalc.sample_qnb(qcalc.QNBParams(eff.wp, eff.v / eff.d), q, rng))
    m0 = np.empty(window, dtype=int)
    running = m
    for ix in range(window):
        cdf = _coupled_cdf(ix + 2, running, eff, params)
        m0[ix] = int(np.searchsorted(cdf, rng.random(), side="right"))
        running += m0[ix]
    return m0, m


@dataclass
class SimResult:
    """Per-replica height samples at the probes, plus optional tallies."""

    n_replicas: int
    seed: int
    probes: list
    heights: dict  # (x,t) -> int array (n_replicas,)
    q: float = 0.0
    shift_m: np.ndarray | None = None  # coupled shift per replica
    overflow: int = 0
    m_tallies: dict = field(default_factory=dict)  # (x,t) -> count array
    j_tallies: dict = field(default_factory=dict)
    m_final: np.ndarray | None = None  # last row occupations (optional)


class _TransitionCache:
    """Cumulative outcome tables P(j2 <= k | i1, j1) per row parameter set."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.tables = {}

    def cum(self, key, u_xi: float, s: float, i_max: int) -> np.ndarray:
        J = self.params.J
        tab = self.tables.get(key)
        have = -1 if tab is None else tab.shape[0] - 1
        if have >= i_max:
            return tab
        new = np.zeros((i_max + 33, J + 1, J + 1))
        if tab is not None:
            new[: tab.shape[0]] = tab
            lo = tab.shape[0]
        else:
            lo = 0
        for i1 in range(lo, new.shape[0]):
            for j1 in range(J + 1):
                i2s, probs = transition_weights(i1, j1, u_xi, s,
                                                self.params.q, J)
                row = np.zeros(J + 1)
                for i2, pr in zip(i2s, probs):
                    row[i1 + j1 - i2] = pr
                new[i1, j1] = np.cumsum(row)
        self.tables[key] = new
        return new


def simulate(params: ModelParams, spec: BoundarySpec, probes, n_replicas: int,
             seed: int, window: int | None = None, collect_tallies=(),
             keep_final_row: bool = False) -> SimResult:
    """Vectorized quadrant simulation; deterministic in (params, spec, seed).

    probes: list of (x, t); collect_tallies: list of (x, t) sites at which to
    tally the marginal law of m_x^t and j_x^t (for the Burke harness).
    """
    spec.validate(params)
    eff = spec.effective(params)
    probes = [tuple(p) for p in probes]
    t_max = max(p[1] for p in probes) if probes else 0
    if collect_tallies:
        t_max = max(t_max, max(t for _, t in collect_tallies))
    x_probe = max(p[0] for p in probes) if probes else 2
    if collect_tallies:
        x_probe = max(x_probe, max(x for x, _ in collect_tallies))
    if window is None:
        window = (x_probe - 1) + t_max * params.J + 20
    n_sites = window
    if len(params.xi) < n_sites or len(params.u) < t_max:
        raise RegimeViolation(
            f"params cover {len(params.xi)} sites / {len(params.u)} rows; "
            f"need {n_sites} / {t_max}")
    q, J = params.q, params.J

    # ----- boundary row m^0 and coupled shift
    m = np.zeros((n_sites, n_replicas), dtype=np.int32)
    shift = np.zeros(n_replicas, dtype=np.int64)
    if eff.kind == "double_qnb":
        for ix in range(n_sites):
            xi, s = params.xi[ix], params.s[ix]
            par = qcalc.QNBParams(s * s, eff.v / (xi * s))
            u = block_uniforms(seed, label_hash(_LBL_M0, ix), n_replicas)
            m[ix] = qcalc.sample_qnb_from_uniforms(par, q, u)
    elif eff.kind == "coupled":
        u = block_uniforms(seed, label_hash(_LBL_SHIFT), n_replicas)
        if eff.wp == 0.0:
            par = qcalc.QNBParams(0.0, eff.v / eff.d)
            shift = qcalc.sample_qnb_from_uniforms(par, q, u).astype(np.int64)
            for ix in range(n_sites):
                xi, s = params.xi[ix], params.s[ix]
                par = qcalc.QNBParams(s * s, eff.v / (xi * s))
                uu = block_uniforms(seed, label_hash(_LBL_M0, ix), n_replicas)
                m[ix] = qcalc.sample_qnb_from_uniforms(par, q, uu)
        else:
            par = qcalc.QNBParams(eff.wp, eff.v / eff.d)
            shift = qcalc.sample_qnb_from_uniforms(par, q, u).astype(np.int64)
            cdf_cache = {}
            running = shift.copy()
            for ix in range(n_sites):
                uu = block_uniforms(seed, label_hash(_LBL_M0, ix), n_replicas)
                vals = np.empty(n_replicas, dtype=np.int32)
                for r in range(n_replicas):
                    key = (ix, int(running[r]))
                    cdf = cdf_cache.get(key)
                    if cdf is None:
                        cdf = _coupled_cdf(ix + 2, int(running[r]), eff, params)
                        cdf_cache[key] = cdf
                    vals[r] = np.searchsorted(cdf, uu[r], side="right")
                m[ix] = vals
                running += vals

    # ----- probe bookkeeping
    probe_cols = sorted({p[0] for p in probes})
    minus_m0 = {xp: m[: xp - 1].sum(axis=0).astype(np.int64) for xp in probe_cols}
    cum_j = {xp: np.zeros(n_replicas, dtype=np.int64) for xp in probe_cols}
    heights = {}
    m_tallies = {}
    j_tallies = {}
    tally_sites = set(collect_tallies)
    for (xt, tt) in tally_sites:
        if tt == 0:
            m_tallies[(xt, 0)] = _bincount(m[xt - 2])

    j_pmfs = _j_boundary_pmfs(eff, params, t_max)
    cache = _TransitionCache(params)
    overflow = 0
    j_row = np.empty_like(m)

    # ----- row sweep
    for t in range(1, t_max + 1):
        cum = np.cumsum(j_pmfs[t - 1])
        u_j = block_uniforms(seed, label_hash(_LBL_JBC, t), n_replicas)
        j_cur = np.searchsorted(cum, u_j, side="right").astype(np.int32)
        j_cur = np.minimum(j_cur, J)
        u_blk = block_uniforms(seed, label_hash(_LBL_BULK, t),
                               n_sites * n_replicas).reshape(n_sites, n_replicas)
        u_t = params.row_u(t)
        if J == 1:
            _sweep_row_j1(m, j_cur, u_blk, params, u_t, j_row)
        else:
            _sweep_row_general(m, j_cur, u_blk, params, u_t, cache, j_row)
        # j_cur now holds the exits at the right window edge
        overflow += int(j_cur.sum())
        for xp in probe_cols:
            cum_j[xp] += j_row[xp - 2]
        for (xt, tt) in tally_sites:
            if tt == t:
                m_tallies[(xt, t)] = _bincount(m[xt - 2])
                j_tallies[(xt, t)] = _bincount(j_row[xt - 2])
        for p in probes:
            if p[1] == t:
                heights[p] = (cum_j[p[0]] - minus_m0[p[0]]).copy()

    for p in probes:
        if p[1] == 0:
            heights[p] = -minus_m0[p[0]].copy()
    return SimResult(n_replicas, seed, probes, heights, q=q,
                     shift_m=shift, overflow=overflow,
                     m_tallies=m_tallies, j_tallies=j_tallies,
                     m_final=m if keep_final_row else None)


def _sweep_row_j1(m, j_cur, u_blk, params, u_t, j_row):
    """In-place row update for J = 1 (Bernoulli horizontal channels)."""
    n_sites = m.shape[0]
    qpow_max = 64
    qpow = params.q ** np.arange(qpow_max)
    for ix in range(n_sites):
        s = params.s[ix]
        su = s * params.xi[ix] * u_t
        denom = 1.0 - su
        g = np.minimum(m[ix], qpow_max - 1)
        qg = qpow[g]
        p_j0 = (-su + qg * su) / denom      # (g,0) -> (g-1,1)
        p_j1 = (-su + s * s * qg) / denom   # (g,1) -> (g,1)
        p_out1 = np.where(j_cur == 1, p_j1, p_j0)
        j_out = (u_blk[ix] < p_out1).astype(np.int32)
        m[ix] += j_cur - j_out
        j_cur[:] = j_out
        j_row[ix] = j_out


def _sweep_row_general(m, j_cur, u_blk, params, u_t, cache, j_row):
    """In-place row update for general J via cumulative outcome tables."""
    n_sites = m.shape[0]
    J = params.J
    for ix in range(n_sites):
        xi, s = params.xi[ix], params.s[ix]
        i_max = int(m[ix].max())
        tab = cache.cum((xi, s, u_t), xi * u_t, s, i_max)
        G = tab[m[ix], j_cur]  # (n_replicas, J+1) cumulative over j2
        j_out = (u_blk[ix][:, None] > G).sum(axis=1).astype(np.int32)
        j_out = np.minimum(j_out, J)
        m[ix] += j_cur - j_out
        j_cur[:] = j_out
        j_row[ix] = j_out


def _bincount(arr, minlength=40):
    return np.bincount(arr, minlength=minlength)


# ----------------------------------------------------------------- statistics


def empirical_qlaplace(result: SimResult, probe, zeta: float,
                       shifted: bool = False):
    """(mean, jackknife stderr) of 1/(zeta q^(H[-m]);q)_inf at a probe."""
    h = result.heights[tuple(probe)].astype(np.int64)
    if shifted:
        if result.shift_m is None:
            raise RegimeViolation("shifted transform needs a coupled run")
        h = h - result.shift_m
    lo, hi = int(h.min()), int(h.max())
    table = qcalc.qlaplace_weight_vec(np.arange(lo, hi + 1), zeta, _q_of(result))
    vals = table[h - lo]
    n = len(vals)
    mean = float(vals.mean())
    # delete-1 jackknife of the mean
    jk = (n * mean - vals) / (n - 1)
    stderr = math.sqrt((n - 1) / n * float(np.sum((jk - jk.mean()) ** 2)))
    return mean, stderr


def _q_of(result: SimResult) -> float:
    return result.q


def tv_distance(counts: np.ndarray, pmf: np.ndarray) -> float:
    """Total variation between empirical counts and a reference pmf, on the
    support that carries >= 1 - 1e-9 of the reference mass."""
    n = counts.sum()
    k = _support_cut(pmf)
    c = np.zeros(k + 1)
    c[: min(len(counts), k)] = counts[: min(len(counts), k)]
    c[k] = n - c[:k].sum()
    p = np.append(pmf[:k], max(1.0 - pmf[:k].sum(), 0.0))
    return 0.5 * float(np.abs(c / n - p).sum())


def _support_cut(pmf: np.ndarray, mass=1.0 - 1e-9) -> int:
    c = np.cumsum(pmf)
    k = int(np.searchsorted(c, mass)) + 1
    return min(max(k, 2), len(pmf))


def tv_null_band(pmf: np.ndarray, n: int, n_boot: int = 400,
                 boot_seed: int = 1234) -> tuple[float, float]:
    """(mean, sd) of the TV statistic under the null, by parametric bootstrap."""
    k = _support_cut(pmf)
    p = np.append(pmf[:k], max(1.0 - pmf[:k].sum(), 0.0))
    rng = np.random.default_rng(boot_seed)
    draws = rng.multinomial(n, p / p.sum(), size=n_boot)
    tv = 0.5 * np.abs(draws / n - p).sum(axis=1)
    return float(tv.mean()), float(tv.std())


def burke_test(params: ModelParams, d: float, window: tuple[int, int],
               n_replicas: int, seed: int, v: float | None = None) -> dict:
    """Marginal-law and independence diagnostics for the stationary model.

    Simulates boundary (v or d, d) and, for every vertex (x, t) in the
    window, compares the empirical law of m_x^t against qNB(s^2, d/(xi s))
    and of j_x^t against qNB(q^-J, q^J d u_t), reporting TV z-scores against
    a parametric-bootstrap null band.  v != d is the negative control.
    """
    x_max, t_max = window
    vv = d if v is None else v
    spec = BoundarySpec("double_qnb", v=vv, d=d)
    sites = [(x, t) for x in range(2, x_max + 1) for t in range(0, t_max + 1)]
    res = simulate(params, spec, [(x_max, t_max)], n_replicas, seed,
                   collect_tallies=sites)
    report = {"sites": {}, "max_z_m": 0.0, "max_z_j": 0.0}
    for (x, t) in sites:
        xi, s = params.site(x)
        pmf_m = qcalc.qnb_pmf_table(qcalc.QNBParams(s * s, d / (xi * s)), params.q)
        cm = res.m_tallies[(x, t)]
        tv_m = tv_distance(cm, pmf_m)
        mu, sd = tv_null_band(pmf_m, n_replicas)
        z_m = (tv_m - mu) / sd
        entry = {"tv_m": tv_m, "z_m": z_m}
        if t >= 1:
            par_j = qcalc.QNBParams(params.q**-params.J,
                                    params.q**params.J * params.row_u(t) * d,
                                    params.J)
            pmf_j = np.array([qcalc.pmf_qnb(k, par_j, params.q)
                              for k in range(params.J + 1)])
            cj = res.j_tallies[(x, t)][: params.J + 1]
            tv_j = tv_distance(cj, pmf_j)
            mu_j, sd_j = tv_null_band(pmf_j, n_replicas)
            z_j = (tv_j - mu_j) / sd_j
            entry.update({"tv_j": tv_j, "z_j": z_j})
            report["max_z_j"] = max(report["max_z_j"], z_j)
        report["max_z_m"] = max(report["max_z_m"], z_m)
        report["sites"][(x, t)] = entry
    # pairwise-independence chi-square on adjacent vertical occupations
    report["chi2_pairs"] = _adjacent_chi2(params, d, x_max, t_max,
                                          n_replicas, seed, vv)
    return report


def _adjacent_chi2(params, d, x_max, t_max, n_replicas, seed, v):
    """chi-square independence statistic for (m_x^t, m_{x+1}^t) pairs."""
    spec = BoundarySpec("double_qnb", v=v, d=d)
    res = simulate(params, spec, [(x_max, t_max)], n_replicas, seed,
                   keep_final_row=True)
    m = res.m_final[: x_max - 1]
    out = []
    for ix in range(m.shape[0] - 1):
        a, b = m[ix], m[ix + 1]
        ka, kb = max(2, int(a.max()) + 1), max(2, int(b.max()) + 1)
        tab = np.zeros((ka, kb))
        np.add.at(tab, (a, b), 1.0)
        row = tab.sum(axis=1, keepdims=True)
        col = tab.sum(axis=0, keepdims=True)
        exp = row @ col / tab.sum()
        mask = exp > 5.0
        stat = float(((tab - exp)[mask] ** 2 / exp[mask]).sum())
        dof = max(int(mask.sum()) - int(mask.any(axis=1).sum())
                  - int(mask.any(axis=0).sum()) + 1, 1)
        out.append({"x": ix + 2, "chi2": stat, "dof": dof,
                    "z": (stat - dof) / math.sqrt(2.0 * dof)})
    return out
