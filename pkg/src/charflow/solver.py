"""Numerical solvers and the generalized-solution driver.

Two routes to a solution on a space-time grid:

* :func:`solve_marching` — semi-Lagrangian characteristic marching: each new
  node value is the integrating-factor-weighted foot value plus a trapezoid
  panel of the coupling/kernel/forcing integrands over the one-step segment;
  characteristics that leave through a lateral side within the step pick up
  the integral boundary condition there (explicit in time).
* :func:`solve_picard` — fixed-point iteration of the full integral
  representation u = S u + B u + G u + F on a time window, windows chained
  to cover the horizon.

Plus mollification of rough initial data, the mollified-solution sequence
driver, discrete norms, and the exponential growth-bound fit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .characteristics import CharField, Characteristics, trace_band
from .quadrature import gauss_nodes
from .scenario import DomainWindow, Sampler, Scenario

__all__ = [
    "GridSolution",
    "MollifierConfig",
    "MollifiedSampler",
    "PicardDivergenceError",
    "solve_marching",
    "solve_picard",
    "solve_picard_chain",
    "picard_window_height",
    "mollify",
    "generalized_solution",
    "l2_norm",
    "sup_norm",
    "fit_growth_bound",
    "write_csv",
    "read_csv",
    "write_binary",
    "read_binary",
]


# ---------------------------------------------------------------------------
# Grid solutions


@dataclass
class GridSolution:
    """n-component solution sampled on a uniform space-time grid.

    ``values`` has shape (n, levels, N+1); level 0 holds the initial data at
    the nodes. Point queries interpolate bilinearly.
    """

    xs: np.ndarray
    dt: float
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.xs.size - 1

    @property
    def levels(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return (self.levels - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.levels) * self.dt

    @property
    def grid(self) -> np.ndarray:
        return self.xs

    def __call__(self, k, x, t):
        """Bilinear evaluation of component k (1-based); vectorized in x, t."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        scalar = x.ndim == 0 and t.ndim == 0
        x, t = np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(t))
        h = self.xs[1] - self.xs[0]
        ix = np.clip(((x - self.xs[0]) / h).astype(int), 0, self.n_cells - 1)
        wx = np.clip((x - self.xs[ix]) / h, 0.0, 1.0)
        it = np.clip((t / self.dt).astype(int), 0, self.levels - 2)
        wt = np.clip((t / self.dt) - it, 0.0, 1.0)
        v = self.values[k - 1]
        lo = (1.0 - wx) * v[it, ix] + wx * v[it, ix + 1]
        hi = (1.0 - wx) * v[it + 1, ix] + wx * v[it + 1, ix + 1]
        out = (1.0 - wt) * lo + wt * hi
        return float(out[0]) if scalar else out

    def level_index(self, t: float) -> int:
        idx = int(round(t / self.dt))
        if abs(idx * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a stored level (dt={self.dt})")
        return min(idx, self.levels - 1)


def l2_norm(u: GridSolution, level: int, j: int | None = None) -> float:
    """Trapezoid L2(0,1) norm at a time level: one component or max over j."""
    if j is not None:
        return float(np.sqrt(np.trapz(u.values[j - 1, level] ** 2, u.xs)))
    return max(l2_norm(u, level, jj) for jj in range(1, u.n + 1))


def sup_norm(u: GridSolution, window: tuple[float, float] | None = None) -> float:
    """Max absolute nodal value over the levels inside ``window`` (or all)."""
    if window is None:
        return float(np.max(np.abs(u.values)))
    lo = int(np.ceil(window[0] / u.dt - 1e-9))
    hi = int(np.floor(window[1] / u.dt + 1e-9))
    lo, hi = max(lo, 0), min(hi, u.levels - 1)
    if hi < lo:
        raise ValueError("window contains no stored levels")
    return float(np.max(np.abs(u.values[:, lo:hi + 1, :])))


# ---------------------------------------------------------------------------
# File formats

_BIN_MAGIC = b"CFS1"


def write_csv(u: GridSolution, path) -> None:
    n = u.n
    with open(path, "w") as fh:
        fh.write("x,t," + ",".join(f"u_{j}" for j in range(1, n + 1)) + "\n")
        for lev in range(u.levels):
            t = lev * u.dt
            for i, x in enumerate(u.xs):
                vals = ",".join(f"{u.values[j, lev, i]:.17g}" for j in range(n))
                fh.write(f"{x:.17g},{t:.17g},{vals}\n")


def read_csv(path) -> GridSolution:
    data = np.genfromtxt(path, delimiter=",", names=True)
    xs = np.unique(data["x"])
    ts = np.unique(data["t"])
    n = len(data.dtype.names) - 2
    values = np.empty((n, ts.size, xs.size))
    for j in range(n):
        values[j] = data[f"u_{j + 1}"].reshape(ts.size, xs.size)
    dt = float(ts[1] - ts[0]) if ts.size > 1 else 1.0
    return GridSolution(xs, dt, values)


def write_binary(u: GridSolution, path) -> None:
    """Compact layout: magic, n, N, levels (int32 LE), dt (float64 LE), then
    row-major (component, level, node) float64 LE values."""
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<iiid", u.n, u.n_cells, u.levels, u.dt))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_binary(path) -> GridSolution:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BIN_MAGIC:
            raise ValueError("not a charflow binary solution file")
        n, ncells, levels, dt = struct.unpack("<iiid", fh.read(20))
        values = np.frombuffer(fh.read(), dtype="<f8").reshape(n, levels, ncells + 1)
    return GridSolution(np.linspace(0.0, 1.0, ncells + 1), dt, values.astype(float))


# ---------------------------------------------------------------------------
# Semi-Lagrangian marching solver


def _rk4_time(a_fn, x0, t1, t0, nsub=2):
    """Integrate dX/dtau = a(X, tau) from t1 to t0 (vectorized; t0, t1 arrays ok)."""
    x = np.array(x0, dtype=float, copy=True)
    h = (np.asarray(t0, dtype=float) - t1) / nsub
    tau = np.broadcast_to(np.asarray(t1, dtype=float), x.shape).copy() \
        if np.ndim(t1) == 0 else np.array(t1, dtype=float, copy=True)
    for _ in range(nsub):
        k1 = a_fn(x, tau)
        k2 = a_fn(x + 0.5 * h * k1, tau + 0.5 * h)
        k3 = a_fn(x + 0.5 * h * k2, tau + 0.5 * h)
        k4 = a_fn(x + h * k3, tau + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tau = tau + h
    return x


class _BoundaryQuad:
    """Gauss-Legendre panels aligned to the grid for the boundary integral."""

    def __init__(self, xs: np.ndarray, order: int = 8):
        ref_x, ref_w = gauss_nodes(order)
        mid = 0.5 * (xs[1:] + xs[:-1])
        half = 0.5 * (xs[1:] - xs[:-1])
        self.eta = (mid[:, None] + half[:, None] * ref_x[None, :]).ravel()
        self.w = (half[:, None] * ref_w[None, :]).ravel()
        h = xs[1] - xs[0]
        self.il = np.clip(((self.eta - xs[0]) / h).astype(int), 0, xs.size - 2)
        self.frac = (self.eta - xs[self.il]) / h

    def interp(self, row: np.ndarray) -> np.ndarray:
        return (1.0 - self.frac) * row[self.il] + self.frac * row[self.il + 1]

    def integrate_against(self, kernel_vals: np.ndarray, row: np.ndarray) -> float:
        return float(np.dot(self.w, kernel_vals * self.interp(row)))


def _boundary_value(s, j, tau, u_rows, bq, boundary_override):
    """Right-hand side of the integral boundary condition at time tau.

    ``u_rows`` holds the component node rows used for the integral (the most
    recent completed level; explicit treatment)."""
    if boundary_override is not None:
        return float(boundary_override(j, tau))
    total = 0.0
    for k in range(1, s.n + 1):
        if s.r_is_zero(j, k):
            continue
        kv = np.asarray(s.r_fn(j, k)(bq.eta, tau), dtype=float)
        if kv.ndim == 0:
            kv = np.full(bq.eta.shape, float(kv))
        total += bq.integrate_against(kv, u_rows[k - 1])
    return total


def solve_marching(
    s: Scenario,
    n_cells: int,
    dt: float | None = None,
    T: float | None = None,
    boundary_override=None,
    nsub: int = 2,
) -> GridSolution:
    """March the characteristic representation level by level.

    dt defaults to h / max|a| so one step cannot cross more than about one
    cell; the scheme itself is semi-Lagrangian and stays stable for larger
    steps. ``boundary_override(j, t)`` replaces the integral boundary
    condition with explicit data (used by manufactured-solution tests).
    """
    T = s.T if T is None else float(T)
    xs = np.linspace(0.0, 1.0, n_cells + 1)
    h = 1.0 / n_cells
    if dt is None:
        dt = h / s.max_speed()
    nlev = max(1, int(np.ceil(T / dt - 1e-9)))
    values = np.empty((s.n, nlev + 1, n_cells + 1))
    for j in range(1, s.n + 1):
        values[j - 1, 0] = np.asarray(s.phi[j - 1](xs), dtype=float)
    bq = _BoundaryQuad(xs)

    a_fns = [s.a_fn(j) for j in range(1, s.n + 1)]
    b_fns = {(j, k): s.b_fn(j, k) for j in range(1, s.n + 1) for k in range(1, s.n + 1)}
    g_fns = {(j, k): s.g_fn(j, k) for j in range(1, s.n + 1) for k in range(1, s.n + 1)}

    def full(vals, shape):
        arr = np.asarray(vals, dtype=float)
        return np.full(shape, float(arr)) if arr.ndim == 0 else arr

    for lev in range(nlev):
        t_old = lev * dt
        t_new = t_old + dt
        u_old = values[:, lev, :]
        # cumulative domain-kernel integrals at the completed level, per (j, k)
        csum = {}
        for j in range(1, s.n + 1):
            acc = None
            for k in range(1, s.n + 1):
                if s.g_is_zero(j, k):
                    continue
                gk = full(g_fns[(j, k)](xs, t_old), xs.shape) * u_old[k - 1]
                term = np.concatenate(([0.0], np.cumsum(0.5 * (gk[1:] + gk[:-1]) * np.diff(xs))))
                acc = term if acc is None else acc + term
            csum[j] = acc

        for j in range(1, s.n + 1):
            a_fn = a_fns[j - 1]
            bnd = s.exit_abscissa(j)
            feet = _rk4_time(lambda xx, tt: full(a_fn(xx, tt), xx.shape), xs, t_new, t_old, nsub)
            out = feet < 0.0 if j <= s.m else feet > 1.0

            foot_x = np.clip(feet, 0.0, 1.0)
            foot_t = np.full(xs.shape, t_old)
            u0 = np.interp(foot_x, xs, u_old[j - 1])

            if np.any(out):
                idx = np.nonzero(out)[0]
                tau_e = _exit_times(a_fn, xs[idx], t_new, t_old, bnd, full)
                foot_x[idx] = bnd
                foot_t[idx] = tau_e
                for pos, i in enumerate(idx):
                    u0[i] = _boundary_value(s, j, float(tau_e[pos]), u_old, bq, boundary_override)

            # integrating factor over the step (trapezoid of b_jj/a_j)
            if not s.b_is_zero(j, j):
                q_new = full(b_fns[(j, j)](xs, t_new), xs.shape) / full(a_fn(xs, t_new), xs.shape)
                q_foot = full(b_fns[(j, j)](foot_x, foot_t), xs.shape) / full(a_fn(foot_x, foot_t), xs.shape)
                cfac = np.exp(0.5 * (q_new + q_foot) * (foot_x - xs))
            else:
                cfac = np.ones_like(xs)

            # trapezoid of d_j * (f - sum b_jk u_k - sum int g u) over the segment
            integrand_new = np.zeros_like(xs)
            integrand_foot = np.zeros_like(xs)
            if not s.f_is_zero(j):
                integrand_new += full(s.f_fn(j)(xs, t_new), xs.shape)
                integrand_foot += full(s.f_fn(j)(foot_x, foot_t), xs.shape)
            for k in range(1, s.n + 1):
                if k == j or s.b_is_zero(j, k):
                    continue
                # values at the new level are not known yet: lag to t_old
                integrand_new -= full(b_fns[(j, k)](xs, t_new), xs.shape) * u_old[k - 1]
                integrand_foot -= full(b_fns[(j, k)](foot_x, foot_t), xs.shape) \
                    * np.interp(foot_x, xs, u_old[k - 1])
            if csum[j] is not None:
                integrand_new -= csum[j]
                integrand_foot -= np.interp(foot_x, xs, csum[j])
            d_new = 1.0 / full(a_fn(xs, t_new), xs.shape)
            d_foot = cfac / full(a_fn(foot_x, foot_t), xs.shape)
            seg = 0.5 * (xs - foot_x) * (d_new * integrand_new + d_foot * integrand_foot)

            values[j - 1, lev + 1] = cfac * u0 + seg
    return GridSolution(xs, dt, values)


def _exit_times(a_fn, x0, t1, t0, bnd, full):
    """Times at which backward characteristics from (x0, t1) reach the side."""
    x0 = np.asarray(x0, dtype=float)
    a0 = full(a_fn(x0, t1), x0.shape)
    tau = np.clip(t1 - (x0 - bnd) / a0, t0, t1)
    for _ in range(8):
        x_at = _rk4_time(lambda xx, tt: full(a_fn(xx, tt), xx.shape), x0, t1, tau, 2)
        resid = x_at - bnd
        if np.max(np.abs(resid)) < 1e-13:
            break
        slope = full(a_fn(x_at, tau), x0.shape)
        tau = np.clip(tau - resid / slope, t0, t1)
    return tau


# ---------------------------------------------------------------------------
# Picard fixed-point solver on time windows


class PicardDivergenceError(RuntimeError):
    def __init__(self, window: DomainWindow, deltas, suggestion: float):
        super().__init__(
            f"no contraction on window [{window.beta:g}, {window.gamma:g}] "
            f"(last deltas {['%.3g' % d for d in deltas]}); "
            f"retry with window height <= {suggestion:g}")
        self.suggestion = suggestion


def picard_window_height(s: Scenario, dt: float, nx: int = 41, nt: int = 41) -> float:
    """Conservative window height 1/(4 Lambda) from sampled coefficient maxima."""
    X = np.linspace(0.0, 1.0, nx)
    Tt = np.linspace(0.0, s.T, nt)
    XX, TT = np.meshgrid(X, Tt, indexing="ij")

    def mx(fn):
        v = np.asarray(fn(XX, TT), dtype=float)
        return float(np.max(np.abs(v)))

    amin = min(mn for mn in (float(np.min(np.abs(np.asarray(s.a_fn(j)(XX, TT), dtype=float))))
                             for j in range(1, s.n + 1)))
    amin = max(amin, 1e-12)
    max_bjj = max(mx(s.b_fn(j, j)) for j in range(1, s.n + 1))
    max_c = float(np.exp(max_bjj / amin))
    max_d = max_c / amin
    sum_b = max(sum(mx(s.b_fn(j, k)) for k in range(1, s.n + 1) if k != j)
                for j in range(1, s.n + 1))
    max_g = max(mx(s.g_fn(j, k)) for j in range(1, s.n + 1) for k in range(1, s.n + 1))
    max_r = max(mx(s.r_fn(j, k)) for j in range(1, s.n + 1) for k in range(1, s.n + 1))
    lam = max_d * (sum_b + s.n * max_g) + s.n * max_r * max_c
    height = 1.0 / (4.0 * max(lam, 1e-12))
    return max(min(height, s.T), 2.0 * dt)


def _mat(fn, X, Tm, mask):
    v = np.asarray(fn(X, Tm), dtype=float)
    if v.ndim == 0:
        v = np.full(X.shape, float(v))
    return np.where(mask, v, 0.0)


def _vec(fn, x, t):
    v = np.asarray(fn(x, t), dtype=float)
    if v.ndim == 0:
        v = np.full(np.shape(x), float(v))
    return v


class _LevelStencil:
    """Frozen per-(family, level) data for the representation sweep.

    Everything that does not depend on the iterated field is computed once:
    the characteristic matrix over the grid lattice, trapezoid-times-d_j
    weights, coefficient matrices, the forcing contribution, exit data and
    boundary kernel rows. Iterations then only gather and reduce.
    """

    __slots__ = ("j", "t", "left", "om", "wd", "bmats", "fvec", "lateral",
                 "tau_exit", "c_exit", "rker", "cross_xi", "cross_c",
                 "cross_w", "cross_vals", "has_g", "phi_j_cross")


def _build_stencil(s: Scenario, field: CharField, xs: np.ndarray, j: int, t: float,
                   bq: _BoundaryQuad) -> _LevelStencil:
    P = xs.size
    h = xs[1] - xs[0]
    left = j <= s.m
    lattice = xs[::-1] if left else xs
    om_m, logc_m = trace_band(field, xs, np.full(P, t), lattice)
    if left:
        om_m = om_m[:, ::-1].copy()
        logc_m = logc_m[:, ::-1].copy()

    st = _LevelStencil()
    st.j, st.t, st.left = j, t, left

    valid = ~np.isnan(om_m)
    neg = np.where(valid, om_m < 0.0, False)
    rows = np.arange(P)
    cols = np.arange(P)

    has_cross = np.any(neg, axis=1)
    st.lateral = ~has_cross
    n_neg = np.sum(neg, axis=1)
    if left:
        p0 = n_neg                       # first column with omega >= 0
        exit_col = 0
    else:
        p0 = P - 1 - n_neg               # last column with omega >= 0
        exit_col = P - 1
    st.tau_exit = np.where(st.lateral, np.maximum(om_m[:, exit_col], 0.0), 0.0)

    # initial-axis crossing: linear interpolation inside the sign-change cell
    cross_xi = np.zeros(P)
    cross_c = np.ones(P)
    if np.any(has_cross):
        rr = np.nonzero(has_cross)[0]
        p_in = p0[rr]
        p_out = p_in - 1 if left else p_in + 1
        om_in = om_m[rr, p_in]
        om_out = om_m[rr, p_out]
        frac = om_in / (om_in - om_out)
        cross_xi[rr] = xs[p_in] + frac * (xs[p_out] - xs[p_in])
        cross_c[rr] = np.exp(logc_m[rr, p_in] + frac * (logc_m[rr, p_out] - logc_m[rr, p_in]))
    st.cross_xi = cross_xi
    st.cross_c = cross_c
    st.c_exit = np.where(st.lateral, np.exp(np.where(valid[:, exit_col], logc_m[:, exit_col], 0.0)),
                         cross_c)

    # trapezoid weights over the covered columns [p0..i] (left) or [i..p0]
    if left:
        in_seg = (cols[None, :] >= p0[:, None]) & (cols[None, :] <= rows[:, None])
    else:
        in_seg = (cols[None, :] <= p0[:, None]) & (cols[None, :] >= rows[:, None])
    ww = np.where(in_seg, h, 0.0)
    ww[rows, rows] -= 0.5 * h * in_seg[rows, rows]
    ww[rows, p0] -= 0.5 * h * in_seg[rows, p0]
    delta_star = np.where(has_cross, np.abs(xs[p0] - cross_xi), 0.0)
    ww[rows, p0] += 0.5 * delta_star
    st.cross_w = 0.5 * delta_star

    om_safe = np.where(in_seg, om_m, 0.0)
    st.om = om_safe
    xi_mat = np.broadcast_to(xs, (P, P))
    a_vals = _mat(s.a_fn(j), xi_mat, om_safe, in_seg)
    d_mat = np.where(in_seg, np.exp(np.where(valid, logc_m, 0.0))
                     / np.where(in_seg, a_vals, 1.0), 0.0)
    # the representation integral runs from the exit side to the anchor, so
    # the orientation is negative for right-moving families (exit at xi = 1)
    orient = 1.0 if left else -1.0
    st.wd = orient * ww * d_mat
    st.cross_w = orient * st.cross_w

    st.bmats = {}
    for k in range(1, s.n + 1):
        if k == j or s.b_is_zero(j, k):
            continue
        st.bmats[k] = _mat(s.b_fn(j, k), xi_mat, om_safe, in_seg)
    st.has_g = not s.g_row_zero(j)

    if not s.f_is_zero(j):
        st.fvec = np.sum(st.wd * _mat(s.f_fn(j), xi_mat, om_safe, in_seg), axis=1)
    else:
        st.fvec = np.zeros(P)

    # boundary kernel rows at exit ordinates (lateral rows only)
    st.rker = {}
    lat = np.nonzero(st.lateral)[0]
    if lat.size:
        taus = st.tau_exit[lat]
        for k in range(1, s.n + 1):
            if s.r_is_zero(j, k):
                continue
            kv = np.asarray(s.r_fn(j, k)(bq.eta[None, :], taus[:, None]), dtype=float)
            if kv.ndim != 2:
                kv = np.full((lat.size, bq.eta.size), float(kv))
            st.rker[k] = kv * bq.w[None, :]

    # integrand value at the initial-axis endpoint of the partial cell
    cross_vals = np.zeros(P)
    if np.any(has_cross):
        zeros = np.zeros(P)
        d_at = cross_c / _vec(s.a_fn(j), cross_xi, zeros)
        integrand = np.zeros(P)
        if not s.f_is_zero(j):
            integrand += _vec(s.f_fn(j), cross_xi, zeros)
        for k in range(1, s.n + 1):
            if k != j and not s.b_is_zero(j, k):
                integrand -= _vec(s.b_fn(j, k), cross_xi, zeros) \
                    * np.asarray(s.phi[k - 1](cross_xi), dtype=float)
        if st.has_g:
            inner = np.zeros(P)
            for i in np.nonzero(has_cross)[0]:
                ys = np.linspace(0.0, cross_xi[i], 33)
                for k in range(1, s.n + 1):
                    if s.g_is_zero(j, k):
                        continue
                    gv = _vec(s.g_fn(j, k), ys, np.zeros(ys.size))
                    inner[i] += np.trapz(gv * np.asarray(s.phi[k - 1](ys), dtype=float), ys)
            integrand -= inner
        cross_vals = np.where(has_cross, d_at * integrand, 0.0)
    st.cross_vals = cross_vals
    st.phi_j_cross = np.asarray(s.phi[j - 1](cross_xi), dtype=float)
    return st


def _time_blend_indices(om: np.ndarray, dt: float, top_level: int):
    """Clamped level index and fraction for times in [0, top_level * dt]."""
    pos = np.clip(om, 0.0, top_level * dt) / dt
    idx = np.clip(pos.astype(int), 0, top_level - 1)
    lam = np.clip(pos - idx, 0.0, 1.0)
    return idx, lam


def _eval_level(st: _LevelStencil, s: Scenario, values: np.ndarray, vgl: dict,
                csums: dict, dt: float, top_level: int, bq: _BoundaryQuad,
                boundary_override) -> np.ndarray:
    """Representation S u + B u + G u + F at every node of one level."""
    P = st.om.shape[0]
    idx, lam = _time_blend_indices(st.om, dt, top_level)
    cols = np.broadcast_to(np.arange(P), (P, P))

    acc = st.fvec.copy()
    for k, bmat in st.bmats.items():
        vk = values[k - 1]
        ub = (1.0 - lam) * vk[idx, cols] + lam * vk[idx + 1, cols]
        acc -= np.sum(st.wd * bmat * ub, axis=1)
    if st.has_g:
        cj = csums[st.j]
        cb = (1.0 - lam) * cj[idx, cols] + lam * cj[idx + 1, cols]
        acc -= np.sum(st.wd * cb, axis=1)
    acc += st.cross_w * st.cross_vals

    # S part
    sval = np.where(st.lateral, 0.0, st.cross_c * st.phi_j_cross)
    lat = np.nonzero(st.lateral)[0]
    if lat.size:
        taus = st.tau_exit[lat]
        if boundary_override is not None:
            bvals = np.array([boundary_override(st.j, float(tt)) for tt in taus])
        else:
            tidx, tlam = _time_blend_indices(taus, dt, top_level)
            bvals = np.zeros(lat.size)
            for k, ker in st.rker.items():
                rows_gl = (1.0 - tlam)[:, None] * vgl[k][tidx, :] + tlam[:, None] * vgl[k][tidx + 1, :]
                bvals += np.sum(ker * rows_gl, axis=1)
        sval[lat] = st.c_exit[lat] * bvals
    return sval + acc


def _csum_matrices(s: Scenario, xs: np.ndarray, values: np.ndarray, n_levels: int, dt: float):
    """Per family j: matrix over (level, node) of sum_k int_0^x g_jk u_k dy."""
    out = {}
    ts = np.arange(n_levels) * dt
    Tm = np.broadcast_to(ts[:, None], (n_levels, xs.size))
    Xm = np.broadcast_to(xs[None, :], (n_levels, xs.size))
    dx = np.diff(xs)
    for j in range(1, s.n + 1):
        if s.g_row_zero(j):
            continue
        acc = np.zeros((n_levels, xs.size))
        for k in range(1, s.n + 1):
            if s.g_is_zero(j, k):
                continue
            gv = np.asarray(s.g_fn(j, k)(Xm, Tm), dtype=float)
            if gv.ndim != 2:
                gv = np.full(Xm.shape, float(gv))
            prod = gv * values[k - 1, :n_levels, :]
            acc[:, 1:] += np.cumsum(0.5 * (prod[:, 1:] + prod[:, :-1]) * dx[None, :], axis=1)
        out[j] = acc
    return out


def _gl_values(values: np.ndarray, bq: _BoundaryQuad, n_levels: int):
    out = {}
    for k in range(values.shape[0]):
        v = values[k, :n_levels, :]
        out[k + 1] = (1.0 - bq.frac)[None, :] * v[:, bq.il] + bq.frac[None, :] * v[:, bq.il + 1]
    return out


def solve_picard(
    s: Scenario,
    window: DomainWindow,
    u_init: GridSolution,
    max_iter: int = 200,
    tol: float = 1e-10,
    boundary_override=None,
    chars: Characteristics | None = None,
) -> GridSolution:
    """Fixed-point sweep of u = S u + B u + G u + F on one time window.

    Levels at or below ``window.beta`` are treated as fixed data; levels in
    (beta, gamma] are iterated Jacobi-style until the sup-norm update drops
    below ``tol``. Raises :class:`PicardDivergenceError` when the update grows
    five sweeps in a row.
    """
    xs, dt = u_init.xs, u_init.dt
    h = xs[1] - xs[0]
    if chars is None:
        chars = Characteristics(s, h_xi=max(h, 1.0 / 1024.0))
    lev_lo = int(np.floor(window.beta / dt + 1e-9)) + 1
    lev_hi = min(int(np.floor(window.gamma / dt + 1e-9)), u_init.levels - 1)
    if lev_hi < lev_lo:
        return u_init
    bq = _BoundaryQuad(xs)
    stencils = {}
    for lev in range(lev_lo, lev_hi + 1):
        t = lev * dt
        for j in range(1, s.n + 1):
            stencils[(j, lev)] = _build_stencil(s, chars.field(j), xs, j, t, bq)

    values = u_init.values.copy()
    deltas = []
    grow = 0
    for _ in range(max_iter):
        csums = _csum_matrices(s, xs, values, lev_hi + 1, dt)
        vgl = _gl_values(values, bq, lev_hi + 1) if boundary_override is None else {}
        new_values = values.copy()
        for lev in range(lev_lo, lev_hi + 1):
            for j in range(1, s.n + 1):
                new_values[j - 1, lev, :] = _eval_level(
                    stencils[(j, lev)], s, values, vgl, csums, dt, lev_hi, bq,
                    boundary_override)
        delta = float(np.max(np.abs(new_values[:, lev_lo:lev_hi + 1, :]
                                    - values[:, lev_lo:lev_hi + 1, :])))
        values = new_values
        deltas.append(delta)
        if delta < tol:
            break
        if len(deltas) >= 2 and delta > deltas[-2]:
            grow += 1
            if grow >= 5:
                raise PicardDivergenceError(window, deltas[-6:], window.height / 2.0)
        else:
            grow = 0
    return GridSolution(xs, dt, values)


def solve_picard_chain(
    s: Scenario,
    n_cells: int,
    dt: float | None = None,
    T: float | None = None,
    window_height: float | None = None,
    max_iter: int = 200,
    tol: float = 1e-10,
    boundary_override=None,
) -> GridSolution:
    """Cover [0, T] with Picard windows chained bottom-up."""
    T = s.T if T is None else float(T)
    xs = np.linspace(0.0, 1.0, n_cells + 1)
    h = 1.0 / n_cells
    if dt is None:
        dt = h / s.max_speed()
    if window_height is None:
        window_height = picard_window_height(s, dt)
    nlev = max(1, int(np.ceil(T / dt - 1e-9)))
    values = np.empty((s.n, nlev + 1, n_cells + 1))
    for j in range(1, s.n + 1):
        values[j - 1, :, :] = np.asarray(s.phi[j - 1](xs), dtype=float)[None, :]
    u = GridSolution(xs, dt, values)
    chars = Characteristics(s, h_xi=max(h, 1.0 / 1024.0))
    beta = 0.0
    Tend = nlev * dt
    while beta < Tend - 1e-12:
        gamma = min(beta + window_height, Tend)
        u = solve_picard(s, DomainWindow(beta, gamma), u, max_iter, tol,
                         boundary_override, chars)
        beta = gamma
    return u


# ---------------------------------------------------------------------------
# Mollification and the generalized-solution driver


def _smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z ** 3 * (z * (6.0 * z - 15.0) + 10.0)


@dataclass(frozen=True)
class MollifierConfig:
    """Kernel widths eps_l = eps0 / 2^l and matching boundary clearances."""

    eps0: float = 0.05
    levels: int = 6
    delta_ratio: float = 1.0   # clearance delta_l = delta_ratio * eps_l
    gauss_order: int = 16

    def eps(self, level: int) -> float:
        return self.eps0 / 2.0 ** level

    def delta(self, level: int) -> float:
        return self.delta_ratio * self.eps(level)


class MollifiedSampler(Sampler):
    """Convolution with a polynomial bump times a smooth boundary cutoff.

    The bump is C * (1 - s^2)^4 on [-1, 1] (unit mass); the cutoff rises
    smoothly from 0 on [delta, 2 delta] and mirrors at the right end, so the
    result is a smooth datum supported inside (delta, 1 - delta).
    """

    _BUMP_NORM = 315.0 / 256.0

    def __init__(self, base: Sampler, eps: float, delta: float, gauss_order: int = 16):
        self.base = base
        self.eps = float(eps)
        self.delta = float(delta)
        gx, gw = gauss_nodes(gauss_order)
        self._gx, self._gw = gx, gw
        self._breaks = np.asarray(base.breakpoints(), dtype=float)

    def _kernel(self, sval):
        return self._BUMP_NORM * (1.0 - sval ** 2) ** 4

    def _cutoff(self, x):
        d = self.delta
        if d <= 0.0:
            return np.ones_like(np.asarray(x, dtype=float))
        return _smoothstep((np.asarray(x, dtype=float) - d) / d) * _smoothstep((1.0 - d - np.asarray(x, dtype=float)) / d)

    def _convolve_plain(self, x: np.ndarray) -> np.ndarray:
        # s-integral with no breakpoint in the window: one Gauss panel suffices
        svals = self._gx[None, :]
        vals = np.asarray(self.base(np.clip(x[:, None] - self.eps * svals, 0.0, 1.0)), dtype=float)
        return vals @ (self._gw * self._kernel(self._gx))

    def _convolve_split(self, x: float) -> float:
        cuts = [-1.0, 1.0]
        for b in self._breaks:
            sb = (x - b) / self.eps
            if -1.0 < sb < 1.0:
                cuts.append(sb)
        cuts = sorted(cuts)
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
            sv = mid + half * self._gx
            fv = np.asarray(self.base(np.clip(x - self.eps * sv, 0.0, 1.0)), dtype=float)
            total += half * np.dot(self._gw, self._kernel(sv) * fv)
        return total

    def __call__(self, x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x_arr)
        if self._breaks.size:
            near = np.zeros(x_arr.shape, dtype=bool)
            for b in self._breaks:
                near |= np.abs(x_arr - b) < self.eps * (1.0 + 1e-12)
        else:
            near = np.zeros(x_arr.shape, dtype=bool)
        if np.any(~near):
            out[~near] = self._convolve_plain(x_arr[~near])
        for i in np.nonzero(near)[0]:
            out[i] = self._convolve_split(float(x_arr[i]))
        out *= self._cutoff(x_arr)
        return out if np.ndim(x) else float(out[0])


def mollify(phi: Sampler, cfg: MollifierConfig, level: int) -> MollifiedSampler:
    """Smooth compactly-supported approximation of phi at mollification level l."""
    return MollifiedSampler(phi, cfg.eps(level), cfg.delta(level), cfg.gauss_order)


def sampler_l2_distance(p1, p2, n_fine: int = 4096, breaks=None) -> float:
    """L2(0,1) distance of two samplers on a fine grid split at breakpoints."""
    cuts = [0.0, 1.0]
    if breaks is not None:
        cuts.extend(float(b) for b in breaks if 0.0 < b < 1.0)
    cuts = sorted(set(cuts))
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        m = max(8, int(np.ceil((hi - lo) * n_fine)))
        ys = np.linspace(lo + 1e-12, hi - 1e-12, m + 1)
        diff = np.asarray(p1(ys), dtype=float) - np.asarray(p2(ys), dtype=float)
        total += np.trapz(diff ** 2, ys)
    return float(np.sqrt(total))


@dataclass
class GeneralizedSolutionReport:
    distances: list          # max-over-levels L2 distance between consecutive runs
    phi_l2_errors: list      # ||phi^l - phi|| per level on the fine grid
    converged: bool
    tol: float


def generalized_solution(
    s: Scenario,
    cfg: MollifierConfig,
    n_cells: int,
    dt: float | None = None,
    T: float | None = None,
    tol: float = 1e-3,
):
    """Solve with mollified data for l = 1..levels and track Cauchy distances.

    Numerical convergence is declared when the successive C([0,T], L2)
    distances are non-increasing (5% slack) and end below ``tol``.
    """
    runs = []
    phi_errors = []
    for level in range(1, cfg.levels + 1):
        phis = tuple(mollify(p, cfg, level) for p in s.phi)
        s_l = replace(s, phi=phis, _cache=s._cache)
        runs.append(solve_marching(s_l, n_cells, dt, T))
        err = max(sampler_l2_distance(phis[j], s.phi[j],
                                      breaks=s.phi[j].breakpoints()) for j in range(s.n))
        phi_errors.append(err)
    distances = []
    for u_prev, u_next in zip(runs[:-1], runs[1:]):
        dist = max(
            max(l2_norm_diff(u_prev, u_next, lev, j) for j in range(1, s.n + 1))
            for lev in range(u_prev.levels))
        distances.append(dist)
    mono = all(d2 <= d1 * 1.05 + 1e-12 for d1, d2 in zip(distances[:-1], distances[1:]))
    converged = mono and distances[-1] < tol
    return runs, GeneralizedSolutionReport(distances, phi_errors, converged, tol)


def l2_norm_diff(u1: GridSolution, u2: GridSolution, level: int, j: int) -> float:
    d = u1.values[j - 1, level] - u2.values[j - 1, level]
    return float(np.sqrt(np.trapz(d ** 2, u1.xs)))


# ---------------------------------------------------------------------------
# Exponential growth-bound fit


def fit_growth_bound(times: np.ndarray, histories, phi_norms, safety: float = 1.05):
    """Fit (M, omega) with max_j ||u^l(., t)|| <= M e^{omega t} max_j ||phi^l||.

    The histories are normalized by their initial-data norms; omega is the
    (nonnegative) least-squares slope of the log envelope and M covers the
    envelope with a small safety factor. This fit is a numerical construction;
    the underlying bound only asserts existence of such constants.
    """
    times = np.asarray(times, dtype=float)
    envelope = np.zeros_like(times)
    for hist, pn in zip(histories, phi_norms):
        if pn <= 0.0:
            continue
        envelope = np.maximum(envelope, np.asarray(hist, dtype=float) / pn)
    if np.max(envelope) <= 0.0:
        return 1.0, 0.0
    pos = envelope > 0.0
    logq = np.log(envelope[pos])
    tt = times[pos]
    if tt.size >= 2 and np.ptp(tt) > 0.0:
        slope = float(np.polyfit(tt, logq, 1)[0])
    else:
        slope = 0.0
    omega = max(slope, 0.0)
    M = float(np.max(envelope * np.exp(-omega * times))) * safety
    return M, omega
