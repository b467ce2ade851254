"""Characteristic curves: tracing, inversion, exit points, exact derivatives.

For family j the curve through the anchor (x, t) is the solution
``omega_j(xi, x, t)`` of ``d omega / d xi = 1 / a_j(xi, omega)`` with
``omega_j(x, x, t) = t``. Families j <= m move right (a_j > 0), so omega is
increasing in xi and the smaller-ordinate boundary hit is at xi = 0; families
j > m mirror this with exit side xi = 1.

The scalar API integrates with fixed-step RK4 (step ``h_xi``) and caches one
dense path per anchor; bulk consumers use :func:`trace_band`, which marches
many anchors of one family simultaneously over a shared lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import simpson_dense
from .scenario import Scenario

__all__ = ["TraceError", "ExitPoint", "CharField", "Characteristics", "trace_band"]

_SPEED_FLOOR = 1e-12
_QUANTUM = 1e-12


class TraceError(RuntimeError):
    """Speed magnitude fell below the floor mid-trace, or an out-of-range query."""


def _full(values, shape):
    """Broadcast compiled-expression output (possibly scalar) to ``shape``."""
    arr = np.asarray(values, dtype=float)
    return np.full(shape, float(arr)) if arr.ndim == 0 else arr


@dataclass(frozen=True)
class ExitPoint:
    """Where the backward characteristic leaves the domain.

    kind 'lateral': x is 0 or 1 and tau >= 0 is the boundary ordinate.
    kind 'initial': tau == 0 and x in (0, 1) is the crossing abscissa.
    """

    kind: str
    x: float
    tau: float


class _Path:
    """Dense (xi, omega, L) samples of one characteristic over [0, 1].

    ``L[i]`` is the signed integral of b_jj / a_j from the anchor abscissa to
    xi[i] along the curve, so c_j(xi, x, t) = exp(L at xi).
    """

    __slots__ = ("xi", "omega", "L", "anchor_index", "increasing")

    def __init__(self, xi, omega, L, anchor_index, increasing):
        self.xi = xi
        self.omega = omega
        self.L = L
        self.anchor_index = anchor_index
        self.increasing = increasing


class CharField:
    """Characteristic machinery for one family of a validated scenario."""

    def __init__(self, scenario: Scenario, j: int, h_xi: float = 1.0 / 1024.0):
        if not 1 <= j <= scenario.n:
            raise ValueError(f"family index {j} out of range 1..{scenario.n}")
        self.scenario = scenario
        self.j = j
        self.h_xi = float(h_xi)
        self.exit_x = scenario.exit_abscissa(j)
        self._a = scenario.a_fn(j)
        self._has_bjj = not scenario.b_is_zero(j, j)
        self._q = scenario.b_fn(j, j) if self._has_bjj else None
        self._da_dt = scenario.da_dt_fn(j)
        self._da_dx = scenario.da_dx_fn(j)
        self._paths: dict = {}

    # -- RK4 core ------------------------------------------------------------

    def _rhs(self, xi, omega):
        a = self._a(xi, omega)
        if abs(a) < _SPEED_FLOOR:
            raise TraceError(f"speed a_{self.j}({xi:.6g}, {omega:.6g}) below floor")
        if self._has_bjj:
            return 1.0 / a, self._q(xi, omega) / a
        return 1.0 / a, 0.0

    def _step(self, xi, omega, L, h):
        """One RK4 step of the joint (omega, L) system."""
        k1, q1 = self._rhs(xi, omega)
        k2, q2 = self._rhs(xi + 0.5 * h, omega + 0.5 * h * k1)
        k3, q3 = self._rhs(xi + 0.5 * h, omega + 0.5 * h * k2)
        k4, q4 = self._rhs(xi + h, omega + h * k3)
        omega1 = omega + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        L1 = L + (h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        return omega1, L1

    def _march(self, x, t, target):
        """Dense states from (x, t) to abscissa ``target`` with fixed step."""
        span = target - x
        xs = [x]
        oms = [t]
        Ls = [0.0]
        if span == 0.0:
            return xs, oms, Ls
        nfull = int(abs(span) / self.h_xi)
        h = self.h_xi if span > 0 else -self.h_xi
        xi, om, L = x, t, 0.0
        for _ in range(nfull):
            om, L = self._step(xi, om, L, h)
            xi += h
            xs.append(xi)
            oms.append(om)
            Ls.append(L)
        rem = target - xi
        if abs(rem) > 1e-15:
            om, L = self._step(xi, om, L, rem)
            xs.append(target)
            oms.append(om)
            Ls.append(L)
        return xs, oms, Ls

    # -- cached dense paths ----------------------------------------------------

    def path(self, x: float, t: float) -> _Path:
        key = (int(round(x / _QUANTUM)), int(round(t / _QUANTUM)))
        p = self._paths.get(key)
        if p is not None:
            return p
        xs_dn, om_dn, L_dn = self._march(x, t, 0.0)
        xs_up, om_up, L_up = self._march(x, t, 1.0)
        xi = np.array(xs_dn[::-1] + xs_up[1:])
        omega = np.array(om_dn[::-1] + om_up[1:])
        L = np.array(L_dn[::-1] + L_up[1:])
        p = _Path(xi, omega, L, len(xs_dn) - 1, increasing=self.j <= self.scenario.m)
        if len(self._paths) > 65536:
            self._paths.clear()
        self._paths[key] = p
        return p

    def _refine(self, path: _Path, xi_target: float):
        """(omega, L) at an off-node abscissa via one partial RK4 step."""
        i = int(np.clip(np.searchsorted(path.xi, xi_target), 1, path.xi.size - 1))
        # step from the nearer bracketing node
        if abs(path.xi[i - 1] - xi_target) <= abs(path.xi[i] - xi_target):
            i -= 1
        h = xi_target - path.xi[i]
        if h == 0.0:
            return float(path.omega[i]), float(path.L[i])
        om, L = self._step(float(path.xi[i]), float(path.omega[i]), float(path.L[i]), h)
        return om, L

    def states_at(self, x: float, t: float, xis: np.ndarray):
        """(omega, log c) arrays at arbitrary abscissas on the (x, t) curve."""
        p = self.path(x, t)
        xis = np.asarray(xis, dtype=float)
        i = np.clip(np.searchsorted(p.xi, xis), 1, p.xi.size - 1)
        i = np.where(np.abs(p.xi[i - 1] - xis) <= np.abs(p.xi[i] - xis), i - 1, i)
        xi0 = p.xi[i]
        om = p.omega[i].copy()
        L = p.L[i].copy()
        h = xis - xi0
        move = h != 0.0
        if np.any(move):
            a1 = _full(self._a(xi0, om), om.shape)
            if np.any(np.abs(a1) < _SPEED_FLOOR):
                raise TraceError(f"speed a_{self.j} below floor in states_at")
            q = self._q if self._has_bjj else None

            def rhs(xi, w):
                a = _full(self._a(xi, w), w.shape)
                inv = 1.0 / a
                return inv, (_full(q(xi, w), w.shape) * inv) if q else np.zeros_like(inv)

            k1, q1 = rhs(xi0, om)
            k2, q2 = rhs(xi0 + 0.5 * h, om + 0.5 * h * k1)
            k3, q3 = rhs(xi0 + 0.5 * h, om + 0.5 * h * k2)
            k4, q4 = rhs(xi0 + h, om + h * k3)
            om = om + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            L = L + (h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        return om, L

    # -- public scalar operations ----------------------------------------------

    def trace(self, x: float, t: float, xi: float) -> float:
        """omega_j(xi, x, t): ordinate of the characteristic at abscissa xi."""
        if not 0.0 <= xi <= 1.0 or not 0.0 <= x <= 1.0:
            raise TraceError(f"abscissa out of [0,1]: x={x}, xi={xi}")
        if xi == x:
            return float(t)
        om, _ = self._refine(self.path(x, t), xi)
        return om

    def log_c(self, xi: float, x: float, t: float) -> float:
        """Integral of b_jj / a_j from x to xi along the curve (log c_j)."""
        if not self._has_bjj:
            return 0.0
        _, L = self._refine(self.path(x, t), xi)
        return L

    def exit_point(self, x: float, t: float) -> ExitPoint:
        """Boundary hit of the backward (smaller-ordinate) characteristic branch.

        Lateral when the curve reaches the side ``exit_x`` at nonnegative
        time, otherwise the initial-axis crossing located to |omega| <= 1e-12.
        """
        p = self.path(x, t)
        bd = 0 if self.exit_x == 0.0 else p.xi.size - 1
        om_bd = float(p.omega[bd])
        if om_bd >= -1e-12:
            return ExitPoint("lateral", self.exit_x, max(om_bd, 0.0))
        if t < 0.0:
            raise TraceError(f"anchor below the initial axis: t={t}")
        # omega is monotone along xi; bracket the zero crossing
        if p.increasing:
            hi = int(np.searchsorted(p.omega, 0.0))
            lo = hi - 1
        else:
            rev = p.omega[::-1]
            pos = int(np.searchsorted(rev, 0.0))
            lo = p.xi.size - 1 - pos
            hi = lo + 1
        lo_xi, hi_xi = float(p.xi[lo]), float(p.xi[hi])
        a, b = (lo_xi, hi_xi)
        for _ in range(200):
            mid = 0.5 * (a + b)
            om_mid, _ = self._refine(p, mid)
            if abs(om_mid) <= 1e-12:
                return ExitPoint("initial", mid, 0.0)
            # keep the sub-interval containing the sign change
            om_a, _ = self._refine(p, a)
            if (om_a < 0.0) == (om_mid < 0.0):
                a = mid
            else:
                b = mid
        return ExitPoint("initial", 0.5 * (a + b), 0.0)

    def omega_range(self, x: float, t: float):
        p = self.path(x, t)
        return float(np.min(p.omega)), float(np.max(p.omega))

    def inverse(self, tau: float, x: float, t: float) -> float:
        """Abscissa xi* with omega_j(xi*, x, t) = tau (|residual| < 1e-10)."""
        p = self.path(x, t)
        om = p.omega if p.increasing else p.omega[::-1]
        lo_om, hi_om = float(om[0]), float(om[-1])
        if not lo_om - 1e-10 <= tau <= hi_om + 1e-10:
            raise TraceError(
                f"tau={tau:.6g} outside characteristic range [{lo_om:.6g}, {hi_om:.6g}]")
        i = int(np.clip(np.searchsorted(om, tau), 1, om.size - 1))
        if not p.increasing:
            i = p.xi.size - 1 - i
            lo, hi = i, i + 1
        else:
            lo, hi = i - 1, i
        a, b = float(p.xi[lo]), float(p.xi[hi])
        xi = 0.5 * (a + b)
        for _ in range(100):
            om_xi, _ = self._refine(p, xi)
            err = om_xi - tau
            if abs(err) < 1e-10:
                break
            # Newton using d omega / d xi = 1 / a
            step = -err * self._a(xi, om_xi)
            nxt = xi + step
            if not a <= nxt <= b:
                om_a, _ = self._refine(p, a)
                if (om_a - tau < 0.0) == (err < 0.0):
                    a = xi
                else:
                    b = xi
                nxt = 0.5 * (a + b)
            xi = min(max(nxt, 0.0), 1.0)
        return float(xi)

    # -- exact derivative formulas ----------------------------------------------

    def _segment_nodes(self, p: _Path, lo: float, hi: float):
        """Dense path nodes on [lo, hi] with exact endpoint states."""
        mask = (p.xi > lo) & (p.xi < hi)
        nodes = np.concatenate(([lo], p.xi[mask], [hi]))
        oms = np.empty_like(nodes)
        oms[1:-1] = p.omega[mask]
        oms[0], _ = self._refine(p, lo)
        oms[-1], _ = self._refine(p, hi)
        return nodes, oms

    @staticmethod
    def _integrate_nodes(nodes: np.ndarray, vals: np.ndarray) -> float:
        """Simpson on the uniform interior, trapezoid on the partial end cells."""
        if nodes.size < 4:
            return float(np.trapz(vals, nodes))
        total = 0.5 * (nodes[1] - nodes[0]) * (vals[0] + vals[1])
        total += 0.5 * (nodes[-1] - nodes[-2]) * (vals[-2] + vals[-1])
        return float(total + simpson_dense(nodes[1:-1], vals[1:-1]))

    def _exp_factor(self, xi: float, x: float, t: float) -> float:
        """exp of the integral of (da/dt) / a^2 from xi to x along the curve."""
        p = self.path(x, t)
        lo, hi = (xi, x) if xi <= x else (x, xi)
        nodes, oms = self._segment_nodes(p, lo, hi)
        av = _full(self._a(nodes, oms), nodes.shape)
        integrand = _full(self._da_dt(nodes, oms), nodes.shape) / (av * av)
        val = self._integrate_nodes(nodes, integrand)
        if xi > x:
            val = -val
        return float(np.exp(val))

    def d_omega_dt(self, xi: float, x: float, t: float) -> float:
        """Closed form for the t-derivative of omega_j(xi, x, t)."""
        return self._exp_factor(xi, x, t)

    def d_omega_dx(self, xi: float, x: float, t: float) -> float:
        """Closed form for the x-derivative of omega_j(xi, x, t)."""
        return -self._exp_factor(xi, x, t) / float(self._a(x, t))

    def d3_inverse(self, tau: float, x: float, t: float) -> float:
        """Derivative of the inverse abscissa with respect to the anchor time.

        Evaluates -a_j(x, t) * exp(integral from x to xi* of (da/dx) / a along
        the curve), where xi* is the abscissa at ordinate tau. The quadrature
        runs in the abscissa variable, which parameterizes the time integral
        of da/dx exactly.
        """
        xi_star = self.inverse(tau, x, t)
        p = self.path(x, t)
        lo, hi = (xi_star, x) if xi_star <= x else (x, xi_star)
        nodes, oms = self._segment_nodes(p, lo, hi)
        integrand = _full(self._da_dx(nodes, oms), nodes.shape) / _full(self._a(nodes, oms), nodes.shape)
        val = self._integrate_nodes(nodes, integrand)
        if xi_star < x:
            val = -val
        return float(-self._a(x, t) * np.exp(val))


class Characteristics:
    """Per-family :class:`CharField` set for one scenario."""

    def __init__(self, scenario: Scenario, h_xi: float = 1.0 / 1024.0):
        self.scenario = scenario
        self.h_xi = h_xi
        self._fields = {j: CharField(scenario, j, h_xi) for j in range(1, scenario.n + 1)}

    def field(self, j: int) -> CharField:
        return self._fields[j]

    def trace(self, j, x, t, xi):
        return self._fields[j].trace(x, t, xi)

    def exit_point(self, j, x, t):
        return self._fields[j].exit_point(x, t)

    def inverse(self, j, tau, x, t):
        return self._fields[j].inverse(tau, x, t)


def trace_band(
    field: CharField,
    start_x: np.ndarray,
    start_t: np.ndarray,
    lattice: np.ndarray,
):
    """March many family-j characteristics over a shared abscissa lattice.

    ``lattice`` must be strictly monotone; each row starts at its own
    (start_x, start_t) and is integrated across every lattice interval that
    lies beyond its start in the marching direction. Returns the matrix of
    ordinates at the lattice nodes (NaN where a row is not yet active) and
    the matching matrix of log-c integrals from the row's start.
    """
    start_x = np.asarray(start_x, dtype=float)
    start_t = np.asarray(start_t, dtype=float)
    lattice = np.asarray(lattice, dtype=float)
    nrows, nlat = start_x.size, lattice.size
    omega = np.full((nrows, nlat), np.nan)
    logc = np.full((nrows, nlat), np.nan)
    descending = nlat >= 2 and lattice[1] < lattice[0]
    a_fn = field._a
    has_q = field._has_bjj
    q_fn = field._q

    def rhs(xi, om):
        a = a_fn(xi, om)
        if np.any(np.abs(a) < _SPEED_FLOOR):
            raise TraceError(f"speed a_{field.j} below floor inside band trace")
        inv = 1.0 / a
        return inv, (q_fn(xi, om) * inv) if has_q else np.zeros_like(inv)

    def rk4_vec(xi0, om, L, h, nsub):
        """Vector RK4 with per-row spans; xi0 and h may be arrays."""
        hs = h / nsub
        xi = xi0
        for _ in range(nsub):
            k1, q1 = rhs(xi, om)
            k2, q2 = rhs(xi + 0.5 * hs, om + 0.5 * hs * k1)
            k3, q3 = rhs(xi + 0.5 * hs, om + 0.5 * hs * k2)
            k4, q4 = rhs(xi + hs, om + hs * k3)
            om = om + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            L = L + (hs / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
            xi = xi + hs
        return om, L

    # activation index: first lattice node at or beyond the row's start
    if descending:
        idx0 = np.searchsorted(-lattice, -start_x, side="left")
    else:
        idx0 = np.searchsorted(lattice, start_x, side="left")
    idx0 = np.clip(idx0, 0, nlat - 1)

    # pre-step each row from its start abscissa onto its activation node
    targets = lattice[idx0]
    span = targets - start_x
    nsub = max(1, int(np.ceil(np.max(np.abs(span)) / field.h_xi))) if nrows else 1
    om0, L0 = rk4_vec(start_x, start_t.copy(), np.zeros(nrows), span, nsub)
    omega[np.arange(nrows), idx0] = om0
    logc[np.arange(nrows), idx0] = L0

    state_om = om0.copy()
    state_L = L0.copy()
    for i in range(nlat - 1):
        active = idx0 <= i
        if not np.any(active):
            continue
        h = lattice[i + 1] - lattice[i]
        nsub = max(1, int(np.ceil(abs(h) / field.h_xi)))
        om_new, L_new = rk4_vec(
            np.full(int(np.sum(active)), lattice[i]),
            state_om[active], state_L[active], h, nsub)
        state_om[active] = om_new
        state_L[active] = L_new
        # rows with idx0 == i+1 were never marched, so state still holds om0
        omega[:, i + 1] = np.where(idx0 <= i + 1, state_om, np.nan)
        logc[:, i + 1] = np.where(idx0 <= i + 1, state_L, np.nan)
    return omega, logc
