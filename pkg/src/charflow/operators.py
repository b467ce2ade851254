"""Integral operators of the characteristic representation.

Implements the exponential weights c_j, d_j, the boundary operator R, the
zero-order coupling operator B, the domain-kernel operator G, the affine
operator S (R on lateral exits, weighted initial datum otherwise) and the
variation-of-constants forcing term. All evaluations are pointwise at an
anchor (x, t) against a field ``u(k, x, t)`` that is vectorized in x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .characteristics import Characteristics, ExitPoint
from .quadrature import QuadratureRule
from .scenario import Scenario

__all__ = ["FuncField", "OperatorEval", "ExitBranchError"]


class ExitBranchError(RuntimeError):
    """apply_R was called at an anchor whose backward characteristic hits t=0."""


class FuncField:
    """Closed-form n-component test field; components are (x, t) callables."""

    def __init__(self, funcs):
        self.funcs = tuple(funcs)
        self.grid = None

    @property
    def n(self):
        return len(self.funcs)

    def __call__(self, k, x, t):
        return self.funcs[k - 1](x, t)


@dataclass
class OperatorEval:
    """Operator evaluations for one scenario with a fixed quadrature rule.

    ``align`` optionally supplies grid nodes; panel boundaries snap to them so
    that interpolation kinks of grid-backed fields sit on panel edges.
    """

    scenario: Scenario
    chars: Characteristics
    rule: QuadratureRule = QuadratureRule()
    align: np.ndarray | None = None

    def refine(self, factor: int = 2) -> "OperatorEval":
        return OperatorEval(self.scenario, self.chars, self.rule.refine(factor), self.align)

    # -- weights ---------------------------------------------------------------

    def c_factor(self, j: int, xi: float, x: float, t: float) -> float:
        """c_j(xi, x, t) = exp integral of b_jj / a_j from x to xi along the curve."""
        return float(np.exp(self.chars.field(j).log_c(xi, x, t)))

    def d_factor(self, j: int, xi: float, x: float, t: float) -> float:
        """d_j = c_j / a_j evaluated on the curve."""
        fld = self.chars.field(j)
        om, L = fld.states_at(x, t, np.array([xi]))
        return float(np.exp(L[0]) / self.scenario.a_fn(j)(xi, om[0]))

    # -- operators ---------------------------------------------------------------

    def apply_R(self, u, x: float, t: float, j: int) -> float:
        """Boundary operator (f34, first line) at a lateral-exit anchor."""
        exit_pt = self.chars.exit_point(j, x, t)
        if exit_pt.kind != "lateral":
            raise ExitBranchError(
                f"family {j} anchor ({x:.4g},{t:.4g}) exits through the initial axis")
        return self._R_at_exit(u, x, t, j, exit_pt)

    def _R_at_exit(self, u, x, t, j, exit_pt: ExitPoint) -> float:
        s = self.scenario
        tau = exit_pt.tau
        total = 0.0
        for k in range(1, s.n + 1):
            if s.r_is_zero(j, k):
                continue
            rk = s.r_fn(j, k)
            total += self.rule.integrate(
                lambda eta, rk=rk, k=k: rk(eta, tau) * u(k, eta, tau), 0.0, 1.0, self.align)
        cj = self.c_factor(j, exit_pt.x, x, t)
        return cj * total

    def _segment(self, j, x, t, lower):
        """Quadrature nodes and weights on [lower, x] with curve states."""
        xs, ws = self.rule.nodes(lower, x, self.align)
        om, L = self.chars.field(j).states_at(x, t, xs)
        return xs, ws, om, L

    def apply_B(self, u, x: float, t: float, j: int) -> float:
        """Off-diagonal coupling operator (f34, second line)."""
        s = self.scenario
        ks = [k for k in range(1, s.n + 1) if k != j and not s.b_is_zero(j, k)]
        if not ks:
            return 0.0
        lower = self.chars.exit_point(j, x, t).x
        if lower == x:
            return 0.0
        xs, ws, om, L = self._segment(j, x, t, lower)
        d = np.exp(L) / self.scenario.a_fn(j)(xs, om)
        total = 0.0
        for k in ks:
            vals = s.b_fn(j, k)(xs, om) * u(k, xs, om)
            total += float(np.dot(ws, d * vals))
        return -total

    def apply_G(self, u, x: float, t: float, j: int) -> float:
        """Domain-kernel operator (f3014): nested quadrature of the double integral."""
        s = self.scenario
        ks = [k for k in range(1, s.n + 1) if not s.g_is_zero(j, k)]
        if not ks:
            return 0.0
        lower = self.chars.exit_point(j, x, t).x
        if lower == x:
            return 0.0
        xs, ws, om, L = self._segment(j, x, t, lower)
        d = np.exp(L) / self.scenario.a_fn(j)(xs, om)
        total = 0.0
        for p in range(xs.size):
            tau = float(om[p])
            inner = 0.0
            for k in ks:
                gk = s.g_fn(j, k)
                inner += self.rule.integrate(
                    lambda y, gk=gk, k=k: gk(y, tau) * u(k, y, tau), 0.0, float(xs[p]), self.align)
            total += float(ws[p] * d[p] * inner)
        return -total

    def apply_G_changed(self, u, x: float, t: float, j: int) -> float:
        """G after substituting the curve ordinate for the abscissa variable.

        Independent quadrature pipeline over (z, y) with z the time along the
        characteristic; used to cross-check :meth:`apply_G`.
        """
        s = self.scenario
        ks = [k for k in range(1, s.n + 1) if not s.g_is_zero(j, k)]
        if not ks:
            return 0.0
        fld = self.chars.field(j)
        exit_pt = self.chars.exit_point(j, x, t)
        lower = exit_pt.x
        if lower == x:
            return 0.0
        tau0 = exit_pt.tau
        a_fn = s.a_fn(j)
        zs, wz = self.rule.nodes(tau0, t)
        total = 0.0
        for z, w in zip(zs, wz):
            xi_z = fld.inverse(float(z), x, t)
            om_z, L_z = fld.states_at(x, t, np.array([xi_z]))
            d_z = float(np.exp(L_z[0]) / a_fn(xi_z, om_z[0]))
            inner = 0.0
            for k in ks:
                gk = s.g_fn(j, k)
                inner += self.rule.integrate(
                    lambda y, gk=gk, k=k: gk(y, float(z)) * u(k, y, float(z)),
                    0.0, xi_z, self.align)
            total += float(w) * d_z * float(a_fn(xi_z, float(z))) * inner
        return -total

    def apply_S(self, u, phi, x: float, t: float, j: int, boundary_override=None) -> float:
        """Affine operator S: boundary data on lateral exits, else weighted phi."""
        exit_pt = self.chars.exit_point(j, x, t)
        if exit_pt.kind == "lateral":
            if boundary_override is not None:
                return self.c_factor(j, exit_pt.x, x, t) * float(boundary_override(j, exit_pt.tau))
            return self._R_at_exit(u, x, t, j, exit_pt)
        cj = self.c_factor(j, exit_pt.x, x, t)
        return cj * float(phi[j - 1](exit_pt.x))

    def forcing_term(self, x: float, t: float, j: int) -> float:
        """Variation-of-constants forcing integral along the characteristic."""
        s = self.scenario
        if s.f_is_zero(j):
            return 0.0
        lower = self.chars.exit_point(j, x, t).x
        if lower == x:
            return 0.0
        xs, ws, om, L = self._segment(j, x, t, lower)
        d = np.exp(L) / s.a_fn(j)(xs, om)
        return float(np.dot(ws, d * s.f_fn(j)(xs, om)))

    def representation(self, u, phi, x: float, t: float, j: int, boundary_override=None) -> float:
        """Full right-hand side S u + B u + G u + forcing at one anchor."""
        return (
            self.apply_S(u, phi, x, t, j, boundary_override)
            + self.apply_B(u, x, t, j)
            + self.apply_G(u, x, t, j)
            + self.forcing_term(x, t, j)
        )
