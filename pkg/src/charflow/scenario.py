"""Problem instances: coefficient matrices, initial data, structural checks.

A :class:`Scenario` bundles the sizes n, m, the coefficient expressions
(speeds a, zero-order coupling b, domain kernel g, boundary kernels r,
forcing f), the initial-data samplers phi and an optional matrix of
factorization witnesses beta with ``b_jk = beta_jk * (a_k - a_j)``.

Everything is immutable after construction and safe to evaluate from any
number of workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import Expr, compile_expr, differentiate, evaluate, is_zero, parse_expression

__all__ = [
    "Sampler",
    "ExprSampler",
    "TableSampler",
    "Scenario",
    "DomainWindow",
    "ScenarioError",
    "ValidationReport",
    "Cass1Report",
    "validate_L1",
    "validate_cass1",
    "load_scenario",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
]


class ScenarioError(ValueError):
    """Schema or consistency error in a scenario definition."""


# ---------------------------------------------------------------------------
# Initial-data samplers


class Sampler:
    """Initial-datum phi_j: evaluable on [0,1], possibly discontinuous."""

    def __call__(self, x):
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        """Discontinuity/kink abscissas, used to split quadratures."""
        return np.empty(0)


@dataclass(frozen=True)
class ExprSampler(Sampler):
    expr: Expr

    def __call__(self, x):
        return evaluate(self.expr, x, 0.0)

    def to_dict(self):
        return {"kind": "expr", "expr": str(self.expr)}


@dataclass(frozen=True)
class TableSampler(Sampler):
    """Piecewise-constant or piecewise-linear tabulated datum.

    mode 'constant': ``values`` has one more entry than ``breaks``; the datum
    equals values[i] on [breaks[i-1], breaks[i]) (right-continuous at a break).
    mode 'linear': ``breaks`` and ``values`` have equal length and the datum
    interpolates linearly between them.
    """

    breaks: tuple
    values: tuple
    mode: str = "constant"

    def __post_init__(self):
        if self.mode not in ("constant", "linear"):
            raise ScenarioError(f"unknown table mode {self.mode!r}")
        if self.mode == "constant" and len(self.values) != len(self.breaks) + 1:
            raise ScenarioError("constant table needs len(values) == len(breaks)+1")
        if self.mode == "linear" and len(self.values) != len(self.breaks):
            raise ScenarioError("linear table needs len(values) == len(breaks)")
        if list(self.breaks) != sorted(self.breaks):
            raise ScenarioError("table breaks must be sorted")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "constant":
            idx = np.searchsorted(np.asarray(self.breaks), x, side="right")
            out = np.asarray(self.values, dtype=float)[idx]
        else:
            out = np.interp(x, np.asarray(self.breaks), np.asarray(self.values))
        return out if out.ndim else float(out)

    def breakpoints(self) -> np.ndarray:
        return np.asarray(self.breaks, dtype=float)

    def to_dict(self):
        d = {"kind": "table", "breaks": list(self.breaks), "values": list(self.values)}
        if self.mode != "constant":
            d["mode"] = self.mode
        return d


def _sampler_from_dict(d: dict) -> Sampler:
    kind = d.get("kind")
    if kind == "expr":
        return ExprSampler(parse_expression(d["expr"]))
    if kind == "table":
        return TableSampler(tuple(d["breaks"]), tuple(d["values"]), d.get("mode", "constant"))
    raise ScenarioError(f"phi entry has unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# Scenario


def _parse_vector(entries: Sequence, name: str, n: int) -> tuple:
    if len(entries) != n:
        raise ScenarioError(f"field {name!r} must have length {n}, got {len(entries)}")
    return tuple(parse_expression(e) if isinstance(e, str) else e for e in entries)


def _parse_matrix(entries: Sequence, name: str, n: int) -> tuple:
    if len(entries) != n:
        raise ScenarioError(f"field {name!r} must be {n}x{n}, got {len(entries)} rows")
    return tuple(_parse_vector(row, name, n) for row in entries)


@dataclass(frozen=True)
class Scenario:
    """One integro-differential hyperbolic problem on [0,1] x [0,T]."""

    n: int
    m: int
    T: float
    a: tuple          # n speed expressions
    b: tuple          # n x n zero-order coupling
    g: tuple          # n x n domain-integral kernel
    r: tuple          # n x n boundary kernels
    f: tuple          # n forcing expressions
    phi: tuple        # n samplers
    beta: tuple | None = None   # optional n x n factorization witnesses
    name: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.n < 2:
            raise ScenarioError(f"n must be >= 2, got {self.n}")
        if not 0 <= self.m <= self.n:
            raise ScenarioError(f"m must lie in [0, n]={self.n}, got {self.m}")
        if self.T <= 0:
            raise ScenarioError(f"horizon T must be positive, got {self.T}")

    # -- compiled coefficient access (cached per scenario) ------------------

    def _compiled(self, key, expr):
        fns = self._cache.setdefault(key[0], {})
        if key[1] not in fns:
            fns[key[1]] = compile_expr(expr)
        return fns[key[1]]

    def a_fn(self, j):
        """Compiled speed a_j; j is 1-based like the math."""
        return self._compiled(("a", j), self.a[j - 1])

    def b_fn(self, j, k):
        return self._compiled(("b", (j, k)), self.b[j - 1][k - 1])

    def g_fn(self, j, k):
        return self._compiled(("g", (j, k)), self.g[j - 1][k - 1])

    def r_fn(self, j, k):
        return self._compiled(("r", (j, k)), self.r[j - 1][k - 1])

    def f_fn(self, j):
        return self._compiled(("f", j), self.f[j - 1])

    def da_dx_fn(self, j):
        return self._compiled(("dax", j), differentiate(self.a[j - 1], "x"))

    def da_dt_fn(self, j):
        return self._compiled(("dat", j), differentiate(self.a[j - 1], "t"))

    def beta_fn(self, j, k):
        if self.beta is None:
            raise ScenarioError("scenario has no beta matrix")
        return self._compiled(("beta", (j, k)), self.beta[j - 1][k - 1])

    # -- structural helpers --------------------------------------------------

    def exit_abscissa(self, j) -> float:
        """Lateral exit side for family j: 0 for j <= m, 1 for j > m."""
        return 0.0 if j <= self.m else 1.0

    def b_is_zero(self, j, k) -> bool:
        return is_zero(self.b[j - 1][k - 1])

    def g_is_zero(self, j, k) -> bool:
        return is_zero(self.g[j - 1][k - 1])

    def r_is_zero(self, j, k) -> bool:
        return is_zero(self.r[j - 1][k - 1])

    def f_is_zero(self, j) -> bool:
        return is_zero(self.f[j - 1])

    def g_row_zero(self, j) -> bool:
        return all(self.g_is_zero(j, k) for k in range(1, self.n + 1))

    def r_row_zero(self, j) -> bool:
        return all(self.r_is_zero(j, k) for k in range(1, self.n + 1))

    def max_speed(self, nx: int = 101, nt: int = 101) -> float:
        xs, ts = _sample_grid(nx, nt, self.T)
        return max(float(np.max(np.abs(evaluate(self.a[j], xs, ts)))) for j in range(self.n))


@dataclass(frozen=True)
class DomainWindow:
    """Time slab (beta, gamma): the strip between two horizontal cuts."""

    beta: float
    gamma: float

    def __post_init__(self):
        if not self.beta < self.gamma:
            raise ScenarioError(f"window requires beta < gamma, got [{self.beta}, {self.gamma}]")

    @property
    def height(self) -> float:
        return self.gamma - self.beta


# ---------------------------------------------------------------------------
# Validation


def _sample_grid(nx: int, nt: int, T: float):
    xs = np.linspace(0.0, 1.0, nx)
    ts = np.linspace(0.0, T, nt)
    X, Tt = np.meshgrid(xs, ts, indexing="ij")
    return X, Tt


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    margins: tuple            # per family: min |a_j| over the sample grid
    floor: float
    failures: tuple           # (j, x, t, value) tuples

    def __str__(self):
        lines = [f"L1 sign condition: {'PASS' if self.passed else 'FAIL'} (floor {self.floor:g})"]
        for j, mg in enumerate(self.margins, start=1):
            lines.append(f"  family {j}: min |a_{j}| = {mg:.6g}")
        for j, x, t, v in self.failures[:5]:
            lines.append(f"  violation: a_{j}({x:.4g},{t:.4g}) = {v:.6g}")
        return "\n".join(lines)


def validate_L1(s: Scenario, nx: int = 101, nt: int = 101, floor: float = 1e-6) -> ValidationReport:
    """Check the speed sign pattern: a_j > 0 for j <= m, a_j < 0 for j > m.

    Samples on an nx-by-nt grid over [0,1] x [0,T]; a family fails where the
    sign is wrong or |a_j| dips below ``floor``.
    """
    X, Tt = _sample_grid(nx, nt, s.T)
    margins = []
    failures = []
    for j in range(1, s.n + 1):
        vals = evaluate(s.a[j - 1], X, Tt)
        signed = vals if j <= s.m else -vals
        margins.append(float(np.min(np.abs(vals))))
        bad = signed < floor
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            failures.append((j, float(X[tuple(idx)]), float(Tt[tuple(idx)]), float(vals[tuple(idx)])))
    return ValidationReport(not failures, tuple(margins), floor, tuple(failures))


@dataclass(frozen=True)
class Cass1Report:
    passed: bool
    tol: float
    beta_hat: dict            # (j,k) -> sampled ratio array (inferred witnesses)
    max_abs: dict             # (j,k) -> max |beta_hat|
    failures: tuple           # (j, k, x, t, detail)

    def __str__(self):
        lines = [f"factorization b_jk = beta_jk (a_k - a_j): {'PASS' if self.passed else 'FAIL'}"]
        for (j, k), mx in sorted(self.max_abs.items()):
            lines.append(f"  (j,k)=({j},{k}): max |beta| = {mx:.6g}")
        for j, k, x, t, detail in self.failures[:5]:
            lines.append(f"  violation (j,k)=({j},{k}) at ({x:.4g},{t:.4g}): {detail}")
        return "\n".join(lines)


def validate_cass1(
    s: Scenario,
    tol: float = 1e-8,
    nx: int = 101,
    nt: int = 101,
    bound_cap: float = 1e6,
    lipschitz_cap: float = 1e6,
) -> Cass1Report:
    """Check the off-diagonal factorization b_jk = beta_jk (a_k - a_j).

    With a user-supplied beta the check is pointwise: |b - beta (a_k - a_j)|
    <= tol. Otherwise the ratio b_jk / (a_k - a_j) is formed wherever
    |a_k - a_j| > tol and must be bounded (by ``bound_cap``) with a bounded
    finite-difference slope (``lipschitz_cap``); where the speeds nearly
    coincide only |b_jk| <= tol * bound_cap is required, since the witness is
    not determined there.
    """
    X, Tt = _sample_grid(nx, nt, s.T)
    hx = 1.0 / (nx - 1)
    ht = s.T / (nt - 1)
    beta_hat: dict = {}
    max_abs: dict = {}
    failures = []
    for j in range(1, s.n + 1):
        for k in range(1, s.n + 1):
            if j == k:
                continue
            bvals = evaluate(s.b[j - 1][k - 1], X, Tt)
            diff = evaluate(s.a[k - 1], X, Tt) - evaluate(s.a[j - 1], X, Tt)
            if s.beta is not None:
                resid = np.abs(bvals - evaluate(s.beta[j - 1][k - 1], X, Tt) * diff)
                if np.max(resid) > tol:
                    idx = tuple(np.argwhere(resid > tol)[0])
                    failures.append((j, k, float(X[idx]), float(Tt[idx]),
                                     f"|b - beta (a_k - a_j)| = {float(resid[idx]):.3g} > {tol:g}"))
                continue
            degenerate = np.abs(diff) <= tol
            ratio = np.where(degenerate, 0.0, bvals / np.where(degenerate, 1.0, diff))
            beta_hat[(j, k)] = ratio
            mx = float(np.max(np.abs(ratio)))
            max_abs[(j, k)] = mx
            if mx > bound_cap:
                idx = tuple(np.argwhere(np.abs(ratio) == mx)[0])
                failures.append((j, k, float(X[idx]), float(Tt[idx]),
                                 f"|beta| = {mx:.3g} > cap {bound_cap:g}"))
            if np.any(degenerate):
                resid = np.abs(np.where(degenerate, bvals, 0.0))
                if np.max(resid) > tol * bound_cap:
                    idx = tuple(np.argwhere(resid > tol * bound_cap)[0])
                    failures.append((j, k, float(X[idx]), float(Tt[idx]),
                                     f"|b| = {float(resid[idx]):.3g} where speeds coincide"))
            # Lipschitz estimate, skipping slopes that straddle the degenerate set
            ok = ~degenerate
            for dvals, step, axis in ((ratio, hx, 0), (ratio, ht, 1)):
                pair_ok = np.logical_and(np.take(ok, range(0, ok.shape[axis] - 1), axis),
                                         np.take(ok, range(1, ok.shape[axis]), axis))
                slopes = np.abs(np.diff(dvals, axis=axis)) / step
                slopes = np.where(pair_ok, slopes, 0.0)
                if np.max(slopes) > lipschitz_cap:
                    idx = tuple(np.argwhere(slopes == np.max(slopes))[0])
                    failures.append((j, k, float(X[idx]), float(Tt[idx]),
                                     f"beta slope {float(np.max(slopes)):.3g} > cap {lipschitz_cap:g}"))
                    break
    return Cass1Report(not failures, tol, beta_hat, max_abs, tuple(failures))


# ---------------------------------------------------------------------------
# Serialization (JSON schema; see README)


def scenario_to_dict(s: Scenario) -> dict:
    d = {
        "n": s.n,
        "m": s.m,
        "T": s.T,
        "a": [str(e) for e in s.a],
        "b": [[str(e) for e in row] for row in s.b],
        "g": [[str(e) for e in row] for row in s.g],
        "r": [[str(e) for e in row] for row in s.r],
        "f": [str(e) for e in s.f],
        "phi": [p.to_dict() for p in s.phi],
    }
    if s.beta is not None:
        d["beta"] = [[str(e) for e in row] for row in s.beta]
    if s.name:
        d["name"] = s.name
    return d


def scenario_from_dict(d: dict) -> Scenario:
    for key in ("n", "m", "T", "a", "b", "g", "r", "f", "phi"):
        if key not in d:
            raise ScenarioError(f"missing field {key!r}")
    n = int(d["n"])
    m = int(d["m"])
    if n < 2:
        raise ScenarioError(f"n must be >= 2, got {n}")
    if m > n or m < 0:
        raise ScenarioError(f"m={m} out of range [0, n={n}]")
    phi = tuple(_sampler_from_dict(p) for p in d["phi"])
    if len(phi) != n:
        raise ScenarioError(f"field 'phi' must have length {n}, got {len(phi)}")
    beta = _parse_matrix(d["beta"], "beta", n) if "beta" in d and d["beta"] is not None else None
    return Scenario(
        n=n,
        m=m,
        T=float(d["T"]),
        a=_parse_vector(d["a"], "a", n),
        b=_parse_matrix(d["b"], "b", n),
        g=_parse_matrix(d["g"], "g", n),
        r=_parse_matrix(d["r"], "r", n),
        f=_parse_vector(d["f"], "f", n),
        phi=phi,
        beta=beta,
        name=d.get("name", ""),
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"not valid JSON: {e}") from e
    return scenario_from_dict(d)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")
