"""Smoothing study: the time d, jump tracking, and the eventual-continuity check.

The headline quantity is the two-traversal time d: the largest time needed
for one family to cross the interval starting at a bottom corner and a second
family to cross again starting where the first one arrived. Discontinuities
seeded at the corners (and at interior jumps of the data) ride characteristics
and leave through the lateral sides no later than that, while the integral
boundary condition returns only continuous values, so a two-grid jump
indicator must decay to the discretization floor after d.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .characteristics import Characteristics
from .scenario import Scenario
from .solver import GridSolution, fit_growth_bound, l2_norm, solve_marching

__all__ = [
    "JumpCurve",
    "SmoothingReport",
    "HorizonError",
    "smoothing_time",
    "seed_jump_curves",
    "jump_indicator",
    "jump_indicator_series",
    "smoothing_report",
    "report_to_json",
    "report_to_csv",
]


class HorizonError(ValueError):
    """Requested horizon is too short for the two-pass smoothing argument."""

    def __init__(self, needed: float, got: float):
        super().__init__(f"horizon {got:g} too short; the report needs at least {needed:g}")
        self.needed = needed


def smoothing_time(s: Scenario, chars: Characteristics | None = None) -> float:
    """Two-traversal bound d for the smoothing onset.

    For every ordered pair of same-side families (k then j) this composes the
    crossing of family k from the bottom corner with the crossing of family j
    starting at the arrival time, and returns the largest arrival ordinate.
    """
    if chars is None:
        chars = Characteristics(s)
    best = 0.0
    for k in range(1, s.m + 1):
        t_mid = chars.trace(k, 0.0, 0.0, 1.0)
        for j in range(1, s.m + 1):
            best = max(best, chars.trace(j, 0.0, t_mid, 1.0))
    for k in range(s.m + 1, s.n + 1):
        t_mid = chars.trace(k, 1.0, 0.0, 0.0)
        for j in range(s.m + 1, s.n + 1):
            best = max(best, chars.trace(j, 1.0, t_mid, 0.0))
    return best


@dataclass(frozen=True)
class JumpCurve:
    """Characteristic polyline seeded at a bottom corner of the domain."""

    j: int
    seed: tuple
    xs: np.ndarray
    ts: np.ndarray

    @property
    def exit_time(self) -> float:
        return float(self.ts[-1])


def seed_jump_curves(s: Scenario, chars: Characteristics | None = None) -> list[JumpCurve]:
    """Forward characteristics from (0,0) for j <= m and from (1,0) for j > m."""
    if chars is None:
        chars = Characteristics(s)
    curves = []
    for j in range(1, s.n + 1):
        seed_x = 0.0 if j <= s.m else 1.0
        p = chars.field(j).path(seed_x, 0.0)
        xs, ts = p.xi, p.omega
        if j > s.m:
            xs, ts = xs[::-1], ts[::-1]
        curves.append(JumpCurve(j, (seed_x, 0.0), np.array(xs), np.array(ts)))
    return curves


def jump_indicator(u_h: GridSolution, u_h2: GridSolution, j: int, level: int) -> float:
    """Two-grid jump size for component j at one coarse time level.

    Takes the largest coarse-cell difference among cells where the matching
    fine-grid difference does not drop by a factor >= 1.5; a genuine jump
    keeps its one-cell difference under refinement while a steep resolved
    gradient halves it.
    """
    if u_h2.n_cells != 2 * u_h.n_cells or abs(u_h2.dt * 2 - u_h.dt) > 1e-12 * u_h.dt:
        raise ValueError("fine solution must halve both grid steps of the coarse one")
    row_c = u_h.values[j - 1, level]
    row_f = u_h2.values[j - 1, 2 * level]
    dc = np.abs(np.diff(row_c))
    df = np.abs(np.diff(row_f))
    df_pair = np.maximum(df[0::2], df[1::2])
    keep = df_pair > dc / 1.5
    if not np.any(keep):
        return 0.0
    return float(np.max(dc[keep]))


def jump_indicator_series(u_h: GridSolution, u_h2: GridSolution) -> np.ndarray:
    """Indicator for every component at every coarse level; shape (n, levels)."""
    out = np.zeros((u_h.n, u_h.levels))
    for j in range(1, u_h.n + 1):
        for lev in range(u_h.levels):
            out[j - 1, lev] = jump_indicator(u_h, u_h2, j, lev)
    return out


@dataclass
class SmoothingReport:
    d: float
    threshold: float
    times: np.ndarray
    indicators: np.ndarray        # (n, levels) per-component series
    scalar: np.ndarray            # max over components per level
    verdict: float | None         # first time after which everything stays quiet
    growth_M: float
    growth_omega: float
    window_maxima: dict           # indicator maxima over [d,2d], [2d,4d], [4d,end]
    n_cells: int
    dt: float
    horizon: float
    extras: dict = field(default_factory=dict)

    @property
    def smoothed_within_horizon(self) -> bool:
        return self.verdict is not None

    def summary(self) -> str:
        v = "not within horizon" if self.verdict is None else f"{self.verdict:.6g}"
        lines = [
            f"smoothing time d = {self.d:.6g}",
            f"jump threshold   = {self.threshold:.6g}",
            f"smoothed-by      = {v}",
            f"growth bound     M = {self.growth_M:.6g}, omega = {self.growth_omega:.6g}",
        ]
        for name, mx in self.window_maxima.items():
            lines.append(f"max indicator on {name}: {mx:.3e}")
        return "\n".join(lines)


def _initial_oscillation(s: Scenario, xs: np.ndarray) -> float:
    osc = 0.0
    for p in s.phi:
        vals = np.asarray(p(xs), dtype=float)
        osc = max(osc, float(np.max(vals) - np.min(vals)))
    return osc


def smoothing_report(
    s: Scenario,
    n_cells: int,
    horizon: float | None = None,
    dt: float | None = None,
    threshold: float | None = None,
    margin: float = 0.5,
    concurrent: bool = True,
) -> SmoothingReport:
    """Solve on grids h and h/2 and classify when the jumps are gone.

    The horizon must reach 4d + margin (two passes of the representation);
    shorter requests raise :class:`HorizonError` naming the required length.
    The verdict is the first stored time after which the max-over-components
    indicator stays below the threshold (default: 1e-2 times the oscillation
    of the initial data).
    """
    d = smoothing_time(s)
    needed = 4.0 * d + margin
    horizon = s.T if horizon is None else float(horizon)
    if horizon < needed - 1e-9:
        raise HorizonError(needed, horizon)
    if dt is None:
        dt = (1.0 / n_cells) / s.max_speed()

    def run_coarse():
        return solve_marching(s, n_cells, dt=dt, T=horizon)

    def run_fine():
        return solve_marching(s, 2 * n_cells, dt=dt / 2.0, T=horizon)

    if concurrent:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fu_c, fu_f = pool.submit(run_coarse), pool.submit(run_fine)
            u_h, u_h2 = fu_c.result(), fu_f.result()
    else:
        u_h, u_h2 = run_coarse(), run_fine()

    indicators = jump_indicator_series(u_h, u_h2)
    scalar = np.max(indicators, axis=0)
    if threshold is None:
        threshold = 1e-2 * max(_initial_oscillation(s, u_h.xs), 1e-12)

    quiet = scalar < threshold
    verdict = None
    if quiet[-1]:
        lev = u_h.levels - 1
        while lev > 0 and quiet[lev - 1]:
            lev -= 1
        verdict = lev * u_h.dt

    times = u_h.times
    hist = np.array([l2_norm(u_h, lev) for lev in range(u_h.levels)])
    phi_norm = max(l2_norm(u_h, 0, j) for j in range(1, s.n + 1))
    M, omega = fit_growth_bound(times, [hist], [phi_norm])

    window_maxima = {}
    for name, lo, hi in (("[d,2d]", d, 2 * d), ("[2d,4d]", 2 * d, 4 * d),
                         ("[4d,horizon]", 4 * d, horizon)):
        sel = (times >= lo - 1e-9) & (times <= hi + 1e-9)
        window_maxima[name] = float(np.max(scalar[sel])) if np.any(sel) else 0.0

    return SmoothingReport(
        d=d, threshold=threshold, times=times, indicators=indicators, scalar=scalar,
        verdict=verdict, growth_M=M, growth_omega=omega, window_maxima=window_maxima,
        n_cells=n_cells, dt=u_h.dt, horizon=horizon)


def report_to_json(rep: SmoothingReport, path) -> None:
    payload = {
        "d": rep.d,
        "threshold": rep.threshold,
        "verdict": rep.verdict,
        "smoothed_within_horizon": rep.smoothed_within_horizon,
        "growth_M": rep.growth_M,
        "growth_omega": rep.growth_omega,
        "window_maxima": rep.window_maxima,
        "n_cells": rep.n_cells,
        "dt": rep.dt,
        "horizon": rep.horizon,
        "times": rep.times.tolist(),
        "indicators": rep.indicators.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def report_to_csv(rep: SmoothingReport, path) -> None:
    n = rep.indicators.shape[0]
    with open(path, "w") as fh:
        fh.write("t," + ",".join(f"indicator_{j}" for j in range(1, n + 1)) + "\n")
        for lev, t in enumerate(rep.times):
            row = ",".join(f"{rep.indicators[j, lev]:.17g}" for j in range(n))
            fh.write(f"{t:.17g},{row}\n")
