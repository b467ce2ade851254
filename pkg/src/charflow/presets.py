"""Ready-made scenarios: benchmarks, manufactured solutions, random suites."""

from __future__ import annotations

import numpy as np

from .expr import parse_expression
from .scenario import ExprSampler, Sampler, Scenario, TableSampler

__all__ = [
    "build_scenario",
    "coupling_from_witnesses",
    "benchmark_step",
    "constant_proofcheck",
    "variable_proofcheck",
    "manufactured_polynomial",
    "transport",
    "smoothing_suite",
    "random_smooth_scenario",
]


def build_scenario(a, m, *, b=None, g=None, r=None, f=None, phi=None, beta=None,
                   T=8.0, name="") -> Scenario:
    """Assemble a scenario from expression strings; omitted blocks are zero."""
    n = len(a)
    zero_m = [["0"] * n for _ in range(n)]
    zero_v = ["0"] * n
    P = parse_expression

    def mat(entries):
        return tuple(tuple(P(e) if isinstance(e, str) else e for e in row) for row in entries)

    def vec(entries):
        return tuple(P(e) if isinstance(e, str) else e for e in entries)

    if phi is None:
        phi = [ExprSampler(P("0"))] * n
    phi = tuple(p if isinstance(p, Sampler) else ExprSampler(P(p)) for p in phi)
    return Scenario(
        n=n, m=m, T=float(T),
        a=vec(a),
        b=mat(b or zero_m),
        g=mat(g or zero_m),
        r=mat(r or zero_m),
        f=vec(f or zero_v),
        phi=phi,
        beta=mat(beta) if beta is not None else None,
        name=name,
    )


def coupling_from_witnesses(a, beta):
    """Off-diagonal coupling strings b_jk = beta_jk * (a_k - a_j)."""
    n = len(a)
    b = [["0"] * n for _ in range(n)]
    for j in range(n):
        for k in range(n):
            if j == k or beta[j][k] in ("0", 0):
                continue
            b[j][k] = f"({beta[j][k]})*(({a[k]})-({a[j]}))"
    return b


def benchmark_step(T: float = 12.0) -> Scenario:
    """Unit-speed pair with uniform boundary averaging and step data.

    The data jumps violate the boundary compatibility at both corners, the
    two-traversal time is exactly 2, and the exact solution becomes the
    constant 3/4 once every seeded discontinuity has left the domain (t >= 1).
    """
    phi1 = TableSampler((0.25,), (0.0, 1.0))
    phi2 = TableSampler((0.75,), (1.0, 0.0))
    half = [["0.5", "0.5"], ["0.5", "0.5"]]
    return build_scenario(["1", "-1"], 1, r=half, phi=[phi1, phi2], T=T,
                          name="benchmark-step")


def constant_proofcheck(T: float = 8.0) -> Scenario:
    """Constant-coefficient scenario for machine-precision identity checks."""
    a = ["1", "-1"]
    beta = [["0", "-0.2"], ["-0.15", "0"]]
    b = coupling_from_witnesses(a, beta)
    b[0][0], b[1][1] = "0.1", "-0.05"
    return build_scenario(
        a, 1, b=b, beta=beta,
        g=[["0.1", "0.05"], ["0.02", "0.08"]],
        r=[["0.25", "0.15"], ["0.2", "0.3"]],
        T=T, name="constant-proofcheck")


def variable_proofcheck(T: float = 14.0) -> Scenario:
    """Variable speeds (2 + sin t, -1 - 0.5 cos x) with witness-built coupling.

    Kernels are time-independent so every slice form of the boundary-product
    operator is unambiguous; the witnesses are smooth and x-dependent.
    """
    a = ["2+sin(t)", "-1-0.5*cos(x)"]
    beta = [["0", "0.1"], ["0.05+0.02*x", "0"]]
    return build_scenario(
        a, 1,
        b=coupling_from_witnesses(a, beta), beta=beta,
        g=[["0.05+0.02*x", "0.03"], ["0.02*x", "0.04"]],
        r=[["0.2+0.1*x", "0.15*x"], ["0.1+0.05*x^2", "0.25-0.1*x"]],
        T=T, name="variable-proofcheck")


class _PolySolution:
    """Exact fields of the manufactured polynomial case."""

    def __init__(self):
        self.funcs = (lambda x, t: np.asarray(x, dtype=float) * np.asarray(t, dtype=float),
                      lambda x, t: 1.0 + np.asarray(x, dtype=float) * np.asarray(t, dtype=float))

    def __call__(self, k, x, t):
        return self.funcs[k - 1](x, t)

    def boundary(self, j, t):
        # left exit of the first family, right exit of the second
        return 0.0 if j == 1 else 1.0 + t


def manufactured_polynomial(T: float = 2.0):
    """Coupled system whose exact solution is (x t, 1 + x t).

    The forcing is obtained by substituting the exact fields into the system;
    boundary data comes from an explicit override (the kernels are zero), so
    the returned triple is (scenario, exact-field, boundary-override).
    """
    b = [["0.2", "0.4"], ["-0.3", "0.1"]]
    g = [["0.1", "0.2"], ["0.3", "-0.1"]]
    # f_j = dt u_j + a_j dx u_j + sum_k b_jk u_k + sum_k int_0^x g_jk(y,t) u_k(y,t) dy
    f1 = "x + t + 0.2*x*t + 0.4*(1+x*t) + 0.05*t*x^2 + 0.2*(x + 0.5*t*x^2)"
    f2 = "x - t - 0.3*x*t + 0.1*(1+x*t) + 0.15*t*x^2 - 0.1*(x + 0.5*t*x^2)"
    sol = _PolySolution()
    scen = build_scenario(
        ["1", "-1"], 1, b=b, g=g, f=[f1, f2],
        phi=[ExprSampler(parse_expression("0")), ExprSampler(parse_expression("1"))],
        T=T, name="manufactured-polynomial")
    return scen, sol, sol.boundary


def transport(speed1: float = 0.85, speed2: float = -1.1, decay: float = 0.0,
              T: float = 2.0) -> Scenario:
    """Decoupled transport of a smooth bump, optionally with diagonal decay."""
    b = [[repr(float(decay)), "0"], ["0", "0"]]
    phi = [ExprSampler(parse_expression("sin(3.141592653589793*x)^2")),
           ExprSampler(parse_expression("0"))]
    return build_scenario([repr(float(speed1)), repr(float(speed2))], 1, b=b,
                          phi=phi, T=T, name="transport")


def smoothing_suite() -> list[Scenario]:
    """Benchmark plus coupled variable-coefficient cases with step data.

    Every member satisfies the sign condition and the witness factorization
    and starts from data whose jumps violate boundary compatibility.
    """
    out = [benchmark_step(T=20.0)]

    a1 = ["1.5+0.25*sin(t)", "-1-0.25*cos(x)"]
    beta1 = [["0", "0.12"], ["0.08+0.04*x", "0"]]
    b1 = coupling_from_witnesses(a1, beta1)
    b1[0][0], b1[1][1] = "0.1", "-0.1"
    out.append(build_scenario(
        a1, 1, b=b1, beta=beta1,
        g=[["0.05", "0.02"], ["0.03", "0.05"]],
        r=[["0.2+0.05*x", "0.15"], ["0.15", "0.2-0.05*x"]],
        phi=[TableSampler((0.3,), (0.0, 1.0)), TableSampler((0.7,), (1.0, 0.0))],
        T=20.0, name="smoothing-var-1"))

    a2 = ["1.2+0.2*cos(x)", "-1.4+0.2*sin(t)", "-2"]
    beta2 = [["0", "0.05", "0.04"], ["0.06", "0", "0.05"], ["0.03", "0.04", "0"]]
    b2 = coupling_from_witnesses(a2, beta2)
    b2[1][1] = "0.05"
    out.append(build_scenario(
        a2, 1, b=b2, beta=beta2,
        g=[["0.03", "0.02", "0.01"], ["0.02", "0.03", "0.02"], ["0.01", "0.02", "0.03"]],
        r=[["0.1", "0.1", "0.05"], ["0.1", "0.1", "0.1"], ["0.05", "0.1", "0.1"]],
        phi=[TableSampler((0.5,), (0.0, 1.0)), TableSampler((0.5,), (1.0, 0.0)),
             TableSampler((0.25, 0.75), (0.0, 1.0, 0.0))],
        T=20.0, name="smoothing-var-2"))

    a3 = ["1+0.3*x", "2-0.5*x"]
    beta3 = [["0", "0.1"], ["0.1-0.05*x", "0"]]
    out.append(build_scenario(
        a3, 2, b=coupling_from_witnesses(a3, beta3), beta=beta3,
        g=[["0.04", "0.02"], ["0.02", "0.04"]],
        r=[["0.15", "0.1"], ["0.1", "0.15"]],
        phi=[TableSampler((0.5,), (1.0, 0.0)), TableSampler((0.5,), (0.0, 1.0))],
        T=20.0, name="smoothing-var-3"))
    return out


def random_smooth_scenario(rng: np.random.Generator, n: int = 2, T: float = 1.0) -> Scenario:
    """Randomized smooth coupled scenario with boundary-compatible data.

    The boundary kernels carry a sin(t) factor so they vanish at t = 0, which
    makes any smooth data zero-order compatible at the corners; the couplings
    are small random constants (the factorization witness exists because the
    speeds are constant and distinct).
    """
    m = 1 if n == 2 else int(rng.integers(1, n))
    speeds = []
    for j in range(n):
        mag = float(rng.uniform(0.7, 1.6))
        speeds.append(repr(mag if j < m else -mag))
    b = [[repr(round(float(rng.uniform(-0.3, 0.3)), 3)) for _ in range(n)] for _ in range(n)]
    g = [[repr(round(float(rng.uniform(-0.15, 0.15)), 3)) for _ in range(n)] for _ in range(n)]
    r = [[f"{round(float(rng.uniform(0.05, 0.2)), 3)}*sin(t)" for _ in range(n)] for _ in range(n)]
    phi = []
    for _ in range(n):
        amp = round(float(rng.uniform(0.5, 1.5)), 3)
        mode = int(rng.integers(1, 3))
        phi.append(ExprSampler(parse_expression(
            f"{amp}*sin(3.141592653589793*x)^2" if mode == 1
            else f"{amp}*sin(3.141592653589793*x)^2*cos(3.141592653589793*x)")))
    return build_scenario(speeds, m, b=b, g=g, r=r, phi=phi, T=T, name="random-smooth")
