"""Explicit monotone schemes for the RVI and VI equations of a 1-D controlled diffusion.

The generator ``a f'' + b(x, u) f'`` is discretised with a central second
difference. The drift term uses a central difference wherever that keeps the
off-diagonals nonnegative (``|b| dx <= 2 a``) and falls back to upwinding
elsewhere (``drift_scheme="hybrid"``, the default); ``drift_scheme="upwind"``
upwinds everywhere. Either way every stencil row has nonnegative off-diagonals
and sums to zero. Time stepping is explicit Euler under the CFL
bound from :func:`cfl_max_dt`, which makes the VI step order preserving.

Boundary handling depends on ``problem.boundary``:

``"reflecting"`` (default)
    ghost-node reflection for the diffusion part and inward drift only; rows still
    sum to zero, so constants are preserved exactly.
``"dirichlet"``
    boundary nodes are frozen at their initial value, which is zero after the
    smooth cutoff of :func:`cutoff` is applied to the initial data.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ergodic_rvi.ctmc_rvi import rvi_vi_offsets
from ergodic_rvi.model import DiffusionProblem, SolveReport, StepRecord, ValueField, span

__all__ = [
    "GeneratorStencil", "ParabolicRun", "LqSolution", "LyapunovReport", "BoundReport",
    "IdentityReport", "discretize_generator", "rhs_min", "cfl_max_dt", "step",
    "solve_parabolic", "hjb_residual", "check_vv_identity", "check_bound", "verify_lyapunov",
    "lyapunov_drift", "lq_exact", "cutoff", "weighted_norm", "write_field_csv",
]

MODES = ("rvi", "vi", "truncated")


@dataclass(frozen=True)
class GeneratorStencil:
    """Tridiagonal generator for one action: ``(L f)_i = lower_i f_{i-1} + diag_i f_i + upper_i f_{i+1}``."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def apply(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        out = self.diag * f
        out[1:] += self.lower[1:] * f[:-1]
        out[:-1] += self.upper[:-1] * f[1:]
        return out

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.lower[1:], -1) + np.diag(self.upper[:-1], 1)


@lru_cache(maxsize=32)
def _coefficients(problem: DiffusionProblem) -> tuple[np.ndarray, np.ndarray]:
    """Upper and lower neighbour weights, each ``(n_actions, n_nodes)``."""
    dx2 = problem.dx ** 2
    a = problem.a[None, :]
    b = problem.drift
    bp = np.maximum(b, 0.0) / problem.dx
    bm = np.maximum(-b, 0.0) / problem.dx
    up = np.broadcast_to(a / dx2, bp.shape) + bp
    lo = np.broadcast_to(a / dx2, bm.shape) + bm
    if problem.drift_scheme == "hybrid":
        central = np.abs(b) * problem.dx <= 2 * a
        half = b / (2 * problem.dx)
        up = np.where(central, a / dx2 + half, up)
        lo = np.where(central, a / dx2 - half, lo)
    if problem.boundary == "reflecting":
        up[:, 0] = 2 * a[:, 0] / dx2 + bp[:, 0]
        lo[:, -1] = 2 * a[:, -1] / dx2 + bm[:, -1]
    else:
        up[:, 0] = up[:, -1] = 0.0
        lo[:, 0] = lo[:, -1] = 0.0
    lo[:, 0] = 0.0
    up[:, -1] = 0.0
    up.setflags(write=False)
    lo.setflags(write=False)
    return up, lo


def _action_index(problem: DiffusionProblem, u) -> int:
    hits = np.flatnonzero(np.isclose(problem.actions, u, rtol=0, atol=1e-12))
    if hits.size == 0:
        raise ValueError(f"action {u!r} is not on the action grid")
    return int(hits[0])


def discretize_generator(problem: DiffusionProblem, u) -> GeneratorStencil:
    """Monotone stencil of the generator for the action value ``u``."""
    k = _action_index(problem, u)
    up, lo = _coefficients(problem)
    return GeneratorStencil(lo[k].copy(), -(lo[k] + up[k]), up[k].copy())


def _differences(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dp = np.zeros_like(v)
    np.subtract(v[1:], v[:-1], out=dp[:-1])
    dm = np.zeros_like(v)
    dm[1:] = dp[:-1]
    return dp, dm


def _hamiltonian(problem: DiffusionProblem, v: np.ndarray) -> np.ndarray:
    up, lo = _coefficients(problem)
    dp, dm = _differences(v)
    return up * dp - lo * dm + problem.cost


def rhs_min(problem: DiffusionProblem, v) -> tuple[np.ndarray, np.ndarray]:
    """Nodewise ``min_u [L^u v + r(x, u)]`` over the action grid and the argmin index.

    Ties go to the lowest action index.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (problem.n_nodes,):
        raise ValueError(f"field has shape {v.shape}, expected ({problem.n_nodes},)")
    h = _hamiltonian(problem, v)
    policy = np.argmin(h, axis=0)
    return h[policy, np.arange(v.size)], policy


def cfl_max_dt(problem: DiffusionProblem) -> float:
    """``1 / max(2 a / dx^2 + |b| / dx)`` over all nodes and actions."""
    rate = 2 * problem.a[None, :] / problem.dx ** 2 + np.abs(problem.drift) / problem.dx
    return float(1.0 / rate.max())


def cutoff(x, R: float) -> np.ndarray:
    """C^2 bump: 1 on ``|x| <= R/2``, 0 on ``|x| >= 3R/4``, quintic smoothstep between."""
    s = np.clip((np.abs(np.asarray(x, dtype=float)) - 0.5 * R) / (0.25 * R), 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def _normaliser(mode, v, anchor, beta, forcing, t):
    if mode == "rvi":
        return v[anchor]
    if mode == "vi":
        return beta
    return forcing(t)


def step(problem: DiffusionProblem, v, mode: str = "rvi", dt: Optional[float] = None,
         beta: Optional[float] = None, forcing: Optional[Callable[[float], float]] = None,
         t: float = 0.0) -> ValueField:
    """One explicit Euler step ``v + dt (min_u [L^u v + r] - s)``.

    ``s`` is ``v(anchor)`` in ``"rvi"`` mode, ``beta`` in ``"vi"`` mode and
    ``forcing(t)`` in ``"truncated"`` mode. Rejects ``dt`` above :func:`cfl_max_dt`.
    """
    _check_mode(mode, beta, forcing)
    limit = cfl_max_dt(problem)
    dt = limit if dt is None else dt
    if dt <= 0 or dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} violates the CFL bound {limit:g}")
    v = np.asarray(v, dtype=float)
    m, _ = rhs_min(problem, v)
    s = _normaliser(mode, v, problem.anchor, beta, forcing, t)
    out = v + dt * (m - s)
    if problem.boundary == "dirichlet":
        out[0], out[-1] = v[0], v[-1]
    return ValueField(out, problem.anchor, t + dt)


def _check_mode(mode, beta, forcing):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "vi" and beta is None:
        raise ValueError("vi mode needs beta")
    if mode == "truncated" and forcing is None:
        raise ValueError("truncated mode needs a forcing function")


@dataclass(frozen=True, eq=False)
class ParabolicRun:
    """Time-marched field with recorded snapshots and the per-step anchor reading."""

    mode: str
    dt: float
    x: np.ndarray
    anchor: int
    steps: np.ndarray            # step index of each snapshot
    snapshots: np.ndarray        # (n_records, n_nodes)
    anchor_trace: np.ndarray     # anchor value after every step, index 0 = initial
    policy: np.ndarray           # argmin action index at the final snapshot
    beta: Optional[float] = None
    status: str = "max_steps"

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.dt

    @property
    def terminal(self) -> ValueField:
        return ValueField(self.snapshots[-1], self.anchor, float(self.times[-1]))


def solve_parabolic(problem: DiffusionProblem, V0=None, mode: str = "rvi",
                    beta: Optional[float] = None, forcing: Optional[Callable] = None,
                    T: float = 20.0, dt: Optional[float] = None, record_every: Optional[int] = None,
                    tol: Optional[float] = None, core_margin: Optional[float] = None,
                    blowup: float = 1e12) -> tuple[ParabolicRun, SolveReport]:
    """March the RVI, VI or forced equation from ``V0`` up to time ``T``.

    Stops early (status ``"converged"``) once ``sup|v_{m+1} - v_m| / dt <= tol``.
    ``record_every`` defaults to about 200 snapshots per run. Report residuals are
    taken on the core ``|x| <= L - core_margin``.
    """
    _check_mode(mode, beta, forcing)
    limit = cfl_max_dt(problem)
    dt = limit if dt is None else float(dt)
    if dt <= 0 or dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} violates the CFL bound {limit:g}")
    n_steps = max(1, int(round(T / dt)))
    if record_every is None:
        record_every = max(1, n_steps // 200)
    v = np.zeros(problem.n_nodes) if V0 is None else np.array(V0, dtype=float)
    if v.shape != (problem.n_nodes,) or not np.all(np.isfinite(v)):
        raise ValueError("V0 must be a finite field on the problem grid")
    dirichlet = problem.boundary == "dirichlet"
    if dirichlet:
        v = v * cutoff(problem.x, problem.half_width)
    up, lo = _coefficients(problem)
    cost = problem.cost
    anchor = problem.anchor
    n = problem.n_nodes
    dp, dm = np.zeros(n), np.zeros(n)
    buf, tmp = np.empty(cost.shape), np.empty(cost.shape)

    anchors = np.empty(n_steps + 1)
    anchors[0] = v[anchor]
    steps, snaps, records = [0], [v.copy()], []

    def record(m, v, change):
        est = _normaliser(mode, v, anchor, beta, forcing, m * dt)
        records.append(StepRecord(m * dt, float(est), span(v), change,
                                  hjb_residual(problem, v, est, core_margin)))

    record(0, v, np.nan)
    status = "max_steps"
    m = 0
    for m in range(1, n_steps + 1):
        np.subtract(v[1:], v[:-1], out=dp[:-1])
        dm[1:] = dp[:-1]
        np.multiply(up, dp, out=buf)
        np.multiply(lo, dm, out=tmp)
        buf -= tmp
        buf += cost
        incr = buf.min(axis=0)
        incr -= _normaliser(mode, v, anchor, beta, forcing, (m - 1) * dt)
        incr *= dt
        if dirichlet:
            incr[0] = incr[-1] = 0.0
        v = v + incr
        anchors[m] = v[anchor]
        done = m == n_steps
        if tol is not None:
            change = float(np.max(np.abs(incr))) / dt
            if change <= tol:
                status, done = "converged", True
        if m % record_every == 0 or done:
            change = float(np.max(np.abs(incr))) / dt
            if not np.all(np.isfinite(v)) or span(v) > blowup:
                status, done = "diverged", True
            steps.append(m)
            snaps.append(v.copy())
            record(m, v, change)
        if done:
            break
    _, policy = rhs_min(problem, v) if np.all(np.isfinite(v)) else (None, np.zeros(n, int))
    run = ParabolicRun(mode, dt, problem.x, anchor, np.array(steps), np.array(snaps),
                       anchors[:m + 1].copy(), policy, beta, status)
    terminal_beta = float(v[anchor]) if mode == "rvi" else float(records[-1].beta_estimate)
    report = SolveReport(tuple(records), run.terminal, terminal_beta, status, m, policy)
    return run, report


def hjb_residual(problem: DiffusionProblem, v, beta: float,
                 core_margin: Optional[float] = None) -> float:
    """``max |min_u [L^u v + r] - beta|`` over core nodes ``|x| <= L - core_margin``."""
    m, _ = rhs_min(problem, v)
    mask = problem.core_mask(core_margin)
    return float(np.max(np.abs(m[mask] - beta)))


@dataclass(frozen=True)
class IdentityReport:
    exact_residual: float
    continuum_residual: float
    anchored_residual: float


def check_vv_identity(rvi_run: ParabolicRun, vi_run: ParabolicRun,
                      beta: Optional[float] = None) -> IdentityReport:
    """Compare a joint RVI/VI pair started from the same data.

    ``exact_residual`` checks ``V_m = Vbar_m + c_m`` with the Euler recursion for
    ``c_m``; ``continuum_residual`` checks the time-continuous relation
    ``V = Vbar - e^{-t} int_0^t e^s Vbar(s, anchor) ds + beta (1 - e^{-t})`` with
    trapezoidal quadrature; ``anchored_residual`` checks that both runs agree
    once each is shifted to vanish at the anchor.
    """
    beta = vi_run.beta if beta is None else beta
    if rvi_run.mode != "rvi" or vi_run.mode != "vi":
        raise ValueError("need an rvi run and a vi run")
    if rvi_run.dt != vi_run.dt or rvi_run.snapshots.shape != vi_run.snapshots.shape \
            or not np.array_equal(rvi_run.steps, vi_run.steps):
        raise ValueError("runs do not share grid, dt and record steps")
    if not np.array_equal(rvi_run.snapshots[0], vi_run.snapshots[0]):
        raise ValueError("runs do not share initial data")
    dt = vi_run.dt
    V, W = rvi_run.snapshots, vi_run.snapshots
    c = rvi_vi_offsets(vi_run.anchor_trace, beta, dt)[vi_run.steps]
    exact = float(np.max(np.abs(V - W - c[:, None])))

    t_all = np.arange(vi_run.anchor_trace.size) * dt
    integral = cumulative_trapezoid(np.exp(t_all) * vi_run.anchor_trace, t_all, initial=0.0)
    t = vi_run.steps * dt
    shift = -np.exp(-t) * integral[vi_run.steps] + beta * (1.0 - np.exp(-t))
    continuum = float(np.max(np.abs(V - W - shift[:, None])))

    a = vi_run.anchor
    anchored = float(np.max(np.abs((V - V[:, [a]]) - (W - W[:, [a]]))))
    return IdentityReport(exact, continuum, anchored)


def weighted_norm(v, weight) -> float:
    """``sup |v / weight|``."""
    return float(np.max(np.abs(np.asarray(v, dtype=float) / np.asarray(weight, dtype=float))))


@dataclass(frozen=True)
class BoundReport:
    passed: bool
    n_samples: int
    n_violations: int
    worst_ratio: float       # max of |V* - Vbar| / (slack * bound), over samples with bound > 0
    initial_distance: float  # ||V* - V0|| in the Lyapunov-weighted norm
    sup_weighted_norm: float # sup over records of ||Vbar(t)|| in the weighted norm
    violations: list = field(default_factory=list)


def check_bound(vstar, vi_run: ParabolicRun, problem: DiffusionProblem,
                core_margin: Optional[float] = None, slack: float = 1.1,
                atol: float = 1e-12) -> BoundReport:
    """Check ``|V* - Vbar(t)| <= slack * ||V* - V0||_V (c0/c1 + V(x) e^{-c1 t})`` on the core.

    ``V0`` is the first snapshot of ``vi_run``. Every recorded ``(t, x)`` with
    ``x`` in the core is a sample.
    """
    lyap = problem.lyapunov
    if lyap is None:
        raise ValueError("problem has no Lyapunov data")
    vstar = np.asarray(vstar, dtype=float)
    weight = lyap.values
    dist = weighted_norm(vstar - vi_run.snapshots[0], weight)
    mask = problem.core_mask(core_margin)
    t = vi_run.times[:, None]
    rhs = slack * dist * (lyap.c0 / lyap.c1 + weight[None, :] * np.exp(-lyap.c1 * t))
    lhs = np.abs(vstar[None, :] - vi_run.snapshots)
    lhs, rhs = lhs[:, mask], rhs[:, mask]
    bad = lhs > rhs + atol
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > atol, np.inf, 0.0))
    xs = problem.x[mask]
    violations = [(float(vi_run.times[i]), float(xs[j]), float(lhs[i, j]), float(rhs[i, j]))
                  for i, j in np.argwhere(bad)[:20]]
    sup_norm = max(weighted_norm(s, weight) for s in vi_run.snapshots)
    return BoundReport(not bad.any(), int(lhs.size), int(bad.sum()), float(ratio.max()), dist,
                       sup_norm, violations)


def lyapunov_drift(problem: DiffusionProblem) -> np.ndarray:
    """Discrete ``L^u V`` at interior nodes with the problem's own stencil.

    Shape ``(n_actions, n_nodes - 2)``; interior rows do not depend on the
    boundary mode.
    """
    if problem.lyapunov is None:
        raise ValueError("problem has no Lyapunov data")
    V = problem.lyapunov.values
    up, lo = _coefficients(problem)
    up, lo = up[:, 1:-1], lo[:, 1:-1]
    return up * (V[2:] - V[1:-1]) - lo * (V[1:-1] - V[:-2])


@dataclass(frozen=True)
class LyapunovReport:
    passed: bool
    drift_margin: float                  # min of c0 - c1 V - L^u V over interior nodes and actions
    drift_worst: tuple[float, float]     # (x, u) attaining drift_margin
    cost_margin: float                   # min of c2 V - sup_u r over nodes
    cost_worst: float                    # x attaining cost_margin


def verify_lyapunov(problem: DiffusionProblem, tol: float = 1e-9) -> LyapunovReport:
    """Sweep the drift and cost inequalities over grid nodes and actions.

    Both margins must be at least ``-tol``; the slack absorbs rounding where an
    inequality is tight on the grid.
    """
    lyap = problem.lyapunov
    if lyap is None:
        raise ValueError("problem has no Lyapunov data")
    V = lyap.values
    drift = lyapunov_drift(problem)
    margin = lyap.c0 - lyap.c1 * V[None, 1:-1] - drift
    k, i = np.unravel_index(np.argmin(margin), margin.shape)
    cost_margin = lyap.c2 * V - problem.cost.max(axis=0)
    j = int(np.argmin(cost_margin))
    dm, cm = float(margin[k, i]), float(cost_margin[j])
    return LyapunovReport(dm >= -tol and cm >= -tol, dm,
                          (float(problem.x[i + 1]), float(problem.actions[k])), cm,
                          float(problem.x[j]))


@dataclass(frozen=True)
class LqSolution:
    """Closed form for the LQ benchmark: ``V*(x) = k x^2``, ``beta = 2 k``, ``u*(x) = -k x``."""

    k: float
    beta: float

    def value(self, x) -> np.ndarray:
        return self.k * np.asarray(x, dtype=float) ** 2

    def control(self, x) -> np.ndarray:
        return -self.k * np.asarray(x, dtype=float)


def lq_exact(u_max: float, core: float = 2.5) -> LqSolution:
    """Exact solution of the LQ benchmark (``b = u - x``, ``a = 1``, ``r = x^2 + u^2``).

    Substituting ``V = k x^2`` with minimiser ``u = -V'/2`` gives ``k^2 + 2k - 1 = 0``.
    Raises if the optimal control ``-k x`` leaves ``[-u_max, u_max]`` on ``|x| <= core``.
    """
    k = np.sqrt(2.0) - 1.0
    if k * core > u_max:
        raise ValueError(f"u_max={u_max:g} too small: optimal control reaches {k * core:.4g} "
                         f"on |x| <= {core:g}")
    return LqSolution(float(k), float(2 * k))


def write_field_csv(run: ParabolicRun, problem: DiffusionProblem, path) -> None:
    """Write every snapshot as rows ``t, x, value, policy`` (policy is the argmin action value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value", "policy"])
        for t, snap in zip(run.times, run.snapshots):
            _, pol = rhs_min(problem, snap)
            for x, v, u in zip(problem.x, snap, problem.actions[pol]):
                w.writerow([f"{t:.17g}", f"{x:.17g}", f"{v:.17g}", f"{u:.17g}"])
