"""Continuous-time controlled Markov chains: RVI and VI flows and an exact oracle.

The relative value iteration flow is

    dh/dt = min_u [Q(u) h + r(u)] - h(anchor) 1

and the value iteration flow replaces ``h(anchor)`` by the known optimal cost.
Both are integrated with fixed-step Euler or classical RK4.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ergodic_rvi.discrete_rvi import ErgodicSolution, ReducibleChainError, stationary_distribution
from ergodic_rvi.model import CtmcModel, SolveReport, StepRecord, ValueField, span

__all__ = [
    "OdeTrace", "ctmc_rvi_rhs", "ctmc_vi_rhs", "ctmc_min", "integrate", "ctmc_hjb_residual",
    "exact_ctmc", "solve_ctmc", "solve_ctmc_batch", "euler_dt_limit", "rvi_vi_offsets",
]

ENUMERATION_LIMIT = 10 ** 6
DIVERGENCE_CHECK = 16


@dataclass(frozen=True)
class OdeTrace:
    """Sampled solution of an ODE run; ``beta`` holds the anchor reading per sample."""

    times: np.ndarray
    values: np.ndarray
    beta: np.ndarray
    anchor: int
    status: str = "max_steps"

    def __len__(self):
        return self.times.size

    @property
    def terminal(self) -> ValueField:
        return ValueField(self.values[-1], self.anchor, float(self.times[-1]))


def ctmc_min(model: CtmcModel, h) -> tuple[np.ndarray, np.ndarray]:
    """Per-state ``min_u [Q(u) h + r(u)]`` and the lowest-index minimiser."""
    h = np.asarray(h, dtype=float)
    if h.shape != (model.n_states,):
        raise ValueError(f"value vector has shape {h.shape}, expected ({model.n_states},)")
    rates, costs = model.padded
    q = costs + rates @ h
    policy = np.argmin(q, axis=1)
    return q[np.arange(model.n_states), policy], policy


def ctmc_rvi_rhs(model: CtmcModel, h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    m, _ = ctmc_min(model, h)
    return m - h[model.anchor]


def ctmc_vi_rhs(model: CtmcModel, h, beta: float) -> np.ndarray:
    m, _ = ctmc_min(model, h)
    return m - beta


def ctmc_hjb_residual(model: CtmcModel, v, beta: float) -> float:
    """``sup_i |min_u [Q(u) v + r(u)](i) - beta|``."""
    m, _ = ctmc_min(model, v)
    return float(np.max(np.abs(m - beta)))


def euler_dt_limit(model: CtmcModel) -> float:
    """Largest Euler step keeping ``1 + dt q_ii(u) >= 0`` for every state and action."""
    return 1.0 / model.max_exit_rate if model.max_exit_rate > 0 else np.inf


def integrate(rhs: Callable[[np.ndarray], np.ndarray], h0, dt: float, T: float,
              method: str = "rk4", record_every: int = 1, anchor: Optional[int] = None,
              blowup: float = 1e12) -> OdeTrace:
    """Fixed-step integration of the autonomous system ``h' = rhs(h)``.

    Takes ``round(T / dt)`` steps and samples every ``record_every`` steps (the
    initial and final states are always kept). Stops early with status
    ``"diverged"`` if the state becomes non-finite or its span exceeds ``blowup``;
    this is checked at every sample and at least every ``DIVERGENCE_CHECK`` steps.
    """
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    if anchor is None:
        anchor = h0.anchor if isinstance(h0, ValueField) else len(h0) - 1
    h = np.array(h0, dtype=float)
    n_steps = int(round(T / dt))
    times, values = [0.0], [h.copy()]
    status = "max_steps"
    for m in range(1, n_steps + 1):
        if method == "euler":
            h = h + dt * rhs(h)
        else:
            k1 = rhs(h)
            k2 = rhs(h + 0.5 * dt * k1)
            k3 = rhs(h + 0.5 * dt * k2)
            k4 = rhs(h + dt * k3)
            h = h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        sample = m % record_every == 0 or m == n_steps
        bad = (sample or m % DIVERGENCE_CHECK == 0) and not (span(h) <= blowup)
        if sample or bad:
            times.append(m * dt)
            values.append(h.copy())
        if bad:
            status = "diverged"
            break
    values = np.array(values)
    return OdeTrace(np.array(times), values, values[:, anchor].copy(), anchor, status)


def solve_ctmc(model: CtmcModel, mode: str = "rvi", beta: Optional[float] = None, h0=None,
               dt: float = 0.01, T: float = 50.0, method: str = "rk4", record_every: int = 100,
               tol: Optional[float] = None, blowup: float = 1e12) -> tuple[OdeTrace, SolveReport]:
    """Run the RVI (``mode="rvi"``) or VI (``mode="vi"``, needs ``beta``) flow.

    Euler steps larger than :func:`euler_dt_limit` are rejected. The report's
    ``beta_estimate`` is the anchor reading for RVI and the supplied ``beta`` for VI;
    status is ``"converged"`` when the last sampled ``sup|dh/dt| <= tol``.
    """
    if mode not in ("rvi", "vi"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "vi" and beta is None:
        raise ValueError("vi mode needs beta")
    rates, costs = model.padded
    anchor = model.anchor

    def rhs(h):
        # same values as ctmc_rvi_rhs / ctmc_vi_rhs without argument checks or argmin
        m = (costs + rates @ h).min(axis=1)
        m -= h[anchor] if mode == "rvi" else beta
        return m

    if method == "euler" and dt > euler_dt_limit(model) * (1 + 1e-12):
        raise ValueError(f"Euler step {dt:g} exceeds stability limit {euler_dt_limit(model):g}")
    h0 = np.zeros(model.n_states) if h0 is None else np.asarray(h0, dtype=float)
    trace = integrate(rhs, h0, dt, T, method, record_every, model.anchor, blowup)
    records = []
    for t, h, reading in zip(trace.times, trace.values, trace.beta):
        est = reading if mode == "rvi" else beta
        records.append(StepRecord(float(t), float(est), span(h), float(np.max(np.abs(rhs(h)))),
                                  ctmc_hjb_residual(model, h - h[model.anchor], est)))
    status = trace.status
    if status != "diverged" and tol is not None and records[-1].sup_change <= tol:
        status = "converged"
    _, policy = ctmc_min(model, trace.values[-1])
    terminal_beta = float(trace.beta[-1]) if mode == "rvi" else float(beta)
    report = SolveReport(tuple(records), trace.terminal, terminal_beta, status,
                         int(round(trace.times[-1] / dt)), policy)
    return trace, report


def solve_ctmc_batch(models, mode: str = "rvi", betas=None, h0s=None, dt: float = 0.01,
                     T: float = 50.0, method: str = "rk4", record_every: int = 100,
                     blowup: float = 1e12) -> list[OdeTrace]:
    """Integrate several independent models in one fixed-step loop.

    The generators are stacked block-diagonally and each block keeps its own
    anchor term, so every block follows the same scheme as :func:`solve_ctmc`
    (up to summation-order rounding). This trades one large matrix product per
    stage for many small ones. Divergence is judged on the stacked state, which
    can only flag earlier than per-model checks would.
    """
    models = list(models)
    if mode not in ("rvi", "vi"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "vi" and betas is None:
        raise ValueError("vi mode needs betas")
    sizes = np.array([m.n_states for m in models])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    N, A = int(offsets[-1]), max(m.max_actions for m in models)
    R = np.zeros((A, N, N))
    c = np.full((A, N), np.inf)
    ref = np.empty(N, dtype=int)
    shift = np.zeros(N)
    for j, m in enumerate(models):
        if method == "euler" and dt > euler_dt_limit(m) * (1 + 1e-12):
            raise ValueError(f"Euler step {dt:g} exceeds stability limit of model {j}")
        rates, costs = m.padded
        block = slice(offsets[j], offsets[j + 1])
        R[:m.max_actions, block, block] = rates.transpose(1, 0, 2)
        R[m.max_actions:, block, block] = rates[:, :1].transpose(1, 0, 2)
        c[:m.max_actions, block] = costs.T
        ref[block] = offsets[j] + m.anchor
        if mode == "vi":
            shift[block] = betas[j]
    R = R.reshape(A * N, N)
    c = c.reshape(-1)

    def rhs(h):
        out = (c + R.dot(h)).reshape(A, N).min(axis=0)
        out -= h[ref] if mode == "rvi" else shift
        return out

    if h0s is None:
        h0 = np.zeros(N)
    else:
        h0 = np.concatenate([np.asarray(h, dtype=float) for h in h0s])
    big = integrate(rhs, h0, dt, T, method, record_every, 0, blowup)
    traces = []
    for j, m in enumerate(models):
        vals = big.values[:, offsets[j]:offsets[j + 1]].copy()
        traces.append(OdeTrace(big.times, vals, vals[:, m.anchor].copy(), m.anchor, big.status))
    return traces


def rvi_vi_offsets(vi_anchor_readings, beta: float, dt: float) -> np.ndarray:
    """Offsets ``c_m`` with ``c_0 = 0``, ``c_{m+1} = (1 - dt) c_m + dt (beta - vbar_m(anchor))``.

    With shared Euler steps the RVI iterate equals the VI iterate plus ``c_m``.
    """
    w = np.asarray(vi_anchor_readings, dtype=float)
    c = np.zeros(w.size)
    for m in range(w.size - 1):
        c[m + 1] = (1.0 - dt) * c[m] + dt * (beta - w[m])
    return c


def _generator_stationary(Q: np.ndarray) -> np.ndarray:
    # pi Q = 0 iff pi is stationary for the uniformised chain I + Q / rate
    rate = np.max(-np.diagonal(Q, axis1=-2, axis2=-1)) + 1.0
    return stationary_distribution(np.eye(Q.shape[-1]) + Q / rate)


def _relative_value(Q: np.ndarray, c: np.ndarray, beta: float, anchor: int) -> np.ndarray:
    """Solve ``Q V = beta 1 - c`` with ``V(anchor) = 0``."""
    A = np.array(Q, dtype=float)
    A[:, anchor] = -1.0
    v = np.linalg.solve(A, beta - c)
    v[anchor] = 0.0
    return v


def _policy_iteration(model: CtmcModel, policy) -> ErgodicSolution:
    n = model.n_states
    idx = np.arange(n)
    policy = np.array(policy, dtype=int)
    rates, costs = model.padded
    for _ in range(10_000):
        Q, c = model.policy_matrix(policy)
        pi = _generator_stationary(Q)
        beta = float(pi @ c)
        v = _relative_value(Q, c, beta, model.anchor)
        q = costs + rates @ v
        best = np.argmin(q, axis=1)
        current = q[idx, policy]
        improve = q[idx, best] < current - 1e-12 * np.maximum(1.0, np.abs(current))
        if not improve.any():
            break
        policy = np.where(improve, best, policy)
    else:
        raise RuntimeError("policy iteration did not terminate")
    return ErgodicSolution(ValueField(v, model.anchor), beta, policy,
                           ctmc_hjb_residual(model, v, beta))


def exact_ctmc(model: CtmcModel, check: float = 1e-9) -> ErgodicSolution:
    """Exact ``(V*, beta)`` for a finite controlled CTMC by policy enumeration.

    For each stationary policy the stationary law solves ``pi Q = 0`` and the gain
    is ``pi . r``. The minimiser is polished by policy iteration and its relative
    value solves ``Q V = beta 1 - r`` with ``V(anchor) = 0``.
    """
    rates, costs = model.padded
    idx = np.arange(model.n_states)
    if model.n_policies <= ENUMERATION_LIMIT:
        best_policy, best_gain = None, np.inf
        it = itertools.product(*[range(len(a)) for a in model.actions])
        while True:
            chunk = np.array(list(itertools.islice(it, 65536)), dtype=int)
            if chunk.size == 0:
                break
            try:
                pi = _generator_stationary(rates[idx, chunk])
            except ReducibleChainError:
                for pol in chunk:
                    try:
                        _generator_stationary(model.policy_matrix(pol)[0])
                    except ReducibleChainError as exc:
                        raise ReducibleChainError(
                            f"policy {pol.tolist()} has a reducible chain", pol.tolist()) from exc
                raise
            gains = np.einsum("kn,kn->k", pi, costs[idx, chunk])
            k = int(np.argmin(gains))
            if gains[k] < best_gain:
                best_gain, best_policy = float(gains[k]), chunk[k]
    else:
        best_policy = np.zeros(model.n_states, dtype=int)
    sol = _policy_iteration(model, best_policy)
    scale = max(1.0, max(float(np.max(np.abs(c))) for c in model.cost))
    if sol.residual > check * scale:
        raise RuntimeError(f"oracle residual {sol.residual:.3g} exceeds {check:g}")
    return sol
