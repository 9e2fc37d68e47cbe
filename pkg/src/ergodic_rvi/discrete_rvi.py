"""Relative value iteration for finite average-cost MDPs, with an exact oracle."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ergodic_rvi.model import FiniteMdp, SolveReport, StepRecord, ValueField, span

__all__ = [
    "ErgodicSolution", "ReducibleChainError", "bellman_min", "white_step", "bertsekas_step",
    "solve_white", "solve_bertsekas", "exact_ergodic", "policy_iteration",
    "stationary_distribution", "poisson_residual", "gamma_schedule",
]

ENUMERATION_LIMIT = 10 ** 6


class ReducibleChainError(ValueError):
    """A policy's chain is reducible, so its stationary law is not unique."""

    def __init__(self, message, policy=None):
        super().__init__(message)
        self.policy = policy


@dataclass(frozen=True)
class ErgodicSolution:
    """Optimal pair ``(V*, beta)`` with ``V*`` zero at the anchor."""

    value: ValueField
    beta: float
    policy: np.ndarray
    residual: float = 0.0


def _q_values(mdp: FiniteMdp, v: np.ndarray) -> np.ndarray:
    rows, costs = mdp.padded
    return costs + rows @ v


def bellman_min(mdp: FiniteMdp, v) -> tuple[ValueField, np.ndarray]:
    """Undiscounted Bellman operator ``F(v)(i) = min_u [r(i,u) + sum_j p_ij(u) v(j)]``.

    Returns the image and the minimising action index per state. Ties go to the
    lowest action index.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ValueError(f"value vector has shape {v.shape}, expected ({mdp.n_states},)")
    q = _q_values(mdp, v)
    policy = np.argmin(q, axis=1)
    return ValueField(q[np.arange(mdp.n_states), policy], mdp.anchor), policy


def white_step(mdp: FiniteMdp, h) -> tuple[ValueField, float]:
    """One step of White's scheme: ``h' = F(h) - F(h)(anchor)``."""
    fh, _ = bellman_min(mdp, h)
    lam = float(fh.values[mdp.anchor])
    out = fh.values - lam
    out[mdp.anchor] = 0.0
    return ValueField(out, mdp.anchor), lam


def bertsekas_step(mdp: FiniteMdp, h, lam: float, gamma: float) -> tuple[ValueField, float]:
    """Bertsekas' variant: the Bellman sum skips the anchor and ``lam`` moves by ``gamma * h'(anchor)``."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    h = np.array(h, dtype=float)
    h[mdp.anchor] = 0.0
    fh, _ = bellman_min(mdp, h)
    out = fh.values - lam
    return ValueField(out, mdp.anchor), float(lam + gamma * out[mdp.anchor])


def gamma_schedule(gamma: float = 0.5, kind: str = "constant") -> Callable[[int], float]:
    """Stepsize sequence for :func:`solve_bertsekas`: constant or ``gamma / (1 + k)``."""
    if kind == "constant":
        return lambda k: gamma
    if kind == "harmonic":
        return lambda k: gamma / (1.0 + k)
    raise ValueError(f"unknown gamma schedule {kind!r}")


def _report(records, h, lam, status, steps, policy, anchor):
    return SolveReport(tuple(records), ValueField(h, anchor, steps), float(lam), status, steps,
                       policy)


def solve_white(mdp: FiniteMdp, tol: float = 1e-10, max_iters: int = 100_000,
                damping: float = 1.0, h0=None, blowup: float = 1e12,
                record_every: int = 1) -> SolveReport:
    """Iterate White's scheme, optionally damped ``h <- (1 - a) h + a * step(h)``.

    Converged when both ``sup|h_{k+1} - h_k|`` and ``|lam_{k+1} - lam_k|`` are at most
    ``tol``. The recorded HJB residual is ``sup|F(h_k) - lam_{k+1} - h_k|``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    h = np.zeros(mdp.n_states) if h0 is None else np.array(h0, dtype=float)
    lam = 0.0
    records = []
    status = "max_steps"
    k = 0
    policy = None
    for k in range(1, max_iters + 1):
        fh, policy = bellman_min(mdp, h)
        new_lam = float(fh.values[mdp.anchor])
        residual = float(np.max(np.abs(fh.values - new_lam - h)))
        stepped = fh.values - new_lam
        new_h = stepped if damping == 1.0 else (1.0 - damping) * h + damping * stepped
        dh = float(np.max(np.abs(new_h - h)))
        dlam = abs(new_lam - lam)
        h, lam = new_h, new_lam
        if k % record_every == 0:
            records.append(StepRecord(k, lam, span(h), dh, residual))
        if not np.all(np.isfinite(h)) or span(h) > blowup:
            status = "diverged"
            break
        if dh <= tol and dlam <= tol:
            status = "converged"
            if k % record_every:
                records.append(StepRecord(k, lam, span(h), dh, residual))
            break
    return _report(records, h, lam, status, k, policy, mdp.anchor)


def solve_bertsekas(mdp: FiniteMdp, tol: float = 1e-10, max_iters: int = 100_000,
                    gamma: Union[float, Callable[[int], float]] = 0.5, h0=None, lam0: float = 0.0,
                    blowup: float = 1e12, record_every: int = 1) -> SolveReport:
    """Iterate :func:`bertsekas_step` with a constant or scheduled stepsize."""
    step_size = gamma if callable(gamma) else gamma_schedule(gamma)
    h = np.zeros(mdp.n_states) if h0 is None else np.array(h0, dtype=float)
    lam = float(lam0)
    records = []
    status = "max_steps"
    k = 0
    for k in range(1, max_iters + 1):
        new_h, new_lam = bertsekas_step(mdp, h, lam, step_size(k - 1))
        new_h = new_h.values
        dh = float(np.max(np.abs(new_h - h)))
        dlam = abs(new_lam - lam)
        h, lam = new_h, new_lam
        if k % record_every == 0:
            records.append(StepRecord(k, lam, span(h), dh, poisson_residual(mdp, h, lam)))
        if not np.all(np.isfinite(h)) or span(h) > blowup:
            status = "diverged"
            break
        if dh <= tol and dlam <= tol:
            status = "converged"
            if k % record_every:
                records.append(StepRecord(k, lam, span(h), dh, poisson_residual(mdp, h, lam)))
            break
    _, policy = bellman_min(mdp, h)
    return _report(records, h, lam, status, k, policy, mdp.anchor)


def poisson_residual(mdp: FiniteMdp, v, beta: float) -> float:
    """Sup-norm residual of ``v(i) = min_u [r(i,u) - beta + sum_j p_ij(u) v(j)]``."""
    v = np.asarray(v, dtype=float)
    fv, _ = bellman_min(mdp, v)
    return float(np.max(np.abs(fv.values - beta - v)))


def stationary_distribution(P) -> np.ndarray:
    """Stationary law of an irreducible stochastic matrix.

    Solves ``pi (P - I) = 0`` with one balance equation replaced by the
    normalisation. Accepts a stack ``(..., n, n)``; raises
    :class:`ReducibleChainError` if the system is singular or the solution is not
    strictly positive.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[-1]
    A = np.swapaxes(P, -1, -2) - np.eye(n)
    A[..., -1, :] = 1.0
    b = np.zeros(P.shape[:-1])
    b[..., -1] = 1.0
    try:
        pi = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ReducibleChainError("singular balance equations (reducible chain)") from exc
    if not np.all(np.isfinite(pi)) or np.any(pi <= 0):
        raise ReducibleChainError("stationary law is not strictly positive (reducible chain)")
    return pi


def _relative_value(P: np.ndarray, c: np.ndarray, beta: float, anchor: int) -> np.ndarray:
    """Solve ``(I - P) V = c - beta`` with ``V(anchor) = 0``."""
    n = P.shape[0]
    A = np.eye(n) - P
    # V(anchor) = 0 frees that column; it absorbs the (vanishing) gain correction
    A[:, anchor] = 1.0
    v = np.linalg.solve(A, c - beta)
    v[anchor] = 0.0
    return v


def _policy_gains(mdp: FiniteMdp, policies: np.ndarray) -> np.ndarray:
    rows, costs = mdp.padded
    idx = np.arange(mdp.n_states)
    P = rows[idx, policies]                        # (K, n, n)
    c = costs[idx, policies]                       # (K, n)
    try:
        pi = stationary_distribution(P)
    except ReducibleChainError:
        for k in range(len(policies)):
            try:
                stationary_distribution(P[k])
            except ReducibleChainError as exc:
                raise ReducibleChainError(f"policy {policies[k].tolist()} has a reducible chain",
                                          policies[k].tolist()) from exc
        raise
    return np.einsum("kn,kn->k", pi, c)


def policy_iteration(mdp: FiniteMdp, policy=None, max_iters: int = 10_000) -> ErgodicSolution:
    """Howard policy iteration for unichain average-cost MDPs.

    Improvement keeps the current action unless another one is strictly better
    (beyond ``1e-12`` relative), which guarantees termination.
    """
    n = mdp.n_states
    policy = np.zeros(n, dtype=int) if policy is None else np.array(policy, dtype=int)
    for _ in range(max_iters):
        P, c = mdp.policy_matrix(policy)
        pi = stationary_distribution(P)
        beta = float(pi @ c)
        v = _relative_value(P, c, beta, mdp.anchor)
        q = _q_values(mdp, v)
        best = np.argmin(q, axis=1)
        idx = np.arange(n)
        current = q[idx, policy]
        improve = q[idx, best] < current - 1e-12 * np.maximum(1.0, np.abs(current))
        if not improve.any():
            break
        policy = np.where(improve, best, policy)
    else:
        raise RuntimeError("policy iteration did not terminate")
    residual = poisson_residual(mdp, v, beta)
    return ErgodicSolution(ValueField(v, mdp.anchor), beta, policy, residual)


def exact_ergodic(mdp: FiniteMdp, check: float = 1e-9) -> ErgodicSolution:
    """Exact ``(V*, beta)`` by enumerating stationary deterministic policies.

    Each policy's gain is ``pi_d . r_d``; the best one is then polished by policy
    iteration so the returned pair satisfies the optimality equation. Above
    ``10**6`` policies the enumeration is skipped in favour of policy iteration.
    """
    if mdp.n_policies <= ENUMERATION_LIMIT:
        best_policy, best_gain = None, np.inf
        ranges = [range(len(a)) for a in mdp.actions]
        it = itertools.product(*ranges)
        while True:
            chunk = np.array(list(itertools.islice(it, 65536)), dtype=int)
            if chunk.size == 0:
                break
            gains = _policy_gains(mdp, chunk)
            k = int(np.argmin(gains))
            if gains[k] < best_gain:
                best_gain, best_policy = float(gains[k]), chunk[k]
        sol = policy_iteration(mdp, best_policy)
        if sol.beta > best_gain + 1e-9 * max(1.0, abs(best_gain)):
            raise RuntimeError("policy iteration left the optimal gain")
    else:
        sol = policy_iteration(mdp)
    scale = max(1.0, max(float(np.max(np.abs(c))) for c in mdp.cost))
    if sol.residual > check * scale:
        raise RuntimeError(f"oracle residual {sol.residual:.3g} exceeds {check:g}")
    return sol
