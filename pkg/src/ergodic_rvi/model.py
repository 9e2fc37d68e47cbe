"""Domain types, validation and the built-in problem registry.

Three model classes are supported:

* :class:`FiniteMdp` -- discrete-time controlled chain with per-state action sets.
* :class:`CtmcModel` -- continuous-time controlled chain given by rate rows.
* :class:`DiffusionProblem` -- one-dimensional controlled diffusion tabulated on a
  uniform grid, with a finite action grid.

All types are frozen; array fields are made read-only on construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

STOCHASTIC_ATOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# value containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValueField:
    """Values over states or grid nodes, with the normalising anchor index."""

    values: np.ndarray
    anchor: int
    stamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not 0 <= self.anchor < self.values.size:
            raise ValueError(f"anchor {self.anchor} out of range")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.size

    @property
    def anchor_value(self) -> float:
        return float(self.values[self.anchor])

    def anchored(self) -> "ValueField":
        """Shift so that the anchor entry is zero."""
        return ValueField(self.values - self.values[self.anchor], self.anchor, self.stamp)

    def shifted(self, c: float) -> "ValueField":
        return ValueField(self.values + c, self.anchor, self.stamp)


def span(v) -> float:
    """Span seminorm max(v) - min(v)."""
    v = np.asarray(v, dtype=float)
    return float(v.max() - v.min())


@dataclass(frozen=True)
class StepRecord:
    stamp: float
    beta_estimate: float
    span: float
    sup_change: float
    hjb_residual: float


@dataclass(frozen=True)
class SolveReport:
    """Trace of an iterative solve plus its terminal state.

    ``status`` is one of ``"converged"``, ``"max_steps"`` or ``"diverged"``.
    """

    records: tuple[StepRecord, ...]
    terminal_value: ValueField
    terminal_beta: float
    status: str
    steps: int = 0
    policy: Optional[np.ndarray] = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    location: str
    message: str

    def __str__(self):
        return f"{self.location}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, location: str, message: str) -> None:
        self.violations.append(Violation(location, message))

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        # truthy iff something is wrong, like a non-empty list
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def lines(self) -> list[str]:
        return [str(v) for v in self.violations]


def _strongly_connected(adjacency: np.ndarray) -> bool:
    n_comp, _ = connected_components(adjacency, directed=True, connection="strong")
    return n_comp == 1


# ---------------------------------------------------------------------------
# finite state models
# ---------------------------------------------------------------------------

class _ChainBase:
    """Shared storage for MDP/CTMC models with ragged per-state action sets."""

    n_states: int
    actions: tuple[tuple, ...]
    cost: tuple[np.ndarray, ...]

    def _rows(self) -> tuple[np.ndarray, ...]:
        raise NotImplementedError

    @cached_property
    def max_actions(self) -> int:
        return max(len(a) for a in self.actions)

    @cached_property
    def n_policies(self) -> int:
        return int(np.prod([len(a) for a in self.actions], dtype=object))

    @cached_property
    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows as an ``(n, A, n)`` array and costs as ``(n, A)`` with ``inf`` padding.

        Padded actions repeat the state's first row so products stay finite; their
        ``inf`` cost keeps them out of every minimisation.
        """
        n, A = self.n_states, self.max_actions
        rows = np.empty((n, A, n))
        costs = np.full((n, A), np.inf)
        for i, (r, c) in enumerate(zip(self._rows(), self.cost)):
            k = len(c)
            rows[i, :k] = r
            rows[i, k:] = r[0]
            costs[i, :k] = c
        rows.setflags(write=False)
        costs.setflags(write=False)
        return rows, costs

    def policy_matrix(self, policy: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Row matrix and cost vector of a stationary deterministic policy."""
        rows = self._rows()
        mat = np.array([rows[i][policy[i]] for i in range(self.n_states)])
        cost = np.array([self.cost[i][policy[i]] for i in range(self.n_states)])
        return mat, cost

    def _check_common(self, report: ValidationReport) -> None:
        if self.n_states < 1:
            report.add("n_states", "must be a positive integer")
        if len(self.actions) != self.n_states:
            report.add("actions", f"expected {self.n_states} action lists, got {len(self.actions)}")
        for i, acts in enumerate(self.actions):
            if len(acts) == 0:
                report.add(f"actions[{i}]", "state has no actions")
        for i, (acts, rows, costs) in enumerate(zip(self.actions, self._rows(), self.cost)):
            if rows.shape != (len(acts), self.n_states):
                report.add(f"state {i}", f"row block shape {rows.shape}, expected "
                           f"({len(acts)}, {self.n_states})")
                continue
            if costs.shape != (len(acts),):
                report.add(f"state {i}", f"cost shape {costs.shape}, expected ({len(acts)},)")
                continue
            for k, a in enumerate(acts):
                if not np.all(np.isfinite(rows[k])):
                    report.add(f"(state {i}, action {a})", "non-finite row entry")
                if not np.isfinite(costs[k]):
                    report.add(f"(state {i}, action {a})", "non-finite cost")


def _ragged(blocks, n_actions) -> tuple[np.ndarray, ...]:
    return tuple(_frozen(np.reshape(b, (n, -1)) if n else np.zeros((0, 0)))
                 for b, n in zip(blocks, n_actions))


@dataclass(frozen=True, eq=False)
class FiniteMdp(_ChainBase):
    """Finite controlled Markov chain in discrete time.

    ``trans[i]`` is an ``(len(actions[i]), n_states)`` array of transition rows and
    ``cost[i]`` the matching running costs. ``anchor`` defaults to the last state.
    """

    n_states: int
    actions: tuple[tuple, ...]
    trans: tuple[np.ndarray, ...]
    cost: tuple[np.ndarray, ...]
    anchor: Optional[int] = None

    def __post_init__(self):
        acts = tuple(tuple(a) for a in self.actions)
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "trans", _ragged(self.trans, [len(a) for a in acts]))
        object.__setattr__(self, "cost", tuple(_frozen(np.ravel(c)) for c in self.cost))
        if self.anchor is None:
            object.__setattr__(self, "anchor", self.n_states - 1)

    def _rows(self):
        return self.trans

    @classmethod
    def from_arrays(cls, P, r, anchor=None) -> "FiniteMdp":
        """Build from dense ``P[u, i, j]`` and ``r[i, u]`` with every action at every state."""
        P = np.asarray(P, dtype=float)
        r = np.asarray(r, dtype=float)
        n_actions, n, _ = P.shape
        return cls(n, [list(range(n_actions))] * n,
                   [P[:, i, :] for i in range(n)], [r[i] for i in range(n)], anchor)

    def validate(self) -> ValidationReport:
        report = ValidationReport()
        self._check_common(report)
        if report:
            return report
        for i, (acts, rows) in enumerate(zip(self.actions, self.trans)):
            for k, a in enumerate(acts):
                row = rows[k]
                if np.any(row < 0):
                    report.add(f"(state {i}, action {a})", "negative transition probability")
                s = row.sum()
                if abs(s - 1.0) > STOCHASTIC_ATOL:
                    report.add(f"(state {i}, action {a})", f"row sum {s:.12g} != 1")
        if not 0 <= self.anchor < self.n_states:
            report.add("anchor", f"{self.anchor} out of range")
        if not report:
            # sufficient condition for irreducibility under every policy
            lower = np.stack([rows.min(axis=0) for rows in self.trans])
            if not _strongly_connected(lower > 0):
                report.add("transitions", "uniform lower-bound graph is not irreducible")
        return report


@dataclass(frozen=True, eq=False)
class CtmcModel(_ChainBase):
    """Finite controlled Markov chain in continuous time, given by rate rows."""

    n_states: int
    actions: tuple[tuple, ...]
    rates: tuple[np.ndarray, ...]
    cost: tuple[np.ndarray, ...]
    anchor: Optional[int] = None

    def __post_init__(self):
        acts = tuple(tuple(a) for a in self.actions)
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "rates", _ragged(self.rates, [len(a) for a in acts]))
        object.__setattr__(self, "cost", tuple(_frozen(np.ravel(c)) for c in self.cost))
        if self.anchor is None:
            object.__setattr__(self, "anchor", self.n_states - 1)

    def _rows(self):
        return self.rates

    @classmethod
    def from_arrays(cls, Q, r, anchor=None) -> "CtmcModel":
        """Build from dense ``Q[u, i, j]`` and ``r[i, u]``."""
        Q = np.asarray(Q, dtype=float)
        r = np.asarray(r, dtype=float)
        n_actions, n, _ = Q.shape
        return cls(n, [list(range(n_actions))] * n,
                   [Q[:, i, :] for i in range(n)], [r[i] for i in range(n)], anchor)

    @cached_property
    def max_exit_rate(self) -> float:
        return float(max(np.max(-rows[:, i]) for i, rows in enumerate(self.rates)))

    def validate(self) -> ValidationReport:
        report = ValidationReport()
        self._check_common(report)
        if report:
            return report
        for i, (acts, rows) in enumerate(zip(self.actions, self.rates)):
            for k, a in enumerate(acts):
                off = np.delete(rows[k], i)
                if np.any(off < 0):
                    report.add(f"(state {i}, action {a})", "negative off-diagonal rate")
                s = rows[k].sum()
                if abs(s) > STOCHASTIC_ATOL:
                    report.add(f"(state {i}, action {a})", f"rate row sum {s:.12g} != 0")
        if not 0 <= self.anchor < self.n_states:
            report.add("anchor", f"{self.anchor} out of range")
        if not report:
            lower = np.stack([rows.min(axis=0) for rows in self.rates])
            np.fill_diagonal(lower, 0.0)
            if not _strongly_connected(lower > 0):
                report.add("rates", "uniform lower-bound rate graph is not irreducible")
        return report


# ---------------------------------------------------------------------------
# diffusion problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Lyapunov:
    """Tabulated Lyapunov function with its drift and cost constants."""

    values: np.ndarray
    c0: float
    c1: float
    c2: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))


BOUNDARY_MODES = ("reflecting", "dirichlet")
DRIFT_SCHEMES = ("hybrid", "upwind")


@dataclass(frozen=True, eq=False)
class DiffusionProblem:
    """One-dimensional controlled diffusion tabulated on a uniform grid.

    ``drift`` and ``cost`` have shape ``(n_actions, n_nodes)``; ``sigma`` has shape
    ``(n_nodes,)``. The generator is ``a(x) f'' + b(x, u) f'`` with ``a = sigma**2 / 2``.
    """

    half_width: float
    dx: float
    actions: np.ndarray
    drift: np.ndarray
    sigma: np.ndarray
    cost: np.ndarray
    lyapunov: Optional[Lyapunov] = None
    anchor: Optional[int] = None
    boundary: str = "reflecting"
    name: str = "custom"
    drift_scheme: str = "hybrid"

    def __post_init__(self):
        for name in ("actions", "drift", "sigma", "cost"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.drift.ndim == 1:
            object.__setattr__(self, "drift", _frozen(self.drift[None, :]))
        if self.cost.ndim == 1:
            object.__setattr__(self, "cost", _frozen(self.cost[None, :]))
        if self.anchor is None:
            object.__setattr__(self, "anchor", int(np.argmin(np.abs(self.x))))

    @cached_property
    def n_nodes(self) -> int:
        return int(round(2 * self.half_width / self.dx)) + 1

    @cached_property
    def x(self) -> np.ndarray:
        return _frozen(np.linspace(-self.half_width, self.half_width, self.n_nodes))

    @cached_property
    def a(self) -> np.ndarray:
        return _frozen(0.5 * self.sigma ** 2)

    @property
    def n_actions(self) -> int:
        return self.actions.size

    def core_mask(self, margin: Optional[float] = None) -> np.ndarray:
        """Interior nodes with ``|x| <= half_width - margin`` (margin defaults to L/2)."""
        if margin is None:
            margin = 0.5 * self.half_width
        mask = np.abs(self.x) <= self.half_width - margin + 1e-12 * self.half_width
        mask[0] = mask[-1] = False
        return mask

    def validate(self) -> ValidationReport:
        report = ValidationReport()
        if not self.half_width > 0:
            report.add("half_width", "must be positive")
            return report
        if not 0 < self.dx < self.half_width:
            report.add("dx", "must satisfy 0 < dx < half_width")
            return report
        m = 2 * self.half_width / self.dx
        if abs(m - round(m)) > 1e-9 * m:
            report.add("dx", f"2*half_width/dx = {m:.12g} is not an integer")
        n, k = self.n_nodes, self.n_actions
        if k == 0:
            report.add("actions", "empty action grid")
        if self.drift.shape != (k, n):
            report.add("drift", f"shape {self.drift.shape}, expected {(k, n)}")
        if self.cost.shape != (k, n):
            report.add("cost", f"shape {self.cost.shape}, expected {(k, n)}")
        if self.sigma.shape != (n,):
            report.add("sigma", f"shape {self.sigma.shape}, expected {(n,)}")
        if self.boundary not in BOUNDARY_MODES:
            report.add("boundary", f"unknown boundary mode {self.boundary!r}")
        if self.drift_scheme not in DRIFT_SCHEMES:
            report.add("drift_scheme", f"unknown drift scheme {self.drift_scheme!r}")
        if report:
            return report
        for name in ("actions", "drift", "sigma", "cost"):
            if not np.all(np.isfinite(getattr(self, name))):
                report.add(name, "non-finite entries")
        if report:
            return report
        bad = np.flatnonzero(self.a <= 0)
        if bad.size:
            report.add(f"sigma[{bad[0]}]", f"degenerate diffusion a(x)=0 at x={self.x[bad[0]]:.6g}")
        neg = np.argwhere(self.cost < 0)
        if neg.size:
            u, i = neg[0]
            report.add(f"cost[{u}][{i}]", "negative running cost")
        if not 0 <= self.anchor < n:
            report.add("anchor", f"{self.anchor} out of range")
        elif abs(self.x[self.anchor]) > 0.5 * self.dx + 1e-12:
            report.add("anchor", f"node x={self.x[self.anchor]:.6g} is not nearest to 0")
        lyap = self.lyapunov
        if lyap is not None:
            if lyap.values.shape != (n,):
                report.add("lyapunov.values", f"shape {lyap.values.shape}, expected {(n,)}")
            else:
                if np.any(lyap.values < 1):
                    report.add("lyapunov.values", "Lyapunov function must be >= 1")
                over = self.cost.max(axis=0) - lyap.c2 * lyap.values
                i = int(np.argmax(over))
                if over[i] > 1e-9 * max(1.0, lyap.c2 * lyap.values[i]):
                    report.add(f"lyapunov.c2 (node {i})",
                               f"sup_u r = {self.cost[:, i].max():.6g} exceeds c2*V")
            if min(lyap.c0, lyap.c1, lyap.c2) <= 0:
                report.add("lyapunov", "constants c0, c1, c2 must be positive")
        return report


def validate(model) -> ValidationReport:
    """Check a model's invariants; the report is empty iff the model is admissible."""
    return model.validate()


def uniform_grid(half_width: float, dx: float) -> np.ndarray:
    m = 2 * half_width / dx
    if abs(m - round(m)) > 1e-9 * m:
        raise ValueError(f"2*L/dx = {m:.12g} must be an integer")
    return np.linspace(-half_width, half_width, int(round(m)) + 1)


def action_grid(u_max: float, du: float) -> np.ndarray:
    m = 2 * u_max / du
    if abs(m - round(m)) > 1e-9 * m:
        raise ValueError(f"2*u_max/du = {m:.12g} must be an integer")
    return np.linspace(-u_max, u_max, int(round(m)) + 1)


def tabulate(x: np.ndarray, actions: np.ndarray, fn: Callable) -> np.ndarray:
    """Evaluate ``fn(x, u)`` on the ``(n_actions, n_nodes)`` product grid."""
    return np.broadcast_to(fn(x[None, :], actions[:, None]), (actions.size, x.size)).astype(float)


def build_lq_benchmark(L: float = 5.0, dx: float = 0.05, u_max: float = 3.0, du: float = 0.1,
                       boundary: str = "reflecting", drift_scheme: str = "hybrid") -> DiffusionProblem:
    """Linear-quadratic benchmark ``b = u - x``, ``sigma = sqrt(2)``, ``r = x^2 + u^2``.

    Ships with ``V(x) = 1 + x^2``, ``c1 = 1``, ``c2 = max(1, u_max^2)`` and
    ``c0 = 3 + u_max^2``. If the discrete drift inequality needs a larger ``c0`` on
    this grid, ``c0`` is raised to the grid maximum.
    """
    if not L > 0 or not 0 < dx < L or not u_max > 0 or not 0 < du <= u_max:
        raise ValueError("need L > 0, 0 < dx < L, u_max > 0, 0 < du <= u_max")
    from ergodic_rvi.pde_rvi import lyapunov_drift, verify_lyapunov

    x = uniform_grid(L, dx)
    u = action_grid(u_max, du)
    drift = tabulate(x, u, lambda x, u: u - x)
    cost = tabulate(x, u, lambda x, u: x ** 2 + u ** 2)
    vals = 1.0 + x ** 2
    c1 = 1.0
    c2 = max(1.0, u_max ** 2)
    c0 = 3.0 + u_max ** 2
    params = dict(half_width=L, dx=dx, actions=u, drift=drift, sigma=np.full(x.size, np.sqrt(2.0)),
                  cost=cost, boundary=boundary, name="lq", drift_scheme=drift_scheme)
    problem = DiffusionProblem(lyapunov=Lyapunov(vals, c0, c1, c2), **params)
    if not verify_lyapunov(problem).passed:
        need = float(np.max(lyapunov_drift(problem) + c1 * vals[1:-1]))
        if not np.isfinite(need):
            raise ValueError("no (c0, c1) certifies the drift condition on this grid")
        problem = DiffusionProblem(lyapunov=Lyapunov(vals, max(c0, need), c1, c2), **params)
        if not verify_lyapunov(problem).passed:
            raise ValueError("no (c0, c1) certifies the drift condition on this grid")
    return problem


def build_pure_diffusion(L: float = 2.0, dx: float = 0.05, cost: float = 1.0,
                         sigma: float = np.sqrt(2.0)) -> DiffusionProblem:
    """Single-action driftless diffusion with constant running cost on a reflecting interval."""
    x = uniform_grid(L, dx)
    return DiffusionProblem(L, dx, np.zeros(1), np.zeros((1, x.size)), np.full(x.size, sigma),
                            np.full((1, x.size), float(cost)), name="pure_diffusion")


def build_e1() -> FiniteMdp:
    """Two-state MDP: state 0 chooses between a cheap mixing and a costly sticky action."""
    return FiniteMdp(2, [["a", "b"], ["c"]],
                     [[[0.5, 0.5], [0.9, 0.1]], [[0.5, 0.5]]],
                     [[1.0, 2.0], [0.0]])


def build_two_cycle(costs=(1.0, 0.0)) -> FiniteMdp:
    """Deterministic period-2 chain, the textbook case where undamped RVI oscillates."""
    return FiniteMdp(2, [["go"], ["go"]], [[[0.0, 1.0]], [[1.0, 0.0]]],
                     [[costs[0]], [costs[1]]])


def build_c1() -> CtmcModel:
    """Two-state single-action CTMC with rates 1 and 2 and cost (1, 0)."""
    return CtmcModel(2, [["a"], ["a"]], [[[-1.0, 1.0]], [[2.0, -2.0]]], [[1.0], [0.0]])


BUILTINS: dict[str, tuple[str, Callable]] = {
    "e1": ("mdp", build_e1),
    "two_cycle": ("mdp", build_two_cycle),
    "c1": ("ctmc", build_c1),
    "lq": ("diffusion", build_lq_benchmark),
    "pure_diffusion": ("diffusion", build_pure_diffusion),
}


# ---------------------------------------------------------------------------
# random instances (tests, acceptance, demos)
# ---------------------------------------------------------------------------

def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int,
               cost_range=(0.0, 10.0), anchor=None) -> FiniteMdp:
    """Random MDP with strictly positive transition rows (irreducible and aperiodic)."""
    P = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    P /= P.sum(axis=-1, keepdims=True)
    r = rng.uniform(*cost_range, size=(n_states, n_actions))
    return FiniteMdp.from_arrays(P, r, anchor)


def random_ctmc(rng: np.random.Generator, n_states: int, n_actions: int,
                rate_range=(0.2, 2.0), cost_range=(0.0, 10.0), anchor=None) -> CtmcModel:
    """Random CTMC with every off-diagonal rate drawn from ``rate_range``."""
    Q = rng.uniform(*rate_range, size=(n_actions, n_states, n_states))
    idx = np.arange(n_states)
    Q[:, idx, idx] = 0.0
    Q[:, idx, idx] = -Q.sum(axis=-1)
    r = rng.uniform(*cost_range, size=(n_states, n_actions))
    return CtmcModel.from_arrays(Q, r, anchor)


def random_diffusion(rng: np.random.Generator, L: float = 3.0, dx: float = 0.1) -> DiffusionProblem:
    """Random single-action mean-reverting diffusion with smooth tabulated coefficients."""
    x = uniform_grid(L, dx)
    theta, mu = rng.uniform(0.5, 2.0), rng.uniform(-0.5, 0.5)
    amp, freq, phase = rng.uniform(0, 0.5), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * np.pi)
    drift = -theta * (x - mu) + amp * np.sin(freq * x + phase)
    sigma = rng.uniform(0.8, 1.5) * (1.0 + 0.3 * np.cos(rng.uniform(0.5, 2.0) * x) ** 2)
    cost = rng.uniform(0.2, 1.0) * x ** 2 + rng.uniform(0.0, 1.0) * (1 + np.sin(x)) + 0.1
    return DiffusionProblem(L, dx, np.zeros(1), drift[None, :], sigma, cost[None, :],
                            name="random")
