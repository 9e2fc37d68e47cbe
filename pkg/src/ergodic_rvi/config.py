"""JSON run configuration: problem definition, algorithm choice and numeric options.

A config file looks like::

    {
      "kind": "mdp",
      "model": {"builtin": "e1"},
      "anchor": 1,
      "algorithm": "white",
      "options": {"tol": 1e-10},
      "compare": {"beta_tol": 1e-8, "value_tol": 1e-8}
    }

``model`` is either ``{"builtin": name, "params": {...}}`` or an inline model;
see ``docs/config.md`` for the inline layouts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ergodic_rvi.model import (
    BUILTINS, CtmcModel, DiffusionProblem, FiniteMdp, Lyapunov, uniform_grid,
)

KINDS = ("mdp", "ctmc", "diffusion")
ALGORITHMS = {
    "white": "mdp", "bertsekas": "mdp",
    "ctmc-rvi": "ctmc", "ctmc-vi": "ctmc",
    "pde-rvi": "diffusion", "pde-vi": "diffusion",
    "oracle": None,
}
DEFAULT_ALGORITHM = {"mdp": "white", "ctmc": "ctmc-rvi", "diffusion": "pde-rvi"}

DEFAULT_OPTIONS = {
    "white": dict(tol=1e-10, max_iters=100_000, damping=1.0, blowup=1e12, record_every=1),
    "bertsekas": dict(tol=1e-10, max_iters=100_000, gamma=0.5, gamma_schedule="constant",
                      blowup=1e12, record_every=1),
    "ctmc-rvi": dict(dt=0.01, T=50.0, method="rk4", record_every=100, tol=None, blowup=1e12),
    "ctmc-vi": dict(dt=0.01, T=50.0, method="rk4", record_every=100, tol=None, blowup=1e12,
                    beta=None),
    "pde-rvi": dict(T=20.0, dt=None, record_every=None, tol=None, core_margin=None, blowup=1e12),
    "pde-vi": dict(T=20.0, dt=None, record_every=None, tol=None, core_margin=None, blowup=1e12,
                   beta=None),
    "oracle": {},
}
DEFAULT_COMPARE = {
    "mdp": dict(beta_tol=1e-8, value_tol=1e-7, relative=False),
    "ctmc": dict(beta_tol=1e-6, value_tol=1e-5, relative=False),
    "diffusion": dict(beta_tol=0.02, value_tol=0.05, relative=True),
}
POSITIVE = ("tol", "max_iters", "damping", "gamma", "dt", "T", "record_every", "blowup")


class ConfigError(ValueError):
    """Malformed config; ``where`` names the offending field or file position."""

    def __init__(self, where: str, message: str, code: int = 2):
        super().__init__(f"{where}: {message}")
        self.where = where
        self.code = code


@dataclass
class RunConfig:
    kind: str
    model: Any
    algorithm: str
    options: dict
    compare: dict
    builtin: Optional[str] = None
    params: dict = field(default_factory=dict)
    resolved: dict = field(default_factory=dict)


def _array(obj, where, ndim=None):
    try:
        arr = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, f"expected numbers ({exc})") from None
    if ndim is not None and arr.ndim != ndim:
        raise ConfigError(where, f"expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}", "missing field")
    return d[key]


def _ragged_blocks(d, key, n, where):
    blocks = _require(d, key, where)
    if not isinstance(blocks, list) or len(blocks) != n:
        raise ConfigError(f"{where}.{key}", f"expected a list of {n} per-state blocks")
    return [_array(b, f"{where}.{key}[{i}]") for i, b in enumerate(blocks)]


def _inline_chain(kind, m, anchor):
    actions = _require(m, "actions", "model")
    if not isinstance(actions, list) or not actions:
        raise ConfigError("model.actions", "expected a nonempty list of per-state action lists")
    n = len(actions)
    key = "trans" if kind == "mdp" else "rates"
    rows = _ragged_blocks(m, key, n, "model")
    for i, (b, acts) in enumerate(zip(rows, actions)):
        if b.shape != (len(acts), n):
            raise ConfigError(f"model.{key}[{i}]", f"shape {b.shape}, expected ({len(acts)}, {n})")
    costs = _ragged_blocks(m, "cost", n, "model")
    for i, (c, acts) in enumerate(zip(costs, actions)):
        if c.shape != (len(acts),):
            raise ConfigError(f"model.cost[{i}]", f"shape {c.shape}, expected ({len(acts)},)")
    cls = FiniteMdp if kind == "mdp" else CtmcModel
    return cls(n, actions, rows, costs, anchor)


def _inline_diffusion(m, anchor):
    L = float(_require(m, "half_width", "model"))
    dx = float(_require(m, "dx", "model"))
    try:
        x = uniform_grid(L, dx)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError("model.dx", str(exc)) from None
    actions = _array(_require(m, "actions", "model"), "model.actions", 1)
    drift = _array(_require(m, "drift", "model"), "model.drift", 2)
    cost = _array(_require(m, "cost", "model"), "model.cost", 2)
    sigma = _array(_require(m, "sigma", "model"), "model.sigma", 1)
    for name, arr, shape in (("drift", drift, (actions.size, x.size)),
                             ("cost", cost, (actions.size, x.size)), ("sigma", sigma, (x.size,))):
        if arr.shape != shape:
            raise ConfigError(f"model.{name}", f"shape {arr.shape}, expected {shape}")
    lyap = None
    if m.get("lyapunov") is not None:
        ly = m["lyapunov"]
        values = _array(_require(ly, "values", "model.lyapunov"), "model.lyapunov.values", 1)
        lyap = Lyapunov(values, *(float(_require(ly, c, "model.lyapunov"))
                                  for c in ("c0", "c1", "c2")))
    return DiffusionProblem(L, dx, actions, drift, sigma, cost, lyap, anchor,
                            m.get("boundary", "reflecting"), m.get("name", "custom"),
                            m.get("drift_scheme", "hybrid"))


def build_model(kind: str, section: dict, anchor: Optional[int] = None):
    """Construct a model from the ``model`` section of a config."""
    if not isinstance(section, dict):
        raise ConfigError("model", "expected an object")
    if "builtin" in section:
        name = section["builtin"]
        if name not in BUILTINS:
            raise ConfigError("model.builtin", f"unknown problem {name!r}")
        builtin_kind, factory = BUILTINS[name]
        if builtin_kind != kind:
            raise ConfigError("model.builtin", f"problem {name!r} is of kind {builtin_kind!r}")
        params = section.get("params", {}) or {}
        try:
            model = factory(**params)
        except TypeError as exc:
            raise ConfigError("model.params", str(exc)) from None
        except ValueError as exc:
            raise ConfigError("model.params", str(exc)) from None
        if anchor is not None:
            model = replace(model, anchor=anchor)
        return model
    if kind == "diffusion":
        return _inline_diffusion(section, anchor)
    return _inline_chain(kind, section, anchor)


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    kind = _require(raw, "kind", "<root>")
    if kind not in KINDS:
        raise ConfigError("kind", f"expected one of {KINDS}, got {kind!r}")
    anchor = raw.get("anchor")
    if anchor is not None and (not isinstance(anchor, int) or isinstance(anchor, bool)):
        raise ConfigError("anchor", "expected an integer index")
    algorithm = raw.get("algorithm", DEFAULT_ALGORITHM[kind])
    if algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"unknown algorithm {algorithm!r}")
    if ALGORITHMS[algorithm] not in (None, kind):
        raise ConfigError("algorithm", f"{algorithm!r} does not apply to kind {kind!r}")
    options = dict(DEFAULT_OPTIONS[algorithm])
    user_opts = raw.get("options", {}) or {}
    if not isinstance(user_opts, dict):
        raise ConfigError("options", "expected an object")
    options.update(user_opts)
    for key in POSITIVE:
        val = options.get(key)
        if val is not None and (not isinstance(val, (int, float)) or val <= 0):
            raise ConfigError(f"options.{key}", f"must be a positive number, got {val!r}")
    compare = dict(DEFAULT_COMPARE[kind])
    compare.update(raw.get("compare", {}) or {})
    output = {"field_csv": kind == "diffusion"}
    output.update(raw.get("output", {}) or {})
    model = build_model(kind, raw.get("model"), anchor)
    section = raw.get("model")
    resolved = {"kind": kind, "model": section, "anchor": model.anchor, "algorithm": algorithm,
                "options": options, "compare": compare, "output": output}
    return RunConfig(kind, model, algorithm, options, compare, section.get("builtin"),
                     section.get("params", {}) or {}, resolved)


def load_config(path) -> RunConfig:
    """Read and parse a config file, raising :class:`ConfigError` with position info."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read file ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return parse_config(raw)
