"""Run configuration: a JSON document validated field by field.

Example::

    {
      "workflow": "solve-mfc",
      "model": {"name": "lq", "params": {"kappa": 1.0}},
      "grid": {"T": 8.0, "steps": 400},
      "particles": 2000,
      "scenarios": 8,
      "optimizer": {"iters": 80, "step": 0.15, "fd_eps": 0.02, "knots": 1},
      "discount": 1.0,
      "seed": 0,
      "output": "runs/lq"
    }

Omitted fields take the model's recommended defaults.  ``"discount": null``
switches discounting off; leaving the key out uses the model default.
Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigurationError
from .models import MODEL_REGISTRY

__all__ = ["WORKFLOWS", "RunConfig", "OptimizerSection", "load_config", "parse_config"]

WORKFLOWS = ("simulate", "solve-mfc", "exploitability", "mixture-check", "mfld", "compare")
_UNSET = object()


@dataclass(frozen=True)
class OptimizerSection:
    iters: int = 80
    step: float = 0.15
    decay: float = 0.05
    fd_eps: float = 0.02
    knots: int = 1


@dataclass(frozen=True)
class MixtureSection:
    deltas: tuple = (0.05, 0.1, 0.2)
    alternatives: int = 3
    spread: float = 0.5


@dataclass(frozen=True)
class MFLDSection:
    checkpoints: int = 12
    tol: float = 1e-2


@dataclass(frozen=True)
class RunConfig:
    workflow: str
    model: str
    model_params: dict = field(default_factory=dict)
    horizon: Optional[float] = None
    steps: Optional[int] = None
    particles: Optional[int] = None
    scenarios: Optional[int] = None
    optimizer: OptimizerSection = OptimizerSection()
    discount: Any = _UNSET  # float, None (off) or _UNSET (model default)
    seed: int = 0
    output: str = "mfkit-run"
    theta: Optional[tuple] = None
    mixture: MixtureSection = MixtureSection()
    mfld: MFLDSection = MFLDSection()
    plots: bool = True

    def echo(self) -> dict:
        """Plain-JSON form suitable for the manifest; loading it reproduces the run."""
        out = {
            "workflow": self.workflow,
            "model": {"name": self.model, "params": dict(self.model_params)},
            "grid": {k: v for k, v in (("T", self.horizon), ("steps", self.steps)) if v is not None},
            "optimizer": {f.name: getattr(self.optimizer, f.name) for f in fields(OptimizerSection)},
            "mixture": {"deltas": list(self.mixture.deltas), "alternatives": self.mixture.alternatives,
                        "spread": self.mixture.spread},
            "mfld": {"checkpoints": self.mfld.checkpoints, "tol": self.mfld.tol},
            "seed": self.seed,
            "output": self.output,
            "plots": self.plots,
        }
        for key in ("particles", "scenarios"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.discount is not _UNSET:
            out["discount"] = self.discount
        if self.theta is not None:
            out["theta"] = list(self.theta)
        return out

    def replace(self, **kw) -> "RunConfig":
        from dataclasses import replace

        return replace(self, **kw)


def _check_keys(section: dict, allowed, where: str):
    if not isinstance(section, dict):
        raise ConfigurationError(f"field '{where}' must be an object")
    for key in section:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigurationError(f"unknown field '{name}'")


def _number(value, name, *, integer=False, lo=None, lo_open=False, allow_none=False):
    if value is None and allow_none:
        return None
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok:
        raise ConfigurationError(f"field '{name}' must be {'an integer' if integer else 'a number'}")
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ConfigurationError(f"field '{name}' out of range: {value!r} must be {'>' if lo_open else '>='} {lo}")
    return value


def parse_config(doc: dict, workflow: Optional[str] = None) -> RunConfig:
    """Validate a decoded JSON document; ``workflow`` overrides the document's."""
    top = ("workflow", "model", "grid", "particles", "scenarios", "optimizer", "discount", "seed", "output",
           "theta", "mixture", "mfld", "plots")
    _check_keys(doc, top, "")
    wf = workflow or doc.get("workflow")
    if wf not in WORKFLOWS:
        raise ConfigurationError(f"field 'workflow' must be one of {list(WORKFLOWS)}, got {wf!r}")

    model = doc.get("model")
    if model is None:
        raise ConfigurationError("field 'model' is required")
    if isinstance(model, str):
        model = {"name": model}
    _check_keys(model, ("name", "params"), "model")
    name = model.get("name")
    if name not in MODEL_REGISTRY:
        raise ConfigurationError(f"field 'model' names unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}")
    params = model.get("params", {})
    if not isinstance(params, dict):
        raise ConfigurationError("field 'model.params' must be an object")

    grid = doc.get("grid", {})
    _check_keys(grid, ("T", "steps"), "grid")
    horizon = _number(grid.get("T"), "grid.T", lo=0, lo_open=True, allow_none=True)
    steps = _number(grid.get("steps"), "grid.steps", integer=True, lo=1, allow_none=True)
    particles = _number(doc.get("particles"), "particles", integer=True, lo=1, allow_none=True)
    scenarios = _number(doc.get("scenarios"), "scenarios", integer=True, lo=1, allow_none=True)
    seed = _number(doc.get("seed", 0), "seed", integer=True, lo=0)

    opt = doc.get("optimizer", {})
    _check_keys(opt, [f.name for f in fields(OptimizerSection)], "optimizer")
    d = OptimizerSection()
    optimizer = OptimizerSection(
        iters=_number(opt.get("iters", d.iters), "optimizer.iters", integer=True, lo=0),
        step=_number(opt.get("step", d.step), "optimizer.step", lo=0, lo_open=True),
        decay=_number(opt.get("decay", d.decay), "optimizer.decay", lo=0),
        fd_eps=_number(opt.get("fd_eps", d.fd_eps), "optimizer.fd_eps", lo=0, lo_open=True),
        knots=_number(opt.get("knots", d.knots), "optimizer.knots", integer=True, lo=1),
    )

    discount = _UNSET
    if "discount" in doc:
        discount = _number(doc["discount"], "discount", lo=0, lo_open=True, allow_none=True)

    mix = doc.get("mixture", {})
    _check_keys(mix, ("deltas", "alternatives", "spread"), "mixture")
    dm = MixtureSection()
    deltas = mix.get("deltas", list(dm.deltas))
    if not isinstance(deltas, list) or not deltas:
        raise ConfigurationError("field 'mixture.deltas' must be a non-empty list")
    for j, v in enumerate(deltas):
        _number(v, f"mixture.deltas[{j}]")
        if not 0 < v <= 0.5:
            raise ConfigurationError(f"field 'mixture.deltas[{j}]' out of range: must lie in (0, 0.5]")
    mixture = MixtureSection(tuple(float(v) for v in deltas),
                             _number(mix.get("alternatives", dm.alternatives), "mixture.alternatives",
                                     integer=True, lo=1),
                             _number(mix.get("spread", dm.spread), "mixture.spread", lo=0, lo_open=True))

    mf = doc.get("mfld", {})
    _check_keys(mf, ("checkpoints", "tol"), "mfld")
    mfld = MFLDSection(_number(mf.get("checkpoints", 12), "mfld.checkpoints", integer=True, lo=2),
                       _number(mf.get("tol", 1e-2), "mfld.tol", lo=0, lo_open=True))

    theta = doc.get("theta")
    if theta is not None:
        if not isinstance(theta, list):
            raise ConfigurationError("field 'theta' must be a list of numbers")
        theta = tuple(float(_number(v, f"theta[{j}]")) for j, v in enumerate(theta))
    output = doc.get("output", "mfkit-run")
    if not isinstance(output, str) or not output:
        raise ConfigurationError("field 'output' must be a non-empty string")
    plots = doc.get("plots", True)
    if not isinstance(plots, bool):
        raise ConfigurationError("field 'plots' must be true or false")

    return RunConfig(wf, name, dict(params), horizon, steps, particles, scenarios, optimizer, discount, seed,
                     output, theta, mixture, mfld, plots)


def load_config(path, workflow: Optional[str] = None) -> RunConfig:
    """Read and validate a JSON config; parse errors report line and column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(doc, workflow)
