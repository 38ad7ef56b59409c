"""JSON run configuration.

Example::

    {
      "params": {"alpha": 1, "beta": 1, "delta": 0.1, "T": 1},
      "discretization": {"n": 64, "M": 512},
      "case": "manufactured-linear",
      "ocp": {"alpha_l": 1, "use_ld": true},
      "solver": {"mode": "fixed-point", "fp_tol": 1e-13, "cg_rel_tol": 1e-10}
    }

A ``"custom"`` case reads expression strings from a ``"custom"`` block with
keys ``l`` and ``d0`` and optional ``exact_phi`` and ``exact_d``; the
latter serve as reference solutions for errors and as desired states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import jsonschema

from .expr import ExpressionError, parse_expression
from .fields import TimeFunction
from .forward import ModelParams, Solvers, StepMode
from .harness import ManufacturedCase
from .linalg import SolverConfig
from .optimize import ControlProblem, OptimizerConfig
from .quadrature import NODAL, sampling as _sampling


class ConfigError(ValueError):
    pass


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_EXPR = {"type": "string", "minLength": 1}

SCHEMA = _obj({
    "params": _obj({"alpha": _POS, "beta": _POS, "delta": _POS, "T": _POS}),
    "discretization": _obj({"n": _POS_INT, "M": _POS_INT}),
    "case": {"enum": ["manufactured-linear", "custom"]},
    "custom": _obj({"l": _EXPR, "d0": _EXPR, "exact_phi": _EXPR, "exact_d": _EXPR}, required=["l"]),
    "ocp": _obj({"alpha_l": _POS, "use_ld": {"type": "boolean"}}),
    "solver": _obj({
        "mode": {"enum": ["fixed-point", "monolithic"]},
        "fp_tol": _POS,
        "pcg_rel_tol": _POS,
        "cg_rel_tol": _POS,
        "max_cg_iter": _POS_INT,
        "backend": {"enum": ["lu", "pcg"]},
        "sampling": {"enum": ["nodal", "quadrature"]},
    }),
})


@dataclass(eq=False)
class CustomCase:
    """Data given by expressions; exact solutions are optional."""

    params: ModelParams
    l: TimeFunction
    d0: TimeFunction | None = None
    phi: TimeFunction | None = None
    d: TimeFunction | None = None
    alpha_l: float = 1.0

    def control_problem(self, mesh, grid, sampling=NODAL, mode=None, solvers=None, use_ld=True):
        kw = {k: v for k, v in (("mode", mode), ("solvers", solvers)) if v is not None}
        return ControlProblem(
            mesh, grid, self.params, self.alpha_l, desired_phi=self.phi, desired_d=self.d,
            control_shift=self.l if use_ld else None, d0=self.d0, sampling=sampling, **kw,
        )


@dataclass
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    n: int = 16
    M: int = 16
    case: str = "manufactured-linear"
    custom: dict = field(default_factory=dict)
    alpha_l: float = 1.0
    use_ld: bool = True
    mode: str = "fixed-point"
    fp_tol: float = 1e-13
    pcg_rel_tol: float = 1e-12
    cg_rel_tol: float = 1e-10
    max_cg_iter: int = 500
    backend: str = "lu"
    sampling: str = "nodal"

    @property
    def step_mode(self):
        return StepMode(self.mode, self.fp_tol)

    @property
    def solvers(self):
        return Solvers(self.backend, SolverConfig(rel_tol=self.pcg_rel_tol))

    @property
    def optimizer(self):
        return OptimizerConfig(self.cg_rel_tol, self.max_cg_iter)

    @property
    def sampling_rule(self):
        return _sampling(self.sampling)

    def build_case(self):
        if self.case == "manufactured-linear":
            return ManufacturedCase(self.params, self.alpha_l)
        exprs = {}
        for key in ("l", "d0", "exact_phi", "exact_d"):
            if key in self.custom:
                try:
                    exprs[key] = parse_expression(self.custom[key], name=key)
                except ExpressionError as exc:
                    raise ConfigError(f"custom.{key}: {exc}") from None
        return CustomCase(self.params, exprs["l"], exprs.get("d0"), exprs.get("exact_phi"),
                          exprs.get("exact_d"), self.alpha_l)


def parse_config(doc) -> RunConfig:
    """Validate a decoded JSON document and fill in defaults."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    if doc.get("case") == "custom" and "custom" not in doc:
        raise ConfigError("custom: required when case is 'custom'")
    try:
        params = ModelParams(**doc.get("params", {}))
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from None
    disc = doc.get("discretization", {})
    ocp = doc.get("ocp", {})
    kw = dict(doc.get("solver", {}))
    cfg = RunConfig(
        params=params,
        case=doc.get("case", "manufactured-linear"),
        custom=doc.get("custom", {}),
        **{k: disc[k] for k in ("n", "M") if k in disc},
        **{k: ocp[k] for k in ("alpha_l", "use_ld") if k in ocp},
        **kw,
    )
    cfg.build_case()  # surface expression errors early
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(doc)
