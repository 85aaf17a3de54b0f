"""Process-spec documents (YAML) and the small specs used by run plans.

A process document looks like::

    dim: 1
    b: [0.0]
    Q: [[1.0]]
    nu:
      atoms:
        - {position: [1.0], mass: 1.0}
      densities:
        - family: tempered
          params: {alpha: 1.5, lam: 3.0, scale: 1.0}
          support: [0.0, .inf]
          quadrature: {nodes: 16, scheme: gauss-legendre}

In d = 1 ``b`` and ``Q`` may be scalars and atom positions plain numbers.
Errors carry the dotted field path and the line it was found on.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .generator import C2Function, bump, gaussian_bump, sine
from .measure import Atom, LevyMeasure, MeasureError, ParametricDensity, QuadratureSpec
from .simulate import StoppingRule
from .triplet import LevyTriplet
from .weights import Mollifier, WeightError, WeightFunction, exp_beta, exp_linear, mollify, poly_p

TOP_FIELDS = ("dim", "b", "Q", "nu")
DENSITY_FIELDS = ("family", "params", "support", "quadrature")


class SpecError(ValueError):
    """A document that does not parse or violates an invariant."""

    def __init__(self, message: str, field: str = "", line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def _line_map(node, path: str = "", out: Optional[dict] = None) -> dict:
    """Dotted field path -> 1-based line for every node of a composed document."""
    out = {} if out is None else out
    if node is None:
        return out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{path}.{k.value}" if path else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
            out[key] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, f"{path}[{i}]", out)
    return out


class _Doc:
    """Parsed YAML plus a line lookup, so checks can point at the offending field."""

    def __init__(self, text: str, source: str = "<string>"):
        self.source = source
        try:
            self.lines = _line_map(yaml.compose(text))
            self.data = yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            raise SpecError(f"{exc.problem}", line=None if mark is None else mark.line + 1) from None

    def error(self, field: str, message: str) -> SpecError:
        line = None
        f = field
        while f and line is None:
            line = self.lines.get(f)
            f = f.rsplit(".", 1)[0] if "." in f else ""
        return SpecError(message, field, line)


def _get(doc: _Doc, mapping: Any, key: str, path: str, required: bool = True, default=None):
    if not isinstance(mapping, dict):
        raise doc.error(path, "expected a mapping")
    if key not in mapping:
        if required:
            raise doc.error(path, f"missing field {key!r}")
        return default
    return mapping[key]


def _number(doc: _Doc, value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise doc.error(path, f"expected a number, got {value!r}")
    return float(value)


def _vector(doc: _Doc, value, dim: int, path: str) -> list[float]:
    if dim == 1 and not isinstance(value, list):
        value = [value]
    if not isinstance(value, list) or len(value) != dim:
        raise doc.error(path, f"expected a vector of length {dim}")
    return [_number(doc, v, f"{path}[{i}]") for i, v in enumerate(value)]


def _matrix(doc: _Doc, value, dim: int, path: str) -> list[list[float]]:
    if dim == 1 and not isinstance(value, list):
        value = [[value]]
    if not isinstance(value, list) or len(value) != dim:
        raise doc.error(path, f"expected a {dim}x{dim} matrix")
    return [_vector(doc, row, dim, f"{path}[{i}]") if isinstance(row, list) or dim > 1
            else [_number(doc, row, f"{path}[{i}]")] for i, row in enumerate(value)]


def _density(doc: _Doc, item, path: str) -> ParametricDensity:
    if not isinstance(item, dict):
        raise doc.error(path, "expected a mapping")
    for k in item:
        if k not in DENSITY_FIELDS:
            raise doc.error(f"{path}.{k}", f"unknown field {k!r}")
    family = _get(doc, item, "family", path)
    params = dict(_get(doc, item, "params", path, required=False, default={}) or {})
    for k, v in params.items():
        if isinstance(v, list):
            params[k] = tuple(_number(doc, x, f"{path}.params.{k}[{i}]") for i, x in enumerate(v))
        else:
            params[k] = _number(doc, v, f"{path}.params.{k}")
    support = _get(doc, item, "support", path, required=False, default=[0.0, math.inf])
    if not isinstance(support, list) or len(support) != 2:
        raise doc.error(f"{path}.support", "expected [inner, outer] radii")
    support = tuple(_number(doc, s, f"{path}.support[{i}]") for i, s in enumerate(support))
    quad = _get(doc, item, "quadrature", path, required=False, default={}) or {}
    try:
        q = QuadratureSpec(int(quad.get("nodes", 16)), str(quad.get("scheme", "gauss-legendre")))
    except MeasureError as exc:
        raise doc.error(f"{path}.quadrature", str(exc)) from None
    try:
        return ParametricDensity(str(family), params, support, q)
    except MeasureError as exc:
        raise doc.error(path, str(exc)) from None


def triplet_from_data(doc: _Doc) -> LevyTriplet:
    data = doc.data
    if not isinstance(data, dict):
        raise SpecError("a process spec is a mapping with fields dim, b, Q, nu")
    for k in data:
        if k not in TOP_FIELDS:
            raise doc.error(str(k), f"unknown field {k!r}")
    dim = _get(doc, data, "dim", "", required=False, default=1)
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
        raise doc.error("dim", "dim must be a positive integer")
    b = _vector(doc, _get(doc, data, "b", "", required=False, default=[0.0] * dim), dim, "b")
    Q = _matrix(doc, _get(doc, data, "Q", "", required=False, default=np.zeros((dim, dim)).tolist()), dim, "Q")
    nu = _get(doc, data, "nu", "", required=False, default={}) or {}
    if not isinstance(nu, dict):
        raise doc.error("nu", "expected a mapping with atoms and densities")
    for k in nu:
        if k not in ("atoms", "densities"):
            raise doc.error(f"nu.{k}", f"unknown field {k!r}")
    atoms = []
    for i, a in enumerate(nu.get("atoms") or []):
        path = f"nu.atoms[{i}]"
        pos = _vector(doc, _get(doc, a, "position", path), dim, f"{path}.position")
        mass = _number(doc, _get(doc, a, "mass", path), f"{path}.mass")
        try:
            atoms.append(Atom(tuple(pos), mass))
        except MeasureError as exc:
            raise doc.error(path, str(exc)) from None
    dens = [_density(doc, d, f"nu.densities[{i}]") for i, d in enumerate(nu.get("densities") or [])]
    try:
        measure = LevyMeasure(dim, tuple(atoms), tuple(dens))
    except MeasureError as exc:
        raise doc.error("nu", str(exc)) from None
    try:
        return LevyTriplet(b, Q, measure)
    except MeasureError as exc:
        msg = str(exc)
        field = "Q" if msg.startswith("Q") else "nu"
        raise doc.error(field, msg) from None


def parse_process(text: str, source: str = "<string>") -> LevyTriplet:
    return triplet_from_data(_Doc(text, source))


def load_process(path) -> LevyTriplet:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read {p}: {exc.strerror}") from None
    return parse_process(text, str(p))


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def process_document(triplet: LevyTriplet) -> dict:
    nu = triplet.nu
    out = {
        "dim": triplet.dim,
        "b": [float(x) for x in triplet.b],
        "Q": [[float(x) for x in row] for row in triplet.Q],
        "nu": {
            "atoms": [{"position": [float(x) for x in a.position], "mass": float(a.mass)} for a in nu.atoms],
            "densities": [
                {
                    "family": d.family,
                    "params": {k: _plain(v) for k, v in d.params.items()},
                    "support": [float(d.support[0]), float(d.support[1])],
                    "quadrature": {"nodes": d.quadrature.nodes, "scheme": d.quadrature.scheme},
                }
                for d in nu.densities
            ],
        },
    }
    return out


def emit_process(triplet: LevyTriplet) -> str:
    """YAML text that parses back to an equal triplet (floats are written with repr)."""
    return yaml.safe_dump(process_document(triplet), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------- plan pieces


def weight_from_spec(spec, path: str = "weight") -> WeightFunction:
    """``exp:1``, ``poly:3`` or a mapping {family, beta | p, dim, mollify}."""
    if isinstance(spec, str):
        fam, _, arg = spec.partition(":")
        spec = {"family": fam, "beta" if fam.startswith("exp") else "p": float(arg or 1.0)}
    if not isinstance(spec, dict) or "family" not in spec:
        raise SpecError("a weight needs a family", path)
    fam = spec["family"]
    dim = int(spec.get("dim", 1))
    try:
        if fam in ("exp", "exp_beta"):
            g = exp_beta(float(spec.get("beta", 1.0)), dim)
        elif fam in ("poly", "poly_p"):
            g = poly_p(float(spec.get("p", 1.0)), dim)
        elif fam == "exp_linear":
            g = exp_linear(np.atleast_1d(np.asarray(spec["beta"], dtype=float)))
        else:
            raise SpecError(f"unknown weight family {fam!r}", f"{path}.family")
        eps = spec.get("mollify")
        if eps is not None:
            g = mollify(g, Mollifier(float(eps), g.dim))
    except (WeightError, KeyError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc), path) from None
    return g


def function_from_spec(spec, path: str = "u") -> C2Function:
    """``bump``, ``gaussian``, ``sine`` with optional radius/sd/center/freq."""
    if isinstance(spec, str):
        spec = {"name": spec}
    if not isinstance(spec, dict) or "name" not in spec:
        raise SpecError("a test function needs a name", path)
    name = spec["name"]
    center = float(spec.get("center", 0.0))
    if name == "bump":
        return bump(float(spec.get("radius", 1.0)), center=center)
    if name in ("gaussian", "gauss_bump"):
        return gaussian_bump(float(spec.get("sd", 1.0)), center=center)
    if name == "sine":
        return sine(float(spec.get("freq", 1.0)), float(spec.get("phase", 0.0)))
    raise SpecError(f"unknown test function {name!r}", f"{path}.name")


def rule_from_spec(spec, t: float, g: Optional[WeightFunction] = None, path: str = "rule") -> StoppingRule:
    """``deterministic``, ``exit_ball`` (radius) or ``level_g`` (threshold), capped at t."""
    if spec is None:
        return StoppingRule.deterministic(t)
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "deterministic")
    if kind == "deterministic":
        return StoppingRule.deterministic(t)
    if kind == "exit_ball":
        return StoppingRule.exit_ball(float(spec.get("radius", 1.0)), t)
    if kind == "level_g":
        if g is None:
            raise SpecError("level_g needs a weight", path)
        return StoppingRule.level_g(float(spec["threshold"]), g, t)
    raise SpecError(f"unknown stopping rule {kind!r}", f"{path}.kind")
