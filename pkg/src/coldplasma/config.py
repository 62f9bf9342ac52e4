"""Problem configuration files (YAML or JSON) and their translation into library objects.

Top-level keys, all optional except where a command needs them::

    type_change: {variant: cold_plasma | cibrario | keldysh_power | general_x | sigma,
                  k: 1, n: 4, K: "x", sigma: "y^2"}
    operator:    {kappa1: 1.0, kappa2: 0.0}
    domain:      {name: box, params: {y0: 1}}   or   {arcs: [{name, x, y}, ...]}
    roles:       {<arc>: G | complement | Gamma}
    multiplier:  {family: <name>, params: {...}}
    symmetrizer: {b: "<expr>", c: "<expr>"}
    positivity / identity / ratio / bc_checks / flow / solve / convergence / energy: command knobs
"""
from __future__ import annotations

import copy
import json
import re
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .expr import TypeChangeSpec, parse_expr
from .geometry import Domain, builtin_domain, domain_from_arcs

VARIANTS = ("cold_plasma", "cibrario", "keldysh_power", "general_x", "sigma")


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (1e-09), as JSON writes them."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?$|^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$"),
    list("-+0123456789."),
)


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("the configuration must be a mapping")
    return data


def section(cfg: dict, key: str) -> dict:
    val = cfg.get(key) or {}
    if not isinstance(val, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    return val


def as_float(v, what: str) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {v!r}") from None


def float_list(v, what: str) -> list:
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{what} must be a list of numbers")
    return [as_float(x, what) for x in v]


def build_type_change(cfg: dict) -> TypeChangeSpec:
    tc = section(cfg, "type_change")
    variant = tc.get("variant", "cold_plasma")
    if variant == "cold_plasma":
        return TypeChangeSpec.cold_plasma()
    if variant == "cibrario":
        return TypeChangeSpec.cibrario(int(as_float(tc.get("k", 1), "type_change.k")))
    if variant == "keldysh_power":
        return TypeChangeSpec.keldysh_power(as_float(tc.get("n", 4), "type_change.n"))
    if variant == "general_x":
        return TypeChangeSpec.general_x(parse_expr(str(tc.get("K", "x")), ("x",)))
    if variant == "sigma":
        return TypeChangeSpec.sigma_form(parse_expr(str(tc.get("sigma", "y^2")), ("y",)))
    raise ConfigError(f"unknown type_change variant {variant!r}; choose from {VARIANTS}")


def build_domain(cfg: dict, default: str = "box") -> Domain:
    d = section(cfg, "domain")
    if "arcs" in d:
        arcs = d["arcs"]
        if not isinstance(arcs, list) or not arcs:
            raise ConfigError("domain.arcs must be a non-empty list")
        for a in arcs:
            if not isinstance(a, dict) or "x" not in a or "y" not in a:
                raise ConfigError("each arc needs 'x' and 'y' expressions in s")
        dom = domain_from_arcs([{**a, "x": str(a["x"]), "y": str(a["y"])} for a in arcs])
    else:
        params = {k: as_float(v, f"domain.params.{k}") for k, v in (d.get("params") or {}).items()}
        dom = builtin_domain(d.get("name", default), **params)
    return dom


def roles(cfg: dict) -> dict:
    r = cfg.get("roles") or {}
    if not isinstance(r, dict):
        raise ConfigError("'roles' must be a mapping from arc name to role")
    return {str(k): str(v) for k, v in r.items()}


def jsonable(obj: Any):
    """Plain JSON types for a report (tuples to lists, numpy scalars to floats, inf to a string)."""
    import math

    import numpy as np

    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return None
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def merged(cfg: dict, key: str, defaults: dict) -> dict:
    out = copy.deepcopy(defaults)
    out.update(section(cfg, key))
    return out
