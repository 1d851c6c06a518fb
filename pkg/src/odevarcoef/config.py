"""JSON scenario and sweep-plan files (``schema_version`` 1)."""

from __future__ import annotations

from dataclasses import dataclass
import json
from pathlib import Path

import jsonschema

from .asymptotics import SweepPlan
from .errors import ConfigError
from .kernels import KERNEL_IDS
from .locpoly import SmootherConfig
from .sim import NOISE_DISTS, Scenario

__all__ = ["ScenarioFile", "load_scenario", "load_plan", "SCENARIO_SCHEMA", "PLAN_SCHEMA"]

_FUNC = {
    "oneOf": [
        {"type": "number"},
        {
            "type": "object",
            "properties": {
                "kind": {"enum": ["constant", "linear", "polynomial", "sin", "cos", "exp"]},
                "coeffs": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            },
            "required": ["kind", "coeffs"],
            "additionalProperties": False,
        },
    ]
}

_SMOOTHER = {
    "type": "object",
    "properties": {
        "q": {"type": "integer", "minimum": 1},
        "h": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "kernel": {"enum": list(KERNEL_IDS)},
    },
    "additionalProperties": False,
}

_MODEL = {
    "type": "object",
    "properties": {
        "p": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "beta": {"type": "array", "items": _FUNC, "minItems": 1},
        "covariates": {
            "type": "array",
            "items": {"oneOf": [_FUNC, {"type": "array", "items": _FUNC}]},
        },
        "x1_init": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]},
    },
    "required": ["p", "m", "beta", "x1_init"],
    "additionalProperties": False,
}

_SAMPLING = {
    "type": "object",
    "properties": {
        "n": {"type": "integer", "minimum": 3},
        "density": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["n"],
    "additionalProperties": False,
}

_NOISE = {
    "type": "object",
    "properties": {
        "sigma": {"type": "number", "minimum": 0},
        "dist": {"enum": list(NOISE_DISTS)},
    },
    "required": ["sigma"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": 1},
        "model": _MODEL,
        "sampling": _SAMPLING,
        "noise": _NOISE,
        "smoother": {
            "type": "object",
            "properties": {
                **_SMOOTHER["properties"],
                "step2_overrides": {**_SMOOTHER, "properties": {
                    **_SMOOTHER["properties"], "q": {"type": "integer", "minimum": 0}}},
            },
            "required": ["h"],
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
            },
            "additionalProperties": False,
        },
    },
    "required": ["schema_version", "model", "sampling", "noise"],
    "additionalProperties": False,
}

_SWEEP = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "regime": {"enum": ["bias_h2", "bias_inv_nh2", "var_n2h3", "var_inv_n"]},
        "n_grid": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 1},
        "h_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "h_rule": {
            "type": "object",
            "properties": {"c": {"type": "number", "exclusiveMinimum": 0}, "gamma": {"type": "number"}},
            "required": ["c", "gamma"],
            "additionalProperties": False,
        },
        "replicates": {"type": "integer", "minimum": 2},
        "fixed_design": {"type": "boolean"},
        "sigma": {"type": "number", "minimum": 0},
        "mandatory": {"type": "boolean"},
    },
    "required": ["n_grid", "replicates"],
    "additionalProperties": False,
}

PLAN_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": 1},
        "scenario": {
            "type": "object",
            "properties": {"model": _MODEL, "sampling": _SAMPLING, "noise": _NOISE},
            "required": ["model", "sampling", "noise"],
            "additionalProperties": False,
        },
        "t0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "q": {"type": "integer", "minimum": 1},
        "kernel": {"enum": list(KERNEL_IDS)},
        "sweeps": {"type": "array", "items": _SWEEP},
        "lemma3": {
            "type": "object",
            "properties": {
                "n": {"type": "integer", "minimum": 3},
                "h_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 3},
                "r_values": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "seeds": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "mandatory": {"type": "boolean"},
            },
            "required": ["n", "h_grid"],
            "additionalProperties": False,
        },
        "lemma2": {
            "type": "object",
            "properties": {
                "n_grid": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 2},
                "densities": {"type": "array", "items": {"type": "string"}},
                "nu": {"type": "array", "items": {"enum": [0, 1]}},
                "h_rule": {"$ref": "#/properties/sweeps/items/properties/h_rule"},
                "seeds": {"type": "integer", "minimum": 1},
                "mandatory": {"type": "boolean"},
            },
            "required": ["n_grid"],
            "additionalProperties": False,
        },
    },
    "required": ["schema_version", "scenario"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class ScenarioFile:
    """A loaded scenario file: the scenario plus first- and second-step smoother settings."""

    scenario: Scenario
    stage1: SmootherConfig | None
    stage2: SmootherConfig | None
    outputs: dict
    raw: dict


def _read(source) -> dict:
    if isinstance(source, dict):
        return source
    try:
        return json.loads(Path(source).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"not valid JSON: {err}", path=str(source)) from err
    except OSError as err:
        raise ConfigError(f"cannot read file: {err}", path=str(source)) from err


def _validate(doc, schema):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(err.message, path=path)


def _scenario(doc: dict, seed_override=None) -> Scenario:
    model, sampling, noise = doc["model"], doc["sampling"], doc["noise"]
    seed = sampling.get("seed", 0) if seed_override is None else seed_override
    return Scenario(
        p=model["p"],
        m=model["m"],
        beta_fns=tuple(model["beta"]),
        covariate_fns=tuple(model.get("covariates", ())),
        x1_init=model["x1_init"],
        n=sampling["n"],
        density_id=sampling.get("density", "uniform"),
        sigma=noise["sigma"],
        noise_dist=noise.get("dist", "gaussian"),
        seed=seed,
    )


def load_scenario(source, seed_override: int | None = None) -> ScenarioFile:
    """Validate and load a scenario file (path or already-parsed dict).

    Raises
    ------
    ConfigError
        With ``path`` set to the offending field, e.g. ``"noise.sigma"``.
    """
    doc = _read(source)
    _validate(doc, SCENARIO_SCHEMA)
    sc = _scenario(doc, seed_override)
    stage1 = stage2 = None
    sm = doc.get("smoother")
    if sm is not None:
        base = {k: sm[k] for k in ("q", "h", "kernel") if k in sm}
        stage1 = SmootherConfig(**base)
        stage2 = SmootherConfig(**{**base, **sm.get("step2_overrides", {})})
        if sc.n < stage1.q + 2:
            raise ConfigError(f"n must be at least q + 2 = {stage1.q + 2}", path="sampling.n")
    return ScenarioFile(sc, stage1, stage2, doc.get("outputs", {}), doc)


def load_plan(source, seed_override: int | None = None) -> dict:
    """Validate a sweep-plan file.

    Returns a dict with ``scenario``, ``sweeps`` (list of :class:`SweepPlan`),
    and the optional ``lemma3`` / ``lemma2`` sections with defaults filled.
    """
    doc = _read(source)
    _validate(doc, PLAN_SCHEMA)
    sc = _scenario(doc["scenario"], seed_override)
    t0 = doc.get("t0", 0.5)
    q = doc.get("q", 2)
    kernel = doc.get("kernel", "epanechnikov")
    sweeps = []
    for k, sw in enumerate(doc.get("sweeps", [])):
        if ("h_grid" in sw) == ("h_rule" in sw):
            raise ConfigError("give exactly one of h_grid and h_rule", path=f"sweeps.{k}")
        scen = sc.with_(sigma=sw["sigma"]) if "sigma" in sw else sc
        try:
            sweeps.append(SweepPlan(
                scenario=scen,
                n_grid=tuple(sw["n_grid"]),
                h_grid=tuple(sw.get("h_grid", ())),
                h_rule=(sw["h_rule"]["c"], sw["h_rule"]["gamma"]) if "h_rule" in sw else None,
                t0=t0,
                replicates=sw["replicates"],
                fixed_design=sw.get("fixed_design", True),
                q=q,
                kernel=kernel,
                regime=sw.get("regime"),
                mandatory=sw.get("mandatory", True),
                name=sw.get("name", sw.get("regime") or f"sweep{k}"),
            ))
        except ConfigError as err:
            raise ConfigError(str(err), path=f"sweeps.{k}") from err
    out = {"scenario": sc, "t0": t0, "q": q, "kernel": kernel, "sweeps": sweeps, "raw": doc}
    if "lemma3" in doc:
        l3 = doc["lemma3"]
        out["lemma3"] = {
            "n": l3["n"], "h_grid": l3["h_grid"], "r_values": l3.get("r_values", [0, 1, 2]),
            "seeds": l3.get("seeds", 20), "tol": l3.get("tol", 0.3),
            "mandatory": l3.get("mandatory", True),
        }
    if "lemma2" in doc:
        l2 = doc["lemma2"]
        rule = l2.get("h_rule", {"c": 1.0, "gamma": -0.2})
        out["lemma2"] = {
            "n_grid": l2["n_grid"], "densities": l2.get("densities", ["uniform"]),
            "nu": l2.get("nu", [0, 1]), "h_rule": (rule["c"], rule["gamma"]),
            "seeds": l2.get("seeds", 20), "mandatory": l2.get("mandatory", True),
        }
    return out
