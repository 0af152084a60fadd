"""Published JSON schemas: the experiment config and every emitted document.

Each emitted document carries a ``schema`` field naming one of the keys of
``DOCUMENT_SCHEMAS``; ``validate_document`` checks it against that entry.
"""
from __future__ import annotations

import jsonschema

_num = {"type": ["number", "string"]}      # non-finite floats are written as strings
_nums = {"type": "array", "items": _num}

_SOLVER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_iterations": {"type": "integer", "minimum": 1},
        "grad_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "initial_step": {"type": "number", "exclusiveMinimum": 0},
        "shrink": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "sufficient_decrease": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "max_step": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "waive_coercivity": {"type": "boolean"},
        "mode": {"enum": ["uncapped", "capped"]},
        "cap": {"type": "number", "exclusiveMinimum": 0},
    },
}


def _params(props: dict, required=()) -> dict:
    return {"type": "object", "additionalProperties": False,
            "properties": props, "required": list(required)}


_TREE_PARAMS = {
    "lottery": _params({
        "steps": {"type": "integer", "minimum": 1},
        "terminal_support": {
            "type": "array", "minItems": 1,
            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                      "prefixItems": [{"type": ["number", "array"]}, {"type": "number"}]},
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
    }, ["steps", "terminal_support"]),
    "binomial": _params({
        "steps": {"type": "integer", "minimum": 1},
        "volatility": {"type": "number", "exclusiveMinimum": 0},
        "drift": {"type": "number"},
        "l0": {"type": "number"},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
    }, ["steps", "volatility"]),
    "ray": _params({"steps": {"type": "integer", "minimum": 1}}, ["steps"]),
    "random": _params({
        "steps": {"type": "integer", "minimum": 1},
        "max_branching": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "scale": {"type": "number", "exclusiveMinimum": 0},
    }, ["steps"]),
}

_COST_PARAMS = {
    "zero": _params({"k": {"type": "integer", "minimum": 1}, "d": {"type": "integer", "minimum": 1}}),
    "quadratic": _params({
        "f": {"type": "number"}, "g_weight": {"type": "number"},
        "h_weight": {"type": "number"}, "k": {"type": "integer", "minimum": 1},
    }),
    "exp-nonattain": _params({"f": {"type": "number"}}),
    "ray-counterexample": _params({"f0": {"type": "number"}, "f_slope": {"type": "number"}}),
}


def _dispatch(key: str, table: dict) -> list:
    return [{"if": {"properties": {key: {"const": name}}, "required": [key]},
             "then": {"properties": {"params": schema}}} for name, schema in table.items()]


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "monotone-follower/config/1",
    "type": "object",
    "additionalProperties": False,
    "required": ["tree", "cost"],
    "properties": {
        "tree": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "params"],
            "properties": {
                "family": {"enum": sorted(_TREE_PARAMS)},
                "seed": {"type": "integer", "minimum": 0},
                "params": {"type": "object"},
            },
            "allOf": _dispatch("family", _TREE_PARAMS),
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": sorted(_COST_PARAMS)},
                "params": {"type": "object"},
            },
            "allOf": _dispatch("name", _COST_PARAMS),
        },
        "solver": _SOLVER,
        "ladder": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "caps": {"type": "array", "minItems": 1,
                         "items": {"type": "number", "exclusiveMinimum": 0}},
                "gap_target": {"type": "number", "minimum": 0},
                "resolution": {"type": "integer", "minimum": 1},
            },
        },
        "stop": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "payoff": {"enum": ["proof", "display"]},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "formats": {"type": "array", "items": {"enum": ["json", "csv"]}, "uniqueItems": True},
            },
        },
    },
}


def _doc(props: dict, required) -> dict:
    return {"type": "object", "properties": props, "required": ["schema", *required]}


DOCUMENT_SCHEMAS = {
    "monotone-follower/tree/1": _doc({"grid": _nums, "nodes": {"type": "array"}}, ["grid", "nodes"]),
    "monotone-follower/plan/1": _doc({
        "initial_jump": _nums, "increments": {"type": "array"}, "levels": {"type": "array"},
        "cap_per_step": {"type": ["array", "null"]},
    }, ["initial_jump", "increments", "levels"]),
    "monotone-follower/solve-report/1": _doc({
        "value": _num, "iterations": {"type": "integer"}, "kkt_residual": _num,
        "converged": {"type": "boolean"}, "coercivity_verified": {"type": "boolean"},
        "diverging": {"type": "boolean"}, "message": {"type": "string"},
        "value_trace": _nums, "mass_trace": _nums,
    }, ["value", "iterations", "kkt_residual", "converged"]),
    "monotone-follower/certificate/1": _doc({
        "negativity_residual": _num, "complementarity_residual": _num,
        "pathwise_complementarity": _num, "martingale_defect": _num, "terminal_defect": _num,
        "admissibility_checked": {"type": "boolean"}, "tolerance": _num,
        "certified": {"type": "boolean"},
    }, ["certified", "tolerance"]),
    "monotone-follower/capped-kkt/1": _doc({
        "n": _num, "lhs": _num, "rhs": _num, "identity_gap": _num, "positive_at_cap": _num,
        "negative_at_zero": _num, "interior_abs": _num, "max_discrepancy": _num,
        "tolerance": _num, "certified": {"type": "boolean"},
    }, ["n", "max_discrepancy", "certified"]),
    "monotone-follower/ladder/1": _doc({
        "caps": _nums, "values": _nums, "uncapped_value": _num, "monotone": {"type": "boolean"},
        "resolution": {"type": "integer"}, "rows": {"type": "array"},
    }, ["caps", "values", "uncapped_value", "monotone", "rows"]),
    "monotone-follower/stopping-equivalence/1": _doc({
        "control_stopping_value": _num, "snell_value": _num, "proof_bound": _num,
        "passed": {"type": "boolean"}, "policy": {"type": "array", "items": {"type": "string"}},
    }, ["control_stopping_value", "snell_value", "passed"]),
    "monotone-follower/joint-law/1": _doc({
        "blocks": {"type": "array", "items": {"type": "integer"}}, "support": {"type": "array"},
    }, ["blocks", "support"]),
    "monotone-follower/mzdist/1": _doc({
        "labels": {"type": "array"}, "pseudopath": {"type": "array"},
        "findim_marginal": _nums, "dictionary": {"type": "string"},
    }, ["labels", "pseudopath"]),
    "monotone-follower/repro/1": _doc({
        "name": {"type": "string"}, "passed": {"type": "boolean"}, "lines": {"type": "array"},
    }, ["name", "passed"]),
    "monotone-follower/manifest/1": _doc({
        "command": {"type": "string"},
        "artifacts": {"type": "array", "items": {
            "type": "object", "required": ["file", "sha256"],
            "properties": {"file": {"type": "string"}, "sha256": {"type": "string"}}}},
    }, ["command", "artifacts"]),
}


def validate_document(doc: dict) -> None:
    """Raise ``jsonschema.ValidationError`` (or KeyError for an unknown stamp)."""
    schema = DOCUMENT_SCHEMAS[doc["schema"]]
    jsonschema.Draft202012Validator(schema).validate(doc)
