"""JSON Schemas for the reports written by the command-line tool."""

_NUM_OR_NULL = {"type": ["number", "null"]}

BOUND_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["kind", "etas", "ratio_min", "ratio_max", "argmin", "argmax", "constants", "flags"],
    "properties": {
        "kind": {"enum": ["upper", "lower"]},
        "etas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "ratio_min": {"type": "array", "items": {"type": "number"}},
        "ratio_max": {"type": "array", "items": {"type": "number"}},
        "argmin": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "argmax": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "constants": {
            "type": "object",
            "additionalProperties": {"anyOf": [_NUM_OR_NULL, {"type": "array", "items": _NUM_OR_NULL}]},
        },
        "flags": {"type": "object", "required": ["pass"], "additionalProperties": {"type": "boolean"}},
        "notes": {"type": "array", "items": {"type": "string"}},
    },
}

BOUNDS_FILE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["domain", "upper", "lower"],
    "properties": {
        "domain": {"type": "object"},
        "upper": BOUND_REPORT,
        "lower": BOUND_REPORT,
    },
}

SOLVE_META = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["eta", "iterations", "marginal_error", "converged", "cost_source"],
    "properties": {
        "eta": {"type": "number", "exclusiveMinimum": 0},
        "iterations": {"type": "integer", "minimum": 1},
        "marginal_error": {"type": "number", "minimum": 0},
        "converged": {"type": "boolean"},
        "cost_source": {"type": "string"},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}

SIMULATE_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["n_paths", "n_steps", "eta", "seed", "scheme"],
    "properties": {
        "n_paths": {"type": "integer", "minimum": 1},
        "n_steps": {"type": "integer", "minimum": 1},
        "eta": {"type": "number", "minimum": 0},
        "seed": {"type": "integer"},
        "scheme": {"enum": ["fold", "projection"]},
        "max_abs_z": _NUM_OR_NULL,
        "n_cells": {"type": "integer"},
        "pass": {"type": ["boolean", "null"]},
    },
}

LDP_SUMMARY = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["etas", "extrapolated", "neg_inf_rate", "ot_value", "components"],
    "properties": {
        "etas": {"type": "array", "items": {"type": "number"}},
        "extrapolated": {"type": "object", "additionalProperties": _NUM_OR_NULL},
        "neg_inf_rate": {"type": "object", "additionalProperties": {"type": "number"}},
        "ot_value": {"type": "number"},
        "components": {"type": "integer", "minimum": 1},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}
