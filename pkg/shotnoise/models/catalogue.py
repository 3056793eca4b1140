"""
Catalogue of parametric shot families.

Every catalogue shape has product form Hbar(t, z, x) = profile(t) * h(z, x) with a
non-decreasing profile, profile(0) = 0 and profile(inf) = 1, so h is the shot value.
Catalogue remainders switch on at t > 0.
"""

import json
import math
from pathlib import Path as FilePath
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from shotnoise.errors import ConfigError
from shotnoise.models.documents import ModelDocument
from shotnoise.models.domain import MarkAtom, MarkSpace, ShotNoiseModel


# Time profiles

def instantaneous_profile(t):
    return (np.asarray(t, dtype=float) > 0).astype(float)


def exponential_profile(beta: float) -> Callable:
    def profile(t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, -np.expm1(-beta * np.maximum(t, 0.0)), 0.0)
    return profile


def linear_ramp_profile(tau: float) -> Callable:
    def profile(t):
        return np.clip(np.asarray(t, dtype=float) / tau, 0.0, 1.0)
    return profile


def make_profile(family: str, params: Dict[str, float]) -> Callable:
    if family == 'instantaneous':
        return instantaneous_profile
    if family == 'exponential':
        return exponential_profile(params['beta'])
    if family == 'linear_ramp':
        return linear_ramp_profile(params['tau'])
    raise ConfigError(f"unknown shape family {family!r}")


# Shot values h(z, x), their Jacobians and envelopes (L_h, M_h)

def _constant_value(atom: MarkAtom, x):
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(atom.vector, x.shape).copy()


def _constant_jacobian(atom: MarkAtom, x):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape + (x.shape[-1],))


def _linear_growth_value(atom: MarkAtom, x):
    return atom.vector * (1.0 + np.asarray(x, dtype=float))


def _diagonal(x, diag):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    out = np.zeros(x.shape + (d,))
    idx = np.arange(d)
    out[..., idx, idx] = np.broadcast_to(diag, x.shape)
    return out


def _linear_growth_jacobian(atom: MarkAtom, x):
    return _diagonal(x, atom.vector)


def _norm_growth_value(atom: MarkAtom, x):
    x = np.asarray(x, dtype=float)
    return atom.vector * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))


def _norm_growth_jacobian(atom: MarkAtom, x):
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    direction = np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)
    return atom.vector[:, None] * direction[..., None, :]


def _saturating_value(atom: MarkAtom, x):
    return atom.vector / (1.0 + np.asarray(x, dtype=float))


def _saturating_jacobian(atom: MarkAtom, x):
    x = np.asarray(x, dtype=float)
    return _diagonal(x, -atom.vector / (1.0 + x) ** 2)


def _norm(atom: MarkAtom) -> float:
    return float(np.linalg.norm(atom.vector))


def _max_entry(atom: MarkAtom) -> float:
    return float(np.max(np.abs(atom.vector)))


SHOT_VALUES = {
    # family: (h, dh/dx, L_h, M_h)
    'constant': (_constant_value, _constant_jacobian, lambda atom: 0.0, _norm),
    'linear_growth': (_linear_growth_value, _linear_growth_jacobian, _max_entry, _norm),
    'norm_growth': (_norm_growth_value, _norm_growth_jacobian, _norm, _norm),
    'saturating': (_saturating_value, _saturating_jacobian, _max_entry, _norm),
}


# Remainders R_eps(t, z, x) and their bound varsigma

def zero_remainder(dimension: int) -> Callable:
    def remainder(eps, t, atom, x):
        return np.zeros(np.shape(t) + (dimension,))
    return remainder


def scaled_remainder(dimension: int, coefficient: float) -> Callable:
    def remainder(eps, t, atom, x):
        on = instantaneous_profile(t)
        level = coefficient * eps * (np.linalg.norm(np.asarray(x, dtype=float)) + 1.0)
        return (on * level)[..., None] * np.ones(dimension)
    return remainder


def build_model(document: ModelDocument) -> ShotNoiseModel:
    """Build a ShotNoiseModel from a validated model document"""
    d = document.d
    mark_space = MarkSpace(tuple(MarkAtom(a.id, tuple(a.payload), a.weight) for a in document.atoms))
    profile = make_profile(document.shape.family, document.shape.params)
    value, jacobian, lipschitz_default, growth_default = SHOT_VALUES[document.shot_value.family]

    def hbar(t, atom, x):
        return np.asarray(profile(t))[..., None] * value(atom, x)

    if document.remainder.family == 'scaled':
        coefficient = document.remainder.params['coefficient']
        remainder = scaled_remainder(d, coefficient)
        varsigma_default = lambda atom: abs(coefficient) * math.sqrt(d)  # noqa: E731
    else:
        remainder = zero_remainder(d)
        varsigma_default = lambda atom: 0.0  # noqa: E731

    def with_overrides(table: Dict[str, float], default: Callable) -> Callable:
        return lambda atom: float(table[atom.id]) if atom.id in table else float(default(atom))

    return ShotNoiseModel(
        dimension=d,
        horizon=float(document.T),
        mark_space=mark_space,
        hbar=hbar,
        remainder=remainder,
        shot_value=value,
        lipschitz=with_overrides(document.envelopes.lipschitz, lipschitz_default),
        growth=with_overrides(document.envelopes.growth, growth_default),
        varsigma=with_overrides(document.envelopes.varsigma, varsigma_default),
        jacobian=jacobian,
        instantaneous=document.shape.family == 'instantaneous',
        state_independent=(document.shot_value.family == 'constant' and document.remainder.family == 'zero'),
        name=document.name or f"{document.shape.family}/{document.shot_value.family}",
        description=document.model_dump(),
    )


def parse_model(data: Union[Dict[str, Any], str]) -> ShotNoiseModel:
    """Validate a model document (dict or JSON text) and build the model"""
    try:
        if isinstance(data, str):
            document = ModelDocument.model_validate_json(data)
        else:
            document = ModelDocument.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid model document: {e}")
    return build_model(document)


def load_model(path: Union[str, FilePath]) -> ShotNoiseModel:
    path = FilePath(path)
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}")
    return parse_model(path.read_text())


def compound_poisson_model(values: List[List[float]], weights: List[float], horizon: float = 1.0,
                           shape: str = 'instantaneous', shape_params: Optional[Dict[str, float]] = None,
                           shot_value: str = 'constant', ids: Optional[List[str]] = None) -> ShotNoiseModel:
    """Convenience builder for catalogue models given payloads and weights"""
    values = [list(np.atleast_1d(np.asarray(v, dtype=float))) for v in values]
    ids = ids or [f"z{k}" for k in range(len(values))]
    document = {
        'd': len(values[0]),
        'T': horizon,
        'atoms': [{'id': i, 'payload': v, 'weight': w} for i, v, w in zip(ids, values, weights)],
        'shape': {'family': shape, 'params': shape_params or {}},
        'shot_value': {'family': shot_value},
    }
    return parse_model(document)


def unit_poisson_model(horizon: float = 1.0) -> ShotNoiseModel:
    """One atom, h = 1, nu = 1, instantaneous shots: X^eps(t) = eps N(t / eps)"""
    return compound_poisson_model([[1.0]], [1.0], horizon=horizon)


def model_to_json(model: ShotNoiseModel) -> str:
    return json.dumps(model.description, sort_keys=True)
