"""Build any feature map from its JSON description."""

from __future__ import annotations

import json

from .hashrf import MinMaxFeatureMap
from .polysketch import TensorSketchSpec
from .prefactor import PrefactorSpec
from .tdprf import TdpFeatureSpec

FAMILIES = {
    "minmax": MinMaxFeatureMap,
    "prefactor": PrefactorSpec,
    "tensorsketch": TensorSketchSpec,
    "tdp": TdpFeatureSpec,
}


def from_dict(d: dict):
    """Feature map described by ``d``; its ``transform(D)`` returns an ``(M, n)`` matrix."""
    if not isinstance(d, dict):
        raise ValueError("a feature map spec must be a JSON object")
    family = d.get("family")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}")
    try:
        return FAMILIES[family].from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"invalid {family} spec: {exc}") from exc


def from_json(text: str):
    return from_dict(json.loads(text))


def load_spec(path):
    with open(path) as fh:
        return from_json(fh.read())
