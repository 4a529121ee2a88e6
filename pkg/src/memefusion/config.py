"""Shipped default hyperparameters and seed resolution."""

from __future__ import annotations

import copy
import json
import os
from functools import lru_cache
from importlib import resources

SEED_ENV = "MEMEFUSION_SEED"
FALLBACK_SEED = 0


@lru_cache(maxsize=1)
def _load() -> dict:
    text = resources.files("memefusion").joinpath("data/defaults.json").read_text(encoding="utf-8")
    return json.loads(text)


def defaults() -> dict:
    """A fresh copy of ``data/defaults.json``."""
    return copy.deepcopy(_load())


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return FALLBACK_SEED
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {value!r}") from None
