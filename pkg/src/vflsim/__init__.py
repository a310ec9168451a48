"""Vertical federated learning simulator with label-inference attacks and defenses."""

from . import attacks, data, defenses, harness, metrics, nn, protocol
from .errors import (
    ConfigError,
    DivergenceError,
    ParseError,
    SchemaError,
    ShapeError,
    StageError,
    StateError,
    ValidationError,
    VflError,
)

__version__ = "0.1.0"
