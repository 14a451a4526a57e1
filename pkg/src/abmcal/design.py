"""Bounded calibration domains and space-filling designs.

All modelling code works in unit-cube coordinates; original parameter
units appear only at the simulator boundary (`unscale`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Parameter:
    name: str
    lower: float
    upper: float


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered collection of named, box-bounded parameters."""

    params: tuple[Parameter, ...]

    def __post_init__(self):
        if len(self.params) < 1:
            raise ValueError("a parameter space needs at least one parameter")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        for p in self.params:
            if not (np.isfinite(p.lower) and np.isfinite(p.upper)) or not p.lower < p.upper:
                raise ValueError(f"parameter {p.name!r}: need finite lower < upper, got [{p.lower}, {p.upper}]")

    @classmethod
    def from_bounds(cls, bounds: Iterable[tuple[str, float, float]]) -> "ParameterSpace":
        return cls(tuple(Parameter(str(n), float(lo), float(hi)) for n, lo, hi in bounds))

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.params])

    def contains(self, values, tol: float = 0.0) -> bool:
        v = np.asarray(values, dtype=float)
        return v.shape == (self.dim,) and bool(
            np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol)
        )


# Table-1 parameters of the Bloomington ABM calibration study.
ABM_SPACE = ParameterSpace.from_bounds([
    ("HBO_B_male_taxi", 0.298, 2.298),
    ("NHB_B_dens_bike", 6.601, 8.601),
    ("HBO_ASC_TAXI", 2.34, 4.34),
    ("THETAR_WORK", -8.553, -6.553),
    ("GAMMA_SERVICE", 7.038, 9.038),
])


@dataclass(frozen=True)
class DesignPoint:
    """A parameter vector in original units, validated against its space."""

    values: np.ndarray
    space: ParameterSpace = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.space.dim,):
            raise ValueError(f"expected {self.space.dim} values, got shape {v.shape}")
        if not self.space.contains(v):
            raise ValueError(f"point {v} lies outside the parameter bounds")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.space.names, self.values.tolist()))


@dataclass(frozen=True)
class SampleSet:
    points: tuple[DesignPoint, ...]
    seed: int

    def __len__(self):
        return len(self.points)

    def values(self) -> np.ndarray:
        """Points as an ``(n, d)`` array in original units."""
        return np.array([p.values for p in self.points])

    def unit(self) -> np.ndarray:
        """Points as an ``(n, d)`` array in unit-cube coordinates."""
        return np.array([scale_to_unit(p, p.space) for p in self.points])


def scale_to_unit(p: DesignPoint | Sequence[float], s: ParameterSpace) -> np.ndarray:
    """Map a point in original units to ``[0, 1]^d``."""
    v = np.asarray(p.values if isinstance(p, DesignPoint) else p, dtype=float)
    if v.shape != (s.dim,):
        raise ValueError(f"dimension mismatch: point has shape {v.shape}, space has {s.dim} dims")
    return (v - s.lower) / (s.upper - s.lower)


def unscale(u: Sequence[float], s: ParameterSpace) -> DesignPoint:
    """Map a unit-cube vector back to original units."""
    u = np.asarray(u, dtype=float)
    if u.shape != (s.dim,):
        raise ValueError(f"dimension mismatch: vector has shape {u.shape}, space has {s.dim} dims")
    if np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u)):
        raise ValueError(f"unit vector {u} is outside [0, 1]^d")
    v = s.lower + u * (s.upper - s.lower)
    # guard against one-ulp overshoot at the upper face
    return DesignPoint(np.clip(v, s.lower, s.upper), s)


def lhs_unit(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Plain Latin hypercube in ``[0, 1]^d``: one point per bin per column.

    Each column is an independent random permutation of the ``n`` bins with a
    uniform offset inside the bin.
    """
    if n < 1:
        raise ValueError("LHS needs n >= 1")
    if d < 1:
        raise ValueError("LHS needs d >= 1")
    offsets = rng.random((n, d))
    bins = np.column_stack([rng.permutation(n) for _ in range(d)])
    return (bins + offsets) / n


def latin_hypercube(n: int, s: ParameterSpace, seed: int) -> SampleSet:
    u = lhs_unit(n, s.dim, np.random.default_rng(seed))
    return SampleSet(tuple(unscale(row, s) for row in u), int(seed))
