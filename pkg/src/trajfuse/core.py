"""Domain types, trajectory geometry, and per-sample displacement errors.

All types are immutable value objects; every operation here is a pure
function, so everything in this module is safe to use from concurrent
workers without locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import HorizonMismatch, InvalidInput

__all__ = [
    "Waypoint",
    "Trajectory",
    "Mode",
    "ModelOutput",
    "Sample",
    "MostLikely",
    "select_most_likely",
    "ade",
    "fde",
]


@dataclass(frozen=True, slots=True)
class Waypoint:
    """A 2D position in meters (east, north) in a sample-local frame."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInput(f"waypoint coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True, slots=True)
class Trajectory:
    """An ordered sequence of future waypoints at a fixed timestep.

    ``dt`` is metadata (seconds between consecutive waypoints); the
    displacement metrics below do not depend on it.
    """

    points: tuple[Waypoint, ...]
    dt: float = 1.0

    def __post_init__(self):
        if len(self.points) < 1:
            raise InvalidInput("trajectory must have at least one waypoint")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise InvalidInput(f"dt must be a positive finite number, got {self.dt}")

    @property
    def horizon(self) -> int:
        return len(self.points)

    def xy(self) -> tuple[tuple[float, float], ...]:
        """Waypoints as plain (x, y) tuples."""
        return tuple((p.x, p.y) for p in self.points)

    @classmethod
    def from_xy(cls, pairs: Iterable[Sequence[float]], dt: float = 1.0) -> "Trajectory":
        """Build a trajectory from (x, y) pairs, coercing coordinates to float."""
        return cls(tuple(Waypoint(float(x), float(y)) for x, y in pairs), dt=dt)

    def translated(self, dx: float, dy: float) -> "Trajectory":
        return Trajectory(tuple(Waypoint(p.x + dx, p.y + dy) for p in self.points), dt=self.dt)


@dataclass(frozen=True, slots=True)
class Mode:
    """One candidate trajectory with its model-assigned confidence."""

    trajectory: Trajectory
    confidence: float

    def __post_init__(self):
        if not (math.isfinite(self.confidence) and self.confidence >= 0):
            raise InvalidInput(f"mode confidence must be finite and >= 0, got {self.confidence}")


@dataclass(frozen=True, slots=True)
class ModelOutput:
    """One model's K candidate trajectories for one sample."""

    model_id: str
    sample_id: str
    modes: tuple[Mode, ...]

    def __post_init__(self):
        if not self.model_id:
            raise InvalidInput("model_id must be nonempty")
        if not self.sample_id:
            raise InvalidInput("sample_id must be nonempty")
        if len(self.modes) < 1:
            raise InvalidInput(f"model '{self.model_id}' produced no modes for sample '{self.sample_id}'")
        horizon = self.modes[0].trajectory.horizon
        dt = self.modes[0].trajectory.dt
        for mode in self.modes[1:]:
            if mode.trajectory.horizon != horizon:
                raise HorizonMismatch(
                    f"model '{self.model_id}' sample '{self.sample_id}': "
                    f"mode horizons differ ({mode.trajectory.horizon} vs {horizon})"
                )
            if mode.trajectory.dt != dt:
                raise InvalidInput(
                    f"model '{self.model_id}' sample '{self.sample_id}': mode dt values differ"
                )

    @property
    def horizon(self) -> int:
        return self.modes[0].trajectory.horizon


@dataclass(frozen=True, slots=True)
class Sample:
    """A sample's ground truth (when known) plus the outputs of all present members.

    ``ground_truth`` may be ``None`` for fusion-only pipelines that run
    without labels; evaluation requires it.
    """

    sample_id: str
    ground_truth: Trajectory | None
    outputs: tuple[ModelOutput, ...] = field(default=())

    def __post_init__(self):
        if not self.sample_id:
            raise InvalidInput("sample_id must be nonempty")
        seen = set()
        for out in self.outputs:
            if out.model_id in seen:
                raise InvalidInput(
                    f"sample '{self.sample_id}': duplicate model_id '{out.model_id}'"
                )
            seen.add(out.model_id)
            if out.sample_id != self.sample_id:
                raise InvalidInput(
                    f"output sample_id '{out.sample_id}' does not match sample '{self.sample_id}'"
                )
            if self.ground_truth is not None:
                if out.horizon != self.ground_truth.horizon:
                    raise HorizonMismatch(
                        f"sample '{self.sample_id}': model '{out.model_id}' horizon "
                        f"{out.horizon} != ground-truth horizon {self.ground_truth.horizon}"
                    )

    def output_for(self, model_id: str) -> ModelOutput:
        for out in self.outputs:
            if out.model_id == model_id:
                return out
        raise InvalidInput(f"sample '{self.sample_id}' has no output for model '{model_id}'")


@dataclass(frozen=True, slots=True)
class MostLikely:
    """The highest-confidence mode of one model, ready for fusion."""

    model_id: str
    trajectory: Trajectory
    confidence: float


def select_most_likely(output: ModelOutput) -> MostLikely:
    """Pick the mode with maximal confidence; ties go to the lowest mode index."""
    best = output.modes[0]
    for mode in output.modes[1:]:
        if mode.confidence > best.confidence:
            best = mode
    return MostLikely(model_id=output.model_id, trajectory=best.trajectory,
                      confidence=best.confidence)


def _check_horizons(pred: Trajectory, gt: Trajectory) -> None:
    if pred.horizon != gt.horizon:
        raise HorizonMismatch(f"prediction horizon {pred.horizon} != ground-truth horizon {gt.horizon}")


def ade(pred: Trajectory, gt: Trajectory) -> float:
    """Average Euclidean distance between corresponding waypoints, in meters."""
    _check_horizons(pred, gt)
    total = math.fsum(
        math.hypot(p.x - g.x, p.y - g.y) for p, g in zip(pred.points, gt.points)
    )
    return total / pred.horizon


def fde(pred: Trajectory, gt: Trajectory) -> float:
    """Euclidean distance at the final waypoint, in meters."""
    _check_horizons(pred, gt)
    p, g = pred.points[-1], gt.points[-1]
    return math.hypot(p.x - g.x, p.y - g.y)
