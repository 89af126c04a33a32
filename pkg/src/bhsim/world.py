"""Arena geometry, balloon placement, and balloon sway dynamics.

The world frame is x-north, y-east, z-up with z measured in meters above
the ground plane.  Balloons are tethered above pole tops and swing as
planar pendulums with a fixed, per-balloon wind azimuth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

Vec3 = tuple[float, float, float]

LAYOUT_REJECTION_BUDGET = 10_000
MAX_BALLOON_HEIGHT_M = 5.0


class PackingInfeasible(Exception):
    """Rejection sampling could not place the requested balloons."""


class UnknownBalloon(KeyError):
    """Operation referenced a balloon id that does not exist."""


@dataclass(frozen=True)
class Arena:
    """Axis-aligned arena volume with an inner effective search volume.

    The effective volume is centered horizontally inside the outer volume
    and sits on the ground (z from 0 to the effective height).
    """

    outer_extent: Vec3 = (100.0, 40.0, 20.0)
    effective_extent: Vec3 = (90.0, 30.0, 5.0)
    origin: Vec3 = (0.0, 0.0, 0.0)
    geofence_margin: float = 1.0

    def __post_init__(self) -> None:
        for axis in range(3):
            if self.outer_extent[axis] <= 0 or self.effective_extent[axis] <= 0:
                raise ValueError("arena extents must be strictly positive")
            if self.effective_extent[axis] > self.outer_extent[axis]:
                raise ValueError("effective extent must fit inside outer extent")
        if self.geofence_margin < 0:
            raise ValueError("geofence_margin must be non-negative")

    @property
    def effective_min(self) -> Vec3:
        ox, oy, oz = self.origin
        return (
            ox + (self.outer_extent[0] - self.effective_extent[0]) / 2.0,
            oy + (self.outer_extent[1] - self.effective_extent[1]) / 2.0,
            oz,
        )

    @property
    def effective_max(self) -> Vec3:
        lo = self.effective_min
        return (
            lo[0] + self.effective_extent[0],
            lo[1] + self.effective_extent[1],
            lo[2] + self.effective_extent[2],
        )

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        """Effective search footprint as (xmin, ymin, xmax, ymax)."""
        lo, hi = self.effective_min, self.effective_max
        return (lo[0], lo[1], hi[0], hi[1])


@dataclass(frozen=True)
class BalloonParams:
    """Physical and sway parameters shared by all sampled balloons."""

    pole_height: float = 2.0
    tether_length: float = 1.0
    diameter: float = 0.45
    sway_amplitude: float = 0.1
    sway_frequency: float = 0.2


@dataclass(frozen=True)
class Balloon:
    id: int
    anchor: Vec3
    tether_length: float = 1.0
    diameter: float = 0.45
    sway_amplitude: float = 0.1
    sway_frequency: float = 0.2
    sway_phase: float = 0.0
    sway_azimuth: float = 0.0
    alive: bool = True
    center: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.diameter <= 0:
            raise ValueError("balloon diameter must be positive")
        if not 0.0 <= self.sway_amplitude < math.pi / 2:
            raise ValueError("sway_amplitude must be in [0, pi/2)")
        if self.anchor[2] + self.tether_length > MAX_BALLOON_HEIGHT_M:
            raise ValueError(
                f"balloon center would exceed {MAX_BALLOON_HEIGHT_M} m height"
            )

    @property
    def radius(self) -> float:
        return self.diameter / 2.0


@dataclass(frozen=True)
class WorldState:
    """Ground truth at one instant: simulation time plus all balloons."""

    time: float
    balloons: tuple[Balloon, ...]

    def balloon_by_id(self, balloon_id: int) -> Balloon:
        for b in self.balloons:
            if b.id == balloon_id:
                return b
        raise UnknownBalloon(balloon_id)

    @property
    def alive_count(self) -> int:
        return sum(1 for b in self.balloons if b.alive)


def step_balloon_sway(balloon: Balloon, t: float) -> Vec3:
    """Balloon center at time ``t`` under the planar pendulum sway model.

    The tether hangs from the anchor and the balloon floats tether_length
    above it at rest; the pendulum angle is
    ``theta(t) = amplitude * sin(2*pi*frequency*t + phase)`` and the swing
    plane is fixed by the balloon's wind azimuth.
    """
    theta = balloon.sway_amplitude * math.sin(
        2.0 * math.pi * balloon.sway_frequency * t + balloon.sway_phase
    )
    horizontal = balloon.tether_length * math.sin(theta)
    ax, ay, az = balloon.anchor
    return (
        ax + horizontal * math.cos(balloon.sway_azimuth),
        ay + horizontal * math.sin(balloon.sway_azimuth),
        az + balloon.tether_length * math.cos(theta),
    )


def sample_balloon_layout(
    rng: np.random.Generator,
    arena: Arena,
    n: int,
    min_sep: float,
    params: BalloonParams = BalloonParams(),
) -> list[Balloon]:
    """Sample ``n`` balloon anchors uniformly over the effective footprint.

    Anchors are rejection-sampled until all pairwise distances are at
    least ``min_sep``; the sampling region is inset by the sway envelope
    so swinging centers can never leave the effective volume.

    Raises:
        PackingInfeasible: after LAYOUT_REJECTION_BUDGET rejected draws.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if min_sep < 0:
        raise ValueError("min_sep must be non-negative")

    xmin, ymin, xmax, ymax = arena.footprint
    inset = params.tether_length * math.sin(params.sway_amplitude)
    xmin, xmax = xmin + inset, xmax - inset
    ymin, ymax = ymin + inset, ymax - inset
    if xmin >= xmax or ymin >= ymax:
        raise PackingInfeasible("sway envelope leaves no sampling area")

    balloons: list[Balloon] = []
    anchors: list[tuple[float, float]] = []
    rejections = 0
    while len(balloons) < n:
        x = xmin + (xmax - xmin) * rng.random()
        y = ymin + (ymax - ymin) * rng.random()
        if any(math.hypot(x - px, y - py) < min_sep for px, py in anchors):
            rejections += 1
            if rejections >= LAYOUT_REJECTION_BUDGET:
                raise PackingInfeasible(
                    f"placed {len(balloons)}/{n} balloons after "
                    f"{rejections} rejections (min_sep={min_sep})"
                )
            continue
        phase = 2.0 * math.pi * rng.random()
        azimuth = 2.0 * math.pi * rng.random()
        anchor = (x, y, params.pole_height)
        balloon = Balloon(
            id=len(balloons),
            anchor=anchor,
            tether_length=params.tether_length,
            diameter=params.diameter,
            sway_amplitude=params.sway_amplitude,
            sway_frequency=params.sway_frequency,
            sway_phase=phase,
            sway_azimuth=azimuth,
        )
        balloon = replace(balloon, center=step_balloon_sway(balloon, 0.0))
        anchors.append((x, y))
        balloons.append(balloon)
    return balloons


def make_world(balloons: Sequence[Balloon], time: float = 0.0) -> WorldState:
    return WorldState(time=time, balloons=tuple(balloons))


def advance_world(world: WorldState, t: float) -> WorldState:
    """World state at time ``t``: recompute sway centers of alive balloons."""
    if t < world.time:
        raise ValueError("world time must be non-decreasing")
    balloons = tuple(
        replace(b, center=step_balloon_sway(b, t)) if b.alive else b
        for b in world.balloons
    )
    return WorldState(time=t, balloons=balloons)


def pop_balloon(world: WorldState, balloon_id: int) -> WorldState:
    """Mark a balloon dead.  Idempotent on already-dead balloons."""
    found = False
    balloons = []
    for b in world.balloons:
        if b.id == balloon_id:
            found = True
            balloons.append(replace(b, alive=False) if b.alive else b)
        else:
            balloons.append(b)
    if not found:
        raise UnknownBalloon(balloon_id)
    return WorldState(time=world.time, balloons=tuple(balloons))
