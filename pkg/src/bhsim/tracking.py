"""Multi-balloon tracking in the image plane.

Each track runs a linear Kalman filter over the 6-state vector
``[cx, cy, w, h, vcx, vcy]`` (pixels and pixels/frame): box centers move
with constant velocity between frames, box sizes follow a random walk.
Tracks are associated to detections by minimum-total-cost assignment on
Euclidean center distance, gated at a pixel radius, and managed through a
tentative / confirmed / dead lifecycle driven by consecutive hit and miss
counts.

The tracker is a value: ``step_tracker`` consumes one tracker state and
one frame of measurements and returns a fresh tracker plus the lifecycle
events and matches of that frame.  Measurements carry only box geometry,
so nothing in this module can see ground-truth identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np


class NumericalFailure(RuntimeError):
    """Innovation covariance was not invertible (bad Q/R/P configuration)."""


class TrackStatus(Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DEAD = "dead"


@dataclass(frozen=True)
class BoxMeasurement:
    """Geometry-only view of a detection, as consumed by the tracker."""

    center_x: float
    center_y: float
    width: float
    height: float


@dataclass(frozen=True)
class TrackerParams:
    gate_px: float = 80.0
    m_confirm: int = 3
    k_delete: int = 5
    q_diag: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 0.5, 0.5)
    r_diag: tuple[float, ...] = (4.0, 4.0, 8.0, 8.0)
    p0_diag: tuple[float, ...] = (10.0, 10.0, 10.0, 10.0, 100.0, 100.0)


@dataclass
class TrackState:
    id: int
    x: np.ndarray          # [cx, cy, w, h, vcx, vcy]
    P: np.ndarray          # 6x6 covariance
    age: int = 0
    hits: int = 0
    misses: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    last_range: Optional[float] = None

    @property
    def center(self) -> tuple[float, float]:
        return (float(self.x[0]), float(self.x[1]))

    @property
    def box_size(self) -> tuple[float, float]:
        return (float(self.x[2]), float(self.x[3]))


@dataclass(frozen=True)
class Assignment:
    matches: tuple[tuple[int, int], ...]
    unmatched_tracks: tuple[int, ...]
    unmatched_detections: tuple[int, ...]


@dataclass(frozen=True)
class TrackEvent:
    kind: str              # born | confirmed | coasted | died
    track_id: int


@dataclass(frozen=True)
class StepSummary:
    events: tuple[TrackEvent, ...]
    matches: tuple[tuple[int, int], ...]   # (track id, measurement index)


@dataclass(frozen=True)
class Tracker:
    tracks: tuple[TrackState, ...] = ()
    next_id: int = 1
    params: TrackerParams = TrackerParams()

    @property
    def confirmed(self) -> list[TrackState]:
        return [t for t in self.tracks if t.status is TrackStatus.CONFIRMED]

    def track_by_id(self, track_id: int) -> Optional[TrackState]:
        for t in self.tracks:
            if t.id == track_id:
                return t
        return None


# Measurement model: the first four states are observed directly.
_H = np.zeros((4, 6))
_H[0, 0] = _H[1, 1] = _H[2, 2] = _H[3, 3] = 1.0
_I6 = np.eye(6)


def _transition(dt_frames: float) -> np.ndarray:
    F = np.eye(6)
    F[0, 4] = dt_frames
    F[1, 5] = dt_frames
    return F


def new_track(
    track_id: int, z: BoxMeasurement, params: TrackerParams
) -> TrackState:
    """Seed a tentative track from an unmatched measurement.

    Velocities start at zero with large variance (unbiased prior).
    """
    x = np.array([z.center_x, z.center_y, z.width, z.height, 0.0, 0.0])
    P = np.diag(params.p0_diag).astype(float)
    return TrackState(id=track_id, x=x, P=P, age=1, hits=1, misses=0)


def kf_predict(
    t: TrackState, dt_frames: float = 1.0, params: TrackerParams = TrackerParams()
) -> TrackState:
    """Constant-velocity prediction; sizes random-walk, covariance grows."""
    F = _transition(dt_frames)
    x = F @ t.x
    P = F @ t.P @ F.T + np.diag(params.q_diag)
    P = (P + P.T) / 2.0
    return replace(t, x=x, P=P, age=t.age + 1)


def kf_update(
    t: TrackState, z: BoxMeasurement, params: TrackerParams = TrackerParams()
) -> TrackState:
    """Linear Kalman correction with the associated box measurement.

    Uses the Joseph-form covariance update to keep P symmetric positive
    semi-definite over long runs.  Hits increment, misses reset.

    Raises:
        NumericalFailure: if the innovation covariance cannot be inverted.
    """
    R = np.diag(params.r_diag)
    S = t.P[:4, :4] + R
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("innovation covariance not invertible") from exc
    K = t.P[:, :4] @ S_inv
    zv = np.array([z.center_x, z.center_y, z.width, z.height])
    innovation = zv - t.x[:4]
    x = t.x + K @ innovation
    I_KH = _I6 - K @ _H
    P = I_KH @ t.P @ I_KH.T + K @ R @ K.T
    P = (P + P.T) / 2.0
    return replace(t, x=x, P=P, hits=t.hits + 1, misses=0)


def assignment_cost(
    tracks: Sequence[TrackState], detections: Sequence[BoxMeasurement]
) -> np.ndarray:
    """|tracks| x |detections| matrix of Euclidean center distances."""
    cost = np.zeros((len(tracks), len(detections)))
    for i, t in enumerate(tracks):
        cx, cy = t.center
        for j, d in enumerate(detections):
            cost[i, j] = math.hypot(cx - d.center_x, cy - d.center_y)
    return cost


def _solve_square(cost: list[list[float]], n: int) -> list[int]:
    """Minimum-cost perfect matching on an n x n matrix.

    Shortest augmenting path formulation of the Hungarian method with row
    and column potentials, O(n^3).  Returns ``assign`` with
    ``assign[row] = column``.
    """
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match_col = [0] * (n + 1)   # match_col[j] = row matched to column j (1-based)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = INF
            j1 = -1
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    assign = [-1] * n
    for j in range(1, n + 1):
        if match_col[j] > 0:
            assign[match_col[j] - 1] = j - 1
    return assign


def solve_assignment(cost: np.ndarray, gate: float) -> Assignment:
    """Minimum-total-cost matching on a rectangular matrix, then gating.

    The matrix is padded square with a sentinel cost; padded pairs are
    discarded and any surviving pair costlier than ``gate`` is demoted to
    unmatched on both sides.
    """
    n_tracks, n_dets = cost.shape if cost.size else (cost.shape[0], cost.shape[1])
    if n_tracks == 0 or n_dets == 0:
        return Assignment(
            matches=(),
            unmatched_tracks=tuple(range(n_tracks)),
            unmatched_detections=tuple(range(n_dets)),
        )
    n = max(n_tracks, n_dets)
    # Sentinel padding only needs to dominate every real cost; padded
    # pairs are discarded by index below, and gating is a post-filter.
    sentinel = float(cost.max()) + 1.0e6
    padded = [[sentinel] * n for _ in range(n)]
    for i in range(n_tracks):
        for j in range(n_dets):
            padded[i][j] = float(cost[i, j])
    assign = _solve_square(padded, n)
    matches = []
    matched_t: set[int] = set()
    matched_d: set[int] = set()
    for i in range(n_tracks):
        j = assign[i]
        if 0 <= j < n_dets and cost[i, j] <= gate:
            matches.append((i, j))
            matched_t.add(i)
            matched_d.add(j)
    return Assignment(
        matches=tuple(matches),
        unmatched_tracks=tuple(i for i in range(n_tracks) if i not in matched_t),
        unmatched_detections=tuple(j for j in range(n_dets) if j not in matched_d),
    )


def step_tracker(
    tracker: Tracker,
    measurements: Sequence[BoxMeasurement],
    dt_frames: float = 1.0,
) -> tuple[Tracker, StepSummary]:
    """Run one frame: predict, associate, update, coast, spawn, prune.

    Matched tracks are corrected and their miss counts reset; unmatched
    tracks coast on prediction alone (hits reset) and die at
    ``k_delete`` consecutive misses; unmatched measurements seed new
    tentative tracks; tentative tracks are promoted at ``m_confirm``
    consecutive hits.  Track ids strictly increase and are never reused.
    """
    params = tracker.params
    predicted = [kf_predict(t, dt_frames, params) for t in tracker.tracks]
    cost = assignment_cost(predicted, measurements)
    assign = solve_assignment(cost, params.gate_px)

    events: list[TrackEvent] = []
    matches: list[tuple[int, int]] = []
    next_tracks: list[TrackState] = []

    by_index = {i: t for i, t in enumerate(predicted)}
    for ti, di in assign.matches:
        t = kf_update(by_index[ti], measurements[di], params)
        if t.status is TrackStatus.TENTATIVE and t.hits >= params.m_confirm:
            t = replace(t, status=TrackStatus.CONFIRMED)
            events.append(TrackEvent("confirmed", t.id))
        matches.append((t.id, di))
        next_tracks.append(t)

    for ti in assign.unmatched_tracks:
        t = by_index[ti]
        t = replace(t, misses=t.misses + 1, hits=0)
        if t.misses >= params.k_delete:
            events.append(TrackEvent("died", t.id))
            continue
        events.append(TrackEvent("coasted", t.id))
        next_tracks.append(t)

    next_id = tracker.next_id
    for di in assign.unmatched_detections:
        t = new_track(next_id, measurements[di], params)
        next_id += 1
        events.append(TrackEvent("born", t.id))
        matches.append((t.id, di))
        next_tracks.append(t)

    next_tracks.sort(key=lambda t: t.id)
    return (
        Tracker(tracks=tuple(next_tracks), next_id=next_id, params=params),
        StepSummary(events=tuple(events), matches=tuple(matches)),
    )
