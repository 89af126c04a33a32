"""Per-agent mission logic: search, commit, approach, revisit, confirm.

Each agent runs a small state machine over one assigned cell:

* SEARCH   - fly boustrophedon lanes over the cell, scan for balloons;
  on a committed track with a granted claim, switch to ALIGN.
* ALIGN    - hover and yaw until the target is horizontally centered.
* APPROACH - fly the line-of-sight command at approach speed until the
  target track dies (popped or lost from view).
* REVISIT  - fly to a standoff point behind the last world estimate.
* CONFIRM  - dwell facing the estimate; if a balloon reappears nearby,
  retry the attack, otherwise declare the pop and resume the search.
* DONE     - terminal, e.g. a killed agent; commands zero.

State is a value: ``step_mission`` consumes a state and returns the next
one plus a world-frame velocity command and a yaw-rate command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .fleet import ClaimResult, point_in_cell, polygon_area
from .guidance import (
    GuidanceCommand,
    PixelTarget,
    desired_yaw,
    velocity_command_camera,
    yaw_rate_command,
)
from .perception import order_by_depth
from .tracking import TrackState, TrackStatus
from .vehicle import UavState, ned_to_world, rotation_body_to_vehicle, wrap_angle

Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]

REVISIT_ALTITUDE_BOUNDS = (1.0, 5.0)
# Balloons live inside the effective volume; estimates farther outside
# than this slack are detector junk and never worth committing to.
ESTIMATE_VOLUME_SLACK = 2.0
# After every candidate was claim-denied, pause commit attempts briefly.
COMMIT_DENIAL_COOLDOWN_S = 2.0
# Commit to estimates at most this far outside the agent's own cell, so
# agents never work deep inside a teammate's area.
CELL_COMMIT_MARGIN = 2.0


class DegenerateCell(ValueError):
    """Cell too small to plan a search path over."""


class Phase(Enum):
    SEARCH = "search"
    ALIGN = "align"
    APPROACH = "approach"
    REVISIT = "revisit"
    CONFIRM = "confirm"
    DONE = "done"


# Every edge step_mission may produce (self loops included).  X -> SEARCH
# edges cover abandons, timeouts, and degenerate inputs.
LEGAL_TRANSITIONS = frozenset(
    {
        (Phase.SEARCH, Phase.SEARCH),
        (Phase.SEARCH, Phase.ALIGN),
        (Phase.ALIGN, Phase.ALIGN),
        (Phase.ALIGN, Phase.APPROACH),
        (Phase.ALIGN, Phase.REVISIT),
        (Phase.ALIGN, Phase.SEARCH),
        (Phase.APPROACH, Phase.APPROACH),
        (Phase.APPROACH, Phase.REVISIT),
        (Phase.APPROACH, Phase.SEARCH),
        (Phase.REVISIT, Phase.REVISIT),
        (Phase.REVISIT, Phase.CONFIRM),
        (Phase.REVISIT, Phase.SEARCH),
        (Phase.CONFIRM, Phase.CONFIRM),
        (Phase.CONFIRM, Phase.ALIGN),
        (Phase.CONFIRM, Phase.SEARCH),
        (Phase.DONE, Phase.DONE),
    }
)


@dataclass(frozen=True)
class MissionParams:
    m_commit: int = 3
    align_tol_px: float = 30.0
    commit_range_max: float = 25.0
    v_search: float = 2.0
    v_approach: float = 1.5
    d_standoff: float = 6.0
    t_confirm: float = 5.0
    tip_reach: float = 0.5
    lane_spacing: float = 15.0
    search_altitude: float = 4.0
    retry_limit: int = 3
    wp_tolerance: float = 1.0
    wp_step: float = 15.0
    # An unreachable waypoint (blocked by a held neighbor) is skipped
    # after this long; the looping pattern re-sweeps it later.
    wp_timeout: float = 25.0
    align_timeout: float = 15.0
    approach_timeout: float = 90.0
    approach_stall_timeout: float = 10.0
    revisit_timeout: float = 30.0
    yaw_gain: float = 1.5
    yaw_mode: str = "horizontal_offset"


@dataclass(frozen=True)
class SearchPath:
    waypoints: tuple[Vec3, ...]
    lane_spacing: float
    altitude: float


@dataclass(frozen=True)
class FleetView:
    """What one agent may see and do through the fleet supervisor.

    ``cell`` is the agent's current responsibility polygon; commits are
    restricted to estimates inside it (empty cell disables the gate).
    """

    claim_radius: float
    try_claim: Callable[[Vec3], ClaimResult]
    release: Callable[[int, str], None]
    cell: tuple[Vec2, ...] = ()


@dataclass(frozen=True)
class MissionContext:
    """Per-agent constants wired once at run start.

    ``volume_lo`` / ``volume_hi`` bound the space balloons can occupy;
    estimates outside it (plus slack) are rejected and revisit waypoints
    are clamped into it.  ``None`` disables the gating.
    """

    params: MissionParams
    focal_px: float
    r_cam_to_body: np.ndarray
    yaw_rate_max: float
    volume_lo: Optional[Vec3] = None
    volume_hi: Optional[Vec3] = None

    def estimate_plausible(self, est: Vec3) -> bool:
        if self.volume_lo is None or self.volume_hi is None:
            return True
        s = ESTIMATE_VOLUME_SLACK
        return all(
            self.volume_lo[i] - s <= est[i] <= self.volume_hi[i] + s
            for i in range(3)
        )

    def clamp_into_volume(self, p: Vec3) -> Vec3:
        if self.volume_lo is None or self.volume_hi is None:
            return p
        return (
            min(max(p[0], self.volume_lo[0]), self.volume_hi[0]),
            min(max(p[1], self.volume_lo[1]), self.volume_hi[1]),
            min(max(p[2], self.volume_lo[2]), self.volume_hi[2]),
        )


@dataclass(frozen=True)
class MissionState:
    phase: Phase
    entered_at: float
    path: SearchPath
    wp_index: int = 0
    visited: tuple[bool, ...] = ()
    target_track_id: Optional[int] = None
    claim_id: Optional[int] = None
    last_estimate: Optional[Vec3] = None
    approach_heading: Optional[float] = None
    revisit_point: Optional[Vec3] = None
    retries: int = 0
    blacklist: tuple[Vec3, ...] = ()
    # (best distance to estimate, time it was set): approach stall watchdog
    approach_best: Optional[tuple[float, float]] = None
    # lowest accepted target range so far, for detecting range jumps
    target_range: Optional[float] = None
    # estimate the current claim was granted at
    claim_estimate: Optional[Vec3] = None
    # no commit attempts until this time (set after a claim denial)
    commit_cooldown_until: float = 0.0
    # when the current waypoint became the target (for the skip timeout)
    wp_started_at: float = 0.0


def initial_mission_state(path: SearchPath, t: float = 0.0) -> MissionState:
    return MissionState(
        phase=Phase.SEARCH,
        entered_at=t,
        path=path,
        wp_index=0,
        visited=tuple(False for _ in path.waypoints),
    )


def generate_search_path(
    cell: Sequence[Vec2], altitude: float, spacing: float, wp_step: float = 15.0
) -> SearchPath:
    """Boustrophedon lanes over a convex cell at constant altitude.

    Lanes run parallel to the longer bounding-box axis, offset across the
    shorter axis so every point of the cell lies within ``spacing / 2``
    of a lane.  Waypoints are placed every ``wp_step`` meters along each
    lane so search progress tracks swept area.

    Raises:
        DegenerateCell: if the cell area is below 1 square meter.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if len(cell) < 3 or abs(polygon_area(cell)) < 1.0:
        raise DegenerateCell("cell area below 1 m^2")

    xs = [p[0] for p in cell]
    ys = [p[1] for p in cell]
    xmin, xmax, ymin, ymax = min(xs), max(xs), min(ys), max(ys)
    along_x = (xmax - xmin) >= (ymax - ymin)
    if along_x:
        short_min, short_extent = ymin, ymax - ymin
    else:
        short_min, short_extent = xmin, xmax - xmin

    n_lanes = max(1, math.ceil(short_extent / spacing))
    lane_width = short_extent / n_lanes

    waypoints: list[Vec3] = []
    lane_index = 0
    for i in range(n_lanes):
        offset = short_min + (i + 0.5) * lane_width
        span = _lane_span(cell, offset, along_x)
        if span is None:
            continue
        a, b = span
        if lane_index % 2 == 1:
            a, b = b, a
        for s in _densify(a, b, wp_step):
            wp = (s, offset, altitude) if along_x else (offset, s, altitude)
            if not waypoints or _dist3(waypoints[-1], wp) > 1e-9:
                waypoints.append(wp)
        lane_index += 1
    if not waypoints:
        raise DegenerateCell("no lane intersects the cell")
    return SearchPath(
        waypoints=tuple(waypoints), lane_spacing=spacing, altitude=altitude
    )


def _lane_span(
    cell: Sequence[Vec2], offset: float, along_x: bool
) -> Optional[tuple[float, float]]:
    """Extent of a lane line inside a convex polygon, or None if outside."""
    hits: list[float] = []
    n = len(cell)
    for i in range(n):
        px, py = cell[i]
        qx, qy = cell[(i + 1) % n]
        pc, qc = (py, qy) if along_x else (px, qx)
        pa, qa = (px, qx) if along_x else (py, qy)
        if pc == qc:
            if pc == offset:
                hits.extend((pa, qa))
            continue
        t = (offset - pc) / (qc - pc)
        if 0.0 <= t <= 1.0:
            hits.append(pa + t * (qa - pa))
    if not hits:
        return None
    lo, hi = min(hits), max(hits)
    if hi - lo < 1e-9:
        return None
    return (lo, hi)


def _densify(a: float, b: float, step: float) -> list[float]:
    n = max(1, math.ceil(abs(b - a) / step))
    return [a + (b - a) * k / n for k in range(n + 1)]


def _dist3(p: Vec3, q: Vec3) -> float:
    return math.sqrt(
        (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2
    )


def should_commit(track: TrackState, m_commit: int) -> bool:
    """Commit only to confirmed tracks with enough consecutive hits."""
    return track.status is TrackStatus.CONFIRMED and track.hits >= m_commit


def check_pop(
    tip_position: Vec3, balloon_center: Vec3, balloon_radius: float, tip_reach: float
) -> bool:
    """True when the popping tip is within reach of the balloon surface."""
    if balloon_radius <= 0:
        raise ValueError("balloon radius must be positive")
    return _dist3(tip_position, balloon_center) <= balloon_radius + tip_reach


def plan_revisit(
    last_estimate: Vec3, approach_heading: float, d_standoff: float
) -> Vec3:
    """Standoff waypoint behind the estimate, opposite the approach heading."""
    if d_standoff <= 0:
        raise ValueError("d_standoff must be positive")
    lo, hi = REVISIT_ALTITUDE_BOUNDS
    return (
        last_estimate[0] - d_standoff * math.cos(approach_heading),
        last_estimate[1] - d_standoff * math.sin(approach_heading),
        min(hi, max(lo, last_estimate[2])),
    )


def estimate_world_position(
    uav: UavState,
    track: TrackState,
    focal_px: float,
    r_cam_to_body: np.ndarray,
    depth_m: float,
) -> Vec3:
    """World position of a tracked balloon from its pixel location and depth.

    ``depth_m`` is distance along the optic axis (what known-size ranging
    yields), so the pixel ray ``(x/f, y/f, 1)`` is scaled by it directly;
    an off-axis target sits farther away than its depth.
    """
    cam = (
        float(track.x[0]) / focal_px * depth_m,
        float(track.x[1]) / focal_px * depth_m,
        depth_m,
    )
    r2 = rotation_body_to_vehicle(uav.yaw)
    v_ned = r2 @ (r_cam_to_body @ np.asarray(cam))
    dx, dy, dz = ned_to_world((float(v_ned[0]), float(v_ned[1]), float(v_ned[2])))
    return (
        float(uav.position[0] + dx),
        float(uav.position[1] + dy),
        float(uav.position[2] + dz),
    )


def _bearing_to(frm: Vec3, to: Vec3) -> Optional[float]:
    dx, dy = to[0] - frm[0], to[1] - frm[1]
    if dx * dx + dy * dy < 1e-12:
        return None
    return math.atan2(dy, dx)


def _near_blacklist(estimate: Vec3, blacklist: Sequence[Vec3], radius: float) -> bool:
    return any(_dist3(estimate, b) < radius for b in blacklist)


def _find_track(tracks: Sequence[TrackState], track_id: Optional[int]):
    if track_id is None:
        return None
    for t in tracks:
        if t.id == track_id:
            return t
    return None


def _nearest_unvisited(
    path: SearchPath, visited: Sequence[bool], position: Vec3
) -> Optional[int]:
    best = None
    best_d = math.inf
    for i, wp in enumerate(path.waypoints):
        if visited[i]:
            continue
        d = _dist3(position, wp)
        if d < best_d:
            best_d = d
            best = i
    return best


@dataclass(frozen=True)
class MissionStep:
    state: MissionState
    velocity_cmd: Vec3
    yaw_rate_cmd: float
    events: tuple[tuple[str, dict], ...]
    # populated during APPROACH for per-tick command logging
    guidance: Optional[GuidanceCommand] = None


def step_mission(
    ms: MissionState,
    tracks: Sequence[TrackState],
    uav: UavState,
    view: FleetView,
    t: float,
    ctx: MissionContext,
) -> MissionStep:
    """Advance one agent's mission by one tick.

    Returns the next mission state, a world-frame velocity command, a
    yaw-rate command, and any events (phase changes, pop declarations,
    abandoned sites).  Degenerate situations (lost claims, missing
    estimates) resolve back to SEARCH.
    """
    handler = _HANDLERS[ms.phase]
    return handler(ms, tracks, uav, view, t, ctx)


def _enter(
    ms: MissionState,
    phase: Phase,
    t: float,
    events: list[tuple[str, dict]],
    detail: Optional[dict] = None,
    **updates,
) -> MissionState:
    payload = {"from": ms.phase.value, "to": phase.value}
    if detail:
        payload.update(detail)
    events.append(("phase", payload))
    return replace(ms, phase=phase, entered_at=t, **updates)


def _back_to_search(
    ms: MissionState,
    uav: UavState,
    view: FleetView,
    t: float,
    events: list[tuple[str, dict]],
    release_reason: Optional[str],
    detail: Optional[dict] = None,
) -> MissionState:
    if ms.claim_id is not None and release_reason is not None:
        view.release(ms.claim_id, release_reason)
    visited = ms.visited
    idx = _nearest_unvisited(ms.path, visited, uav.position)
    if idx is None:
        visited = tuple(False for _ in ms.path.waypoints)
        idx = _nearest_unvisited(ms.path, visited, uav.position) or 0
    return _enter(
        ms,
        Phase.SEARCH,
        t,
        events,
        detail,
        wp_index=idx,
        wp_started_at=t,
        visited=visited,
        target_track_id=None,
        claim_id=None,
        revisit_point=None,
        retries=0,
        target_range=None,
        claim_estimate=None,
    )


def _yaw_cmd_toward(
    psi_des: Optional[float], uav: UavState, ctx: MissionContext
) -> float:
    if psi_des is None:
        return 0.0
    return yaw_rate_command(
        psi_des, uav.yaw, ctx.params.yaw_gain, ctx.yaw_rate_max
    )


def _yaw_cmd_offset_law(
    track: TrackState, uav: UavState, ctx: MissionContext
) -> float:
    target = PixelTarget(track.x[0], track.x[1], ctx.focal_px)
    offset = desired_yaw(target, ctx.params.yaw_mode)
    if offset is None:
        return 0.0
    if ctx.params.yaw_mode == "horizontal_offset":
        psi_des = wrap_angle(uav.yaw + offset)
    else:
        psi_des = offset
    return _yaw_cmd_toward(psi_des, uav, ctx)


def _refresh_target(
    ms: MissionState, track: TrackState, uav: UavState, ctx: MissionContext
) -> MissionState:
    # Refresh only from tracks matched this frame; a coasting track's
    # extrapolated center drifts and would corrupt the stored estimate.
    if track.last_range is None or track.misses != 0:
        return ms
    est = estimate_world_position(
        uav, track, ctx.focal_px, ctx.r_cam_to_body, track.last_range
    )
    if not ctx.estimate_plausible(est):
        return ms
    heading = _bearing_to(uav.position, est)
    return replace(
        ms,
        last_estimate=est,
        approach_heading=heading if heading is not None else ms.approach_heading,
        target_range=(
            track.last_range
            if ms.target_range is None
            else min(ms.target_range, track.last_range)
        ),
    )


def _step_search(ms, tracks, uav, view, t, ctx) -> MissionStep:
    mp = ctx.params
    events: list[tuple[str, dict]] = []

    if ms.claim_id is None and t >= ms.commit_cooldown_until:
        # Commit only inside commit_range_max: close enough that the world
        # estimate is tight and the claim table can deconflict agents.
        candidates = [
            tr
            for tr in tracks
            if should_commit(tr, mp.m_commit)
            and tr.last_range is not None
            and tr.last_range <= mp.commit_range_max
        ]
        denied = False
        for tid in order_by_depth([(tr.id, tr.last_range) for tr in candidates]):
            track = _find_track(candidates, tid)
            est = estimate_world_position(
                uav, track, ctx.focal_px, ctx.r_cam_to_body, track.last_range
            )
            if not ctx.estimate_plausible(est):
                continue
            if view.cell and not point_in_cell(
                (est[0], est[1]), view.cell, CELL_COMMIT_MARGIN
            ):
                continue
            if _near_blacklist(est, ms.blacklist, view.claim_radius):
                continue
            result = view.try_claim(est)
            if result.granted:
                heading = _bearing_to(uav.position, est) or uav.yaw
                ms2 = _enter(
                    ms,
                    Phase.ALIGN,
                    t,
                    events,
                    {"track_id": track.id},
                    target_track_id=track.id,
                    claim_id=result.claim_id,
                    last_estimate=est,
                    approach_heading=heading,
                    retries=0,
                    target_range=track.last_range,
                    claim_estimate=est,
                )
                return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))
            denied = True
        if denied:
            ms = replace(ms, commit_cooldown_until=t + COMMIT_DENIAL_COOLDOWN_S)

    # Waypoint following.
    if not ms.path.waypoints:
        return MissionStep(ms, (0.0, 0.0, 0.0), 0.0, tuple(events))
    wp_index = ms.wp_index
    wp_started = ms.wp_started_at
    visited = list(ms.visited)
    wp = ms.path.waypoints[wp_index]
    reached = _dist3(uav.position, wp) <= mp.wp_tolerance
    timed_out = t - wp_started > mp.wp_timeout
    if reached or timed_out:
        if reached:
            visited[wp_index] = True
        nxt = next(
            (i for i in range(wp_index + 1, len(visited)) if not visited[i]), None
        )
        if nxt is None:
            nxt = _nearest_unvisited(ms.path, visited, uav.position)
        if nxt is None or nxt == wp_index:
            # Pattern complete; start over so missed balloons get re-swept.
            # After a timeout, move to a different waypoint than the
            # blocked one.
            visited = [False] * len(visited)
            nxt = (wp_index + 1) % len(visited) if timed_out else 0
        wp_index = nxt
        wp_started = t
        wp = ms.path.waypoints[wp_index]
    ms2 = replace(
        ms, wp_index=wp_index, visited=tuple(visited), wp_started_at=wp_started
    )

    dx = wp[0] - uav.position[0]
    dy = wp[1] - uav.position[1]
    dz = wp[2] - uav.position[2]
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dist < 1e-9:
        vel = (0.0, 0.0, 0.0)
        yaw_rate = 0.0
    else:
        k = mp.v_search / dist
        vel = (dx * k, dy * k, dz * k)
        yaw_rate = _yaw_cmd_toward(
            math.atan2(dy, dx) if dx * dx + dy * dy > 1e-12 else None, uav, ctx
        )
    return MissionStep(ms2, vel, yaw_rate, tuple(events))


def _step_align(ms, tracks, uav, view, t, ctx) -> MissionStep:
    mp = ctx.params
    events: list[tuple[str, dict]] = []
    track = _find_track(tracks, ms.target_track_id)

    if track is None or track.status is TrackStatus.DEAD:
        return _lost_target(ms, uav, view, t, ctx, events)
    ms = _refresh_target(ms, track, uav, ctx)

    if t - ms.entered_at > mp.align_timeout:
        ms2 = _back_to_search(ms, uav, view, t, events, "abandoned",
                              {"reason": "align_timeout"})
        return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))

    if abs(track.x[0]) < mp.align_tol_px:
        ms2 = _enter(
            ms, Phase.APPROACH, t, events, {"track_id": track.id},
            approach_best=None,
        )
        return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))

    yaw_rate = _yaw_cmd_offset_law(track, uav, ctx)
    return MissionStep(ms, (0.0, 0.0, 0.0), yaw_rate, tuple(events))


def _lost_target(ms, uav, view, t, ctx, events) -> MissionStep:
    """Target track died: revisit its last estimate, or bail to SEARCH."""
    if ms.last_estimate is None or ms.approach_heading is None:
        ms2 = _back_to_search(ms, uav, view, t, events, "abandoned",
                              {"reason": "no_estimate"})
        return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))
    rp = ctx.clamp_into_volume(
        plan_revisit(ms.last_estimate, ms.approach_heading, ctx.params.d_standoff)
    )
    ms2 = _enter(
        ms, Phase.REVISIT, t, events, {"point": list(rp)},
        revisit_point=rp, target_track_id=None,
    )
    return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))


def _step_approach(ms, tracks, uav, view, t, ctx) -> MissionStep:
    mp = ctx.params
    events: list[tuple[str, dict]] = []
    track = _find_track(tracks, ms.target_track_id)

    if track is None or track.status is TrackStatus.DEAD:
        return _lost_target(ms, uav, view, t, ctx, events)

    # A sudden range jump means the pursued object vanished (popped) and
    # a farther one took over its track; confirm through a revisit.
    if (
        track.misses == 0
        and track.last_range is not None
        and ms.target_range is not None
        and track.last_range > ms.target_range + max(3.0, 0.3 * ms.target_range)
    ):
        return _lost_target(ms, uav, view, t, ctx, events)
    ms = _refresh_target(ms, track, uav, ctx)

    # Claim drift: when the working estimate wanders away from the
    # claimed position, re-reserve it so exclusivity tracks reality;
    # a denial means another agent owns the spot we drifted onto.
    if (
        ms.claim_id is not None
        and ms.claim_estimate is not None
        and ms.last_estimate is not None
        and _dist3(ms.last_estimate, ms.claim_estimate) > view.claim_radius / 2.0
    ):
        view.release(ms.claim_id, "abandoned")
        ms = replace(ms, claim_id=None, claim_estimate=None)
        result = view.try_claim(ms.last_estimate)
        if not result.granted:
            ms2 = _back_to_search(
                ms, uav, view, t, events, None, {"reason": "claim_lost"}
            )
            return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))
        ms = replace(
            ms, claim_id=result.claim_id, claim_estimate=ms.last_estimate
        )

    if t - ms.entered_at > mp.approach_timeout:
        return _lost_target(ms, uav, view, t, ctx, events)

    # Stall watchdog: an approach that stops closing (blocked by the
    # fence or by another agent) falls back to a revisit.
    if ms.last_estimate is not None:
        d_est = _dist3(uav.position, ms.last_estimate)
        if ms.approach_best is None or d_est < ms.approach_best[0] - 0.1:
            ms = replace(ms, approach_best=(d_est, t))
        elif t - ms.approach_best[1] > mp.approach_stall_timeout:
            return _lost_target(ms, uav, view, t, ctx, events)

    target = PixelTarget(float(track.x[0]), float(track.x[1]), ctx.focal_px)
    v_cam = velocity_command_camera(target, mp.v_approach)
    r2 = rotation_body_to_vehicle(uav.yaw)
    v_ned = r2 @ (ctx.r_cam_to_body @ np.asarray(v_cam))
    v_vehicle = (float(v_ned[0]), float(v_ned[1]), float(v_ned[2]))
    vel = ned_to_world(v_vehicle)
    yaw_rate = _yaw_cmd_offset_law(track, uav, ctx)
    offset = desired_yaw(target, mp.yaw_mode)
    psi_des = None if offset is None else (
        wrap_angle(uav.yaw + offset)
        if mp.yaw_mode == "horizontal_offset"
        else offset
    )
    command = GuidanceCommand(
        speed=mp.v_approach,
        v_camera=v_cam,
        psi_des=psi_des,
        v_vehicle=v_vehicle,
        yaw_rate=yaw_rate,
    )
    return MissionStep(ms, vel, yaw_rate, tuple(events), guidance=command)


def _step_revisit(ms, tracks, uav, view, t, ctx) -> MissionStep:
    mp = ctx.params
    events: list[tuple[str, dict]] = []
    if ms.revisit_point is None or ms.last_estimate is None:
        ms2 = _back_to_search(ms, uav, view, t, events, "abandoned",
                              {"reason": "no_revisit_point"})
        return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))

    dist = _dist3(uav.position, ms.revisit_point)
    if dist <= mp.wp_tolerance or t - ms.entered_at > mp.revisit_timeout:
        ms2 = _enter(ms, Phase.CONFIRM, t, events)
        return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))

    dx = ms.revisit_point[0] - uav.position[0]
    dy = ms.revisit_point[1] - uav.position[1]
    dz = ms.revisit_point[2] - uav.position[2]
    k = mp.v_search / dist
    vel = (dx * k, dy * k, dz * k)
    yaw_rate = _yaw_cmd_toward(_bearing_to(uav.position, ms.last_estimate), uav, ctx)
    return MissionStep(ms, vel, yaw_rate, tuple(events))


def _step_confirm(ms, tracks, uav, view, t, ctx) -> MissionStep:
    mp = ctx.params
    events: list[tuple[str, dict]] = []
    if ms.last_estimate is None:
        ms2 = _back_to_search(ms, uav, view, t, events, "abandoned",
                              {"reason": "no_estimate"})
        return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))

    # A surviving balloon tracked near the stored estimate means the
    # attack missed; retry unless the retry budget is spent.
    for track in tracks:
        if track.status is not TrackStatus.CONFIRMED or track.last_range is None:
            continue
        est = estimate_world_position(
            uav, track, ctx.focal_px, ctx.r_cam_to_body, track.last_range
        )
        if not ctx.estimate_plausible(est):
            continue
        if _dist3(est, ms.last_estimate) <= view.claim_radius:
            if ms.retries + 1 > mp.retry_limit:
                events.append(("unreachable", {"estimate": list(ms.last_estimate)}))
                ms2 = _back_to_search(
                    ms, uav, view, t, events, "abandoned",
                    {"reason": "retry_limit"},
                )
                ms2 = replace(ms2, blacklist=ms.blacklist + (ms.last_estimate,))
                return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))
            # Re-claim at the fresh estimate so the retry stays exclusive;
            # a denial means another agent owns this balloon now.
            if ms.claim_id is not None:
                view.release(ms.claim_id, "abandoned")
                ms = replace(ms, claim_id=None)
            result = view.try_claim(est)
            if not result.granted:
                ms2 = _back_to_search(
                    ms, uav, view, t, events, None, {"reason": "claim_lost"}
                )
                return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))
            heading = _bearing_to(uav.position, est) or uav.yaw
            ms2 = _enter(
                ms,
                Phase.ALIGN,
                t,
                events,
                {"track_id": track.id, "retry": ms.retries + 1},
                target_track_id=track.id,
                claim_id=result.claim_id,
                last_estimate=est,
                approach_heading=heading,
                retries=ms.retries + 1,
                revisit_point=None,
                target_range=track.last_range,
                claim_estimate=est,
            )
            return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))

    if t - ms.entered_at >= mp.t_confirm:
        events.append(("pop_declared", {"estimate": list(ms.last_estimate)}))
        ms2 = _back_to_search(ms, uav, view, t, events, "popped")
        return MissionStep(ms2, (0.0, 0.0, 0.0), 0.0, tuple(events))

    yaw_rate = _yaw_cmd_toward(_bearing_to(uav.position, ms.last_estimate), uav, ctx)
    return MissionStep(ms, (0.0, 0.0, 0.0), yaw_rate, tuple(events))


def _step_done(ms, tracks, uav, view, t, ctx) -> MissionStep:
    return MissionStep(ms, (0.0, 0.0, 0.0), 0.0, ())


_HANDLERS = {
    Phase.SEARCH: _step_search,
    Phase.ALIGN: _step_align,
    Phase.APPROACH: _step_approach,
    Phase.REVISIT: _step_revisit,
    Phase.CONFIRM: _step_confirm,
    Phase.DONE: _step_done,
}
