"""Seedable highway and on-ramp merge driving environment.

Point-mass vehicles on a straight multi-lane road. Lane 0 is the leftmost
lane and lane centers sit at ``lane_index * lane_width`` with y measured from
the center of lane 0. The ego vehicle is driven by discrete meta-actions
(lane left/right, idle, faster, slower); each decision covers 1.0 s simulated
as ten 0.1 s Euler sub-steps. Within a sub-step all accelerations are
computed from the same state snapshot, then every vehicle integrates:

    a   = clamp(K_P * (v_target - v), -A_MAX, A_MAX)   (ego, or leaderless traffic)
    v  <- clamp(v + a * dt, 0, V_LIMIT)
    x  <- x + v * dt
    y  <- y + clamp(y_lane_target - y, -LATERAL_RATE * dt, LATERAL_RATE * dt)

Traffic vehicles follow the Gazis-Herman-Rothery stimulus-response
car-following law toward their nearest same-lane leader and never change
lanes. In the merge scenario the highest-index lane is an on-ramp that ends
at ``merge_ramp_end_x``; a vehicle still targeting the ramp past that point
is forced to brake at -A_MAX. The road length itself is nominal: driving
past it is allowed and nothing ends there.

Determinism contract: for a fixed (seed, road, action sequence) every float
in every vehicle state is bitwise reproducible across runs and platforms.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .actions import EgoAction
from .errors import EnvStateError, EpisodeFinishedError
from .reward import (
    EgoPeriodView,
    RewardBreakdown,
    RewardParams,
    RewardWeights,
    compute_reward,
)

DT = 0.1  # sub-step length, s
SUBSTEPS = 10  # sub-steps per decision period
DECISION_PERIOD = DT * SUBSTEPS  # s
K_P = 1.0  # speed tracking gain, 1/s
A_MAX = 5.0  # acceleration clamp, m/s^2
LATERAL_RATE = 4.0  # lane change slew rate, m/s
V_LIMIT = 40.0  # hard physical speed cap, m/s
TARGET_SPEED_STEP = 5.0  # Faster/Slower increment, m/s
TARGET_SPEED_MIN = 10.0
TARGET_SPEED_MAX = 30.0
EGO_SPAWN_SPEED = 25.0
TRAFFIC_SPEED_LOW = 20.0
TRAFFIC_SPEED_HIGH = 28.0
TRAFFIC_SPAWN_X_LOW = 30.0
TRAFFIC_SPAWN_X_HIGH = 200.0  # keeps first encounters early in the episode
MIN_SPAWN_GAP = 15.0  # bumper-to-bumper, m
VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0
DEFAULT_N_TRAFFIC = 6
DEFAULT_HORIZON = 40  # decision steps

OBS_RANGE_X = 100.0  # m
OBS_RANGE_Y = 12.0  # m
OBS_RANGE_V = 30.0  # m/s
K_NEAREST = 4
OBS_ROW = 5  # presence, x, y, vx, vy
OBS_DIM = (K_NEAREST + 1) * OBS_ROW

SCENARIO_HIGHWAY = "highway"
SCENARIO_MERGE = "merge"


@dataclass(frozen=True)
class RoadConfig:
    lane_count: int = 3
    lane_width: float = 4.0
    road_length: float = 1000.0
    scenario: str = SCENARIO_HIGHWAY
    merge_ramp_end_x: float = 300.0

    def __post_init__(self) -> None:
        if self.lane_count < 2:
            raise ValueError("lane_count must be >= 2")
        if self.lane_width <= 0:
            raise ValueError("lane_width must be > 0")
        if self.road_length <= 0:
            raise ValueError("road_length must be > 0")
        if self.scenario not in (SCENARIO_HIGHWAY, SCENARIO_MERGE):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.scenario == SCENARIO_MERGE and not (
            0 < self.merge_ramp_end_x < self.road_length
        ):
            raise ValueError("merge needs 0 < merge_ramp_end_x < road_length")

    @property
    def ramp_lane(self) -> int | None:
        """Index of the on-ramp lane (merge scenario only)."""
        return self.lane_count - 1 if self.scenario == SCENARIO_MERGE else None

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width

    @property
    def y_bounds(self) -> tuple[float, float]:
        half = 0.5 * self.lane_width
        return -half, self.lane_center(self.lane_count - 1) + half


@dataclass(frozen=True)
class GhrParams:
    """Gazis-Herman-Rothery law a = c * v_f^m * (v_l - v_f) / gap^l."""

    c: float = 15.0
    m: float = 0.0
    l: float = 2.0
    tau: float = 0.0  # reaction delay, s, rounded to whole sub-steps

    def __post_init__(self) -> None:
        if self.c <= 0:
            raise ValueError("c must be > 0")
        if self.l < 0:
            raise ValueError("l must be >= 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")


@dataclass
class VehicleState:
    x: float
    y: float
    v: float
    a: float = 0.0
    lane_target: int = 0
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    crashed: bool = False
    target_speed: float = EGO_SPAWN_SPEED  # tracked when no leader constrains

    def copy(self) -> "VehicleState":
        return replace(self)


@dataclass(frozen=True)
class StepOutcome:
    observation: np.ndarray
    reward: RewardBreakdown
    terminated: bool
    truncated: bool
    info: dict


def _clamp(value: float, low: float, high: float) -> float:
    return low if value < low else high if value > high else value


def _speed_tracking_accel(v: float, v_target: float) -> float:
    return _clamp(K_P * (v_target - v), -A_MAX, A_MAX)


def ghr_acceleration(
    follower: VehicleState, leader: VehicleState | None, p: GhrParams
) -> float:
    """Commanded longitudinal acceleration for a following vehicle, in m/s^2.

    Without a leader the vehicle tracks its own target speed. A non-positive
    bumper gap means the pair is overlapping, which commands a full brake.
    The result is always clamped to [-A_MAX, A_MAX].
    """
    if leader is None:
        return _speed_tracking_accel(follower.v, follower.target_speed)
    gap = leader.x - follower.x - 0.5 * (leader.length + follower.length)
    if gap <= 0.0:
        return -A_MAX
    accel = p.c * follower.v**p.m * (leader.v - follower.v) / gap**p.l
    return _clamp(accel, -A_MAX, A_MAX)


def collision_check(vehicles: Sequence[VehicleState]) -> np.ndarray:
    """Pairwise axis-aligned box overlap; boxes that merely touch collide.

    Returns one boolean per vehicle. Symmetric by construction; the caller
    is responsible for folding the result into sticky `crashed` flags.
    """
    n = len(vehicles)
    hit = np.zeros(n, dtype=bool)
    for i in range(n):
        vi = vehicles[i]
        for j in range(i + 1, n):
            vj = vehicles[j]
            if abs(vi.x - vj.x) <= 0.5 * (vi.length + vj.length) and abs(
                vi.y - vj.y
            ) <= 0.5 * (vi.width + vj.width):
                hit[i] = True
                hit[j] = True
    return hit


def _lateral_velocity(vehicle: VehicleState, lane_width: float) -> float:
    dy = vehicle.lane_target * lane_width - vehicle.y
    if abs(dy) < 1e-12:
        return 0.0
    return math.copysign(LATERAL_RATE, dy)


def encode_observation(
    ego: VehicleState,
    traffic: Sequence[VehicleState],
    lane_width: float = 4.0,
) -> np.ndarray:
    """Fixed 25-float observation: ego row plus the 4 nearest vehicles.

    Row layout is [presence, x, y, vx, vy]. The ego row carries its own
    kinematics; neighbor rows are relative to the ego. Neighbors are ranked
    by |x - x_ego| with ties broken by lower index, and rows appear in that
    order. Everything is normalized by (100 m, 12 m, 30 m/s) and clamped to
    [-1, 1]; missing neighbor rows are all zero.
    """
    obs = np.zeros((K_NEAREST + 1, OBS_ROW), dtype=np.float64)
    ego_vy = _lateral_velocity(ego, lane_width)
    obs[0] = (
        1.0,
        ego.x / OBS_RANGE_X,
        ego.y / OBS_RANGE_Y,
        ego.v / OBS_RANGE_V,
        ego_vy / OBS_RANGE_V,
    )
    ranked = sorted(range(len(traffic)), key=lambda i: (abs(traffic[i].x - ego.x), i))
    for row, i in enumerate(ranked[:K_NEAREST], start=1):
        other = traffic[i]
        obs[row] = (
            1.0,
            (other.x - ego.x) / OBS_RANGE_X,
            (other.y - ego.y) / OBS_RANGE_Y,
            (other.v - ego.v) / OBS_RANGE_V,
            (_lateral_velocity(other, lane_width) - ego_vy) / OBS_RANGE_V,
        )
    np.clip(obs, -1.0, 1.0, out=obs)
    return obs.reshape(-1)


def _leader_of(
    subject: VehicleState, others: Iterable[VehicleState], lane_width: float
) -> VehicleState | None:
    """Nearest vehicle strictly ahead and within half a lane laterally."""
    best = None
    best_dx = math.inf
    half = 0.5 * lane_width
    for other in others:
        if other is subject:
            continue
        dx = other.x - subject.x
        if dx <= 0.0 or abs(other.y - subject.y) >= half:
            continue
        if dx < best_dx:
            best = other
            best_dx = dx
    return best


def _bumper_gap(follower: VehicleState, leader: VehicleState) -> float:
    return leader.x - follower.x - 0.5 * (leader.length + follower.length)


class HighwayEnv:
    """One independent, single-threaded simulation instance."""

    def __init__(
        self,
        road: RoadConfig | None = None,
        ghr: GhrParams | None = None,
        weights: RewardWeights | None = None,
        reward_params: RewardParams | None = None,
        n_traffic: int = DEFAULT_N_TRAFFIC,
        horizon: int = DEFAULT_HORIZON,
    ):
        if n_traffic < 0:
            raise ValueError("n_traffic must be >= 0")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.road = road if road is not None else RoadConfig()
        self.ghr = ghr if ghr is not None else GhrParams()
        self.weights = weights if weights is not None else RewardWeights()
        self.reward_params = reward_params if reward_params is not None else RewardParams()
        self.n_traffic = n_traffic
        self.horizon = horizon

        self._ego: VehicleState | None = None
        self._traffic: list[VehicleState] = []
        self._delay_queues: list[deque] = []
        self._delay_substeps = 0
        self._ego_target_speed = EGO_SPAWN_SPEED
        self._steps = 0
        self._substeps = 0
        self._off_road = False
        self._active = False

    # -- state access -------------------------------------------------------

    @property
    def ego(self) -> VehicleState:
        if self._ego is None:
            raise EnvStateError("environment has not been reset")
        return self._ego

    @property
    def traffic(self) -> list[VehicleState]:
        return self._traffic

    @property
    def vehicles(self) -> list[VehicleState]:
        return [self.ego, *self._traffic]

    @property
    def sim_time(self) -> float:
        return self._substeps * DT

    @property
    def ego_target_speed(self) -> float:
        return self._ego_target_speed

    @property
    def episode_active(self) -> bool:
        return self._active

    def ego_lane(self) -> int:
        lane = int(round(self.ego.y / self.road.lane_width))
        return max(0, min(self.road.lane_count - 1, lane))

    def ego_leader_gap(self) -> float | None:
        """Bumper gap to the ego's current leader, None when unconstrained."""
        leader = _leader_of(self.ego, self._traffic, self.road.lane_width)
        if leader is None:
            return None
        gap = _bumper_gap(self.ego, leader)
        return gap if gap > 0.0 else None

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int, road: RoadConfig | None = None) -> np.ndarray:
        """Spawn a fresh episode; identical (seed, road) gives identical state.

        The ego starts at x = 0 at 25 m/s: in the ramp lane for the merge
        scenario, otherwise in a seeded lane. Traffic spawns ahead of the ego
        in the through lanes at seeded non-overlapping positions with speeds
        uniform in [20, 28] m/s; each vehicle tracks its spawn speed when
        unconstrained. Draw order (ego lane, then per vehicle lane/x until the
        spacing fits, then speed) is part of the determinism contract.
        """
        if road is not None:
            self.road = road
        rng = np.random.default_rng(seed)
        ramp = self.road.ramp_lane

        if ramp is not None:
            ego_lane = ramp
        else:
            ego_lane = int(rng.integers(self.road.lane_count))
        self._ego = VehicleState(
            x=0.0,
            y=self.road.lane_center(ego_lane),
            v=EGO_SPAWN_SPEED,
            lane_target=ego_lane,
            target_speed=EGO_SPAWN_SPEED,
        )
        self._ego_target_speed = EGO_SPAWN_SPEED

        spawn_lanes = [l for l in range(self.road.lane_count) if l != ramp]
        x_high = min(TRAFFIC_SPAWN_X_HIGH, 0.5 * self.road.road_length)
        self._traffic = []
        for _ in range(self.n_traffic):
            for _attempt in range(1000):
                lane = spawn_lanes[int(rng.integers(len(spawn_lanes)))]
                x = float(rng.uniform(TRAFFIC_SPAWN_X_LOW, x_high))
                y = self.road.lane_center(lane)
                if self._spawn_fits(x, y):
                    break
            else:
                raise RuntimeError("could not place traffic without overlap")
            v = float(rng.uniform(TRAFFIC_SPEED_LOW, TRAFFIC_SPEED_HIGH))
            self._traffic.append(
                VehicleState(x=x, y=y, v=v, lane_target=lane, target_speed=v)
            )

        self._delay_substeps = int(round(self.ghr.tau / DT))
        self._delay_queues = [
            deque([0.0] * self._delay_substeps, maxlen=max(self._delay_substeps, 1))
            for _ in self._traffic
        ]
        self._steps = 0
        self._substeps = 0
        self._off_road = False
        self._active = True
        return encode_observation(self._ego, self._traffic, self.road.lane_width)

    def add_traffic_vehicle(self, vehicle: VehicleState) -> None:
        """Insert an extra traffic vehicle into the running episode.

        Meant for constructing specific situations in demos and tests; normal
        episodes get their traffic from reset().
        """
        if self._ego is None:
            raise EnvStateError("environment has not been reset")
        self._traffic.append(vehicle)
        self._delay_queues.append(
            deque([0.0] * self._delay_substeps, maxlen=max(self._delay_substeps, 1))
        )

    def _spawn_fits(self, x: float, y: float) -> bool:
        min_center_dist = MIN_SPAWN_GAP + VEHICLE_LENGTH
        for other in [self._ego, *self._traffic]:
            if other is None:
                continue
            same_lane = abs(other.y - y) < 0.5 * self.road.lane_width
            if same_lane and abs(other.x - x) < min_center_dist:
                return False
        return True

    def step(self, action: EgoAction | int) -> StepOutcome:
        """Apply one meta-action and advance a full decision period."""
        if self._ego is None:
            raise EnvStateError("environment has not been reset")
        if not self._active:
            raise EpisodeFinishedError(
                "episode already finished; call reset() before stepping again"
            )
        action = EgoAction(action)
        ego = self._ego
        prev_view = EgoPeriodView(
            speed=ego.v, lane_target=ego.lane_target, crashed=ego.crashed
        )

        if action == EgoAction.FASTER:
            self._ego_target_speed = _clamp(
                self._ego_target_speed + TARGET_SPEED_STEP,
                TARGET_SPEED_MIN,
                TARGET_SPEED_MAX,
            )
        elif action == EgoAction.SLOWER:
            self._ego_target_speed = _clamp(
                self._ego_target_speed - TARGET_SPEED_STEP,
                TARGET_SPEED_MIN,
                TARGET_SPEED_MAX,
            )
        elif action == EgoAction.LANE_LEFT:
            if ego.lane_target > 0:
                ego.lane_target -= 1
        elif action == EgoAction.LANE_RIGHT:
            if ego.lane_target < self.road.lane_count - 1:
                ego.lane_target += 1

        abs_accel_sum = 0.0
        for _ in range(SUBSTEPS):
            self._substep()
            abs_accel_sum += abs(ego.a)

        self._steps += 1
        terminated = ego.crashed or self._off_road
        truncated = (not terminated) and self._steps >= self.horizon
        if terminated or truncated:
            self._active = False

        next_view = EgoPeriodView(
            speed=ego.v,
            lane_target=ego.lane_target,
            crashed=ego.crashed,
            leader_gap=None if ego.crashed else self.ego_leader_gap(),
            mean_abs_accel=abs_accel_sum / SUBSTEPS,
        )
        breakdown = compute_reward(
            prev_view, action, next_view, self.weights, self.reward_params
        )
        info = {
            "ego_speed": ego.v,
            "ego_lane": self.ego_lane(),
            "crashed": ego.crashed,
            "off_road": self._off_road,
            "sim_time": self.sim_time,
        }
        return StepOutcome(
            observation=encode_observation(ego, self._traffic, self.road.lane_width),
            reward=breakdown,
            terminated=terminated,
            truncated=truncated,
            info=info,
        )

    # -- integration --------------------------------------------------------

    def _forced_ramp_brake(self, vehicle: VehicleState) -> bool:
        ramp = self.road.ramp_lane
        return (
            ramp is not None
            and vehicle.lane_target == ramp
            and vehicle.x >= self.road.merge_ramp_end_x
        )

    def _substep(self) -> None:
        ego = self._ego
        assert ego is not None
        everyone = [ego, *self._traffic]

        # Phase 1: accelerations from a synchronous state snapshot.
        if ego.crashed:
            ego.a = 0.0
        elif self._forced_ramp_brake(ego):
            ego.a = -A_MAX
        else:
            ego.a = _speed_tracking_accel(ego.v, self._ego_target_speed)

        for idx, vehicle in enumerate(self._traffic):
            if vehicle.crashed:
                vehicle.a = 0.0
                continue
            if self._forced_ramp_brake(vehicle):
                vehicle.a = -A_MAX
                continue
            leader = _leader_of(vehicle, everyone, self.road.lane_width)
            command = ghr_acceleration(vehicle, leader, self.ghr)
            if self._delay_substeps > 0:
                queue = self._delay_queues[idx]
                delayed = queue[0]
                queue.append(command)
                command = delayed
            vehicle.a = command

        # Phase 2: integrate every non-crashed vehicle.
        for vehicle in everyone:
            if vehicle.crashed:
                continue
            vehicle.v = _clamp(vehicle.v + vehicle.a * DT, 0.0, V_LIMIT)
            vehicle.x += vehicle.v * DT
            target_y = self.road.lane_center(vehicle.lane_target)
            dy = _clamp(target_y - vehicle.y, -LATERAL_RATE * DT, LATERAL_RATE * DT)
            vehicle.y += dy

        hit = collision_check(everyone)
        for vehicle, flag in zip(everyone, hit):
            if flag and not vehicle.crashed:
                vehicle.crashed = True
                vehicle.v = 0.0
                vehicle.a = 0.0

        low, high = self.road.y_bounds
        if not self._off_road and not (low <= ego.y <= high):
            self._off_road = True
        self._substeps += 1
