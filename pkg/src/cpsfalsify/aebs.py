"""Closed-loop emergency braking on a straight road.

One ego vehicle drives toward a (possibly absent) stationary obstacle. Each
control period a 16x16 grayscale camera image is rendered, a perception
component labels it cow / not-cow, and a bang-bang controller either brakes
hard or regulates toward a cruise speed. Lateral offset only changes the
image; collision geometry is purely longitudinal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import nn
from .data import Dataset
from .nn import ModelParams
from .stl import Globally, Interval, Not, Pred, Trace

NOT_COW, COW = 0, 1
LABEL_NAMES = {NOT_COW: "not-cow", COW: "cow"}
NO_OBSTACLE_DIST = 1e9

WIDTH = HEIGHT = 16
HORIZON_ROW = 6
SKY, ROAD, OBSTACLE = 0.8, 0.35, 0.95
BLOB_SCALE = 48.0  # blob side in pixels at 1 m; side = BLOB_SCALE / distance
LATERAL_PIXELS = 5.0
MIN_RENDER_DIST = 0.5

RANGES = {
    "x_disp": (-1.0, 1.0),
    "z_dist": (5.0, 60.0),
    "brightness": (0.2, 1.0),
    "v0": (0.0, 30.0),
}


@dataclass(frozen=True)
class EnvConfig:
    obstacle_present: bool = True
    x_disp: float = 0.0
    z_dist: float = 30.0
    brightness: float = 1.0
    v0: float = 10.0

    def __post_init__(self):
        for name, (lo, hi) in RANGES.items():
            v = getattr(self, name)
            if not (math.isfinite(v) and lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return {"obstacle_present": bool(self.obstacle_present), "x_disp": self.x_disp,
                "z_dist": self.z_dist, "brightness": self.brightness, "v0": self.v0}


@dataclass(frozen=True)
class VehicleState:
    ego_pos: float
    ego_vel: float
    obs_pos: float

    def __post_init__(self):
        if self.ego_vel < 0:
            raise ValueError("ego velocity must be non-negative")

    @classmethod
    def initial(cls, env: EnvConfig) -> "VehicleState":
        return cls(0.0, env.v0, env.z_dist)


@dataclass(frozen=True)
class Real:
    model: ModelParams

    def __post_init__(self):
        if self.model.input_width != WIDTH * HEIGHT:
            raise ValueError(f"perception model must take {WIDTH * HEIGHT} inputs")


@dataclass(frozen=True)
class Perfect:
    pass


@dataclass(frozen=True)
class CompletelyWrong:
    pass


SensorMode = Union[Real, Perfect, CompletelyWrong]


def as_sensor(model) -> SensorMode:
    return Real(model) if isinstance(model, ModelParams) else model


@dataclass(frozen=True)
class ControllerConfig:
    tau: float = 0.5
    a_max: float = 5.0
    a_cruise: float = 1.0
    v_target: float = 10.0

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.a_max <= 0 or self.a_cruise <= 0 or self.v_target < 0:
            raise ValueError("controller accelerations must be positive")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    horizon: float = 5.0
    controller: ControllerConfig = field(default_factory=ControllerConfig)

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


_BACKGROUND = np.vstack([np.full((HORIZON_ROW, WIDTH), SKY),
                         np.full((HEIGHT - HORIZON_ROW, WIDTH), ROAD)])


def _coverage(n: int, a: float, b: float) -> np.ndarray:
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(edges + 1.0, b) - np.maximum(edges, a), 0.0, 1.0)


def obstacle_coverage(env: EnvConfig, distance: float) -> np.ndarray:
    """Fraction of each pixel covered by the obstacle (all zeros if absent)."""
    if not env.obstacle_present:
        return np.zeros((HEIGHT, WIDTH))
    side = min(BLOB_SCALE / max(distance, MIN_RENDER_DIST), float(WIDTH))
    cx = WIDTH / 2.0 + env.x_disp * LATERAL_PIXELS
    cy = HORIZON_ROW + 0.5 + 0.2 * side
    cov_x = _coverage(WIDTH, cx - side / 2, cx + side / 2)
    cov_y = _coverage(HEIGHT, cy - side / 2, cy + side / 2)
    return np.outer(cov_y, cov_x)


def render_scene(env: EnvConfig, state: VehicleState) -> np.ndarray:
    """Grayscale image in [0, 1], shape (16, 16)."""
    if env.obstacle_present and state.obs_pos < state.ego_pos:
        raise ValueError("ego vehicle is past the obstacle")
    cov = obstacle_coverage(env, state.obs_pos - state.ego_pos)
    img = _BACKGROUND * (1.0 - cov) + OBSTACLE * cov
    return img * env.brightness


def classify_scene(mode: SensorMode, env: EnvConfig, image: np.ndarray) -> tuple:
    truth = COW if env.obstacle_present else NOT_COW
    if isinstance(mode, Perfect):
        return truth, 1.0
    if isinstance(mode, CompletelyWrong):
        return 1 - truth, 1.0
    p = nn.predict_proba(mode.model, np.asarray(image).ravel())
    label = int(np.argmax(p))
    return label, float(p[label])


def controller(detection: int, confidence: float, state: VehicleState,
               cfg: ControllerConfig = ControllerConfig()) -> float:
    if detection == COW and confidence >= cfg.tau:
        return -cfg.a_max if state.ego_vel > 0 else 0.0
    return float(np.clip(cfg.v_target - state.ego_vel, -cfg.a_cruise, cfg.a_cruise))


def step_dynamics(state: VehicleState, accel: float, dt: float) -> VehicleState:
    """Semi-implicit Euler with no reversing."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    vel = max(0.0, state.ego_vel + accel * dt)
    return VehicleState(state.ego_pos + vel * dt, vel, state.obs_pos)


def simulate(env: EnvConfig, mode: SensorMode, cfg: SimConfig = SimConfig()) -> Trace:
    """Run the loop render -> classify -> control -> integrate.

    On contact the ego vehicle is pinned to the obstacle; the ``speed``
    sample at the contact instant is the impact speed and zero afterwards.
    """
    mode = as_sensor(mode)
    n = cfg.steps + 1
    dist = np.empty(n)
    speed = np.empty(n)
    det = np.empty(n)
    conf = np.empty(n)
    state = VehicleState.initial(env)
    crashed = False
    for k in range(n):
        dist[k] = state.obs_pos - state.ego_pos if env.obstacle_present else NO_OBSTACLE_DIST
        speed[k] = state.ego_vel
        if crashed:
            det[k], conf[k] = det[k - 1], conf[k - 1]
            state = VehicleState(state.ego_pos, 0.0, state.obs_pos)
            continue
        label, c = classify_scene(mode, env, render_scene(env, state))
        det[k], conf[k] = float(label == COW), c
        if k == n - 1:
            break
        accel = controller(label, c, state, cfg.controller)
        state = step_dynamics(state, accel, cfg.dt)
        if env.obstacle_present and state.ego_pos >= state.obs_pos:
            crashed = True
            state = VehicleState(state.obs_pos, state.ego_vel, state.obs_pos)
    return Trace({"dist": dist, "speed": speed, "detection": det, "confidence": conf}, cfg.dt)


def impact_speed(trace: Trace) -> float:
    """Speed at first contact (distance reaches 0), or 0 without contact."""
    hit = np.nonzero(trace["dist"] <= 0.0)[0]
    return float(trace["speed"][hit[0]]) if len(hit) else 0.0


def aebs_spec(horizon: float, safe_gap: float = 2.0):
    """G[0,T](dist >= safe_gap)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    return Globally(Interval(0.0, float(horizon)),
                    Not(Pred((("dist", 1.0),), -float(safe_gap), True)))


def sample_env(rng: np.random.Generator, obstacle: bool,
               brightness_range: Optional[tuple] = None) -> EnvConfig:
    lo, hi = brightness_range or RANGES["brightness"]
    return EnvConfig(obstacle, float(rng.uniform(-1.0, 1.0)), float(rng.uniform(5.0, 60.0)),
                     float(rng.uniform(lo, hi)))


def make_training_set(n: int, seed: int, *, distance_range: tuple = (3.0, 60.0),
                      noise: float = 0.02, cow_brightness: Optional[tuple] = None,
                      empty_brightness: Optional[tuple] = None) -> Dataset:
    """Rendered scenes, ``n // 2`` with an obstacle, labelled by ground truth.

    Each scene is rendered at a random current gap in ``distance_range``.
    ``cow_brightness`` / ``empty_brightness`` narrow the brightness range per
    class, which is how a spuriously brightness-correlated set is built.
    """
    if n < 2:
        raise ValueError("need at least two examples")
    rng = np.random.default_rng(seed)
    labels = np.array([COW] * (n // 2) + [NOT_COW] * (n - n // 2))
    rng.shuffle(labels)
    X = np.empty((n, WIDTH * HEIGHT))
    for i, lab in enumerate(labels):
        env = sample_env(rng, bool(lab == COW),
                         cow_brightness if lab == COW else empty_brightness)
        gap = float(rng.uniform(*distance_range))
        img = render_scene(env, VehicleState(0.0, 0.0, gap))
        if noise > 0:
            img = img + rng.normal(0.0, noise, img.shape)
        X[i] = np.clip(img, 0.0, 1.0).ravel()
    return Dataset(X, labels)
