"""Fly kinematics, the egocentric retina, and the synthetic-fly generator.

Motion vectors have 8 entries, all in the fly's own frame of reference::

    0 forward step (mm)        4 right wing angle (rad, absolute)
    1 sideways step (mm)       5 left wing length change (mm)
    2 heading change (rad)     6 right wing length change (mm)
    3 left wing angle (rad)    7 body length change (mm)

Sensory vectors concatenate two retina channels of ``sectors`` entries each:
other flies (and static discs) first, chamber walls second. Sector 0 is
centred on the fly's heading and indices increase counter-clockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import AgentTrack, TrialData
from .exceptions import ContractError

MOTION_NAMES = ("forward", "sideways", "turn", "wing_angle_l", "wing_angle_r",
                "d_wing_len_l", "d_wing_len_r", "d_body_len")
MOTION_DIM = 8
WING_MAX = math.pi / 2
SYNTHFLY_CLASSES = ["left_wing_ext", "right_wing_ext"]


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + math.pi, 2 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass
class FlyPose:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    wing_angle_l: float = 0.0
    wing_angle_r: float = 0.0
    wing_len_l: float = 2.5
    wing_len_r: float = 2.5
    body_len: float = 2.8

    def as_array(self):
        return np.array([self.x, self.y, self.heading, self.wing_angle_l, self.wing_angle_r,
                         self.wing_len_l, self.wing_len_r, self.body_len])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))


@dataclass
class Chamber:
    """Rectangle ``width x height`` or circle of ``radius``, centred on the origin.

    ``objects`` holds static discs ``(cx, cy, radius)`` that appear on the
    fly channel of the retina.
    """

    shape: str = "rect"
    width: float = 120.0
    height: float = 80.0
    radius: float = 0.0
    objects: list = field(default_factory=list)

    def __post_init__(self):
        if self.shape == "rect":
            if self.width <= 0 or self.height <= 0:
                raise ContractError("chamber width and height must be positive")
        elif self.shape == "circle":
            if self.radius <= 0:
                raise ContractError("chamber radius must be positive")
        else:
            raise ContractError(f"unknown chamber shape {self.shape!r}")
        self.objects = [tuple(float(v) for v in o) for o in self.objects]

    def contains(self, x, y, margin=0.0):
        """True where ``(x, y)`` lies inside the chamber scaled by ``1 + margin``."""
        x = np.asarray(x)
        y = np.asarray(y)
        s = 1.0 + margin
        if self.shape == "rect":
            return (np.abs(x) <= s * self.width / 2) & (np.abs(y) <= s * self.height / 2)
        return np.hypot(x, y) <= s * self.radius

    def ray_distance(self, x, y, angles):
        """Distance from ``(x, y)`` to the boundary along each global angle.

        Zero for points outside the chamber.
        """
        angles = np.asarray(angles, dtype=np.float64)
        if not self.contains(x, y):
            return np.zeros_like(angles)
        c, s = np.cos(angles), np.sin(angles)
        if self.shape == "rect":
            a, b = self.width / 2, self.height / 2
            with np.errstate(divide="ignore", invalid="ignore"):
                tx = np.where(c > 0, (a - x) / c, np.where(c < 0, (-a - x) / c, np.inf))
                ty = np.where(s > 0, (b - y) / s, np.where(s < 0, (-b - y) / s, np.inf))
            return np.maximum(np.minimum(tx, ty), 0.0)
        pu = x * c + y * s
        disc = pu * pu - (x * x + y * y - self.radius ** 2)
        return np.maximum(-pu + np.sqrt(np.maximum(disc, 0.0)), 0.0)

    def wall_distance(self, x, y):
        """Shortest distance to the boundary (negative outside)."""
        if self.shape == "rect":
            return min(self.width / 2 - abs(x), self.height / 2 - abs(y))
        return self.radius - math.hypot(x, y)

    def bounds(self):
        if self.shape == "rect":
            return -self.width / 2, -self.height / 2, self.width / 2, self.height / 2
        return -self.radius, -self.radius, self.radius, self.radius

    def to_meta(self):
        meta = {"chamber_shape": self.shape, "chamber_width": self.width,
                "chamber_height": self.height, "chamber_radius": self.radius}
        if self.objects:
            meta["chamber_objects"] = ";".join(",".join(repr(v) for v in o) for o in self.objects)
        return meta

    @classmethod
    def from_meta(cls, meta):
        objs = []
        if meta.get("chamber_objects"):
            objs = [tuple(float(v) for v in o.split(",")) for o in meta["chamber_objects"].split(";")]
        return cls(meta.get("chamber_shape", "rect"), float(meta.get("chamber_width", 120.0)),
                   float(meta.get("chamber_height", 80.0)), float(meta.get("chamber_radius", 0.0)), objs)


def synthfly_chamber():
    """Default 120 x 80 mm arena with a 5 mm disc at its centre."""
    return Chamber("rect", 120.0, 80.0, objects=[(0.0, 0.0, 5.0)])


@dataclass(frozen=True)
class RetinaConfig:
    sectors: int = 72
    sector_width: float = 5.0
    fly_decay: float = 20.0
    wall_decay: float = 20.0
    fly_body_radius: float = 1.0

    def __post_init__(self):
        if abs(self.sectors * self.sector_width - 360.0) > 1e-9:
            raise ContractError("sectors x sector_width must cover 360 degrees")

    @property
    def size(self):
        return 2 * self.sectors

    def centers(self):
        return np.deg2rad(np.arange(self.sectors) * self.sector_width)


def apply_motion(pose, x):
    """Move ``pose`` by motion vector ``x`` (translation uses the old heading)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (MOTION_DIM,):
        raise ContractError(f"motion vector must have {MOTION_DIM} entries")
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    return FlyPose(
        x=pose.x + x[0] * c - x[1] * s,
        y=pose.y + x[0] * s + x[1] * c,
        heading=wrap_angle(pose.heading + x[2]),
        wing_angle_l=min(max(float(x[3]), 0.0), WING_MAX),
        wing_angle_r=min(max(float(x[4]), 0.0), WING_MAX),
        wing_len_l=pose.wing_len_l + x[5],
        wing_len_r=pose.wing_len_r + x[6],
        body_len=pose.body_len + x[7],
    )


def motion_between(p0, p1):
    """Motion vector that takes ``p0`` to ``p1`` (inverse of :func:`apply_motion`)."""
    dx, dy = p1.x - p0.x, p1.y - p0.y
    c, s = math.cos(p0.heading), math.sin(p0.heading)
    return np.array([dx * c + dy * s, -dx * s + dy * c, wrap_angle(p1.heading - p0.heading),
                     p1.wing_angle_l, p1.wing_angle_r, p1.wing_len_l - p0.wing_len_l,
                     p1.wing_len_r - p0.wing_len_r, p1.body_len - p0.body_len])


def compute_retina(agent, others, chamber, cfg=RetinaConfig()):
    """Egocentric retina of ``agent``: ``2 * sectors`` intensities in [0, 1].

    Each other fly (radius ``cfg.fly_body_radius``) and each chamber object
    covers the heading-relative interval ``alpha +- atan(r / d)``; every sector
    whose span overlaps it gets ``exp(-d / fly_decay)``, max-pooled over
    sources. The wall channel casts one ray per sector centre.
    """
    n = cfg.sectors
    half_w = math.radians(cfg.sector_width) / 2
    centers = cfg.centers()
    flies = np.zeros(n)
    sources = [(o.x, o.y, cfg.fly_body_radius) for o in others]
    sources += list(chamber.objects)
    for sx, sy, r in sources:
        dx, dy = sx - agent.x, sy - agent.y
        d = math.hypot(dx, dy)
        half = math.pi if d <= r else math.atan(r / d)
        alpha = math.atan2(dy, dx) - agent.heading
        diff = np.abs(wrap_angle(centers - alpha))
        hit = diff < half + half_w
        np.maximum(flies, np.where(hit, math.exp(-d / cfg.fly_decay), 0.0), out=flies)
    walls = np.exp(-chamber.ray_distance(agent.x, agent.y, centers + agent.heading) / cfg.wall_decay)
    return np.concatenate([flies, walls])


# --- synthetic fly -----------------------------------------------------------

@dataclass(frozen=True)
class SynthFlyLaws:
    """Parameters of the five control laws driving a synthetic fly.

    1. forward speed: AR(1) with stationary Normal(speed_mean, speed_sd),
       clipped to [0, speed_max]
    2. heading jitter: AR(1) with stationary Normal(0, jitter_sd_deg)
    3. wall avoidance: when the shortest ray over heading +- ``wall_fan_deg``
       is below ``wall_clearance``, turn ``wall_turn_deg`` per frame toward
       the side with more room and cap the step at a quarter of the clearance
    4. object avoidance: within ``object_trigger`` mm of a disc ahead, pick
       left or right with p=0.5, turn ``object_turn_deg`` per frame that way
       until clear; the step is capped at a quarter of the gap while the disc
       is within 45 degrees of the heading
    5. wing extension: with ``wing_rate`` per idle frame, extend the left or
       right wing (p=0.5) to ``wing_angle_deg`` over ``wing_ramp`` frames,
       hold ``wing_hold`` frames, retract over ``wing_ramp`` frames
    """

    speed_mean: float = 1.0
    speed_sd: float = 0.3
    speed_max: float = 2.0
    speed_ar: float = 0.9
    jitter_sd_deg: float = 5.0
    jitter_ar: float = 0.5
    sideways_sd: float = 0.05
    sideways_ar: float = 0.8
    wall_clearance: float = 8.0
    wall_fan_deg: float = 30.0
    wall_turn_deg: float = 15.0
    object_trigger: float = 10.0
    object_turn_deg: float = 10.0
    wing_rate: float = 0.01
    wing_angle_deg: float = 60.0
    wing_ramp: int = 5
    wing_hold: int = 20
    length_sd: float = 0.01
    length_ar: float = 0.8
    length_pull: float = 0.05


@dataclass
class SynthFlyEvent:
    frame: int
    kind: str          # "wing" or "object_turn"
    side: str          # "left" or "right"


@dataclass
class SynthFlyRun:
    poses: np.ndarray   # (T + 1, 8) pose arrays, row 0 is the starting pose
    x: np.ndarray       # (T, 8)
    v: np.ndarray       # (T, 2 * sectors)
    labels: np.ndarray  # (T, 2) left / right wing extension
    events: list


def _ar_step(prev, phi, sd, rng):
    return phi * prev + math.sqrt(1.0 - phi * phi) * sd * rng.standard_normal()


def _wing_profile(laws):
    peak = math.radians(laws.wing_angle_deg)
    up = [peak * (k + 1) / laws.wing_ramp for k in range(laws.wing_ramp)]
    down = [peak * (laws.wing_ramp - 1 - k) / laws.wing_ramp for k in range(laws.wing_ramp)]
    return up + [peak] * laws.wing_hold + down


def _random_start(chamber, laws, rng):
    x0, y0, x1, y1 = chamber.bounds()
    margin = 2 * laws.wall_clearance
    while True:
        x = rng.uniform(x0 + margin, x1 - margin)
        y = rng.uniform(y0 + margin, y1 - margin)
        if chamber.wall_distance(x, y) < margin:
            continue
        if all(math.hypot(x - ox, y - oy) > r + laws.object_trigger for ox, oy, r in chamber.objects):
            return FlyPose(x, y, wrap_angle(rng.uniform(-math.pi, math.pi)))


def _blocked(chamber, pose):
    if chamber.wall_distance(pose.x, pose.y) < 0.1:
        return True
    return any(math.hypot(pose.x - ox, pose.y - oy) < r + 0.1 for ox, oy, r in chamber.objects)


def run_synthfly(n_frames, seed=0, chamber=None, laws=SynthFlyLaws(), retina=RetinaConfig()):
    """Simulate one synthetic fly for ``n_frames`` frames.

    Frame ``i`` pairs the pose after the ``i``-th move with the motion that
    produced it and the retina seen from that pose.
    """
    if n_frames < 1:
        raise ContractError("n_frames must be at least 1")
    chamber = synthfly_chamber() if chamber is None else chamber
    rng = np.random.default_rng(seed)
    pose = _random_start(chamber, laws, rng)
    profile = _wing_profile(laws)
    speed_dev = 0.0
    jitter = 0.0
    sideways = 0.0
    len_noise = np.zeros(3)
    nominal = np.array([pose.wing_len_l, pose.wing_len_r, pose.body_len])
    wall_side = 0
    obj_side = 0
    wing_side, wing_t = 0, -1
    poses = [pose.as_array()]
    xs, vs, labels, events = [], [], [], []
    jitter_sd = math.radians(laws.jitter_sd_deg)
    for i in range(n_frames):
        speed_dev = _ar_step(speed_dev, laws.speed_ar, laws.speed_sd, rng)
        jitter = _ar_step(jitter, laws.jitter_ar, jitter_sd, rng)
        sideways = _ar_step(sideways, laws.sideways_ar, laws.sideways_sd, rng)
        for k in range(3):
            len_noise[k] = _ar_step(len_noise[k], laws.length_ar, laws.length_sd, rng)
        speed = min(max(laws.speed_mean + speed_dev, 0.0), laws.speed_max)
        side_u = rng.random()
        wing_u = rng.random()
        wing_pick = rng.random()

        # law 3: walls
        fan = pose.heading + np.radians([-laws.wall_fan_deg, 0.0, laws.wall_fan_deg])
        ahead = float(chamber.ray_distance(pose.x, pose.y, fan).min())
        turn = 0.0
        if ahead < laws.wall_clearance:
            if wall_side == 0:
                left, right = chamber.ray_distance(pose.x, pose.y, [pose.heading + math.pi / 2,
                                                                    pose.heading - math.pi / 2])
                wall_side = 1 if left >= right else -1
            turn = wall_side * math.radians(laws.wall_turn_deg)
            speed = min(speed, 0.25 * ahead)
        else:
            wall_side = 0
        # law 4: objects
        near = False
        for ox, oy, r in chamber.objects:
            dx, dy = ox - pose.x, oy - pose.y
            rel = wrap_angle(math.atan2(dy, dx) - pose.heading)
            gap = math.hypot(dx, dy) - r
            if gap < laws.object_trigger and abs(rel) < math.pi / 2:
                near = True
                if abs(rel) < math.pi / 4:
                    speed = min(speed, 0.25 * max(gap, 0.0))
        if near:
            if obj_side == 0:
                obj_side = 1 if side_u < 0.5 else -1
                events.append(SynthFlyEvent(i, "object_turn", "left" if obj_side > 0 else "right"))
            if wall_side == 0:
                turn = obj_side * math.radians(laws.object_turn_deg)
        else:
            obj_side = 0
        # law 5: wings
        if wing_t < 0 and wing_u < laws.wing_rate:
            wing_side = 1 if wing_pick < 0.5 else -1
            wing_t = 0
            events.append(SynthFlyEvent(i, "wing", "left" if wing_side > 0 else "right"))
        wl = wr = 0.0
        lab = [False, False]
        if wing_t >= 0:
            if wing_side > 0:
                wl, lab[0] = profile[wing_t], True
            else:
                wr, lab[1] = profile[wing_t], True
            wing_t += 1
            if wing_t >= len(profile):
                wing_t = -1

        lens = np.array([pose.wing_len_l, pose.wing_len_r, pose.body_len])
        dlen = laws.length_pull * (nominal - lens) + len_noise
        x = np.array([speed, sideways, jitter + turn, wl, wr, *dlen])
        new = apply_motion(pose, x)
        # containment guard: shrink the translation if it would leave the arena
        # or enter a disc
        shrink = 1.0
        while _blocked(chamber, new) and shrink > 1e-3:
            shrink *= 0.5
            x[0] *= 0.5
            x[1] *= 0.5
            new = apply_motion(pose, x)
        pose = new
        poses.append(pose.as_array())
        xs.append(motion_between(FlyPose.from_array(poses[-2]), pose))
        vs.append(compute_retina(pose, [], chamber, retina))
        labels.append(lab)
    return SynthFlyRun(np.array(poses), np.array(xs), np.array(vs), np.array(labels, bool), events)


def synthfly_generate(n_frames, seed=0, chamber=None, laws=SynthFlyLaws(), retina=RetinaConfig(),
                      trial_id=None):
    """One fully labeled SynthFly trial with pose columns kept as extras."""
    chamber = synthfly_chamber() if chamber is None else chamber
    run = run_synthfly(n_frames, seed, chamber, laws, retina)
    poses = run.poses[1:]
    extra = {"pos_x": poses[:, 0], "pos_y": poses[:, 1], "heading": poses[:, 2],
             "_x_names": [f"x_{n}" for n in MOTION_NAMES]}
    track = AgentTrack(run.x, run.v, run.labels, np.ones(n_frames, bool), agent_id="0", extra=extra)
    meta = chamber.to_meta()
    meta["seed"] = seed
    return TrialData(trial_id or f"synthfly_{seed}", [track], list(SYNTHFLY_CLASSES), meta)
