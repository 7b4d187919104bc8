"""Kinematic quadruped: gait parameters in, contacts/observations/keypoints out.

The simulator is deliberately dynamics-free.  Feet follow a phase clock
(stance sweep backwards, cycloidal swing forwards), joint angles come from
planar two-link inverse kinematics, and the body carries a scripted
first-order roll/pitch/lateral response to stance imbalance and pushes.
Everything is vectorised over a leading batch axis so the optimizer can
roll out a whole population in one call.
"""
import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsl.observation import LEG_ORDER, Observation
from .errors import InputError, ParamInfeasible
from .gaits import GaitTemplate, cycle_fraction, reference_gait  # noqa: F401  (re-exported)
from .ingest import KeypointTrajectory

DT = 0.02  # 50 Hz, the deployed policy rate

BOUNDS = {
    "frequency": (0.5, 4.0),
    "duty": (0.2, 0.9),
    "phase_fl": (0.0, 1.0),
    "phase_fr": (0.0, 1.0),
    "phase_rl": (0.0, 1.0),
    "phase_rr": (0.0, 1.0),
    "step_length": (0.0, 0.4),
    "step_height": (0.0, 0.15),
    "base_height_target": (0.15, 0.45),
    "bob_amplitude": (0.0, 0.05),
    "forward_speed": (0.0, 3.0),
}
PARAM_NAMES = tuple(BOUNDS)
PHASE_SLICE = slice(2, 6)
LOWER = np.array([bound[0] for bound in BOUNDS.values()])
UPPER = np.array([bound[1] for bound in BOUNDS.values()])

TERMINATION_HEIGHT_FRACTION = 0.5
TERMINATION_ANGLE = 0.8  # rad, roll or pitch

# scripted body response
ATTITUDE_TAU = 0.1        # s, roll/pitch first-order lag
LATERAL_TAU = 0.3         # s, lateral velocity lag
HEIGHT_TAU = 0.1          # s, decay of an initial height offset
ROLL_PER_NEWTON = 0.005   # rad/N steady-state roll under a lateral push
LATVEL_PER_NEWTON = 0.004  # (m/s)/N
HALF_WIDTH = 0.15         # m, lever arm for lateral stance imbalance


@dataclass
class GaitParameters:
    frequency: float = 2.0
    duty: float = 0.5
    phase: tuple = (0.0, 0.5, 0.5, 0.0)
    step_length: float = 0.1
    step_height: float = 0.06
    base_height_target: float = 0.3
    bob_amplitude: float = 0.0
    forward_speed: float = 0.5

    def to_vector(self):
        return np.array([self.frequency, self.duty, *self.phase, self.step_length, self.step_height,
                         self.base_height_target, self.bob_amplitude, self.forward_speed], dtype=float)

    @classmethod
    def from_vector(cls, vec):
        vals = [float(item) for item in vec]
        return cls(vals[0], vals[1], tuple(vals[2:6]), vals[6], vals[7], vals[8], vals[9], vals[10])

    def clamped(self):
        return GaitParameters.from_vector(clamp(self.to_vector()))

    def in_bounds(self):
        vec = self.to_vector()
        return bool(np.all(vec >= LOWER) and np.all(vec[:2] <= UPPER[:2]) and np.all(vec[6:] <= UPPER[6:])
                    and np.all(vec[PHASE_SLICE] < 1.0))

    def to_json(self):
        doc = asdict(self)
        doc["phase"] = list(self.phase)
        return doc

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        doc["phase"] = tuple(doc["phase"])
        return cls(**doc)

    @classmethod
    def from_template(cls, template, frequency=2.0, forward_speed=0.5, height=0.3):
        step = forward_speed * template.duty / frequency
        return cls(frequency, template.duty, tuple(template.phase), min(step, 0.4), 0.06, height, 0.0,
                   forward_speed)


def clamp(vec):
    """Project onto the parameter box; phases wrap instead of saturating."""
    out = np.array(vec, dtype=float)
    ph = np.mod(out[..., PHASE_SLICE], 1.0)
    out[..., PHASE_SLICE] = np.where(ph >= 1.0, 0.0, ph)  # mod of a tiny negative rounds up to 1.0
    lo, hi = LOWER.copy(), UPPER.copy()
    lo[PHASE_SLICE], hi[PHASE_SLICE] = -np.inf, np.inf
    return np.clip(out, lo, hi)


@dataclass
class Morphology:
    thigh: float = 0.213
    calf: float = 0.213
    hip_dx: float = 0.1881
    hip_dy: float = 0.0935
    # +1: knee points backwards (Go1-like); -1: inverted knee (ANYmal-like rear legs)
    knee_front: float = 1.0
    knee_rear: float = 1.0

    @classmethod
    def from_json(cls, doc):
        return cls(**{fld.name: float(doc[fld.name]) for fld in fields(cls) if fld.name in doc})


@dataclass
class Push:
    start: float     # s
    duration: float  # s
    force: float     # N, lateral (+y)


def random_pushes(rng, horizon, count=3, fmin=50.0, fmax=110.0, duration=2.0):
    """Lateral pushes of fmin..fmax N lasting ``duration`` s at random start times."""
    starts = np.sort(rng.uniform(0.0, max(horizon - duration, 0.0), size=count))
    signs = rng.choice([-1.0, 1.0], size=count)
    forces = rng.uniform(fmin, fmax, size=count) * signs
    return [Push(float(start), duration, float(force)) for start, force in zip(starts, forces)]


@dataclass
class ContactSequence:
    matrix: np.ndarray   # bool, 4 x T, rows FL FR RL RR
    dt: float = DT
    leg_order: tuple = LEG_ORDER

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=bool)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != 4 or self.matrix.shape[1] < 1:
            raise InputError(f"contact matrix must be 4 x T with T >= 1, got {self.matrix.shape}")
        if not self.dt > 0:
            raise InputError("contact dt must be positive")

    @property
    def steps(self):
        return self.matrix.shape[1]

    def write_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.leg_order)
            for row in self.matrix.T.astype(int):
                writer.writerow(row.tolist())
        path.with_suffix(".json").write_text(json.dumps({"dt": self.dt, "leg_order": list(self.leg_order)}))
        return path

    @classmethod
    def read_csv(cls, path):
        path = Path(path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        if not rows or [head.strip() for head in rows[0]] != list(LEG_ORDER):
            raise InputError(f"{path}: expected header {','.join(LEG_ORDER)}")
        matrix = np.array([[int(cell) for cell in row] for row in rows[1:] if row], dtype=bool).T
        side = path.with_suffix(".json")
        dt = json.loads(side.read_text())["dt"] if side.exists() else DT
        return cls(matrix, dt)


@dataclass
class SimConfig:
    steps: int = 1000
    dt: float = DT
    command: tuple = (0.5, 0.0, 0.0)
    morphology: Morphology = field(default_factory=Morphology)
    meters_per_unit: float = 2.0   # keypoint camera scale
    pushes: tuple = ()
    initial_height: float = None   # forces h(0) away from the target

    def to_json(self):
        return {"steps": self.steps, "dt": self.dt, "command": list(self.command),
                "morphology": asdict(self.morphology), "meters_per_unit": self.meters_per_unit,
                "pushes": [asdict(push) for push in self.pushes], "initial_height": self.initial_height}

    @classmethod
    def from_json(cls, doc):
        return cls(int(doc.get("steps", 1000)), float(doc.get("dt", DT)), tuple(doc.get("command", (0.5, 0, 0))),
                   Morphology.from_json(doc.get("morphology", {})), float(doc.get("meters_per_unit", 2.0)),
                   tuple(Push(**push) for push in doc.get("pushes", ())), doc.get("initial_height"))


def contact_at(params, time):
    """Stance flags (FL, FR, RL, RR) at ``time`` seconds."""
    phase = np.asarray(params.phase, dtype=float)
    frac = cycle_fraction(params.frequency * float(time) + phase)
    return frac < params.duty


def _first_order(signal, alpha, start):
    """y_k = (1-alpha) y_{k-1} + alpha x_k along the last axis, starting at steady state start."""
    zi = ((1.0 - alpha) * np.asarray(start))[..., None]
    filtered, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], signal, axis=-1, zi=zi)
    return filtered


def _push_force(time, pushes):
    force = np.zeros_like(time)
    for push in pushes:
        force += np.where((time >= push.start) & (time < push.start + push.duration), push.force, 0.0)
    return force


def _body_states(times, dt, force, roll_tgt, pitch_tgt, dz0):
    a_att = dt / (ATTITUDE_TAU + dt)
    a_lat = dt / (LATERAL_TAU + dt)
    roll_in = roll_tgt + ROLL_PER_NEWTON * force
    roll = _first_order(roll_in, a_att, roll_tgt[..., 0])
    pitch = _first_order(pitch_tgt, a_att, pitch_tgt[..., 0])
    vy = _first_order(LATVEL_PER_NEWTON * np.broadcast_to(force, roll_tgt.shape), a_lat, 0.0 * roll_tgt[..., 0])
    tt = times - times[..., :1]
    dz = dz0[..., None] * np.exp(-tt / HEIGHT_TAU)
    return roll, pitch, vy, dz


def _simulate(batch, cfg, keypoints=False):
    """Core rollout for a (B, 11) parameter batch.  Returns a dict of (B, T, ...) arrays."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    n_batch, n_steps, dt = batch.shape[0], int(cfg.steps), float(cfg.dt)
    morph = cfg.morphology
    times = np.arange(n_steps) * dt
    freq, duty = batch[:, 0:1], batch[:, 1:2]
    phase = batch[:, PHASE_SLICE]
    step_len, Hs, target, bob, speed = (batch[:, col:col + 1] for col in range(6, 11))

    frac = cycle_fraction(freq[:, :, None] * times[None, :, None] + phase[:, None, :])       # (B,T,4)
    d3 = duty[:, :, None]
    stance = frac < d3
    u_st = frac / d3
    u_sw = (frac - d3) / (1.0 - d3)
    L3, H3 = step_len[:, :, None], Hs[:, :, None]
    foot_x = np.where(stance, L3 / 2 - L3 * u_st,
                      -L3 / 2 + L3 * (u_sw - np.sin(2 * np.pi * u_sw) / (2 * np.pi)))
    foot_z = np.where(stance, 0.0, H3 * (1 - np.cos(2 * np.pi * u_sw)) / 2)

    st = stance.astype(float)
    front, rear = st[..., :2].mean(-1), st[..., 2:].mean(-1)
    left, right = st[..., [0, 2]].mean(-1), st[..., [1, 3]].mean(-1)
    pitch_tgt = 0.5 * (bob / morph.hip_dx) * (front - rear)
    roll_tgt = 0.5 * (bob / HALF_WIDTH) * (left - right)
    force = _push_force(times, cfg.pushes)
    h_nom = target + bob * np.sin(4 * np.pi * freq * times)
    dz0 = np.zeros(n_batch) if cfg.initial_height is None else cfg.initial_height - target[:, 0]

    roll, pitch, vy, dz = _body_states(times, dt, force, roll_tgt, pitch_tgt, dz0)
    height = h_nom + dz
    term = _terminated(height, target, roll, pitch)
    terminated_at = np.full(n_batch, -1)
    resets = np.zeros(n_batch, dtype=int)
    for row in np.flatnonzero(term.any(axis=1)):
        fail_at = int(np.argmax(term[row]))
        terminated_at[row] = fail_at
        while fail_at >= 0:
            resets[row] += 1
            restart = fail_at + 1
            if restart >= n_steps:
                break
            # re-initialise the body state from step j onwards
            r2, p2, vy2, _ = _body_states(times[restart:], dt, force[restart:], roll_tgt[row:row + 1, restart:],
                                          pitch_tgt[row:row + 1, restart:], np.zeros(1))
            roll[row, restart:], pitch[row, restart:], vy[row, restart:] = r2[0], p2[0], vy2[0]
            height[row, restart:] = h_nom[row, restart:]
            sub = _terminated(height[row:row + 1, restart:], target[row:row + 1],
                              roll[row:row + 1, restart:], pitch[row:row + 1, restart:])[0]
            fail_at = restart + int(np.argmax(sub)) if sub.any() else -1

    # hip heights follow body attitude; left/right hips share the sagittal projection
    hip_off = np.array([morph.hip_dx, morph.hip_dx, -morph.hip_dx, -morph.hip_dx])
    side = np.array([1.0, -1.0, 1.0, -1.0])
    hip_z = (height[..., None] + hip_off * np.sin(pitch)[..., None]
             + side * morph.hip_dy * np.sin(roll)[..., None])
    dx, dz_leg = foot_x, foot_z - hip_z
    D2 = dx ** 2 + dz_leg ** 2
    reach = (morph.thigh + morph.calf) ** 2
    infeasible = np.any(D2 > reach * (1 - 1e-9), axis=(1, 2)) | np.any(D2 < (morph.thigh - morph.calf) ** 2 + 1e-9,
                                                                        axis=(1, 2))
    c2 = np.clip((D2 - morph.thigh ** 2 - morph.calf ** 2) / (2 * morph.thigh * morph.calf), -1.0, 1.0)
    knee_sign = np.array([morph.knee_front, morph.knee_front, morph.knee_rear, morph.knee_rear])
    q2 = knee_sign * np.arccos(c2)
    q1 = np.arctan2(dx, -dz_leg) - np.arctan2(morph.calf * np.sin(q2), morph.thigh + morph.calf * np.cos(q2))
    joint_pos = np.stack([np.zeros_like(q1), q1, q2], axis=-1).reshape(n_batch, n_steps, 12)
    joint_vel = np.concatenate([np.zeros((n_batch, 1, 12)), np.diff(joint_pos, axis=1) / dt], axis=1)
    prev_action = np.concatenate([joint_pos[:, :1], joint_pos[:, :-1]], axis=1)

    droll = np.concatenate([np.zeros((n_batch, 1)), np.diff(roll, axis=1) / dt], axis=1)
    dpitch = np.concatenate([np.zeros((n_batch, 1)), np.diff(pitch, axis=1) / dt], axis=1)
    ang_vel = np.stack([droll, dpitch, np.zeros_like(droll)], axis=-1)
    dh = np.concatenate([np.zeros((n_batch, 1)), np.diff(height, axis=1) / dt], axis=1)
    lin_vel = np.stack([np.broadcast_to(speed, height.shape), vy, dh], axis=-1)
    grav = np.stack([np.sin(pitch), -np.sin(roll) * np.cos(pitch), -np.cos(roll) * np.cos(pitch)], axis=-1)
    command = np.broadcast_to(np.asarray(cfg.command, dtype=float), (n_batch, n_steps, 3))

    obs = Observation(lin_vel, ang_vel, height, grav, joint_pos, joint_vel, st, prev_action, command)
    out = {"obs": obs, "stance": stance, "infeasible": infeasible, "terminated_at": terminated_at,
           "resets": resets, "roll": roll, "pitch": pitch}
    if keypoints:
        base_x = speed * times
        base_y = np.cumsum(vy, axis=1) * dt
        foot_world = np.stack([base_x[..., None] + hip_off + dx,
                               base_y[..., None] + side * morph.hip_dy + 0.0 * dx,
                               foot_z], axis=-1)
        knee_x = hip_off + morph.thigh * np.sin(q1)
        knee_z = hip_z - morph.thigh * np.cos(q1)
        out.update(base_pos=np.stack([base_x, base_y, height], axis=-1), foot_pos=foot_world,
                   knee_rel=np.stack([knee_x, knee_z], axis=-1), hip_z=hip_z)
    return out


def _terminated(height, target, roll, pitch):
    return ((height < TERMINATION_HEIGHT_FRACTION * target)
            | (np.abs(roll) > TERMINATION_ANGLE) | (np.abs(pitch) > TERMINATION_ANGLE))


def simulate_batch(batch, cfg):
    """Population rollout without keypoints (optimizer fast path)."""
    return _simulate(batch, cfg, keypoints=False)


KEYPOINT_NAMES = ("base", "front-hip", "rear-hip",
                  "front-left-knee", "front-right-knee", "rear-left-knee", "rear-right-knee",
                  "front-left-foot", "front-right-foot", "rear-left-foot", "rear-right-foot")


@dataclass
class RolloutTrace:
    params: GaitParameters
    observations: Observation
    contacts: ContactSequence
    keypoints: KeypointTrajectory
    terminated_at: int = None
    reset_count: int = 0
    base_pos: np.ndarray = None   # (T, 3) world
    foot_pos: np.ndarray = None   # (T, 4, 3) world

    @property
    def steps(self):
        return self.contacts.steps

    @property
    def dt(self):
        return self.contacts.dt

    def save(self, directory):
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        self.contacts.write_csv(root / "contacts.csv")
        with (root / "observations.jsonl").open("w") as fh:
            for step in range(self.steps):
                fh.write(json.dumps(self.observations[step].to_json()) + "\n")
        with (root / "keypoints.jsonl").open("w") as fh:
            for step in range(len(self.keypoints)):
                pts = {name: list(point) for name, point in self.keypoints.points(step).items()}
                fh.write(json.dumps({"t": float(self.keypoints.times[step]), "points": pts}) + "\n")
        with (root / "geometry.jsonl").open("w") as fh:
            for step in range(self.steps):
                geo = {"base": self.base_pos[step].tolist(), "feet": self.foot_pos[step].tolist()}
                fh.write(json.dumps(geo) + "\n")
        meta = {"params": self.params.to_json(), "dt": self.dt, "terminated_at": self.terminated_at,
                "reset_count": self.reset_count, "skeleton": list(self.keypoints.skeleton),
                "fps": self.keypoints.fps}
        (root / "trace.json").write_text(json.dumps(meta, indent=2))
        return root

    @classmethod
    def load(cls, directory):
        root = Path(directory)
        try:
            meta = json.loads((root / "trace.json").read_text())
            contacts = ContactSequence.read_csv(root / "contacts.csv")
            obs = Observation.stack(Observation.from_json(json.loads(line))
                                    for line in (root / "observations.jsonl").read_text().splitlines() if line)
            frames = [json.loads(line) for line in (root / "keypoints.jsonl").read_text().splitlines() if line]
            geo = [json.loads(line) for line in (root / "geometry.jsonl").read_text().splitlines() if line]
        except (OSError, KeyError, ValueError) as exc:
            raise InputError(f"{root}: unreadable rollout trace ({exc})") from None
        kp = KeypointTrajectory.from_json({"skeleton": meta["skeleton"], "frames": frames, "fps": meta.get("fps")})
        return cls(GaitParameters.from_json(meta["params"]), obs, contacts, kp, meta["terminated_at"],
                   meta["reset_count"], np.array([entry["base"] for entry in geo]),
                   np.array([entry["feet"] for entry in geo]))


def rollout(params, steps=1000, dt=DT, command=(0.5, 0.0, 0.0), disturbance=(), seed=0, *,
            morphology=None, meters_per_unit=2.0, initial_height=None):
    """Roll out one parameter set.  Deterministic; ``seed`` is accepted for API symmetry
    (the kinematic model has no stochastic parts; random push schedules are drawn by
    the caller via :func:`random_pushes`)."""
    if steps < 1 or not dt > 0:
        raise ValueError("steps must be >= 1 and dt > 0")
    cfg = SimConfig(steps, dt, tuple(command), morphology or Morphology(), meters_per_unit,
                    tuple(disturbance or ()), initial_height)
    return rollout_config(params, cfg)


def rollout_config(params, cfg):
    out = _simulate(params.to_vector()[None], cfg, keypoints=True)
    if out["infeasible"][0]:
        raise ParamInfeasible(f"leg inverse kinematics out of reach for {params}")
    obs = out["obs"][0]
    n_steps = cfg.steps
    kp = _keypoints(out, cfg)
    term = int(out["terminated_at"][0])
    return RolloutTrace(params, obs, ContactSequence(out["stance"][0].T, cfg.dt), kp,
                        None if term < 0 else term, int(out["resets"][0]),
                        out["base_pos"][0], out["foot_pos"][0][:n_steps])


def _keypoints(out, cfg):
    """Sagittal projection through a camera that tracks the base horizontally."""
    scale = cfg.meters_per_unit
    morph = cfg.morphology
    base = out["base_pos"][0]              # (T,3)
    pitch = out["pitch"][0]
    hip_z = out["hip_z"][0]                # (T,4)
    knee = out["knee_rel"][0]              # (T,4,2) relative x, absolute z
    feet = out["foot_pos"][0]
    n_steps = base.shape[0]

    def uv(x_rel, height):
        return np.stack([0.5 + x_rel / scale, 0.9 - height / scale], axis=-1)

    pts = np.zeros((n_steps, len(KEYPOINT_NAMES), 2))
    pts[:, 0] = uv(np.zeros(n_steps), base[:, 2])
    pts[:, 1] = uv(morph.hip_dx * np.cos(pitch), hip_z[:, 0])
    pts[:, 2] = uv(-morph.hip_dx * np.cos(pitch), hip_z[:, 2])
    for leg in range(4):
        pts[:, 3 + leg] = uv(knee[:, leg, 0], knee[:, leg, 1])
        pts[:, 7 + leg] = uv(feet[:, leg, 0] - base[:, 0], feet[:, leg, 2])
    pts = np.clip(pts, 0.0, 1.0)
    times = np.arange(n_steps) * cfg.dt
    return KeypointTrajectory(KEYPOINT_NAMES, times, pts, np.ones((n_steps, len(KEYPOINT_NAMES))), 1.0 / cfg.dt)


def _hull(points):
    pts = sorted(set(map(tuple, np.round(points, 12))))
    if len(pts) <= 2:
        return [np.array(pt) for pt in pts]

    def cross(origin, pa, pb):
        return (pa[0] - origin[0]) * (pb[1] - origin[1]) - (pa[1] - origin[1]) * (pb[0] - origin[0])

    lower, upper = [], []
    for pt in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], pt) <= 0:
            lower.pop()
        lower.append(pt)
    for pt in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], pt) <= 0:
            upper.pop()
        upper.append(pt)
    return [np.array(pt) for pt in lower[:-1] + upper[:-1]]


def _point_segment(point, seg_a, seg_b):
    ab = seg_b - seg_a
    denom = float(ab @ ab)
    frac = 0.0 if denom == 0 else float(np.clip((point - seg_a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(point - (seg_a + frac * ab)))


def com_support_distance(base_xy, feet_xy, contacts):
    """Shortest planar distance from the base projection to the stance polygon boundary.

    Returns ``(distance, airborne)``; with no foot down the distance is 0 and
    ``airborne`` is True.
    """
    base = np.asarray(base_xy, dtype=float)[:2]
    stance = np.asarray(feet_xy, dtype=float)[np.asarray(contacts, dtype=bool)][:, :2]
    if len(stance) == 0:
        return 0.0, True
    hull = _hull(stance)
    if len(hull) == 1:
        return float(np.linalg.norm(base - hull[0])), False
    if len(hull) == 2:
        return _point_segment(base, hull[0], hull[1]), False
    return min(_point_segment(base, hull[edge], hull[(edge + 1) % len(hull)]) for edge in range(len(hull))), False


def ang_vel_magnitude(base_ang_vel):
    return float(np.linalg.norm(np.asarray(base_ang_vel, dtype=float)))


def support_distances(trace):
    """Per-step CoM-to-support distances and airborne flags for a rollout."""
    dist = np.zeros(trace.steps)
    air = np.zeros(trace.steps, dtype=bool)
    for step in range(trace.steps):
        dist[step], air[step] = com_support_distance(trace.base_pos[step], trace.foot_pos[step],
                                                     trace.contacts.matrix[:, step])
    return dist, air
