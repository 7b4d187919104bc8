"""Synthetic demonstrations: keypoint clips of the reference gaits seen by a fixed camera.

The simulator's own camera tracks the base, which hides forward progress.
Demonstration clips instead use a static camera wide enough to keep the
whole run in frame, so keypoint displacement carries the speed.
"""
import json
from pathlib import Path

import numpy as np

from .gaits import GAIT_LABELS, canonical_label, reference_gait
from .ingest import KeypointTrajectory, estimate_velocity
from .sim import GaitParameters, rollout
from .templates import DEFAULT_HEIGHT, NOMINAL_SPEED

# documented clip durations (seconds) per skill
CLIP_SECONDS = {"Pace": 7.2, "Trot": 8.0, "Hop": 20.0, "Bound": 34.0}
STRIDE_FREQUENCY = {"Pace": 1.5, "Trot": 2.0, "Hop": 2.5, "Bound": 3.0}
FPS = 30.0


def demo_params(gait, speed=None, frequency=None):
    gait = canonical_label(gait)
    return GaitParameters.from_template(reference_gait(gait), frequency=frequency or STRIDE_FREQUENCY[gait],
                                        forward_speed=NOMINAL_SPEED[gait] if speed is None else speed,
                                        height=DEFAULT_HEIGHT)


def make_demo(gait, seconds=None, fps=FPS, speed=None, noise=0.0005, seed=0, margin=1.0, calibrate=True):
    """Keypoint trajectory of ``gait`` plus the camera scale (metres per unit) that produced it.

    ``noise`` is the std of the pixel jitter in metres.  With ``calibrate``
    the true body speed is adjusted so that the keypoint-averaged estimate
    (which swing-leg motion inflates) lands on the requested speed.
    """
    gait = canonical_label(gait)
    target = NOMINAL_SPEED[gait] if speed is None else speed
    true_speed = target
    demo, scale = _render_demo(gait, seconds, fps, true_speed, noise, seed, margin)
    if calibrate and target > 0:
        for _ in range(12):
            est = estimate_velocity(demo, scale)
            if abs(est - target) < 1e-4 * target:
                break
            true_speed *= target / est
            demo, scale = _render_demo(gait, seconds, fps, true_speed, noise, seed, margin)
    return demo, scale


def _render_demo(gait, seconds, fps, speed, noise, seed, margin):
    seconds = CLIP_SECONDS[gait] if seconds is None else seconds
    params = demo_params(gait, speed)
    steps = int(round(seconds * fps))
    trace = rollout(params, steps=steps, dt=1.0 / fps, command=(params.forward_speed, 0.0, 0.0))
    travel = float(trace.base_pos[-1, 0] - trace.base_pos[0, 0])
    scale = (travel + 2 * margin) / 0.9
    kp = trace.keypoints
    mpu = 2.0  # the rollout camera's scale
    base_x = trace.base_pos[:, 0:1]
    world_x = base_x + (kp.xy[:, :, 0] - 0.5) * mpu
    world_z = (0.9 - kp.xy[:, :, 1]) * mpu
    rng = np.random.default_rng(seed)
    world_x = world_x + rng.normal(0.0, noise, world_x.shape)
    world_z = world_z + rng.normal(0.0, noise, world_z.shape)
    img_x = 0.05 + (world_x - trace.base_pos[0, 0] + margin) / scale
    img_y = 0.9 - world_z / scale
    xy = np.clip(np.stack([img_x, img_y], axis=-1), 0.0, 1.0)
    conf = np.clip(0.95 - np.abs(rng.normal(0.0, 0.03, xy.shape[:2])), 0.0, 1.0)
    demo = KeypointTrajectory(kp.skeleton, np.arange(steps) / fps, xy, conf, fps)
    return demo, scale


def write_demo(path, gait, **kwargs):
    """Write a demonstration JSON; the camera scale travels with it as ``meters_per_unit``."""
    demo, scale = make_demo(gait, **kwargs)
    doc = demo.to_json()
    doc["meters_per_unit"] = scale
    doc["source"] = f"synthetic {canonical_label(gait).lower()}"
    Path(path).write_text(json.dumps(doc))
    return demo, scale


def demo_scale(path, default=None):
    """The ``meters_per_unit`` recorded in a keypoint file, if any."""
    try:
        return float(json.loads(Path(path).read_text()).get("meters_per_unit", default))
    except (TypeError, ValueError, OSError):
        return default


__all__ = ["CLIP_SECONDS", "GAIT_LABELS", "make_demo", "write_demo", "demo_scale", "demo_params"]
