"""Typed observation record consumed by reward programs.

Every field is a numpy array.  A single timestep has scalar fields of
shape ``()`` and vector fields of shape ``(n,)``; batched observations
(rollouts, populations of rollouts) prepend any number of leading axes.
"""
from dataclasses import dataclass, fields

import numpy as np

LEG_ORDER = ("FL", "FR", "RL", "RR")

# field name -> vector length (0 = scalar)
FIELD_SHAPES = {
    "base_lin_vel": 3,
    "base_ang_vel": 3,
    "base_height": 0,
    "gravity_proj": 3,
    "joint_pos": 12,
    "joint_vel": 12,
    "foot_contacts": 4,
    "prev_action": 12,
    "command": 3,
}


@dataclass
class Observation:
    base_lin_vel: np.ndarray
    base_ang_vel: np.ndarray
    base_height: np.ndarray
    gravity_proj: np.ndarray
    joint_pos: np.ndarray
    joint_vel: np.ndarray
    foot_contacts: np.ndarray
    prev_action: np.ndarray
    command: np.ndarray

    @property
    def batch_shape(self):
        return np.shape(self.base_height)

    def __len__(self):
        shape = self.batch_shape
        if not shape:
            raise TypeError("single-step observation has no length")
        return shape[0]

    def __getitem__(self, idx):
        return Observation(**{fld.name: np.asarray(getattr(self, fld.name)[idx]) for fld in fields(self)})

    def check(self, atol=1e-6):
        lead = self.batch_shape
        for name, width in FIELD_SHAPES.items():
            arr = np.asarray(getattr(self, name))
            want = lead + ((width,) if width else ())
            if arr.shape != want:
                raise ValueError(f"{name}: shape {arr.shape}, expected {want}")
        gnorm = np.linalg.norm(np.asarray(self.gravity_proj), axis=-1)
        if not np.all(np.abs(gnorm - 1.0) <= atol):
            raise ValueError("gravity_proj must be a unit vector")
        return self

    def as_dict(self):
        return {fld.name: np.asarray(getattr(self, fld.name)) for fld in fields(self)}

    def to_json(self):
        return {key: value.tolist() for key, value in self.as_dict().items()}

    @classmethod
    def from_json(cls, data):
        return cls(**{key: np.asarray(data[key], dtype=float) for key in FIELD_SHAPES})

    @classmethod
    def zeros(cls, batch_shape=()):
        """Canonical zero state: everything zero, body upright."""
        batch_shape = tuple(batch_shape)
        values = {}
        for name, width in FIELD_SHAPES.items():
            values[name] = np.zeros(batch_shape + ((width,) if width else ()))
        values["gravity_proj"][..., 2] = -1.0
        return cls(**values)

    @classmethod
    def stack(cls, observations):
        obs = list(observations)
        return cls(**{name: np.stack([getattr(item, name) for item in obs]) for name in FIELD_SHAPES})
