"""Reference gait templates: per-leg phase offsets in leg order FL, FR, RL, RR."""
from dataclasses import dataclass

import numpy as np

GAIT_LABELS = ("Trot", "Pace", "Bound", "Hop")  # also the classification tie-break order

PHASES = {
    "Trot": (0.0, 0.5, 0.5, 0.0),   # diagonal pairs in sync
    "Pace": (0.0, 0.5, 0.0, 0.5),   # lateral pairs in sync
    "Bound": (0.0, 0.0, 0.5, 0.5),  # front pair, then rear pair
    "Hop": (0.0, 0.0, 0.0, 0.0),    # all four together (pronk)
}

DEFAULT_DUTY = {"Trot": 0.6, "Pace": 0.6, "Bound": 0.35, "Hop": 0.35}

DESCRIPTIONS = {
    "Trot": "Sync movement of diagonal limbs.",
    "Pace": "Sync movement of adjacent limbs.",
    "Bound": "Sync movement of front limbs.",
    "Hop": "Sync movement of all limbs.",
}

ALIASES = {"pronk": "Hop", "hopping": "Hop", "trotting": "Trot", "pacing": "Pace", "bounding": "Bound"}


def canonical_label(label):
    key = str(label).strip()
    if key.lower() in ALIASES:
        return ALIASES[key.lower()]
    for name in GAIT_LABELS:
        if name.lower() == key.lower():
            return name
    raise KeyError(f"unknown gait label {label!r}")


@dataclass(frozen=True)
class GaitTemplate:
    label: str
    phase: tuple
    duty: float

    def __post_init__(self):
        if not all(0.0 <= offset < 1.0 for offset in self.phase):
            raise ValueError("template phases must lie in [0, 1)")


def reference_gait(label):
    name = canonical_label(label)
    return GaitTemplate(name, PHASES[name], DEFAULT_DUTY[name])


def pair_relations(label):
    """6 leg pairs with +1 (in phase) or -1 (half-cycle apart)."""
    phase = np.asarray(PHASES[canonical_label(label)])
    rel = []
    for first in range(4):
        for second in range(first + 1, 4):
            gap = abs(phase[first] - phase[second]) % 1.0
            gap = min(gap, 1.0 - gap)
            rel.append((first, second, 1.0 if gap < 0.25 else -1.0))
    return rel


def cycle_fraction(value):
    """fract(value) with rounding noise removed, so samples landing exactly on a
    phase boundary (e.g. t = duty / f) fall on the same side every cycle."""
    return np.mod(np.round(np.mod(value, 1.0), 12), 1.0)
