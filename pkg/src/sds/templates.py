"""Seeded reward-program library: one hand-written program per gait.

Each program combines the sub-reward families that emerged for that skill
(velocity or forward motion, base height, orientation, limb sync or contact
pattern, action smoothness, joint limits) with a contact-phase term that
pins the inter-limb coordination.  The offline mock client draws on the
same component catalogue, so generated candidates look like these.
"""
from .dsl import parse
from .gaits import canonical_label

NOMINAL_SPEED = {"Pace": 0.2, "Trot": 0.5, "Hop": 1.2, "Bound": 2.1}
DEFAULT_HEIGHT = 0.30

# component family -> DSL expression text (format fields: speed, height, gait)
COMPONENTS = {
    "vel": "exp(-square(base_lin_vel.x - command.x) / 0.05)",
    "forward": "clip(base_lin_vel.x / max(command.x, 0.1), 0.0, 1.0)",
    "height": "exp(-square(base_height - {height}) / 0.002)",
    "orient": "-(square(gravity_proj.x) + square(gravity_proj.y))",
    "sync": "match_phase(foot_contacts, {gait})",
    "smooth": "-sum(square(joint_pos - prev_action))",
    "limits": "-sum(square(max(abs(joint_pos) - 2.0, 0.0)))",
    "lateral": "-square(base_lin_vel.y)",
    "spin": "-sum(square(base_ang_vel))",
}

# gait -> ordered (sub-reward name, component family, weight)
RECIPES = {
    "Pace": [("vel", "vel", 1.0), ("base_height", "height", 0.5), ("orientation", "orient", 1.0),
             ("contact_pattern", "sync", 4.0), ("action_smoothness", "smooth", 0.01),
             ("dof_limits", "limits", 1.0)],
    "Trot": [("vel", "vel", 1.0), ("base_height", "height", 0.5), ("orientation", "orient", 1.0),
             ("limb_sync", "sync", 4.0), ("action_smoothness", "smooth", 0.01), ("dof_limits", "limits", 1.0)],
    "Hop": [("forward_motion", "forward", 1.0), ("dof_limits", "limits", 1.0), ("contact_pattern", "sync", 4.0)],
    "Bound": [("forward_motion", "forward", 1.0), ("base_height", "height", 0.5), ("orientation", "orient", 1.0),
              ("contact_pattern", "sync", 4.0)],
}


def component_source(family, gait="Trot", height=DEFAULT_HEIGHT):
    return COMPONENTS[family].format(gait=canonical_label(gait).lower(), height=f"{height:.3f}")


def template_source(gait, height=DEFAULT_HEIGHT):
    gait = canonical_label(gait)
    lines = [f"# seeded {gait.lower()} reward"]
    for name, family, weight in RECIPES[gait]:
        lines.append(f"{name} = {weight!r} * {component_source(family, gait, height)}")
    return "\n".join(lines) + "\n"


def template_program(gait, height=DEFAULT_HEIGHT):
    gait = canonical_label(gait)
    return parse(template_source(gait, height), name=f"seeded_{gait.lower()}", provenance="template")
