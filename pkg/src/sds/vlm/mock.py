"""Offline chat backends: procedural generator, fixture replay, scripted responses.

The procedural mock plays every role from the prompt text alone.  It reads
the role tag of the system prompt, pulls the target gait and speed out of
the user text, writes reward programs from the seeded component catalogue,
and scores rollouts from the textual contact encoding and rollout summary.
Randomness is seeded by (mock seed, request hash), so identical requests
always get identical replies.
"""
import json
import re
from pathlib import Path

import numpy as np

from ..errors import ProtocolError
from ..gaits import GAIT_LABELS, canonical_label
from ..templates import COMPONENTS, RECIPES, component_source
from .client import BaseClient
from .messages import request_key, role_tag

_GAIT_RE = re.compile(r"(?:Target gait|suggests):\s*([A-Za-z]+)")
_SPEED_RE = re.compile(r"(?:Target speed|Estimated speed[^:]*|Commanded speed):\s*([0-9.]+)")
_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)
_LINE_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.+?)\s*$")

LEG_PAIRS = {
    "Trot": "diagonal pairs FL-RR and FR-RL strike together and alternate",
    "Pace": "lateral pairs FL-RL and FR-RR strike together and alternate",
    "Bound": "the front pair FL-FR and the rear pair RL-RR each move together, front then rear",
    "Hop": "all four legs strike and leave the ground together, with a flight phase",
}
EXTRA_FAMILIES = ("lateral", "spin", "smooth")


def _user_text(messages):
    return "\n".join(msg.text for msg in messages if msg.role == "user")


def _find_gait(text, default="Trot"):
    for found in _GAIT_RE.finditer(text):
        try:
            return canonical_label(found.group(1))
        except KeyError:
            continue
    for gait in GAIT_LABELS:
        if gait.lower() in text.lower():
            return gait
    return default


def _find_speed(text, default=0.5):
    found = _SPEED_RE.search(text)
    return float(found.group(1).rstrip(".")) if found else default


class ProceduralMock(BaseClient):
    mode = "procedural"

    def __init__(self, seed=0, n_candidates=8, model="mock-procedural", max_concurrency=4):
        super().__init__(model, max_concurrency)
        self.seed = seed
        self.n_candidates = n_candidates

    def _complete(self, messages, model, temperature, seed):
        key = request_key(messages, None, temperature, seed)
        rng = np.random.default_rng([self.seed, int(key[:15], 16)])
        role = role_tag(messages)
        text = _user_text(messages)
        if role in ("task_descriptor", "gait_analyzer", "task_requirement", "sus_generator"):
            return self._sus(role, text)
        if role == "reward_generator":
            if "Current best reward program" in text:
                return self._evolve(text, rng)
            return self._generate(text, rng)
        if role == "task_evaluator":
            return self._score(messages, text)
        raise ProtocolError(f"procedural mock has no behaviour for role {role!r}")

    # -- SUS agents ------------------------------------------------------
    def _sus(self, role, text):
        gait = _find_gait(text)
        speed = _find_speed(text)
        if role == "task_descriptor":
            return (f"A quadruped moves forward in a straight line at a steady pace of roughly {speed:.2f} m/s. "
                    f"The body stays level and the motion repeats every stride, consistent with a "
                    f"{gait.lower()}.")
        if role == "gait_analyzer":
            return (f"Contact analysis: {LEG_PAIRS[gait]}. The pattern repeats regularly. "
                    f"Gait: {gait}.")
        if role == "task_requirement":
            return ("- keep forward speed near the demonstrated value\n- hold a constant base height "
                    f"with the body level\n- reproduce the {gait.lower()} leg coordination: {LEG_PAIRS[gait]}\n"
                    "- move smoothly without falls")
        return (f"Target gait: {gait}\nTarget speed: {speed:.2f} m/s\n"
                f"Reproduce a {gait.lower()}: {LEG_PAIRS[gait]}. Keep the torso level at a steady height "
                "and move forward smoothly at the target speed.")

    # -- reward generation --------------------------------------------------
    def _variant(self, gait, rng, height=None):
        height = height or float(rng.choice([0.28, 0.30, 0.32]))
        lines = []
        for name, family, weight in RECIPES[gait]:
            keep = 0.75 if family == "sync" else 0.85
            if rng.random() > keep:
                continue
            wt = weight * float(rng.choice([0.5, 1.0, 1.0, 2.0]))
            lines.append(f"{name} = {wt!r} * {component_source(family, gait, height)}")
        for family in EXTRA_FAMILIES:
            if rng.random() < 0.2 and not any(ln.startswith(family) for ln in lines):
                lines.append(f"{family} = {float(rng.choice([0.05, 0.1, 0.5]))!r} * "
                             f"{component_source(family, gait, height)}")
        if not lines:
            name, family, weight = RECIPES[gait][0]
            lines.append(f"{name} = {weight!r} * {component_source(family, gait, height)}")
        return "\n".join(lines)

    def _seeded(self, gait):
        return "\n".join(f"{name} = {weight!r} * {component_source(family, gait)}"
                         for name, family, weight in RECIPES[gait])

    def _fence(self, programs):
        return "\n\n".join(f"Candidate {idx + 1}:\n```reward\n{prog.strip()}\n```" for idx, prog in enumerate(programs))

    def _generate(self, text, rng):
        gait = _find_gait(text)
        programs = [self._seeded(gait)] + [self._variant(gait, rng) for _ in range(self.n_candidates - 1)]
        return self._fence(programs)

    def _evolve(self, text, rng):
        gait = _find_gait(text)
        blocks = _FENCE_RE.findall(text)
        rf_star = blocks[0].strip() if blocks else self._seeded(gait)
        flagged = set(re.findall(r"- (\w+) never varied", text))
        programs = [rf_star]
        for _ in range(self.n_candidates - 1):
            programs.append(self._mutate(rf_star, gait, rng, flagged))
        return self._fence(programs)

    def _mutate(self, source, gait, rng, flagged):
        entries = []
        for line in source.splitlines():
            found = _LINE_RE.match(line)
            if found and not line.lstrip().startswith("#"):
                entries.append([found.group(1), found.group(2)])
        out = []
        for name, expr in entries:
            if name in flagged and rng.random() < 0.7:
                continue
            wm = re.match(r"^(-?[0-9.eE+-]+)\s*\*\s*(.+)$", expr)
            if wm and rng.random() < 0.5:
                wt = float(wm.group(1)) * float(rng.choice([0.5, 0.8, 1.25, 2.0]))
                expr = f"{wt!r} * {wm.group(2)}"
            out.append(f"{name} = {expr}")
        names = {entry[0] for entry in entries}
        if rng.random() < 0.3:
            family = str(rng.choice(sorted(COMPONENTS)))
            name = f"{family}_term"
            if name not in names:
                out.append(f"{name} = {float(rng.choice([0.1, 0.5, 1.0]))!r} * {component_source(family, gait)}")
        return "\n".join(out) if out else source

    # -- evaluation ---------------------------------------------------------
    def _score(self, messages, text):
        from ..evaluator import contact_match
        from ..gaits import reference_gait
        from .prompts import decode_contacts

        gait = _find_gait(text)
        command = _find_speed(text, default=0.0)
        resets = _number(text, r"resets:\s*([0-9]+)", 0)
        sts = _number(text, r"mean StS:\s*([0-9.]+)", 1.0)
        speed = _number(text, r"mean forward speed:\s*([0-9.]+)", 0.0)
        stability = 0 if resets > 0 else int(np.clip(round(5 * sts), 0, 10))
        contacts = decode_contacts(text.split("Contact sequence", 1)[1]) if "Contact sequence" in text else None
        if contacts is not None:
            periodicity = int(round(contact_match(contacts, reference_gait(gait)).percent / 10))
        else:
            periodicity = 5  # no contact information to judge from
        if "rollout grid" in text and command > 0:
            ratio = min(speed, command) / max(speed, command) if max(speed, command) > 0 else 0.0
            adherence = int(round(10 * ratio))
        else:
            adherence = 5  # no rollout footage to compare against
        return (f"[{stability}, {periodicity}, {adherence}] Stability, periodicity and adherence judged "
                f"against the {gait.lower()} demonstration.")


def _number(text, pattern, default):
    found = re.search(pattern, text)
    return float(found.group(1)) if found else default


class FixtureMock(BaseClient):
    """Replays recorded responses keyed by request hash, falling back to the role tag."""

    mode = "fixture"

    def __init__(self, fixtures, model="mock-fixture", max_concurrency=4):
        super().__init__(model, max_concurrency)
        if isinstance(fixtures, (str, Path)):
            fixtures = json.loads(Path(fixtures).read_text())
        self.by_key = dict(fixtures.get("by_key", {}))
        self.by_role = dict(fixtures.get("by_role", {}))

    def _complete(self, messages, model, temperature, seed):
        key = request_key(messages, None, temperature, seed)
        if key in self.by_key:
            return self.by_key[key]
        role = role_tag(messages)
        if role in self.by_role:
            return self.by_role[role]
        raise ProtocolError(f"no fixture for request {key[:12]} (role {role!r})")


class Recorder(BaseClient):
    """Wraps another client and records every exchange for later fixture replay."""

    def __init__(self, inner):
        super().__init__(inner.model)
        self.inner = inner
        self.mode = f"recording:{inner.mode}"
        self.by_key, self.by_role = {}, {}

    def _complete(self, messages, model, temperature, seed):
        text = self.inner._complete(messages, model, temperature, seed)
        self.by_key[request_key(messages, None, temperature, seed)] = text
        role = role_tag(messages)
        if role and role not in self.by_role:
            self.by_role[role] = text
        return text

    def fixtures(self):
        return {"by_key": self.by_key, "by_role": self.by_role}

    def save(self, path):
        Path(path).write_text(json.dumps(self.fixtures(), indent=2, sort_keys=True))


class ScriptedMock(BaseClient):
    """Returns queued responses in order; an Exception instance is raised instead,
    a callable is called with the messages."""

    mode = "scripted"

    def __init__(self, responses, model="mock-scripted"):
        super().__init__(model)
        self.responses = list(responses)
        self.requests = []

    def _complete(self, messages, model, temperature, seed):
        self.requests.append(messages)
        if not self.responses:
            raise ProtocolError("scripted mock ran out of responses")
        item = self.responses.pop(0)
        if isinstance(item, BaseException):
            raise item
        if callable(item):
            return item(messages)
        return item
