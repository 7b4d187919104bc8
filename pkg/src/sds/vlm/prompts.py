"""Prompt assembly for every chat call in the pipeline.

Templates live as editable text files next to this module; builders are
pure functions of their inputs (same inputs, same message bytes).
"""
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from string import Template

import numpy as np

from ..errors import ClientError, SusChainError
from .messages import ImagePart, TextPart, ChatMessage, assistant, system, user

PROMPT_DIR = Path(__file__).with_name("prompts")
SUS_STAGES = ("task_descriptor", "gait_analyzer", "task_requirement", "sus_generator")
CRITERIA_TEXT = {
    "stability": "postural stability: upright, steady body without falls or large wobble",
    "periodicity": "gait periodicity: regular, repeating contact pattern with the right legs in sync",
    "adherence": "trajectory adherence: speed, height and leg motion match the demonstration",
}


@lru_cache(maxsize=None)
def load_template(name):
    return (PROMPT_DIR / f"{name}.txt").read_text()


def render(name, **values):
    return Template(load_template(name)).substitute(**values).strip() + "\n"


def _images(paths):
    return tuple(ImagePart.from_file(pth) for pth in paths if pth is not None)


# ---------------------------------------------------------------------------
# SUS chain


@dataclass
class SusArtifacts:
    task_description: str
    gait_analysis: str
    task_requirements: str
    final_sus_prompt: str
    transcript: list = field(default_factory=list)   # [(request records, response)]

    def to_json(self):
        return {"task_description": self.task_description, "gait_analysis": self.gait_analysis,
                "task_requirements": self.task_requirements, "final_sus_prompt": self.final_sus_prompt,
                "transcript": self.transcript}

    @classmethod
    def from_json(cls, doc):
        return cls(doc["task_description"], doc["gait_analysis"], doc["task_requirements"], doc["final_sus_prompt"],
                   doc.get("transcript", []))


def build_sus_messages(stage, grid_images, prior=(), hint=None):
    """Messages for one SUS agent; ``prior`` holds the earlier agents' outputs in order."""
    labels = ("Task description", "Gait analysis", "Task requirements")
    prior_text = "\n\n".join(f"{labels[idx]} (previous agent):\n{text.strip()}" for idx, text in enumerate(prior))
    note = f"{len(grid_images)} image(s), frames in temporal order"
    body = render("sus_user", grid_note=note, hint=hint or "", prior=prior_text)
    return [system(render(stage)), user(body, _images(grid_images))]


def run_sus_chain(client, grid_images, overlays=(), hint=None, log=None, temperature=0.0, seed=None):
    """Four sequential agents; each sees the grid (plus overlays) and all earlier outputs."""
    images = list(grid_images) + list(overlays or ())
    outputs, transcript = [], []
    for stage_no, stage in enumerate(SUS_STAGES, start=1):
        messages = build_sus_messages(stage, images, outputs, hint)
        try:
            text = client.chat(messages, temperature=temperature, seed=seed, log=log, tag=f"sus_{stage}")
        except ClientError as exc:
            raise SusChainError(stage_no, f"{type(exc).__name__}: {exc}", transcript) from exc
        transcript.append({"stage": stage, "request": [msg.to_record() for msg in messages], "response": text})
        if not text or not text.strip():
            raise SusChainError(stage_no, "empty response", transcript)
        outputs.append(text.strip())
    return SusArtifacts(*outputs, transcript=transcript)


def gait_hint(label, margin, speed=None):
    """Keypoint-derived analysis lines handed to the SUS agents."""
    lines = []
    if label is not None:
        lines.append(f"Keypoint contact analysis suggests: {label} (template margin {margin:.1f} points).")
    if speed is not None:
        lines.append(f"Estimated speed from keypoint displacement: {speed:.2f} m/s.")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# generation and evolution


def build_generation_prompt(sus, grid_images, dsl_docs=None, count=8, steps=1000, tip=False):
    sys_text = render("init_sds_system", count=count, steps=steps,
                      dsl_reference=dsl_docs or load_template("dsl_reference"))
    body = render("sds_user", sus=sus, count=count)
    if tip:
        body += "\n" + render("code_output_tip")
    return [system(sys_text), user(body, _images(grid_images))]


def feedback_text(run=None, summary=None, failure=None):
    """Outcome-dependent feedback: statistics plus reinforcement, or error diagnostics."""
    if failure:
        return render("execution_error_feedback", reason=failure)
    text = render("policy_feedback", summary=summary or "(no statistics)")
    return text + render("code_feedback")


def build_evolution_prompt(rf_star, telemetry_summary, gs, cp, gv, outcome=None, sus="", score=None, count=8,
                           steps=1000, dsl_docs=None, tip=False, ablate=()):
    """``outcome`` is None for a successful run or the failure reason text."""
    sys_text = render("init_sds_system", count=count, steps=steps,
                      dsl_reference=dsl_docs or load_template("dsl_reference"))
    images, names = _attachments(gs, cp, gv, ablate)
    fb = feedback_text(summary=telemetry_summary, failure=outcome)
    source = getattr(rf_star, "source_text", None) or str(rf_star)
    body = render("evolution_user", sus=sus, rf_star=source.strip(), score=score if score is not None else "n/a",
                  feedback=fb.strip(), attachments=", ".join(names) or "none", count=count)
    if tip:
        body += "\n" + render("code_output_tip")
    return [system(sys_text), user(body, images)]


# ---------------------------------------------------------------------------
# evaluation


def _attachments(gs, cp, gv, ablate=()):
    items = []
    if "gs" not in ablate and gs is not None:
        items.append((gs, "rollout grid"))
    if "cp" not in ablate and cp is not None:
        items.append((cp, "contact plot"))
    if gv is not None:
        items.append((gv, "demonstration grid"))
    flat_paths, names = [], []
    for paths, name in items:
        group = list(paths) if isinstance(paths, (list, tuple)) else [paths]
        flat_paths.extend(group)
        names.append(name if len(group) == 1 else f"{name} ({len(group)} frames)")
    return _images(flat_paths), names


def encode_contacts(matrix, legs=("FL", "FR", "RL", "RR")):
    """Run-length text encoding of a 4 x T contact matrix, e.g. ``FL: 1x12 0x13 ...``."""
    lines = []
    for leg, row in zip(legs, np.asarray(matrix, dtype=int)):
        runs, start = [], 0
        for pos in range(1, len(row) + 1):
            if pos == len(row) or row[pos] != row[start]:
                runs.append(f"{row[start]}x{pos - start}")
                start = pos
        lines.append(f"{leg}: " + " ".join(runs))
    return "\n".join(lines)


def decode_contacts(text):
    rows = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        leg, runs = line.split(":", 1)
        leg = leg.strip()
        if leg not in ("FL", "FR", "RL", "RR"):
            continue
        vals = []
        for run in runs.split():
            bit, reps = run.split("x")
            vals.extend([int(bit)] * int(reps))
        rows[leg] = vals
    if len(rows) != 4:
        return None
    return np.array([rows[label] for label in ("FL", "FR", "RL", "RR")], dtype=bool)


def build_evaluation_prompt(gs, cp, gv, criteria=("stability", "periodicity", "adherence"), target="",
                            command=0.0, summary="", contacts=None, ablate=(), retry_after=None):
    """Scoring request; ``ablate`` may drop the rollout grid ("gs") and/or the contact plot ("cp").

    ``retry_after`` is an unparseable earlier reply; the stricter re-ask is
    appended after it.
    """
    crit = "\n".join(f"{idx + 1}. {CRITERIA_TEXT.get(crit_name, crit_name)}" for idx, crit_name in enumerate(criteria))
    sys_text = render("init_task_evaluator_system", criteria=crit)
    if "cp" not in ablate:
        sys_text += render("contact_sequence_system")
    images, names = _attachments(gs, cp, gv, ablate)
    block = ""
    if contacts is not None and "cp" not in ablate:
        block = "Contact sequence (run-length, 1 = stance):\n" + encode_contacts(contacts)
    body = render("evaluation_user", target=target, command=f"{command:.2f}", summary=summary,
                  contact_block=block, attachments=", ".join(names) or "none")
    messages = [system(sys_text), user(body, images)]
    if retry_after is not None:
        messages += [assistant(retry_after or "(empty reply)"), user(render("score_retry"))]
    return messages


def image_count(messages):
    return sum(len(msg.images) for msg in messages)


__all__ = ["SusArtifacts", "run_sus_chain", "build_sus_messages", "build_generation_prompt",
           "build_evaluation_prompt", "build_evolution_prompt", "encode_contacts", "decode_contacts",
           "gait_hint", "feedback_text", "image_count", "ChatMessage", "TextPart", "assistant"]
