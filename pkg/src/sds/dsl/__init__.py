"""Reward-program language: parse, validate, evaluate."""
import re

from .check import CHECKS, ValidationReport, validate
from .interp import SubRewardBreakdown, evaluate, evaluate_raw, match_phase
from .observation import FIELD_SHAPES, LEG_ORDER, Observation
from .syntax import RewardProgram, SubReward, parse, to_source

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_candidates(vlm_text):
    """Contents of every fenced code block, in order."""
    return [found.group(1) for found in _FENCE_RE.finditer(vlm_text or "")]


__all__ = [
    "CHECKS", "FIELD_SHAPES", "LEG_ORDER", "Observation", "RewardProgram", "SubReward",
    "SubRewardBreakdown", "ValidationReport", "evaluate", "evaluate_raw", "extract_candidates",
    "match_phase", "parse", "to_source", "validate",
]
