"""Chat clients (live and offline) and prompt assembly."""
from pathlib import Path

from .client import BaseClient, ChatClient, TranscriptLog
from .messages import ChatMessage, ImagePart, TextPart, request_key, role_tag
from .mock import FixtureMock, ProceduralMock, Recorder, ScriptedMock
from .prompts import (SusArtifacts, build_evaluation_prompt, build_evolution_prompt, build_generation_prompt,
                      run_sus_chain)

DEFAULT_FIXTURES = Path(__file__).resolve().parent.parent / "data" / "fixtures_trot.json"


def make_client(mode="procedural", seed=0, fixtures=None, n_candidates=8, max_concurrency=4):
    """Client for a config mode: live | fixture | procedural."""
    if mode == "live":
        return ChatClient.from_env(max_concurrency=max_concurrency)
    if mode == "fixture":
        return FixtureMock(fixtures or DEFAULT_FIXTURES, max_concurrency=max_concurrency)
    if mode == "procedural":
        return ProceduralMock(seed=seed, n_candidates=n_candidates, max_concurrency=max_concurrency)
    raise ValueError(f"unknown client mode {mode!r}")


__all__ = ["BaseClient", "ChatClient", "ChatMessage", "FixtureMock", "ImagePart", "ProceduralMock", "Recorder",
           "ScriptedMock", "SusArtifacts", "TextPart", "TranscriptLog", "build_evaluation_prompt",
           "build_evolution_prompt", "build_generation_prompt", "make_client", "request_key", "role_tag",
           "run_sus_chain"]
