"""Chat message types and their OpenAI-style wire encoding."""
import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InputError, MissingAttachment

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    data: str                      # base64 payload
    media_type: str = "image/png"
    source: str = None             # file name, for transcripts only

    @property
    def digest(self):
        return hashlib.sha256(self.data.encode("ascii")).hexdigest()

    @classmethod
    def from_file(cls, path, label=None):
        src = Path(path)
        if not src.is_file():
            raise MissingAttachment(f"image attachment not found: {src}")
        media = "image/svg+xml" if src.suffix == ".svg" else "image/jpeg" if src.suffix in (".jpg", ".jpeg") \
            else "image/png"
        return cls(base64.b64encode(src.read_bytes()).decode("ascii"), media, label or src.name)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.role not in ROLES:
            raise InputError(f"unknown chat role {self.role!r}")
        if not self.parts:
            raise InputError("a chat message needs at least one part")
        if self.role != "user" and any(isinstance(part, ImagePart) for part in self.parts):
            raise InputError("image parts are only allowed in user messages")

    @property
    def text(self):
        return "\n".join(part.text for part in self.parts if isinstance(part, TextPart))

    @property
    def images(self):
        return [part for part in self.parts if isinstance(part, ImagePart)]

    def to_wire(self):
        content = []
        for part in self.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                content.append({"type": "image_url",
                                "image_url": {"url": f"data:{part.media_type};base64,{part.data}"}})
        return {"role": self.role, "content": content}

    def to_record(self):
        """Transcript form: images replaced by name and digest."""
        content = []
        for part in self.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                content.append({"type": "image", "source": part.source, "media_type": part.media_type,
                                "sha256": part.digest})
        return {"role": self.role, "content": content}


def system(text):
    return ChatMessage("system", (TextPart(text),))


def user(text, images=()):
    return ChatMessage("user", (TextPart(text),) + tuple(images))


def assistant(text):
    return ChatMessage("assistant", (TextPart(text),))


def request_body(messages, model, temperature, seed=None):
    body = {"model": model, "temperature": temperature, "messages": [msg.to_wire() for msg in messages]}
    if seed is not None:
        body["seed"] = seed
    return body


def request_key(messages, model=None, temperature=None, seed=None):
    """Stable hash of a request; images enter through their digests."""
    canon = {"temperature": temperature, "seed": seed,
             "messages": [msg.to_record() for msg in messages]}
    for msg in canon["messages"]:
        for part in msg["content"]:
            part.pop("source", None)
    blob = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def role_tag(messages):
    """Role named by a ``[role: ...]`` tag in the first system message, if any."""
    for msg in messages:
        if msg.role == "system":
            text = msg.text
            start = text.find("[role:")
            if start >= 0:
                end = text.find("]", start)
                return text[start + 6:end].strip()
            return None
    return None
