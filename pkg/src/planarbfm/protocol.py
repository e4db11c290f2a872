"""Wire protocol for the steering service: JSON text frames, one per message.

Client → server: hello, reset, set_mask, set_goal, set_mode,
set_modulation, set_composition, pause, resume.
Server → client: hello (session info), state, error.

Every numeric payload must be finite; unknown types and malformed payloads
are rejected with a structured :class:`ProtocolError` whose ``code`` the
service echoes back in an ``error`` frame.  The JSON schema for the full
message union is exported by :func:`protocol_schema`, and the browser
client validates against the same document.
"""

from __future__ import annotations

import json
import math
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator

from .control import GOAL_DIM, MASK_DIM

__all__ = [
    "ClientMessage",
    "ErrorMsg",
    "GoalSpec",
    "Hello",
    "HelloReply",
    "Pause",
    "ProtocolError",
    "RefGhost",
    "Reset",
    "Resume",
    "ServerMessage",
    "SetComposition",
    "SetGoal",
    "SetMask",
    "SetMode",
    "SetModulation",
    "StateMsg",
    "parse_client_message",
    "protocol_schema",
]

PROTOCOL_VERSION = 1


class ProtocolError(ValueError):
    """Malformed frame; ``code`` is machine-readable."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _require_finite(values: list[float], name: str) -> list[float]:
    if any(not math.isfinite(v) for v in values):
        raise ValueError(f"{name} entries must be finite")
    return values


def _require_bits(values: list[float], name: str) -> list[float]:
    if any(v not in (0, 1, 0.0, 1.0) for v in values):
        raise ValueError(f"{name} entries must be 0 or 1")
    return [float(v) for v in values]


class GoalSpec(_Strict):
    """A goal/mask pair, the unit of composition endpoints."""

    goal: list[float] = Field(min_length=GOAL_DIM, max_length=GOAL_DIM)
    mask: list[float] = Field(min_length=MASK_DIM, max_length=MASK_DIM)

    @field_validator("goal")
    @classmethod
    def _goal_finite(cls, v):
        return _require_finite(v, "goal")

    @field_validator("mask")
    @classmethod
    def _mask_bits(cls, v):
        return _require_bits(v, "mask")


# -- client → server --------------------------------------------------------
class Hello(_Strict):
    type: Literal["hello"]


class Reset(_Strict):
    """Restart from a named clip (tracking) or the default stand pose."""

    type: Literal["reset"]
    clip: Optional[str] = None


class SetMask(_Strict):
    type: Literal["set_mask"]
    mask: list[float] = Field(min_length=MASK_DIM, max_length=MASK_DIM)

    @field_validator("mask")
    @classmethod
    def _bits(cls, v):
        return _require_bits(v, "mask")


class SetGoal(_Strict):
    type: Literal["set_goal"]
    goal: list[float] = Field(min_length=GOAL_DIM, max_length=GOAL_DIM)

    @field_validator("goal")
    @classmethod
    def _finite(cls, v):
        return _require_finite(v, "goal")


class SetMode(_Strict):
    type: Literal["set_mode"]
    mode: Literal["TRACK", "TELEOP", "LOCO"]


class SetModulation(_Strict):
    type: Literal["set_modulation"]
    lam: float = Field(alias="lambda", ge=0.0, allow_inf_nan=False)
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SetComposition(_Strict):
    type: Literal["set_composition"]
    enabled: bool = True
    alpha: float = Field(default=0.5, ge=0.0, le=1.0, allow_inf_nan=False)
    a: Optional[GoalSpec] = None
    b: Optional[GoalSpec] = None

    def model_post_init(self, _ctx) -> None:
        if self.enabled and (self.a is None or self.b is None):
            raise ValueError("enabled composition needs both endpoints a and b")


class Pause(_Strict):
    type: Literal["pause"]


class Resume(_Strict):
    type: Literal["resume"]


ClientMessage = Annotated[
    Union[Hello, Reset, SetMask, SetGoal, SetMode, SetModulation,
          SetComposition, Pause, Resume],
    Field(discriminator="type"),
]
_client_adapter: TypeAdapter = TypeAdapter(ClientMessage)


# -- server → client --------------------------------------------------------
class HelloReply(_Strict):
    type: Literal["hello"] = "hello"
    protocol_version: int = PROTOCOL_VERSION
    clips: list[str] = Field(default_factory=list)
    control_hz: float = 50.0
    state_hz: float = 30.0
    mask_dim: int = MASK_DIM
    goal_dim: int = GOAL_DIM


class RefGhost(_Strict):
    base: list[float] = Field(min_length=3, max_length=3)
    keypoints: list[list[float]]


class StateMsg(_Strict):
    type: Literal["state"] = "state"
    t: float
    base: list[float] = Field(min_length=3, max_length=3)   # [x, z, phi]
    q: list[float] = Field(min_length=6, max_length=6)
    dq: list[float] = Field(min_length=6, max_length=6)
    keypoints: list[list[float]]                            # 7 × [x, z]
    mask: list[float] = Field(min_length=MASK_DIM, max_length=MASK_DIM)
    z_norm: float
    paused: bool = False
    ref: Optional[RefGhost] = None


class ErrorMsg(_Strict):
    type: Literal["error"] = "error"
    code: str
    message: str


ServerMessage = Annotated[
    Union[HelloReply, StateMsg, ErrorMsg], Field(discriminator="type")
]
_server_adapter: TypeAdapter = TypeAdapter(ServerMessage)


# -- parsing / schema -------------------------------------------------------
def parse_client_message(text: str | bytes) -> object:
    """Decode one client frame; raises :class:`ProtocolError` on any fault."""
    try:
        payload = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ProtocolError("bad_json", f"frame is not valid JSON: {e}") from None
    if not isinstance(payload, dict):
        raise ProtocolError("bad_json", "frame must be a JSON object")
    mtype = payload.get("type")
    known = {"hello", "reset", "set_mask", "set_goal", "set_mode",
             "set_modulation", "set_composition", "pause", "resume"}
    if mtype not in known:
        raise ProtocolError("unknown_type", f"unknown message type {mtype!r}")
    try:
        return _client_adapter.validate_python(payload)
    except Exception as e:
        raise ProtocolError("invalid_payload", f"invalid {mtype} payload: {e}") from None


def protocol_schema() -> dict:
    """JSON schema covering both directions of the protocol."""
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "planarbfm steering protocol",
        "protocol_version": PROTOCOL_VERSION,
        "client": _client_adapter.json_schema(),
        "server": _server_adapter.json_schema(),
    }
