"""Curation event vocabulary shared by the orchestrator and the session store.

Every mutating operation emits exactly one event. The payload is a plain JSON
object (stored as text) carrying whatever the operation needs to be replayed:
user-supplied arguments plus the ids the id factory handed out during the op.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from enum import Enum

from .runtime import format_timestamp, parse_timestamp


class EventKind(str, Enum):
    # chain curation
    ADD = "add"
    DELETE = "delete"
    REVISE = "revise"
    REGENERATE = "regenerate"
    REFINE_PROMPT = "refine_prompt"
    OUTPUT_TO_CANVAS = "output_to_canvas"
    CREATE_NOTE = "create_note"
    REORDER = "reorder"
    RUN_NODE = "run_node"
    OPEN_SUBCANVAS = "open_subcanvas"
    # main-canvas work
    GENERATE_PIPELINE = "generate_pipeline"
    FILL_NODE = "fill_node"
    BRAINSTORM = "brainstorm"
    CANVAS_ADD_NODE = "canvas_add_node"
    CANVAS_UPDATE_NODE = "canvas_update_node"
    CANVAS_REMOVE_NODE = "canvas_remove_node"
    CANVAS_CONNECT = "canvas_connect"
    CANVAS_DISCONNECT = "canvas_disconnect"


@dataclass
class CoCreationEvent:
    kind: EventKind
    target: str
    payload: dict
    at: datetime

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "target": self.target,
            "payload": json.dumps(self.payload, sort_keys=True, ensure_ascii=False),
            "at": format_timestamp(self.at),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoCreationEvent":
        return cls(
            kind=EventKind(data["kind"]),
            target=data["target"],
            payload=json.loads(data["payload"]),
            at=parse_timestamp(data["at"]),
        )
