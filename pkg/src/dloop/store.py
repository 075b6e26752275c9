"""Canonical session serialization and file persistence.

One session per file at ``{session_id}.dloop.json``. Serialization is
canonical: nodes appear in insertion order, chain nodes in chain order,
everything else sorted by id, JSON keys sorted, compact separators. Dumping a
loaded session therefore reproduces the file byte for byte, which is what the
replay tests lean on.

Writes go through a per-session lock and an atomic temp-file rename, so a
crashed save never leaves a torn file behind.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

from . import graph
from .canon import canonical_dumps
from .errors import CorruptSession, IoError, SchemaVersionUnsupported
from .events import CoCreationEvent
from .graph import (
    AiNode,
    Canvas,
    DesignContext,
    DesignNode,
    Edge,
    Session,
    StickyNote,
    SubCanvas,
)
from .reasoning import (
    ChainNode,
    DesignStage,
    ModeAssignment,
    Rationale,
    ReasoningMode,
    RunState,
)
from .runtime import format_timestamp, parse_timestamp

logger = logging.getLogger("dloop.store")

SCHEMA_VERSION = 1
FILE_SUFFIX = ".dloop.json"


# --- serialization ----------------------------------------------------------

def _node_to_dict(node) -> dict:
    if isinstance(node, DesignNode):
        return {
            "kind": "design",
            "id": node.id,
            "title": node.title,
            "blocks": list(node.blocks),
            "position": list(node.position),
            "color": node.color,
            "subcanvas": node.subcanvas,
        }
    if isinstance(node, AiNode):
        return {
            "kind": "ai",
            "id": node.id,
            "title": node.title,
            "content": node.content,
            "origin_prompt": node.origin_prompt,
            "position": list(node.position),
            "user_edited": node.user_edited,
        }
    if isinstance(node, StickyNote):
        return {
            "kind": "sticky",
            "id": node.id,
            "content": node.content,
            "position": list(node.position),
            "source_chain_node": node.source_chain_node,
        }
    raise TypeError(f"unknown node type {type(node).__name__}")


def _node_from_dict(data: dict):
    kind = data["kind"]
    if kind == "design":
        return DesignNode(
            id=data["id"], title=data["title"], blocks=list(data["blocks"]),
            position=tuple(data["position"]), color=data["color"],
            subcanvas=data["subcanvas"],
        )
    if kind == "ai":
        return AiNode(
            id=data["id"], title=data["title"], content=data["content"],
            origin_prompt=data["origin_prompt"], position=tuple(data["position"]),
            user_edited=data["user_edited"],
        )
    if kind == "sticky":
        return StickyNote(
            id=data["id"], content=data["content"],
            position=tuple(data["position"]),
            source_chain_node=data["source_chain_node"],
        )
    raise ValueError(f"unknown node kind {kind!r}")


def _edge_to_dict(edge: Edge) -> dict:
    return {"id": edge.id, "source": edge.source, "target": edge.target}


def chain_node_to_dict(node: ChainNode) -> dict:
    return {
        "id": node.id,
        "title": node.title,
        "brief": node.brief,
        "modes": {
            "primary": node.modes.primary.value,
            "secondary": node.modes.secondary.value if node.modes.secondary else None,
        },
        "stage": node.stage.value if node.stage else None,
        "rationale": node.rationale.to_dict() if node.rationale else None,
        "run_state": node.run_state.value,
        "user_edited": node.user_edited,
        "order_index": node.order_index,
        "parallel_group": node.parallel_group,
        "content_version": node.content_version,
        "last_error": node.last_error,
        "completed_fingerprint": (
            [list(pair) for pair in node.completed_fingerprint]
            if node.completed_fingerprint is not None else None
        ),
    }


def chain_node_from_dict(data: dict) -> ChainNode:
    return ChainNode(
        id=data["id"],
        title=data["title"],
        brief=data["brief"],
        modes=ModeAssignment(
            primary=ReasoningMode(data["modes"]["primary"]),
            secondary=(ReasoningMode(data["modes"]["secondary"])
                       if data["modes"]["secondary"] else None),
        ),
        stage=DesignStage(data["stage"]) if data["stage"] else None,
        rationale=Rationale(**data["rationale"]) if data["rationale"] else None,
        run_state=RunState(data["run_state"]),
        user_edited=data["user_edited"],
        order_index=data["order_index"],
        parallel_group=data["parallel_group"],
        content_version=data["content_version"],
        last_error=data["last_error"],
        completed_fingerprint=(
            tuple((pair[0], pair[1]) for pair in data["completed_fingerprint"])
            if data["completed_fingerprint"] is not None else None
        ),
    )


def _canvas_to_dict(canvas: Canvas) -> dict:
    return {
        "nodes": [_node_to_dict(canvas.nodes[nid]) for nid in canvas.insertion_order],
        "edges": [_edge_to_dict(canvas.edges[eid]) for eid in sorted(canvas.edges)],
    }


def _canvas_from_dict(data: dict) -> Canvas:
    canvas = Canvas()
    for node_data in data["nodes"]:
        node = _node_from_dict(node_data)
        canvas.nodes[node.id] = node
        canvas.insertion_order.append(node.id)
    for edge_data in data["edges"]:
        canvas.edges[edge_data["id"]] = Edge(**edge_data)
    return canvas


def _subcanvas_to_dict(sub: SubCanvas) -> dict:
    return {
        "id": sub.id,
        "parent": sub.parent,
        "goal": sub.goal,
        "chain_nodes": [chain_node_to_dict(sub.chain_nodes[nid]) for nid in sub.chain_order],
        "edges": [_edge_to_dict(sub.edges[eid]) for eid in sorted(sub.edges)],
        "notes": [_node_to_dict(sub.notes[nid]) for nid in sorted(sub.notes)],
    }


def _subcanvas_from_dict(data: dict) -> SubCanvas:
    sub = SubCanvas(id=data["id"], parent=data["parent"], goal=data["goal"])
    for node_data in data["chain_nodes"]:
        node = chain_node_from_dict(node_data)
        sub.chain_nodes[node.id] = node
        sub.chain_order.append(node.id)
    for edge_data in data["edges"]:
        sub.edges[edge_data["id"]] = Edge(**edge_data)
    for note_data in data["notes"]:
        note = _node_from_dict(note_data)
        sub.notes[note.id] = note
    return sub


def session_to_dict(session: Session) -> dict:
    return {
        "id": session.id,
        "context": {
            "background": session.context.background,
            "design_goal": session.context.design_goal,
            "style_preferences": list(session.context.style_preferences),
        },
        "main_canvas": _canvas_to_dict(session.main_canvas),
        "subcanvases": [_subcanvas_to_dict(session.subcanvases[sid])
                        for sid in sorted(session.subcanvases)],
        "schema_version": session.schema_version,
        "created_at": format_timestamp(session.created_at) if session.created_at else None,
        "modified_at": format_timestamp(session.modified_at) if session.modified_at else None,
    }


def session_from_dict(data: dict) -> Session:
    session = Session(
        id=data["id"],
        context=DesignContext(
            background=data["context"]["background"],
            design_goal=data["context"]["design_goal"],
            style_preferences=list(data["context"]["style_preferences"]),
        ),
        main_canvas=_canvas_from_dict(data["main_canvas"]),
        schema_version=data["schema_version"],
        created_at=parse_timestamp(data["created_at"]) if data["created_at"] else None,
        modified_at=parse_timestamp(data["modified_at"]) if data["modified_at"] else None,
    )
    for sub_data in data["subcanvases"]:
        sub = _subcanvas_from_dict(sub_data)
        session.subcanvases[sub.id] = sub
    return session


def dumps_session(session: Session, event_log: list[CoCreationEvent]) -> str:
    envelope = {
        "schema_version": SCHEMA_VERSION,
        "session": session_to_dict(session),
        "event_log": [e.to_dict() for e in event_log],
    }
    return canonical_dumps(envelope)


def loads_session(text: str) -> tuple[Session, list[CoCreationEvent]]:
    try:
        envelope = json.loads(text)
        version = envelope["schema_version"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptSession([f"unreadable session file: {exc}"]) from exc
    if version != SCHEMA_VERSION:
        raise SchemaVersionUnsupported(
            f"schema version {version} not supported (expected {SCHEMA_VERSION})")
    try:
        session = session_from_dict(envelope["session"])
        events = [CoCreationEvent.from_dict(e) for e in envelope["event_log"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptSession([f"malformed session payload: {exc}"]) from exc
    violations = graph.validate(session)
    if violations:
        raise CorruptSession(violations)
    return session, events


# --- file layer --------------------------------------------------------------

def session_path(directory: str | Path, session_id: str) -> Path:
    return Path(directory) / f"{session_id}{FILE_SUFFIX}"


def save_session(directory: str | Path, session: Session,
                 event_log: list[CoCreationEvent]) -> Path:
    path = session_path(directory, session.id)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    text = dumps_session(session, event_log)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoError(f"cannot write session file {path}: {exc}") from exc
    return path


def load_session(directory: str | Path, session_id: str) -> tuple[Session, list[CoCreationEvent]]:
    path = session_path(directory, session_id)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read session file {path}: {exc}") from exc
    return loads_session(text)


def delete_session(directory: str | Path, session_id: str) -> None:
    path = session_path(directory, session_id)
    try:
        path.unlink()
    except FileNotFoundError as exc:
        raise IoError(f"no session file for {session_id}") from exc
    except OSError as exc:
        raise IoError(f"cannot delete session file {path}: {exc}") from exc


def list_sessions(directory: str | Path) -> list[dict]:
    """Summaries of every readable session, newest modification first.

    Unreadable files are skipped with a warning rather than failing the whole
    listing.
    """
    directory = Path(directory)
    if not directory.is_dir():
        return []
    summaries = []
    for path in sorted(directory.glob(f"*{FILE_SUFFIX}")):
        try:
            session, _ = loads_session(path.read_text(encoding="utf-8"))
        except (OSError, CorruptSession, SchemaVersionUnsupported) as exc:
            logger.warning("skipping unreadable session file %s: %s", path, exc)
            continue
        summaries.append({
            "id": session.id,
            "design_goal": session.context.design_goal,
            "created_at": format_timestamp(session.created_at) if session.created_at else None,
            "modified_at": format_timestamp(session.modified_at) if session.modified_at else None,
        })
    summaries.sort(key=lambda s: (s["modified_at"] or "", s["id"]), reverse=True)
    return summaries


# --- write serialization ------------------------------------------------------

_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


@contextmanager
def writer_lock(session_id: str):
    with _locks_guard:
        lock = _locks.setdefault(session_id, threading.Lock())
    with lock:
        yield
