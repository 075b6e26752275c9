"""Session, canvas, node and edge data model.

The main design canvas and the per-node reasoning sub-canvases share the same
edge and membership machinery. The main canvas may contain user-drawn cycles;
context assembly (``predecessors_in_order``) requires an acyclic ancestor
subgraph and reports CycleDetected otherwise. Sub-canvas chain graphs are kept
acyclic by the operations that build them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import TYPE_CHECKING, Iterable, Union

from .errors import CycleDetected, DuplicateEdge, DuplicateId, SelfLoop, UnknownId
from .runtime import Clock

if TYPE_CHECKING:
    from .reasoning import ChainNode

NodeId = str
SubCanvasId = str


@dataclass
class DesignContext:
    background: str
    design_goal: str
    style_preferences: list[str] = field(default_factory=list)


@dataclass
class DesignNode:
    """A main-canvas step of the design process: a title plus content blocks."""

    kind = "design"

    id: NodeId
    title: str
    blocks: list[str] = field(default_factory=list)
    position: tuple[float, float] = (0.0, 0.0)
    color: str | None = None
    subcanvas: SubCanvasId | None = None


@dataclass
class AiNode:
    """A main-canvas node whose content the model generates from predecessor context."""

    kind = "ai"

    id: NodeId
    title: str
    content: str = ""
    origin_prompt: str | None = None
    position: tuple[float, float] = (0.0, 0.0)
    user_edited: bool = False


@dataclass
class StickyNote:
    kind = "sticky"

    id: NodeId
    content: str
    position: tuple[float, float] = (0.0, 0.0)
    source_chain_node: NodeId | None = None


CanvasNode = Union[DesignNode, AiNode, StickyNote]


@dataclass
class Edge:
    id: NodeId
    source: NodeId
    target: NodeId


@dataclass
class Canvas:
    nodes: dict[NodeId, CanvasNode] = field(default_factory=dict)
    edges: dict[NodeId, Edge] = field(default_factory=dict)
    insertion_order: list[NodeId] = field(default_factory=list)


@dataclass
class SubCanvas:
    """Panel-C workspace attached to one design node: a goal plus its reasoning chain.

    ``notes`` live beside the chain and are exempt from chain-graph invariants.
    """

    id: SubCanvasId
    parent: NodeId
    goal: str
    chain_nodes: dict[NodeId, "ChainNode"] = field(default_factory=dict)
    edges: dict[NodeId, Edge] = field(default_factory=dict)
    chain_order: list[NodeId] = field(default_factory=list)
    notes: dict[NodeId, StickyNote] = field(default_factory=dict)


@dataclass
class Session:
    id: str
    context: DesignContext
    main_canvas: Canvas = field(default_factory=Canvas)
    subcanvases: dict[SubCanvasId, SubCanvas] = field(default_factory=dict)
    schema_version: int = 1
    created_at: datetime | None = None
    modified_at: datetime | None = None

    def touch(self, clock: Clock) -> None:
        now = clock.now()
        if self.created_at is None:
            self.created_at = now
        if self.modified_at is None or now > self.modified_at:
            self.modified_at = now


@dataclass
class Violation:
    """One broken invariant: which type, which id, what rule."""

    kind: str
    subject_id: str
    invariant: str

    def __str__(self) -> str:
        return f"{self.kind} {self.subject_id}: {self.invariant}"


# --- canvas operations ----------------------------------------------------

def add_node(canvas: Canvas, node: CanvasNode) -> NodeId:
    if node.id in canvas.nodes:
        raise DuplicateId(f"node {node.id} already present")
    canvas.nodes[node.id] = node
    canvas.insertion_order.append(node.id)
    return node.id


def remove_node(canvas: Canvas, node_id: NodeId, session: Session | None = None) -> int:
    """Remove a node plus incident edges; returns the removed edge count.

    When the node is a DesignNode owning a sub-canvas and a session is given,
    the sub-canvas is deleted with it.
    """
    node = canvas.nodes.get(node_id)
    if node is None:
        raise UnknownId(f"node {node_id} not in canvas")
    doomed = [eid for eid, e in canvas.edges.items() if e.source == node_id or e.target == node_id]
    for eid in doomed:
        del canvas.edges[eid]
    del canvas.nodes[node_id]
    canvas.insertion_order.remove(node_id)
    if session is not None and isinstance(node, DesignNode) and node.subcanvas:
        session.subcanvases.pop(node.subcanvas, None)
    return len(doomed)


def connect(canvas: Canvas, source: NodeId, target: NodeId, edge_id: NodeId) -> Edge:
    if source not in canvas.nodes:
        raise UnknownId(f"source {source} not in canvas")
    if target not in canvas.nodes:
        raise UnknownId(f"target {target} not in canvas")
    if source == target:
        raise SelfLoop(f"cannot connect {source} to itself")
    for e in canvas.edges.values():
        if e.source == source and e.target == target:
            raise DuplicateEdge(f"{source} -> {target} already connected")
    edge = Edge(id=edge_id, source=source, target=target)
    canvas.edges[edge.id] = edge
    return edge


def disconnect(canvas: Canvas, edge_id: NodeId) -> Edge:
    edge = canvas.edges.pop(edge_id, None)
    if edge is None:
        raise UnknownId(f"edge {edge_id} not in canvas")
    return edge


def ancestor_ids(edges: Iterable[Edge], node_id: NodeId) -> set[NodeId]:
    """All nodes with a directed path to ``node_id`` (excluding it, unless cyclic)."""
    incoming: dict[NodeId, list[NodeId]] = {}
    for e in edges:
        incoming.setdefault(e.target, []).append(e.source)
    seen: set[NodeId] = set()
    frontier = list(incoming.get(node_id, []))
    while frontier:
        cur = frontier.pop()
        if cur in seen:
            continue
        seen.add(cur)
        frontier.extend(incoming.get(cur, []))
    return seen


def predecessors_in_order(canvas: Canvas, node_id: NodeId) -> list[CanvasNode]:
    """Ancestors of a node in topological order, insertion order breaking ties."""
    nodes, order = _predecessor_order(canvas.nodes.keys(), canvas.edges.values(),
                                      canvas.insertion_order, node_id)
    return [canvas.nodes[i] for i in order]


def chain_predecessors_in_order(sub: SubCanvas, node_id: NodeId) -> list["ChainNode"]:
    _, order = _predecessor_order(sub.chain_nodes.keys(), sub.edges.values(),
                                  sub.chain_order, node_id)
    return [sub.chain_nodes[i] for i in order]


def _predecessor_order(
    member_ids: Iterable[NodeId],
    edges: Iterable[Edge],
    insertion_order: list[NodeId],
    node_id: NodeId,
) -> tuple[set[NodeId], list[NodeId]]:
    members = set(member_ids)
    if node_id not in members:
        raise UnknownId(f"node {node_id} not in canvas")
    edges = list(edges)
    anc = ancestor_ids(edges, node_id)
    if node_id in anc:
        raise CycleDetected(f"node {node_id} lies on a cycle")

    pos = {nid: i for i, nid in enumerate(insertion_order)}
    indeg = {nid: 0 for nid in anc}
    out: dict[NodeId, list[NodeId]] = {nid: [] for nid in anc}
    for e in edges:
        if e.source in anc and e.target in anc:
            indeg[e.target] += 1
            out[e.source].append(e.target)

    ready = sorted((nid for nid, d in indeg.items() if d == 0), key=pos.__getitem__)
    result: list[NodeId] = []
    while ready:
        cur = ready.pop(0)
        result.append(cur)
        changed = False
        for nxt in out[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
                changed = True
        if changed:
            ready.sort(key=pos.__getitem__)
    if len(result) != len(anc):
        raise CycleDetected(f"cycle within the ancestor subgraph of {node_id}")
    return anc, result


def has_cycle(member_ids: Iterable[NodeId], edges: Iterable[Edge]) -> bool:
    members = set(member_ids)
    indeg = {nid: 0 for nid in members}
    out: dict[NodeId, list[NodeId]] = {nid: [] for nid in members}
    for e in edges:
        if e.source in members and e.target in members:
            indeg[e.target] += 1
            out[e.source].append(e.target)
    ready = [nid for nid, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        cur = ready.pop()
        seen += 1
        for nxt in out[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    return seen != len(members)


def create_subcanvas(session: Session, parent_id: NodeId, goal: str, sub_id: SubCanvasId) -> SubCanvas:
    node = session.main_canvas.nodes.get(parent_id)
    if node is None:
        raise UnknownId(f"node {parent_id} not in main canvas")
    if not isinstance(node, DesignNode):
        raise UnknownId(f"node {parent_id} is not a design node")
    if sub_id in session.subcanvases:
        raise DuplicateId(f"subcanvas {sub_id} already present")
    sub = SubCanvas(id=sub_id, parent=parent_id, goal=goal)
    session.subcanvases[sub_id] = sub
    node.subcanvas = sub_id
    return sub


# --- validation -----------------------------------------------------------

def validate(session: Session) -> list[Violation]:
    """Check every structural invariant; an empty list means the session is sound."""
    out: list[Violation] = []
    out.extend(_validate_canvas("main_canvas", session.main_canvas.nodes,
                                session.main_canvas.edges, session.main_canvas.insertion_order))

    for node in session.main_canvas.nodes.values():
        if isinstance(node, DesignNode):
            if not node.title:
                out.append(Violation("DesignNode", node.id, "title non-empty"))
            if node.subcanvas is not None:
                sub = session.subcanvases.get(node.subcanvas)
                if sub is None:
                    out.append(Violation("DesignNode", node.id,
                                         f"subcanvas {node.subcanvas} missing from session"))
                elif sub.parent != node.id:
                    out.append(Violation("SubCanvas", sub.id, "parent backlink mismatch"))

    for sid, sub in session.subcanvases.items():
        parent = session.main_canvas.nodes.get(sub.parent)
        if parent is None or not isinstance(parent, DesignNode):
            out.append(Violation("SubCanvas", sid, "parent must be a design node on the main canvas"))
        out.extend(_validate_canvas(f"subcanvas {sid}", sub.chain_nodes, sub.edges, sub.chain_order))
        if has_cycle(sub.chain_nodes.keys(), sub.edges.values()):
            out.append(Violation("SubCanvas", sid, "chain graph must be a DAG"))
        for cn in sub.chain_nodes.values():
            if cn.rationale is not None and cn.run_state.value not in ("completed", "stale", "failed"):
                out.append(Violation("ChainNode", cn.id,
                                     "rationale present requires run_state completed, stale, or failed"))
            if cn.stage is not None and cn.run_state.value == "pending":
                out.append(Violation("ChainNode", cn.id, "stage present requires run_state beyond pending"))
            if cn.modes.secondary is not None and cn.modes.secondary == cn.modes.primary:
                out.append(Violation("ChainNode", cn.id, "secondary mode must differ from primary"))

    if session.created_at and session.modified_at and session.modified_at < session.created_at:
        out.append(Violation("Session", session.id, "modified_at must be >= created_at"))
    return out


def _validate_canvas(label: str, nodes: dict, edges: dict[NodeId, Edge],
                     insertion_order: list[NodeId]) -> list[Violation]:
    out: list[Violation] = []
    seen_pairs: set[tuple[NodeId, NodeId]] = set()
    for eid, edge in edges.items():
        if eid != edge.id:
            out.append(Violation("Edge", eid, f"keyed under a different id in {label}"))
        if edge.source == edge.target:
            out.append(Violation("Edge", edge.id, "source and target must differ"))
        if edge.source not in nodes:
            out.append(Violation("Edge", edge.id, f"source {edge.source} not a member of {label}"))
        if edge.target not in nodes:
            out.append(Violation("Edge", edge.id, f"target {edge.target} not a member of {label}"))
        pair = (edge.source, edge.target)
        if pair in seen_pairs:
            out.append(Violation("Edge", edge.id, f"duplicate {pair[0]} -> {pair[1]} in {label}"))
        seen_pairs.add(pair)
    if sorted(insertion_order) != sorted(nodes.keys()):
        out.append(Violation("Canvas", label, "insertion order must be a permutation of node ids"))
    return out
