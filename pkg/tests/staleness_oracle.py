"""Independent staleness bookkeeping for random edit-script tests.

The oracle never looks at run_state, content_version, or fingerprints inside
the implementation. It keeps its own version counters and its own captured
fingerprints, recomputing ancestor order with networkx, and predicts the full
run-state of every chain node after each operation.
"""

import random

import networkx as nx

from dloop.reasoning import RunState


class StalenessOracle:
    def __init__(self):
        self.state: dict[str, str] = {}
        self.version: dict[str, int] = {}
        self.captured: dict[str, tuple] = {}

    def fingerprint(self, sub, node_id: str) -> tuple:
        g = nx.DiGraph()
        g.add_nodes_from(sub.chain_order)
        g.add_edges_from((e.source, e.target) for e in sub.edges.values())
        ancestors = nx.ancestors(g, node_id)
        pos = {nid: i for i, nid in enumerate(sub.chain_order)}
        ordered = [
            n for n in nx.lexicographical_topological_sort(
                g.subgraph(ancestors), key=pos.__getitem__)
        ]
        return tuple((n, self.version[n]) for n in ordered)

    def note_created(self, node_id: str) -> None:
        self.state[node_id] = "pending"
        self.version[node_id] = 0

    def note_deleted(self, node_id: str) -> None:
        self.state.pop(node_id, None)
        self.version.pop(node_id, None)
        self.captured.pop(node_id, None)

    def note_ran(self, sub, node_id: str) -> None:
        self.version[node_id] += 1
        self.state[node_id] = "completed"
        self.captured[node_id] = self.fingerprint(sub, node_id)

    def note_revised(self, node_id: str) -> None:
        self.version[node_id] += 1

    def refresh(self, sub) -> None:
        for node_id, state in self.state.items():
            if state == "completed" and self.fingerprint(sub, node_id) != self.captured[node_id]:
                self.state[node_id] = "stale"

    def check(self, sub) -> None:
        assert set(self.state) == set(sub.chain_nodes)
        for node_id, node in sub.chain_nodes.items():
            assert node.run_state.value == self.state[node_id], (
                f"{node_id}: oracle says {self.state[node_id]}, "
                f"implementation says {node.run_state.value}")


def drive_random_script(orch, session, sub, event_log, rng: random.Random,
                        n_ops: int = 15) -> None:
    """Apply random ops to one sub-canvas, checking the oracle after each."""
    from dloop.errors import ReorderRejected

    oracle = StalenessOracle()
    for nid in sub.chain_order:
        oracle.note_created(nid)
    oracle.check(sub)

    for step in range(n_ops):
        ids = list(sub.chain_order)
        runnable = [n for n in ids
                    if sub.chain_nodes[n].run_state in (RunState.PENDING, RunState.STALE)]
        editable = [n for n in ids
                    if sub.chain_nodes[n].run_state in (RunState.COMPLETED, RunState.STALE)]
        choices = ["add"]
        if runnable:
            choices.append("run")
        if editable:
            choices += ["revise", "regenerate"]
        if len(ids) > 1:
            choices += ["delete", "reorder"]
        op = rng.choice(choices)

        if op == "run":
            target = rng.choice(runnable)
            orch.run_chain_node(session, sub.id, target, event_log)
            assert sub.chain_nodes[target].run_state is RunState.COMPLETED
            oracle.note_ran(sub, target)
        elif op == "regenerate":
            target = rng.choice(editable)
            orch.regenerate(session, sub.id, target, event_log)
            oracle.note_ran(sub, target)
        elif op == "revise":
            target = rng.choice(editable)
            orch.cocreate_revise(session, sub.id, target,
                                 {"title": f"edited {step} {target}"}, event_log)
            oracle.note_revised(target)
        elif op == "add":
            after = rng.choice(ids + [None]) if ids else None
            node = orch.cocreate_add(session, sub.id, after,
                                     f"angle {step} on the kiosk journey", event_log)
            oracle.note_created(node.id)
        elif op == "delete":
            target = rng.choice(ids)
            orch.cocreate_delete(session, sub.id, target, event_log)
            oracle.note_deleted(target)
        elif op == "reorder":
            first, second = rng.sample(ids, 2)
            try:
                orch.cocreate_reorder(session, sub.id, first, second, event_log)
            except ReorderRejected:
                pass
        oracle.refresh(sub)
        oracle.check(sub)
