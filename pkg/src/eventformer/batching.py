"""Masked-chain layouts and padded batches.

A chain is flattened graph by graph.  Every masked graph is replaced by a
fixed template (one trigger placeholder followed by ``mask_slots`` argument
placeholders, star-connected with role ``other``); none of its original
nodes appear in the layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import membership
from .encoding import EmbeddingProvider
from .events import ArgRole, EventChain, MAX_CHAIN_LENGTH
from .gnn import NUM_ROLES, GraphStructure

OTHER_ROLE = ArgRole.OTHER.index


@dataclass
class ChainExample:
    """A chain with its frozen raw node embeddings computed once."""

    chain: EventChain
    raw: np.ndarray  # (n_nodes, E) in chain order
    graph_of: np.ndarray
    is_trigger: np.ndarray
    lexeme: np.ndarray
    coref: np.ndarray  # annotated coref ids; -1 for triggers
    role: np.ndarray  # role index of each argument's edge; -1 for triggers
    graph_nodes: list[range] = field(default_factory=list)

    @classmethod
    def build(cls, chain: EventChain, provider: EmbeddingProvider) -> "ChainExample":
        raw, graph_of, trig, lex, coref, role, ranges = [], [], [], [], [], [], []
        start = 0
        for gi, graph in enumerate(chain.graphs):
            for node in graph.nodes:
                raw.append(provider.embed(node))
                graph_of.append(gi)
                trig.append(node.is_trigger)
                lex.append(node.lexeme_id)
                coref.append(-1 if node.is_trigger else node.coref_index)
                r = graph.role_of(node.node_id)
                role.append(-1 if node.is_trigger or r is None else r.index)
            ranges.append(range(start, start + len(graph.nodes)))
            start += len(graph.nodes)
        return cls(chain, np.vstack(raw), np.asarray(graph_of), np.asarray(trig, dtype=bool),
                   np.asarray(lex), np.asarray(coref), np.asarray(role), ranges)

    @property
    def num_graphs(self) -> int:
        return len(self.graph_nodes)


@dataclass
class MaskedLayout:
    """Node order of one chain after masking.

    ``source[i]`` indexes the example's nodes, or is -1 for template rows
    whose ``template[i]`` gives the placeholder id (0 = trigger, 1.. = slots).
    """

    example: ChainExample
    target: int
    masked: tuple[int, ...]
    source: np.ndarray
    template: np.ndarray
    graph_of: np.ndarray
    trigger_row: int
    slot_rows: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.source)


def mask_graph(example: ChainExample, target: int, mask_slots: int,
               extra_masked: Sequence[int] = (), apply_mask: bool = True) -> MaskedLayout:
    """Replace graph ``target`` (and ``extra_masked``) by the learned template.

    With ``apply_mask=False`` nothing is hidden; the layout still records
    ``target`` as the reference graph (used for inspection of raw chains).
    """
    if not 0 <= target < example.num_graphs:
        raise IndexError(f"target graph {target} outside chain of {example.num_graphs} graphs")
    masked = tuple(sorted({target, *extra_masked})) if apply_mask else ()
    source, template, graph_of = [], [], []
    trigger_row, slot_rows = -1, []
    for gi, nodes in enumerate(example.graph_nodes):
        if gi in masked:
            if gi == target:
                trigger_row = len(source)
                slot_rows = list(range(len(source) + 1, len(source) + 1 + mask_slots))
            source.extend([-1] * (mask_slots + 1))
            template.extend(range(mask_slots + 1))
            graph_of.extend([gi] * (mask_slots + 1))
        else:
            source.extend(nodes)
            template.extend([-1] * len(nodes))
            graph_of.extend([gi] * len(nodes))
    if not apply_mask:
        trigger_row = example.graph_nodes[target].start
    return MaskedLayout(example, target, masked, np.asarray(source), np.asarray(template),
                        np.asarray(graph_of), trigger_row, np.asarray(slot_rows, dtype=np.int64))


@dataclass
class Batch:
    layouts: list[MaskedLayout]
    raw: np.ndarray
    node_mask: np.ndarray
    template: np.ndarray
    graph_of: np.ndarray
    graph_mask: np.ndarray
    member: np.ndarray
    position: np.ndarray
    coref: np.ndarray
    structure: GraphStructure
    trigger_row: np.ndarray
    slot_rows: np.ndarray
    gold_verb: np.ndarray
    cand_raw: np.ndarray
    cand_mask: np.ndarray
    cand_lex: np.ndarray
    gold_raw: np.ndarray
    gold_mask: np.ndarray
    gold_lex: np.ndarray

    @property
    def size(self) -> int:
        return len(self.layouts)


def _first_occurrence_ranks(ids: np.ndarray) -> np.ndarray:
    out = np.full(len(ids), -1, dtype=np.int64)
    ranks: dict[int, int] = {}
    for i, c in enumerate(ids):
        if c >= 0:
            out[i] = ranks.setdefault(int(c), len(ranks))
    return out


def collate(layouts: Sequence[MaskedLayout], max_length: int = MAX_CHAIN_LENGTH) -> Batch:
    b = len(layouts)
    n = max(lay.num_nodes for lay in layouts)
    t = max(lay.example.num_graphs for lay in layouts)
    e = layouts[0].example.raw.shape[1]
    s = max(len(lay.slot_rows) for lay in layouts)
    raw = np.zeros((b, n, e))
    node_mask = np.zeros((b, n), dtype=bool)
    template = np.full((b, n), -1, dtype=np.int64)
    graph_of = np.full((b, n), -1, dtype=np.int64)
    graph_mask = np.zeros((b, t), dtype=bool)
    position = np.zeros((b, n), dtype=np.int64)
    coref = np.full((b, n), -1, dtype=np.int64)
    adj = np.zeros((b, n, n))
    roles = np.zeros((b, n, n, NUM_ROLES))
    trigger_row = np.zeros(b, dtype=np.int64)
    slot_rows = np.zeros((b, s), dtype=np.int64)
    gold_verb = np.zeros(b, dtype=np.int64)
    cands, golds = [], []

    for i, lay in enumerate(layouts):
        ex = lay.example
        if ex.num_graphs > max_length:
            raise ValueError(f"chain {ex.chain.chain_id!r} has {ex.num_graphs} graphs > max {max_length}")
        k = lay.num_nodes
        real = lay.source >= 0
        src = lay.source[real]
        raw[i, :k][real] = ex.raw[src]
        node_mask[i, :k] = True
        template[i, :k] = lay.template
        graph_of[i, :k] = lay.graph_of
        graph_mask[i, : ex.num_graphs] = True
        position[i, :k] = lay.graph_of - lay.target + max_length - 1
        ids = np.full(k, -1, dtype=np.int64)
        ids[real] = ex.coref[src]
        coref[i, :k] = _first_occurrence_ranks(ids)

        # star edges: every graph's trigger row to each of its argument rows
        row = 0
        while row < k:
            g = lay.graph_of[row]
            stop = row
            while stop < k and lay.graph_of[stop] == g:
                stop += 1
            members = np.arange(row, stop)
            for m in members[1:]:
                r = OTHER_ROLE if lay.template[m] >= 0 else ex.role[lay.source[m]]
                adj[i, row, m] = adj[i, m, row] = 1.0
                roles[i, row, m, r] = roles[i, m, row, r] = 1.0
            row = stop

        trigger_row[i] = lay.trigger_row
        slot_rows[i, : len(lay.slot_rows)] = lay.slot_rows
        target_nodes = ex.graph_nodes[lay.target]
        gold_verb[i] = ex.lexeme[target_nodes.start]
        gold = [j for j in target_nodes if not ex.is_trigger[j]]
        golds.append(gold)
        cand = [j for j in src if not ex.is_trigger[j]]
        cands.append(cand)

    c = max(1, max(len(x) for x in cands))
    g = max(1, max(len(x) for x in golds))
    cand_raw = np.zeros((b, c, e))
    cand_mask = np.zeros((b, c), dtype=bool)
    cand_lex = np.full((b, c), -1, dtype=np.int64)
    gold_raw = np.zeros((b, g, e))
    gold_mask = np.zeros((b, g), dtype=bool)
    gold_lex = np.full((b, g), -1, dtype=np.int64)
    for i, lay in enumerate(layouts):
        ex = lay.example
        for arr_raw, arr_mask, arr_lex, idx in (
            (cand_raw, cand_mask, cand_lex, cands[i]),
            (gold_raw, gold_mask, gold_lex, golds[i]),
        ):
            m = len(idx)
            if m:
                arr_raw[i, :m] = ex.raw[idx]
                arr_mask[i, :m] = True
                arr_lex[i, :m] = ex.lexeme[idx]

    member = membership(graph_of, t)
    return Batch(
        layouts=list(layouts), raw=raw, node_mask=node_mask, template=template, graph_of=graph_of,
        graph_mask=graph_mask, member=member, position=position, coref=coref,
        structure=GraphStructure(adj, roles, node_mask), trigger_row=trigger_row, slot_rows=slot_rows,
        gold_verb=gold_verb, cand_raw=cand_raw, cand_mask=cand_mask, cand_lex=cand_lex,
        gold_raw=gold_raw, gold_mask=gold_mask, gold_lex=gold_lex,
    )
