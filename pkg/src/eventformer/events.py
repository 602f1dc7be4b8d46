"""Event graphs, event chains, vocabularies and the JSON-lines corpus format.

Constructors do not enforce invariants; ``validate_chain`` reports them as
data so that malformed corpora can be inspected rather than rejected
wholesale.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

MIN_CHAIN_LENGTH = 3
MAX_CHAIN_LENGTH = 50
MAX_ARGUMENTS = 8
COREF_SENTINEL = 2**63 - 1  # triggers do not take part in coreference


class CorpusFormatError(ValueError):
    """A corpus or vocabulary file does not follow the schema."""


class EmptyInputError(ValueError):
    pass


class ArgRole(str, Enum):
    SUBJ = "subj"
    OBJ = "obj"
    INSTRUMENT = "instrument"
    LOCATION = "location"
    OTHER = "other"

    @property
    def index(self) -> int:
        return ROLE_INDEX[self]


ROLE_INDEX = {role: i for i, role in enumerate(ArgRole)}


class NodeKind(str, Enum):
    TRIGGER = "trigger"
    ARGUMENT = "argument"


@dataclass(frozen=True)
class Node:
    node_id: int
    kind: NodeKind
    text: str
    lexeme_id: int
    coref_index: int = COREF_SENTINEL
    raw_feature: tuple | None = None  # flat vector, or tuple of per-frame vectors

    @property
    def is_trigger(self) -> bool:
        return self.kind is NodeKind.TRIGGER


@dataclass(frozen=True)
class EventGraph:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int, ArgRole], ...]

    @property
    def trigger(self) -> Node:
        for node in self.nodes:
            if node.is_trigger:
                return node
        raise ValueError("event graph has no trigger node")

    @property
    def arguments(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if not n.is_trigger)

    def role_of(self, node_id: int) -> ArgRole | None:
        for src, dst, role in self.edges:
            if node_id in (src, dst):
                return role
        return None


@dataclass(frozen=True)
class EventChain:
    chain_id: str
    graphs: tuple[EventGraph, ...]
    target_index: int | None = None

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def target(self) -> int:
        return len(self.graphs) - 1 if self.target_index is None else self.target_index

    @property
    def target_graph(self) -> EventGraph:
        return self.graphs[self.target]

    def nodes(self) -> list[Node]:
        return [n for g in self.graphs for n in g.nodes]


@dataclass
class Vocabulary:
    verbs: list[str] = field(default_factory=list)
    nouns: list[str] = field(default_factory=list)

    def __post_init__(self):
        for kind, items in (("verbs", self.verbs), ("nouns", self.nouns)):
            dupes = [w for w, c in Counter(items).items() if c > 1]
            if dupes:
                raise CorpusFormatError(f"duplicate {kind} in vocabulary: {dupes[:5]}")
        self._verb_index = {w: i for i, w in enumerate(self.verbs)}
        self._noun_index = {w: i for i, w in enumerate(self.nouns)}

    def verb_id(self, text: str) -> int:
        return self._verb_index[text]

    def noun_id(self, text: str) -> int:
        return self._noun_index[text]

    def to_json(self) -> dict:
        return {"verbs": list(self.verbs), "nouns": list(self.nouns)}

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        extra = set(payload) - {"verbs", "nouns"}
        if extra:
            raise CorpusFormatError(f"vocabulary: unknown keys {sorted(extra)}")
        return cls(verbs=list(payload.get("verbs", [])), nouns=list(payload.get("nouns", [])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


# -- validation ---------------------------------------------------------------

def validate_chain(
    chain: EventChain,
    vocab: Vocabulary | None = None,
    max_length: int = MAX_CHAIN_LENGTH,
) -> list[str]:
    """Return every broken invariant of ``chain``; an empty list means valid."""
    problems: list[str] = []
    n = len(chain.graphs)
    if n < MIN_CHAIN_LENGTH:
        problems.append(f"chain length {n} < {MIN_CHAIN_LENGTH}")
    if n > max_length:
        problems.append(f"chain length {n} > {max_length}")
    if not 0 <= chain.target < max(n, 1):
        problems.append(f"target_index {chain.target} out of range for {n} graphs")

    seen_ids: Counter = Counter(node.node_id for node in chain.nodes())
    for node_id, count in sorted(seen_ids.items()):
        if count > 1:
            problems.append(f"node {node_id}: id used {count} times in chain")
        if node_id < 0:
            problems.append(f"node {node_id}: negative node id")

    for gi, graph in enumerate(chain.graphs):
        triggers = [node for node in graph.nodes if node.is_trigger]
        args = graph.arguments
        if len(triggers) != 1:
            problems.append(f"graph {gi}: trigger count {len(triggers)}")
        if not 1 <= len(args) <= MAX_ARGUMENTS:
            problems.append(f"graph {gi}: argument count {len(args)} outside [1, {MAX_ARGUMENTS}]")
        trigger_ids = {t.node_id for t in triggers}
        node_ids = {node.node_id for node in graph.nodes}
        for src, dst, role in graph.edges:
            if src == dst:
                problems.append(f"graph {gi}: self-loop on node {src}")
            if src not in node_ids or dst not in node_ids:
                problems.append(f"graph {gi}: edge ({src}, {dst}) references a node outside the graph")
            if not isinstance(role, ArgRole):
                problems.append(f"graph {gi}: edge ({src}, {dst}) has invalid role {role!r}")
        for arg in args:
            links = [
                e for e in graph.edges
                if (e[0] in trigger_ids and e[1] == arg.node_id) or (e[1] in trigger_ids and e[0] == arg.node_id)
            ]
            if len(links) != 1:
                problems.append(
                    f"graph {gi}: argument node {arg.node_id} has {len(links)} role edges to the trigger"
                )
            if arg.coref_index == COREF_SENTINEL or arg.coref_index < 0:
                problems.append(f"graph {gi}: argument node {arg.node_id} lacks a coref index")
            if vocab is not None and not 0 <= arg.lexeme_id < len(vocab.nouns):
                problems.append(f"graph {gi}: argument node {arg.node_id} noun id {arg.lexeme_id} not in vocabulary")
        for trig in triggers:
            if vocab is not None and not 0 <= trig.lexeme_id < len(vocab.verbs):
                problems.append(f"graph {gi}: trigger node {trig.node_id} verb id {trig.lexeme_id} not in vocabulary")
    return problems


# -- statistics ----------------------------------------------------------------

@dataclass
class ChainStats:
    num_chains: int
    num_graphs: int
    num_arguments: int
    verb_counts: Counter
    noun_counts: Counter
    length_counts: Counter

    @property
    def mean_arguments(self) -> float:
        return self.num_arguments / self.num_graphs

    def top_verbs(self, k: int = 10) -> list[tuple[str, float]]:
        return [(v, c / self.num_graphs) for v, c in self.verb_counts.most_common(k)]

    def top_nouns(self, k: int = 10) -> list[tuple[str, float]]:
        return [(v, c / self.num_arguments) for v, c in self.noun_counts.most_common(k)]


def chain_stats(corpus: Sequence[EventChain]) -> ChainStats:
    if not corpus:
        raise EmptyInputError("chain_stats: empty corpus")
    verbs: Counter = Counter()
    nouns: Counter = Counter()
    lengths: Counter = Counter()
    n_graphs = n_args = 0
    for chain in corpus:
        lengths[len(chain.graphs)] += 1
        for graph in chain.graphs:
            n_graphs += 1
            for node in graph.nodes:
                if node.is_trigger:
                    verbs[node.text] += 1
                else:
                    nouns[node.text] += 1
                    n_args += 1
    return ChainStats(len(corpus), n_graphs, n_args, verbs, nouns, lengths)


# -- JSON-lines corpus -------------------------------------------------------------

_CHAIN_KEYS = {"chain_id", "graphs", "target_index"}
_GRAPH_KEYS = {"trigger", "args"}
_TRIGGER_KEYS = {"text", "verb_id", "feat"}
_ARG_KEYS = {"text", "noun_id", "role", "coref", "feat"}


def _check_keys(obj: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise CorpusFormatError(f"{where}: unknown keys {sorted(extra)}")
    missing = required - set(obj)
    if missing:
        raise CorpusFormatError(f"{where}: missing keys {sorted(missing)}")


def _parse_feat(value, where: str):
    if value is None:
        return None
    if not isinstance(value, list) or not value:
        raise CorpusFormatError(f"{where}: feat must be a non-empty list")
    if isinstance(value[0], list):
        return tuple(tuple(float(x) for x in frame) for frame in value)
    return tuple(float(x) for x in value)


def _dump_feat(value):
    if value is None:
        return None
    if value and isinstance(value[0], tuple):
        return [list(frame) for frame in value]
    return list(value)


def chain_from_json(obj: dict) -> EventChain:
    _check_keys(obj, _CHAIN_KEYS, {"chain_id", "graphs"}, "chain")
    where = f"chain {obj.get('chain_id')!r}"
    next_id = 0
    graphs = []
    for gi, g in enumerate(obj["graphs"]):
        _check_keys(g, _GRAPH_KEYS, _GRAPH_KEYS, f"{where} graph {gi}")
        t = g["trigger"]
        _check_keys(t, _TRIGGER_KEYS, {"text", "verb_id"}, f"{where} graph {gi} trigger")
        trigger = Node(next_id, NodeKind.TRIGGER, str(t["text"]), int(t["verb_id"]),
                       COREF_SENTINEL, _parse_feat(t.get("feat"), f"{where} graph {gi} trigger"))
        next_id += 1
        nodes = [trigger]
        edges = []
        for ai, a in enumerate(g["args"]):
            loc = f"{where} graph {gi} arg {ai}"
            _check_keys(a, _ARG_KEYS, {"text", "noun_id", "role", "coref"}, loc)
            try:
                role = ArgRole(a["role"])
            except ValueError:
                raise CorpusFormatError(f"{loc}: unknown role {a['role']!r}") from None
            node = Node(next_id, NodeKind.ARGUMENT, str(a["text"]), int(a["noun_id"]),
                        int(a["coref"]), _parse_feat(a.get("feat"), loc))
            next_id += 1
            nodes.append(node)
            edges.append((trigger.node_id, node.node_id, role))
        graphs.append(EventGraph(tuple(nodes), tuple(edges)))
    target = obj.get("target_index")
    return EventChain(str(obj["chain_id"]), tuple(graphs), None if target is None else int(target))


def chain_to_json(chain: EventChain) -> dict:
    graphs = []
    for graph in chain.graphs:
        trig = graph.trigger
        t = {"text": trig.text, "verb_id": trig.lexeme_id}
        if trig.raw_feature is not None:
            t["feat"] = _dump_feat(trig.raw_feature)
        args = []
        for node in graph.arguments:
            a = {"text": node.text, "noun_id": node.lexeme_id,
                 "role": graph.role_of(node.node_id).value, "coref": node.coref_index}
            if node.raw_feature is not None:
                a["feat"] = _dump_feat(node.raw_feature)
            args.append(a)
        graphs.append({"trigger": t, "args": args})
    out = {"chain_id": chain.chain_id, "graphs": graphs}
    if chain.target_index is not None:
        out["target_index"] = chain.target_index
    return out


def make_chain(chain_id: str, events: Iterable[tuple], target_index: int | None = None) -> EventChain:
    """Build a chain from ``(verb_text, verb_id, [(noun_text, noun_id, role, coref[, feat]), ...])``."""
    obj = {"chain_id": chain_id, "graphs": []}
    for verb_text, verb_id, args in events:
        arg_objs = []
        for a in args:
            entry = {"text": a[0], "noun_id": a[1], "role": ArgRole(a[2]).value, "coref": a[3]}
            if len(a) > 4 and a[4] is not None:
                entry["feat"] = list(a[4])
            arg_objs.append(entry)
        obj["graphs"].append({"trigger": {"text": verb_text, "verb_id": verb_id}, "args": arg_objs})
    if target_index is not None:
        obj["target_index"] = target_index
    return chain_from_json(obj)


def read_corpus(path) -> list[EventChain]:
    chains = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            chains.append(chain_from_json(obj))
    return chains


def write_corpus(path, chains: Iterable[EventChain]) -> None:
    with open(path, "w") as fh:
        for chain in chains:
            fh.write(json.dumps(chain_to_json(chain), separators=(",", ":")))
            fh.write("\n")
