import json

import pytest
from hypothesis import given, settings

from eventformer.events import (
    ArgRole,
    CorpusFormatError,
    EmptyInputError,
    EventChain,
    EventGraph,
    Node,
    NodeKind,
    Vocabulary,
    chain_from_json,
    chain_stats,
    chain_to_json,
    make_chain,
    read_corpus,
    validate_chain,
    write_corpus,
)

from strategies import chains


def small_chain(n=3, target=None):
    events = [(f"v{i}", i, [(f"n{i}", i, "subj", i), ("n9", 9, "obj", 9)]) for i in range(n)]
    return make_chain("c0", events, target)


def test_make_chain_assigns_sequential_ids_and_star_edges():
    chain = small_chain()
    assert [n.node_id for n in chain.nodes()] == list(range(9))
    g = chain.graphs[1]
    assert g.trigger.node_id == 3
    assert g.edges == ((3, 4, ArgRole.SUBJ), (3, 5, ArgRole.OBJ))
    assert g.role_of(5) is ArgRole.OBJ
    assert chain.target == 2 and chain.target_graph is chain.graphs[2]


def test_valid_chain_reports_nothing():
    assert validate_chain(small_chain(), Vocabulary([f"v{i}" for i in range(3)], [f"n{i}" for i in range(10)])) == []


def test_validation_reports_each_broken_invariant():
    assert any("length 2" in p for p in validate_chain(small_chain(2)))
    assert any("length 4 > 3" in p for p in validate_chain(small_chain(4), max_length=3))
    assert any("target_index 7" in p for p in validate_chain(small_chain(3, 7)))
    vocab = Vocabulary(["v0"], ["n0"])
    problems = validate_chain(small_chain(), vocab)
    assert any("verb id 1 not in vocabulary" in p for p in problems)
    assert any("noun id 9 not in vocabulary" in p for p in problems)


def test_validation_catches_structural_errors():
    trig = Node(0, NodeKind.TRIGGER, "v", 0)
    arg = Node(1, NodeKind.ARGUMENT, "n", 0, coref_index=0)
    loose = Node(2, NodeKind.ARGUMENT, "m", 1)  # no edge, no coref
    good = EventGraph((Node(3, NodeKind.TRIGGER, "v", 0), Node(4, NodeKind.ARGUMENT, "n", 0, coref_index=0)),
                      ((3, 4, ArgRole.SUBJ),))
    bad = EventGraph((trig, arg, loose, Node(1, NodeKind.TRIGGER, "w", 1)), ((0, 1, ArgRole.OBJ), (0, 0, ArgRole.OBJ)))
    problems = validate_chain(EventChain("x", (bad, good, good)))
    joined = "\n".join(problems)
    assert "trigger count 2" in joined
    assert "self-loop" in joined
    assert "argument node 2 has 0 role edges" in joined
    assert "lacks a coref index" in joined
    assert "id used" in joined


@settings(max_examples=60, deadline=None)
@given(chains())
def test_json_round_trip_is_field_exact(chain):
    again = chain_from_json(json.loads(json.dumps(chain_to_json(chain))))
    assert again == chain


@settings(max_examples=20, deadline=None)
@given(chains())
def test_generated_chains_validate(chain):
    assert validate_chain(chain) == []


def test_corpus_file_round_trip(tmp_path):
    a, b = small_chain(), small_chain(4, 2)
    write_corpus(tmp_path / "c.jsonl", [a, b])
    assert read_corpus(tmp_path / "c.jsonl") == [a, b]


@pytest.mark.parametrize("line,match", [
    ("{not json", "c.jsonl:1"),
    ('{"chain_id": "a"}', "missing keys"),
    ('{"chain_id": "a", "graphs": [], "extra": 1}', "unknown keys"),
    ('{"chain_id": "a", "graphs": [{"trigger": {"text": "v", "verb_id": 0}, '
     '"args": [{"text": "n", "noun_id": 0, "role": "agent", "coref": 0}]}]}', "unknown role"),
])
def test_corpus_format_errors(tmp_path, line, match):
    (tmp_path / "c.jsonl").write_text(line + "\n")
    with pytest.raises(CorpusFormatError, match=match):
        read_corpus(tmp_path / "c.jsonl")


def test_vocabulary_round_trip_and_duplicates(tmp_path):
    v = Vocabulary(["eat", "run"], ["cat"])
    v.save(tmp_path / "v.json")
    w = Vocabulary.load(tmp_path / "v.json")
    assert w.verbs == v.verbs and w.nouns == v.nouns and w.verb_id("run") == 1
    with pytest.raises(CorpusFormatError):
        Vocabulary(["a", "a"], [])


def test_chain_stats():
    s = chain_stats([small_chain(3), small_chain(4)])
    assert (s.num_chains, s.num_graphs, s.num_arguments) == (2, 7, 14)
    assert s.mean_arguments == 2.0
    assert s.top_nouns(1) == [("n9", 0.5)]
    assert s.length_counts == {3: 1, 4: 1}
    with pytest.raises(EmptyInputError):
        chain_stats([])
