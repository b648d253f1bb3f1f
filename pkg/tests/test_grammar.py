import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmbt.btree import Node, composite, leaf, serialize_xml, validate_syntax
from swarmbt.grammar import (
    DecodeError,
    Grammar,
    GrammarError,
    StructureParams,
    decode,
    decode_with_trace,
    default_grammar,
    enumerate_skeletons,
    parse_grammar,
    random_genotype,
    reachable_by_genotypes,
)

MINIMAL = {"B": [["b"]], "b": ["BehaviorTree"]}

# flat layout: terminals name a node type and optionally take a children group
FLAT_LAYOUT = """grammar = {
    "B": [["b", ["SEL"]], ["b", ["SEQ"]]],
    "SEL": [["sel", ["SEQn", "As"]], ["sel", ["SEQn"]]],
    "SEQn": [["SEQ", "SEQn"], ["SEQ"]],
    "SEQ": [["seq", ["Pn", "A"]], ["seq", ["As", "Pn", "A"]]],
    "b": ["BehaviorTree", ["children_nodes"]],
    "sel": ["Selector", ["children_nodes"]],
    "seq": ["Sequence", ["children_nodes"]],
    "A": [["aa", "sa"], ["aa"], ["sa"]],
    "As": [["aa"], ["sa"]],
    "aa": ["ActuatorAction"],
    "sa": ["StateAction"],
    "Pn": [["p", "Pn"], ["p"], []],
    "p": ["Condition"]
}"""


def bt(child):
    return composite("BehaviorTree", child)


def seq(*types):
    return composite("Sequence", *(leaf(t) for t in types))


def test_default_grammar_shape(grammar):
    assert len(grammar) == 13
    assert grammar.start == "B"
    assert len(grammar.rules["B"]) == 2
    assert list(grammar.rules) == ["B", "SEL", "SEQn", "SEQ", "A", "As", "Pn"]


def test_flat_layout_matches_document(grammar):
    g = parse_grammar(FLAT_LAYOUT)
    assert g.rules == grammar.rules
    assert g.terminals == grammar.terminals


def test_document_round_trip(grammar):
    again = parse_grammar(grammar.to_json())
    assert again.rules == grammar.rules and again.terminals == grammar.terminals


def test_minimal_grammar():
    g = parse_grammar(MINIMAL)
    assert len(g) == 2
    assert enumerate_skeletons(g, 5) == {Node("BehaviorTree")}


def test_undefined_symbol():
    doc = json.loads(default_grammar().to_json())
    doc["rules"]["SEL"][0] = ["sel", ["SEQn", "XYZ"]]
    with pytest.raises(GrammarError, match="undefined symbol XYZ"):
        parse_grammar(doc)


def test_unregistered_node_type():
    with pytest.raises(GrammarError):
        parse_grammar({"B": [["b"]], "b": ["Teleporter"]})


def test_duplicate_rule_key():
    text = '{"B": [["b"]], "B": [["b"]], "b": ["BehaviorTree"]}'
    with pytest.raises(GrammarError, match="duplicate"):
        parse_grammar(text)


def test_random_genotype_golden():
    # frozen output of numpy's default generator for seed 42
    assert random_genotype(42, 10, 9) == [0, 7, 6, 4, 4, 8, 0, 6, 2, 0]
    assert random_genotype(5, 1, 0) == [0]
    assert random_genotype(3) == random_genotype(3)


def test_random_genotype_rejects_bad_args():
    with pytest.raises(ValueError):
        random_genotype(0, 0)


def test_decode_hand_trace(grammar):
    # B:1 -> b[SEQ]; SEQ:1 -> As Pn A; As:1 -> sa; Pn:0 -> p Pn; Pn:2 -> empty; A:0 -> aa sa
    tree, choices = decode_with_trace(grammar, [1, 1, 1, 0, 2, 0])
    assert tree == bt(seq("StateAction", "Condition", "ActuatorAction", "StateAction"))
    assert choices == [("B", 1), ("SEQ", 1), ("As", 1), ("Pn", 0), ("Pn", 2), ("A", 0)]


def test_only_forces_every_choice(grammar):
    params = StructureParams(only={"B": 1, "SEQ": 0, "Pn": 2, "A": 1})
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert decode(grammar, random_genotype(rng), params) == bt(seq("ActuatorAction"))


def test_exclude_and_parent(grammar):
    params = StructureParams(only={"B": 1}, exclude={"SEQ": [1]}, parent={"A": {"Sequence": 2}})
    rng = np.random.default_rng(1)
    for _ in range(100):
        tree = decode(grammar, random_genotype(rng), params)
        s = tree.children[0]
        assert s.children[-1].type == "StateAction"
        assert s.children[0].type in ("Condition", "StateAction")


def test_list_always_fixes_length(grammar):
    params = StructureParams(only={"B": 0, "SEL": 1}, list_always={"SEQn": 3})
    rng = np.random.default_rng(2)
    for _ in range(100):
        tree = decode(grammar, random_genotype(rng), params)
        assert len(tree.children[0].children) == 3


def test_list_max_caps_length(grammar):
    params = StructureParams(only={"B": 0, "SEL": 1}, list_max={"SEQn": 2, "Pn": 1})
    for codons in ([0] * 10, [2] * 10, list(range(10))):
        tree = decode(grammar, codons, params)
        assert len(tree.children[0].children) <= 2
        for s in tree.children[0].children:
            assert sum(c.type == "Condition" for c in s.children) <= 1


def test_conflicting_params(grammar):
    with pytest.raises(GrammarError):
        decode(grammar, [0], StructureParams(only={"A": 0}, exclude={"A": [0]}))
    with pytest.raises(GrammarError):
        decode(grammar, [0], StructureParams(exclude={"As": [0, 1]}))
    with pytest.raises(GrammarError):
        decode(grammar, [0], StructureParams(list_max={"SEQ": 2}))


def test_node_budget(grammar):
    with pytest.raises(DecodeError):
        decode(grammar, [0] * 10, StructureParams(list_always={"Pn": 50}), node_budget=20)


def test_bad_genotypes(grammar):
    with pytest.raises(DecodeError):
        decode(grammar, [])
    with pytest.raises(DecodeError):
        decode(grammar, [-1])


def test_enumerated_slice(grammar):
    # hand count: 8 single-Sequence trees with <= 2 leaves, plus 2 Selector->Sequence->leaf
    seqs = [
        ("ActuatorAction",), ("StateAction",), ("ActuatorAction", "StateAction"),
        ("Condition", "ActuatorAction"), ("Condition", "StateAction"),
        ("ActuatorAction", "ActuatorAction"), ("StateAction", "ActuatorAction"),
        ("StateAction", "StateAction"),
    ]
    expected = {bt(seq(*s)) for s in seqs}
    expected |= {bt(composite("Selector", seq(t))) for t in ("ActuatorAction", "StateAction")}
    got = enumerate_skeletons(grammar, 4)
    assert got == expected
    for tree in got:
        assert validate_syntax(tree, grammar).ok
        for _, node in tree.walk():
            if node.type in ("Selector", "Sequence"):
                assert node.children


def test_enumeration_grows_monotonically(grammar):
    sizes = [len(enumerate_skeletons(grammar, n)) for n in range(1, 7)]
    assert sizes[:3] == [0, 0, 2]
    assert sizes == sorted(sizes)


def test_enumerated_slice_reachable(grammar):
    targets = enumerate_skeletons(grammar, 4)
    assert reachable_by_genotypes(grammar, targets, 6, 2) == targets


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=12))
def test_decode_sound_and_deterministic(codons):
    g = default_grammar()
    tree, choices = decode_with_trace(g, codons)
    assert validate_syntax(tree, g).ok
    assert decode(g, codons) == tree
    for key, idx in choices:
        assert 0 <= idx < len(g.rules[key])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=10), st.integers(0, 2))
def test_only_dominance(codons, a_option):
    g = default_grammar()
    _, choices = decode_with_trace(g, codons, StructureParams(only={"A": a_option}))
    assert all(idx == a_option for key, idx in choices if key == "A")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=10))
def test_serialized_skeleton_parses_back(codons):
    from swarmbt.btree import parse_xml

    tree = decode(default_grammar(), codons)
    assert parse_xml(serialize_xml(tree)) == tree
