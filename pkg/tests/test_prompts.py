import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SEEK_AND_PICK
from swarmbt.btree import parse_xml
from swarmbt.dataset import populate_random
from swarmbt.grammar import decode, default_grammar
from swarmbt.prompts import (
    PromptBundle,
    build_messages,
    build_prompt,
    default_system_prompt,
    extract_primitive_docs,
    generate_spoonfed,
    generate_technical,
    humanize,
    load_shots,
    load_template,
    render_template,
    user_request,
)
from swarmbt.registry import PrimitiveRegistry

GOLDEN = Path(__file__).parent / "golden" / "two_shot_prompt.txt"
TASK = "Find a good part and pick it up."


def test_two_shot_prompt_golden(registry):
    prompt = build_prompt(PromptBundle(default_system_prompt(registry), load_shots(), TASK))
    assert prompt == GOLDEN.read_text(encoding="utf-8")


def test_builder_agrees_with_template(registry):
    system = default_system_prompt(registry)
    shots = load_shots()
    for n in (0, 1, 2):
        rendered = render_template(load_template(n), system, [t for _, t in shots[:n]], TASK)
        assert rendered == build_prompt(PromptBundle(system, shots[:n], TASK))


def test_prompt_layout(registry):
    prompt = build_prompt(PromptBundle("SYS", [("t1", "<BT1/>"), ("t2", "<BT2/>")], "go"))
    assert prompt.split("\n\n") == [
        "SYS",
        user_request("t1"), "RESPONSE: <BT1/>",
        user_request("t2"), "RESPONSE: <BT2/>",
        user_request("go"), "RESPONSE: ",
    ]
    assert prompt.endswith("RESPONSE: ")
    assert user_request("go") == ('USER REQUEST: Generate behavior tree to "go". Output only the XML '
                                  "behavior tree without extra text or explanations of the tree.")


def test_template_placeholder_errors():
    with pytest.raises(KeyError):
        render_template("{BT_2}", "s", ["only one"], "p")
    # substituted text is not scanned again
    assert render_template("{PROMPT}", "s", [], "{SYSTEM_PROMPT}") == "{SYSTEM_PROMPT}"


def test_per_turn_messages():
    msgs = build_messages(PromptBundle("SYS", [("t1", "<A/>")], "go"), per_turn=True)
    assert [m["role"] for m in msgs] == ["system", "user", "assistant", "user"]
    assert build_messages(PromptBundle("SYS", [], "go")) == [
        {"role": "user", "content": build_prompt(PromptBundle("SYS", [], "go"))}]


def test_system_prompt_lists_every_primitive(registry):
    text = default_system_prompt(registry)
    for p in registry:
        assert f"- {p.name} ({p.node_type}): " in text
    assert "{PRIMITIVES}" not in text


def test_doc_type_mismatch_detected():
    reg = PrimitiveRegistry()
    reg.register("x", "Condition", "something")
    entry = reg.get("x")
    import dataclasses
    bad = PrimitiveRegistry([dataclasses.replace(entry, doc="Node Type: StateAction\nDescription: d")])
    with pytest.raises(ValueError):
        extract_primitive_docs(bad)


def test_seek_and_pick_styles(seek_and_pick):
    assert generate_technical(seek_and_pick) == "if good part detected then pick up part, otherwise seek source area"
    assert generate_spoonfed(seek_and_pick) == (
        "If you detect a good part, then pick up the part. Otherwise, move to the source area.")


def test_shot_tree_styles():
    tree = parse_xml(load_shots()[1][1])
    assert generate_technical(tree) == (
        "if holding good part and in base area then drop part, otherwise if holding good part then "
        "seek base area, otherwise if good part detected then pick up part, otherwise seek source area")
    assert generate_spoonfed(tree) == (
        "If you are holding a good part and you are in the base area, then drop the part. "
        "Otherwise, if you are holding a good part, then move to the base area. "
        "Otherwise, if you detect a good part, then pick up the part. "
        "Otherwise, move to the source area.")


def test_nested_and_condition_only():
    tree = parse_xml("""<BehaviorTree><Sequence>
        <Condition>is_agent_in_waste_area</Condition>
        <StateAction>state_stop</StateAction>
        <Condition>is_agent_holding_scrap_part</Condition>
    </Sequence></BehaviorTree>""")
    assert generate_technical(tree) == "if in waste area then stop, then check that holding scrap part"
    assert generate_spoonfed(tree) == (
        "If you are in the waste area, then stop moving. Check that you are holding a scrap part.")


def test_humanize():
    assert humanize("is_agent_in_base_area") == "in base area"
    assert humanize("state_random_walk") == "random walk"
    assert humanize("fly_away") == "fly away"


def test_styles_stable_across_processes(seek_and_pick):
    code = ("from swarmbt.btree import parse_xml; from swarmbt.prompts import *; import sys; "
            "t = parse_xml(sys.stdin.read()); print(generate_technical(t)); print(generate_spoonfed(t))")
    out = subprocess.run([sys.executable, "-c", code], input=SEEK_AND_PICK, capture_output=True, text=True,
                         check=True).stdout
    assert out == f"{generate_technical(seek_and_pick)}\n{generate_spoonfed(seek_and_pick)}\n"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=10), st.integers(0, 1000))
def test_spoonfed_longer_than_technical(codons, seed):
    from swarmbt.sim import foraging_registry

    reg = foraging_registry()
    tree = populate_random(decode(default_grammar(), codons), reg, np.random.default_rng(seed))
    tech, spoon = generate_technical(tree), generate_spoonfed(tree)
    assert tech and spoon
    assert len(spoon) >= len(tech)
    assert generate_technical(tree) == tech
