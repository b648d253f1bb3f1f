"""Shared test oracles and model stand-ins."""

import re

import numpy as np

from swarmbt.btree import NODE_TYPES, Node, parse_xml, serialize_xml
from swarmbt.dataset import populate_random
from swarmbt.llm import FunctionModel
from swarmbt.sim import foraging_registry

SEEK_AND_PICK = """<BehaviorTree>
    <Selector>

        <Sequence>
            <Condition>is_good_part_detected</Condition>
            <ActuatorAction>pick_up_part</ActuatorAction>
        </Sequence>

        <StateAction>state_seek_source_area</StateAction>

    </Selector>
</BehaviorTree>"""

_SKELETON_RE = re.compile(r"<BehaviorTree>.*?</BehaviorTree>|<BehaviorTree\s*/>", re.S)


def skeleton_in(request_text):
    return parse_xml(_SKELETON_RE.search(request_text).group(0))


def conforming_b_model(task="collect parts", mutate=None):
    """Method B stand-in that fills the skeleton it is sent with real primitives.

    ``mutate`` may rewrite the reply text before it is returned.
    """
    registry = foraging_registry()

    def reply(messages):
        text = messages[0]["content"]
        tree = populate_random(skeleton_in(text), registry, np.random.default_rng(len(text)))
        out = f"TASK: {task}\n```xml\n{serialize_xml(tree)}\n```"
        return mutate(out, tree) if mutate else out

    return FunctionModel(reply)


def type_mutations(tree):
    """Every tree that differs from ``tree`` in exactly one node type."""
    out = []

    def rebuild(node, path, new_type):
        if not path:
            return Node(new_type, node.children, node.name)
        i = path[0]
        kids = list(node.children)
        kids[i] = rebuild(kids[i], path[1:], new_type)
        return Node(node.type, tuple(kids), node.name)

    def visit(node, path):
        for t in NODE_TYPES:
            if t != node.type:
                out.append(rebuild(tree, path, t))
        for i, c in enumerate(node.children):
            visit(c, path + (i,))

    visit(tree, ())
    return out
