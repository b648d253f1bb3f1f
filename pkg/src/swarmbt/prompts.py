"""Prompt styles, primitive documentation and N-shot prompt assembly."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

from .btree import Node
from .registry import PrimitiveRegistry, parse_primitive_doc


class PromptStyle(str, enum.Enum):
    LAYMAN = "layman"
    TECHNICAL = "technical"
    SPOONFED = "spoonfed"


def _data(name: str) -> str:
    return resources.files("swarmbt.data").joinpath(name).read_text(encoding="utf-8")


# ---------------------------------------------------------------- primitive docs


@dataclass(frozen=True)
class PrimitiveDoc:
    name: str
    node_type: str
    description: str


def extract_primitive_docs(registry: PrimitiveRegistry) -> List[PrimitiveDoc]:
    """Parse the ``Node Type:`` / ``Description:`` docstring of every primitive."""
    docs = []
    for entry in registry:
        doc = entry.doc if entry.doc is not None else (entry.func.__doc__ if entry.func else None)
        node_type, description = parse_primitive_doc(entry.name, doc)
        if node_type != entry.node_type:
            raise ValueError(
                f"primitive {entry.name}: documented as {node_type}, registered as {entry.node_type}"
            )
        docs.append(PrimitiveDoc(entry.name, node_type, description))
    return docs


def format_primitive_docs(docs: Sequence[PrimitiveDoc]) -> str:
    return "\n".join(f"- {d.name} ({d.node_type}): {d.description}" for d in docs)


def default_system_prompt(registry: PrimitiveRegistry) -> str:
    return _data("system_prompt.txt").replace(
        "{PRIMITIVES}", format_primitive_docs(extract_primitive_docs(registry))
    )


# ---------------------------------------------------------------- technical / spoonfed

_TECH_PREFIXES = (
    ("is_agent_in_", "in "),
    ("is_agent_holding_", "holding "),
    ("is_", ""),
    ("state_", ""),
)


def humanize(name: str) -> str:
    """``is_good_part_detected`` -> ``good part detected``."""
    for prefix, repl in _TECH_PREFIXES:
        if name.startswith(prefix):
            name = repl + name[len(prefix):]
            break
    return " ".join(name.replace("_", " ").split())


def _words(s: str) -> str:
    return " ".join(s.replace("_", " ").split())


_SPOON_CONDITIONS = (
    (re.compile(r"^is_(.+)_detected$"), "you detect a {}"),
    (re.compile(r"^is_agent_in_(.+)$"), "you are in the {}"),
    (re.compile(r"^is_agent_holding_(.+)$"), "you are holding a {}"),
)
_SPOON_ACTIONS = (
    (re.compile(r"^state_seek_(.+)$"), "move to the {}"),
    (re.compile(r"^state_random_walk$"), "walk around randomly"),
    (re.compile(r"^state_stop$"), "stop moving"),
    (re.compile(r"^pick_up_(.+)$"), "pick up the {}"),
    (re.compile(r"^drop_(.+)$"), "drop the {}"),
)


def _spoon_phrase(node: Node) -> str:
    name = node.name or node.type
    table = _SPOON_CONDITIONS if node.type == "Condition" else _SPOON_ACTIONS
    for pattern, template in table:
        m = pattern.match(name)
        if m:
            return template.format(*(_words(g) for g in m.groups()))
    return humanize(name)


def _clauses(children: Sequence[Node]) -> List[Tuple[List[Node], List[Node]]]:
    """Split a sequence into (conditions, following actions) runs, in order."""
    out: List[Tuple[List[Node], List[Node]]] = []
    conds: List[Node] = []
    acts: List[Node] = []
    for child in children:
        if child.type == "Condition":
            if acts:
                out.append((conds, acts))
                conds, acts = [], []
            conds.append(child)
        else:
            acts.append(child)
    if conds or acts:
        out.append((conds, acts))
    return out


def _technical(node: Node, nested: bool = False) -> str:
    if node.is_leaf:
        return humanize(node.name or node.type)
    if node.type == "Selector":
        text = ", otherwise ".join(_technical(c, True) for c in node.children)
        return f"({text})" if nested and len(node.children) > 1 else text
    if node.type == "BehaviorTree" and len(node.children) == 1:
        return _technical(node.children[0])
    parts = []
    for conds, acts in _clauses(node.children):
        act = ", then ".join(_technical_in_seq(a) for a in acts)
        cond = " and ".join(humanize(c.name or c.type) for c in conds)
        if conds and acts:
            parts.append(f"if {cond} then {act}")
        elif conds:
            parts.append(f"check that {cond}")
        else:
            parts.append(act)
    return ", then ".join(parts)


def _technical_in_seq(node: Node) -> str:
    if node.is_leaf:
        return humanize(node.name or node.type)
    return f"({_technical(node)})"


def generate_technical(tree: Node) -> str:
    """Compact logical rendering, e.g. ``if good part detected then pick up part``."""
    return _technical(tree)


def _cap(s: str) -> str:
    return s[:1].upper() + s[1:]


def _spoon_sentences(node: Node) -> List[str]:
    if node.is_leaf:
        return [_cap(_spoon_phrase(node)) + "."]
    if node.type == "Selector":
        out: List[str] = []
        for i, child in enumerate(node.children):
            sents = _spoon_sentences(child)
            if i and sents:
                sents[0] = "Otherwise, " + sents[0][:1].lower() + sents[0][1:]
            out.extend(sents)
        return out
    if node.type == "BehaviorTree" and len(node.children) == 1:
        return _spoon_sentences(node.children[0])
    out = []
    for conds, acts in _clauses(node.children):
        act = ", then ".join(_spoon_inline(a) for a in acts)
        cond = " and ".join(_spoon_phrase(c) for c in conds)
        if conds and acts:
            out.append(f"If {cond}, then {act}.")
        elif conds:
            out.append(f"Check that {cond}.")
        else:
            out.append(_cap(act) + ".")
    return out


def _spoon_inline(node: Node) -> str:
    if node.is_leaf:
        return _spoon_phrase(node)
    inner = "; ".join(s.rstrip(".") for s in _spoon_sentences(node))
    return f"({inner[:1].lower() + inner[1:]})"


def generate_spoonfed(tree: Node) -> str:
    """Verbose rendering with one sentence per step, e.g. ``If you detect a good part, then ...``."""
    return " ".join(_spoon_sentences(tree))


# ---------------------------------------------------------------- N-shot prompts

REQUEST_TEMPLATE = (
    'USER REQUEST: Generate behavior tree to "{task}". Output only the XML behavior tree '
    "without extra text or explanations of the tree."
)


@dataclass
class PromptBundle:
    system_prompt: str
    shots: List[Tuple[str, str]] = field(default_factory=list)
    user_task: str = ""


def user_request(task: str) -> str:
    return REQUEST_TEMPLATE.format(task=task)


def build_prompt(bundle: PromptBundle) -> str:
    """Render the flat prompt: system block, shot request/response pairs, open request."""
    parts = [bundle.system_prompt]
    for task, tree_xml in bundle.shots:
        parts.append(user_request(task))
        parts.append(f"RESPONSE: {tree_xml}")
    parts.append(user_request(bundle.user_task))
    parts.append("RESPONSE: ")
    return "\n\n".join(parts)


def build_messages(bundle: PromptBundle, per_turn: bool = False) -> List[Dict[str, str]]:
    """Chat messages for a bundle.

    The default sends the whole flat prompt as one user message.  With
    ``per_turn`` the system prompt, every shot and the request become
    separate system/user/assistant turns.
    """
    if not per_turn:
        return [{"role": "user", "content": build_prompt(bundle)}]
    msgs = []
    if bundle.system_prompt:
        msgs.append({"role": "system", "content": bundle.system_prompt})
    for task, tree_xml in bundle.shots:
        msgs.append({"role": "user", "content": user_request(task)})
        msgs.append({"role": "assistant", "content": tree_xml})
    msgs.append({"role": "user", "content": user_request(bundle.user_task)})
    return msgs


_PLACEHOLDER_RE = re.compile(r"\{(SYSTEM_PROMPT|PROMPT|BT_(\d+))\}")


def render_template(template: str, system_prompt: str, trees: Sequence[str], prompt: str) -> str:
    """Fill ``{SYSTEM_PROMPT}``, ``{BT_n}`` (1-based) and ``{PROMPT}`` in one pass."""

    def sub(m: re.Match) -> str:
        if m.group(1) == "SYSTEM_PROMPT":
            return system_prompt
        if m.group(1) == "PROMPT":
            return prompt
        n = int(m.group(2))
        if not 1 <= n <= len(trees):
            raise KeyError(f"template needs BT_{n} but only {len(trees)} trees were given")
        return trees[n - 1]

    return _PLACEHOLDER_RE.sub(sub, template)


TEMPLATES = {0: "zero_shot.txt", 1: "one_shot.txt", 2: "two_shot.txt"}


def load_template(n_shots: int) -> str:
    return _data(TEMPLATES[n_shots])


def load_shots(path: Optional[str] = None) -> List[Tuple[str, str]]:
    """Shots file: JSON array of ``{task, tree_xml}``; the shipped pair by default."""
    if path is None:
        items = json.loads(_data("shots.json"))
    else:
        with open(path, encoding="utf-8") as fh:
            items = json.load(fh)
    return [(it["task"], it["tree_xml"]) for it in items]
