"""Behavior trees: node model, XML format, validation and execution.

Trees are immutable :class:`Node` values.  Composite nodes hold an ordered
tuple of children; leaf nodes hold the name of the agent primitive they call.
Skeleton trees produced by the grammar decoder use ``name=None`` on leaves.
"""

from __future__ import annotations

import enum
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Dict, Iterator, List, Optional, Tuple
from xml.sax.saxutils import escape

if TYPE_CHECKING:
    from .grammar import Grammar, Item
    from .registry import PrimitiveRegistry


class BTreeError(ValueError):
    """Raised when XML text cannot be turned into a behavior tree."""


class TickError(RuntimeError):
    """Raised when a tree cannot be executed on an agent."""


# name -> True for composite node types, False for leaves
NODE_TYPES: Dict[str, bool] = {
    "BehaviorTree": True,
    "Selector": True,
    "Sequence": True,
    "Condition": False,
    "ActuatorAction": False,
    "StateAction": False,
}

LEAF_TYPES = ("Condition", "ActuatorAction", "StateAction")

# composite type -> function(node, agent, tick_child) -> bool
_COMPOSITE_TICKERS: Dict[str, Callable[..., bool]] = {}


def register_node_type(
    name: str, composite: bool, ticker: Optional[Callable[..., bool]] = None
) -> None:
    """Register a custom node type.

    ``ticker`` is required for composite types and receives
    ``(node, agent, tick_child)``, where ``tick_child(child)`` evaluates one
    child and returns a bool.  Leaf types are executed through the agent's
    primitives like the built-in leaves.
    """
    if name in NODE_TYPES:
        raise ValueError(f"node type {name} is already registered")
    if composite and ticker is None:
        raise ValueError(f"composite node type {name} needs a ticker")
    NODE_TYPES[name] = composite
    if ticker is not None:
        _COMPOSITE_TICKERS[name] = ticker


def is_composite(node_type: str) -> bool:
    return NODE_TYPES[node_type]


@dataclass(frozen=True)
class Node:
    """One behavior tree node; the root node stands for the whole tree."""

    type: str
    children: Tuple["Node", ...] = ()
    name: Optional[str] = None

    @property
    def is_leaf(self) -> bool:
        return not NODE_TYPES.get(self.type, False)

    def walk(self, path: str = "") -> Iterator[Tuple[str, "Node"]]:
        """Yield ``(path, node)`` pairs in depth-first, left-to-right order."""
        path = path or self.type
        yield path, self
        for i, child in enumerate(self.children):
            yield from child.walk(f"{path}/{child.type}[{i}]")

    def leaves(self) -> List["Node"]:
        return [n for _, n in self.walk() if not n.children and n.is_leaf]

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def with_names(self, names: Iterator[str]) -> "Node":
        """Copy of the tree with leaf names taken in order from ``names``."""
        if self.is_leaf:
            return Node(self.type, (), next(names))
        return Node(self.type, tuple(c.with_names(names) for c in self.children))

    def strip_names(self) -> "Node":
        if self.is_leaf:
            return Node(self.type)
        return Node(self.type, tuple(c.strip_names() for c in self.children))


def leaf(node_type: str, name: Optional[str] = None) -> Node:
    return Node(node_type, (), name)


def composite(node_type: str, *children: Node) -> Node:
    return Node(node_type, tuple(children))


class TickStatus(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"

    @classmethod
    def of(cls, ok: bool) -> "TickStatus":
        return cls.SUCCESS if ok else cls.FAILURE


@dataclass
class ValidationReport:
    violations: List[Tuple[str, str]] = field(default_factory=list)
    hallucinated_primitives: List[Tuple[str, Optional[str], str]] = field(default_factory=list)

    @property
    def syntactically_valid(self) -> bool:
        return not self.violations

    @property
    def hallucinated(self) -> bool:
        return bool(self.hallucinated_primitives)

    @property
    def ok(self) -> bool:
        return self.syntactically_valid and not self.hallucinated

    def merge(self, other: "ValidationReport") -> "ValidationReport":
        return ValidationReport(
            self.violations + other.violations,
            self.hallucinated_primitives + other.hallucinated_primitives,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "syntactically_valid": self.syntactically_valid,
            "violations": [{"path": p, "rule": r} for p, r in self.violations],
            "hallucinated_primitives": [
                {"path": p, "name": n, "reason": r} for p, n, r in self.hallucinated_primitives
            ],
        }


# ---------------------------------------------------------------- XML

_FENCE_RE = re.compile(r"^[ \t]*```[^\n]*$", re.MULTILINE)
_BT_TAG_RE = re.compile(r"<(/?)BehaviorTree\b[^>]*?(/?)>")


def extract_bt_xml(text: str) -> Optional[str]:
    """Cut the first balanced ``<BehaviorTree>`` element out of free text.

    Markdown code fences are removed first.  Returns ``None`` when no
    complete element is present.
    """
    text = _FENCE_RE.sub("", text)
    start = text.find("<BehaviorTree")
    if start < 0:
        return None
    depth = 0
    for m in _BT_TAG_RE.finditer(text, start):
        closing, selfclosing = m.group(1), m.group(2)
        if selfclosing:
            if depth == 0:
                return text[start:m.end()]
            continue
        depth += -1 if closing else 1
        if depth == 0:
            return text[start:m.end()]
    return None


def parse_xml(text: str) -> Node:
    """Parse behavior tree XML, tolerating prose and code fences around it."""
    candidate = extract_bt_xml(text)
    if candidate is None:
        candidate = text.strip()
    try:
        root = ET.fromstring(candidate)
    except ET.ParseError as exc:
        raise BTreeError(f"malformed XML: {exc}") from None
    return _from_element(root)


def _from_element(el: ET.Element) -> Node:
    if el.tag not in NODE_TYPES:
        raise BTreeError(f"unknown tag {el.tag}")
    text = (el.text or "").strip()
    if NODE_TYPES[el.tag]:
        if text or any((c.tail or "").strip() for c in el):
            raise BTreeError(f"composite {el.tag} has text content")
        return Node(el.tag, tuple(_from_element(c) for c in el))
    if len(el):
        raise BTreeError(f"leaf {el.tag} has child elements")
    return Node(el.tag, (), text or None)


def serialize_xml(tree: Node, indent: str = "    ") -> str:
    lines: List[str] = []

    def emit(node: Node, depth: int) -> None:
        pad = indent * depth
        if node.is_leaf:
            if node.name is None:
                lines.append(f"{pad}<{node.type} />")
            else:
                lines.append(f"{pad}<{node.type}>{escape(node.name)}</{node.type}>")
        elif not node.children:
            lines.append(f"{pad}<{node.type} />")
        else:
            lines.append(f"{pad}<{node.type}>")
            for child in node.children:
                emit(child, depth + 1)
            lines.append(f"{pad}</{node.type}>")

    emit(tree, 0)
    return "\n".join(lines)


# ---------------------------------------------------------------- validation


class _Deriver:
    """Memoized search for a derivation of node sequences from grammar items."""

    def __init__(self, grammar: "Grammar"):
        self.g = grammar
        self.memo: Dict[Tuple[Any, ...], bool] = {}

    def symbol(self, sym: str, nodes: Tuple[Node, ...], i: int, j: int,
               children: Tuple["Item", ...] = ()) -> bool:
        term = self.g.terminals.get(sym)
        if term is not None:
            if j != i + 1:
                return False
            node = nodes[i]
            if node.type != term.node_type:
                return False
            if term.has_children:
                return self.seq(children, 0, node.children, 0, len(node.children))
            return not node.children
        key = (sym, id(nodes), i, j)
        if key in self.memo:
            return self.memo[key]
        self.memo[key] = False  # cycle guard
        ok = any(self.seq(opt, 0, nodes, i, j) for opt in self.g.rules[sym])
        self.memo[key] = ok
        return ok

    def seq(self, items: Tuple["Item", ...], pos: int, nodes: Tuple[Node, ...],
            i: int, j: int) -> bool:
        if pos == len(items):
            return i == j
        key = (id(items), pos, id(nodes), i, j)
        if key in self.memo:
            return self.memo[key]
        self.memo[key] = False
        item = items[pos]
        ok = False
        # a terminal always covers exactly one node
        ends = [i + 1] if item.symbol in self.g.terminals else range(i, j + 1)
        for k in ends:
            if k > j:
                break
            if self.symbol(item.symbol, nodes, i, k, item.children) and self.seq(items, pos + 1, nodes, k, j):
                ok = True
                break
        self.memo[key] = ok
        return ok


def validate_syntax(tree: Node, grammar: "Grammar") -> ValidationReport:
    """Check that the tree's node-type structure derives from the start symbol.

    Leaf names are ignored.  Never raises; problems are reported as
    ``(path, rule)`` violations.
    """
    report = ValidationReport()
    unknown = [(p, f"unknown node type {n.type}") for p, n in tree.walk() if n.type not in NODE_TYPES]
    if unknown:
        report.violations.extend(unknown)
        return report
    deriver = _Deriver(grammar)
    root = (tree,)
    # keep the tuple alive for the id()-keyed memo
    if deriver.symbol(grammar.start, root, 0, 1):
        return report
    report.violations.extend(_localize(tree, grammar, deriver))
    if not report.violations:
        report.violations.append(
            (tree.type, f"tree is not derivable from start symbol {grammar.start}")
        )
    return report


def _localize(tree: Node, grammar: "Grammar", deriver: _Deriver) -> List[Tuple[str, str]]:
    """Context-free blame: nodes that no production could possibly build."""
    by_type: Dict[str, List["Item"]] = {}
    for item in grammar.terminal_items():
        by_type.setdefault(grammar.terminals[item.symbol].node_type, []).append(item)
    out = []
    for path, node in tree.walk():
        items = by_type.get(node.type)
        if not items:
            out.append((path, f"node type {node.type} is not produced by the grammar"))
            continue
        if node.is_leaf:
            if node.children:
                out.append((path, f"leaf {node.type} has children"))
            continue
        kids = node.children
        if not any(deriver.seq(it.children, 0, kids, 0, len(kids)) for it in items):
            shape = ", ".join(c.type for c in kids) or "nothing"
            out.append((path, f"{node.type} cannot contain [{shape}]"))
    return out


def validate_primitives(tree: Node, registry: "PrimitiveRegistry") -> ValidationReport:
    """Flag leaves whose primitive is unknown or registered under another node type."""
    report = ValidationReport()
    for path, node in tree.walk():
        if not node.is_leaf:
            continue
        entry = registry.get(node.name) if node.name else None
        if entry is None:
            report.hallucinated_primitives.append((path, node.name, "unknown name"))
        elif entry.node_type != node.type:
            report.hallucinated_primitives.append((path, node.name, "wrong node type"))
    return report


def validate(tree: Node, grammar: "Grammar", registry: "PrimitiveRegistry") -> ValidationReport:
    return validate_syntax(tree, grammar).merge(validate_primitives(tree, registry))


def structures_equal(a: Node, b: Node) -> bool:
    """Same shape and node types everywhere; leaf names are ignored."""
    if a.type != b.type or len(a.children) != len(b.children):
        return False
    return all(structures_equal(x, y) for x, y in zip(a.children, b.children))


# ---------------------------------------------------------------- execution


def _resolver(registry: Optional["PrimitiveRegistry"]) -> Callable[[Node, Any], Callable[[], bool]]:
    def resolve(node: Node, agent: Any) -> Callable[[], bool]:
        if registry is not None:
            entry = registry.get(node.name) if node.name else None
            if entry is None or entry.func is None:
                raise TickError(f"unresolvable primitive {node.name!r}")
            return lambda: entry.func(agent)
        fn = getattr(agent, node.name or "", None)
        if not callable(fn):
            raise TickError(f"unresolvable primitive {node.name!r}")
        return fn
    return resolve


def tick(tree: Node, agent: Any, registry: Optional["PrimitiveRegistry"] = None) -> TickStatus:
    """Evaluate the tree once on ``agent`` with short-circuiting.

    Leaves call the primitive of the same name, looked up in ``registry``
    when given and on the agent object otherwise.
    """
    resolve = _resolver(registry)

    def run(node: Node) -> bool:
        t = node.type
        if t == "Selector":
            _require_children(node)
            return any(run(c) for c in node.children)
        if t == "Sequence":
            _require_children(node)
            return all(run(c) for c in node.children)
        if t == "BehaviorTree":
            if len(node.children) != 1:
                raise TickError("BehaviorTree must have exactly one child")
            return run(node.children[0])
        if t in _COMPOSITE_TICKERS:
            return bool(_COMPOSITE_TICKERS[t](node, agent, run))
        return bool(resolve(node, agent)())

    return TickStatus.of(run(tree))


def _require_children(node: Node) -> None:
    if not node.children:
        raise TickError(f"{node.type} has no children")


def compile_tree(tree: Node, registry: "PrimitiveRegistry") -> Callable[[Any], bool]:
    """Turn a tree into a nested closure ``f(agent) -> bool``.

    Same semantics as :func:`tick`; used by the simulator's hot loop.
    """

    def build(node: Node) -> Callable[[Any], bool]:
        t = node.type
        if t == "BehaviorTree":
            if len(node.children) != 1:
                raise TickError("BehaviorTree must have exactly one child")
            return build(node.children[0])
        if t in ("Selector", "Sequence"):
            _require_children(node)
            kids = tuple(build(c) for c in node.children)
            if t == "Selector":
                return lambda agent: any(k(agent) for k in kids)
            return lambda agent: all(k(agent) for k in kids)
        if t in _COMPOSITE_TICKERS:
            ticker = _COMPOSITE_TICKERS[t]
            return lambda agent: bool(ticker(node, agent, lambda c: tick(c, agent, registry) is TickStatus.SUCCESS))
        entry = registry.get(node.name) if node.name else None
        if entry is None or entry.func is None:
            raise TickError(f"unresolvable primitive {node.name!r}")
        func = entry.func
        return lambda agent: bool(func(agent))

    return build(tree)
