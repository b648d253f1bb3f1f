"""Agent primitive registry.

Primitives are plain methods on an agent class whose docstring declares the
node type and a description::

    def is_agent_in_base_area(self) -> bool:
        \"\"\"
        Node Type: Condition
        Description: Checks whether the agent is in the base area.
        \"\"\"
"""

from __future__ import annotations

import inspect
import re
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Tuple

from .btree import LEAF_TYPES, NODE_TYPES


class PrimitiveDocError(ValueError):
    pass


_NODE_TYPE_RE = re.compile(r"^\s*Node Type:\s*(\S+)\s*$", re.MULTILINE)
_DESCRIPTION_RE = re.compile(r"^\s*Description:\s*(.*)", re.MULTILINE | re.DOTALL)


def parse_primitive_doc(name: str, doc: Optional[str]) -> Tuple[str, str]:
    """Return ``(node_type, description)`` from a primitive docstring."""
    if not doc:
        raise PrimitiveDocError(f"primitive {name} has no docstring")
    doc = inspect.cleandoc(doc)
    m = _NODE_TYPE_RE.search(doc)
    if m is None:
        raise PrimitiveDocError(f"primitive {name}: missing 'Node Type:' label")
    d = _DESCRIPTION_RE.search(doc)
    if d is None:
        raise PrimitiveDocError(f"primitive {name}: missing 'Description:' label")
    description = " ".join(d.group(1).split())
    if not description:
        raise PrimitiveDocError(f"primitive {name}: empty description")
    return m.group(1), description


@dataclass(frozen=True)
class Primitive:
    name: str
    node_type: str
    description: str
    func: Optional[Callable[[Any], bool]] = None
    doc: Optional[str] = None


class PrimitiveRegistry:
    """Ordered collection of the primitives an agent class offers."""

    def __init__(self, entries: Iterable[Primitive] = ()):
        self._entries: Dict[str, Primitive] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: Primitive) -> None:
        if entry.name in self._entries:
            raise ValueError(f"duplicate primitive {entry.name}")
        if NODE_TYPES.get(entry.node_type, True):
            raise ValueError(f"primitive {entry.name}: {entry.node_type} is not a leaf node type")
        self._entries[entry.name] = entry

    def register(self, name: str, node_type: str, description: str,
                 func: Optional[Callable[[Any], bool]] = None) -> None:
        doc = f"Node Type: {node_type}\nDescription: {description}"
        self.add(Primitive(name, node_type, description, func, doc))

    @classmethod
    def from_agent_class(cls, agent_cls: type) -> "PrimitiveRegistry":
        """Collect every method whose docstring carries a ``Node Type:`` label.

        Methods are taken in definition order, base classes first.
        """
        reg = cls()
        seen = set()
        for klass in reversed(agent_cls.__mro__):
            for attr, value in vars(klass).items():
                if attr.startswith("_") or not inspect.isfunction(value):
                    continue
                doc = value.__doc__
                if not doc or "Node Type:" not in doc:
                    continue
                node_type, description = parse_primitive_doc(attr, doc)
                func = getattr(agent_cls, attr)
                if attr in seen:
                    reg._entries[attr] = Primitive(attr, node_type, description, func, doc)
                else:
                    seen.add(attr)
                    reg.add(Primitive(attr, node_type, description, func, doc))
        return reg

    @classmethod
    def from_manifest(cls, items: Iterable[Dict[str, str]]) -> "PrimitiveRegistry":
        """Build an unbound registry from ``[{name, node_type, description}]``."""
        reg = cls()
        for it in items:
            reg.register(it["name"], it["node_type"], it.get("description", ""))
        return reg

    def to_manifest(self) -> List[Dict[str, str]]:
        return [
            {"name": e.name, "node_type": e.node_type, "description": e.description}
            for e in self
        ]

    def get(self, name: str) -> Optional[Primitive]:
        return self._entries.get(name)

    def names(self, node_type: Optional[str] = None) -> List[str]:
        return [e.name for e in self if node_type is None or e.node_type == node_type]

    def node_types(self) -> List[str]:
        return [t for t in LEAF_TYPES if self.names(t)] + sorted(
            {e.node_type for e in self} - set(LEAF_TYPES)
        )

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[Primitive]:
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)
