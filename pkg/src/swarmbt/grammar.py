"""Formal grammars over behavior tree node types.

A grammar is a rule table.  Each nonterminal maps to an ordered list of
options; an option is an ordered list of symbols.  Terminal symbols name a
node type, and a terminal whose node type takes children is immediately
followed in the option by a nested list holding the symbols of its
children, e.g. ``["sel", ["SEQn", "As"]]``.

Rule keys ending in a lowercase ``n`` are list expansions: one option
recurses on the key itself, one option is the single version, and an
optional empty option allows an empty list.

Integer genotypes are decoded into skeleton trees by walking the rules
depth-first and picking ``codon % n_options`` at every nonterminal.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .btree import NODE_TYPES, Node


class GrammarError(ValueError):
    pass


class DecodeError(RuntimeError):
    pass


class EnumerationBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class Item:
    """A symbol occurrence inside an option, with the children group of a composite terminal."""

    symbol: str
    children: Tuple["Item", ...] = ()


Option = Tuple[Item, ...]


@dataclass(frozen=True)
class TerminalDef:
    node_type: str
    has_children: bool


@dataclass(frozen=True)
class Grammar:
    rules: Mapping[str, Tuple[Option, ...]]
    terminals: Mapping[str, TerminalDef]
    start: str = "B"

    def __post_init__(self):
        _check_closed(self)

    @property
    def keys(self) -> List[str]:
        return list(self.rules) + list(self.terminals)

    def __len__(self) -> int:
        return len(self.rules) + len(self.terminals)

    def is_list_rule(self, key: str) -> bool:
        return key in self.rules and key.endswith("n")

    def recursive_option(self, key: str) -> int:
        return next(i for i, opt in enumerate(self.rules[key]) if _mentions(opt, key))

    def single_option(self, key: str) -> int:
        return next(
            i for i, opt in enumerate(self.rules[key]) if opt and not _mentions(opt, key)
        )

    def empty_option(self, key: str) -> Optional[int]:
        return next((i for i, opt in enumerate(self.rules[key]) if not opt), None)

    def terminal_items(self) -> Iterator[Item]:
        """Every occurrence of a terminal in any option, nested groups included."""

        def visit(items):
            for it in items:
                if it.symbol in self.terminals:
                    yield it
                yield from visit(it.children)

        for options in self.rules.values():
            for opt in options:
                yield from visit(opt)

    def to_document(self) -> Dict[str, Any]:
        return {
            "start": self.start,
            "rules": {k: [_dump_items(o) for o in opts] for k, opts in self.rules.items()},
            "terminals": {
                k: {"node_type": t.node_type, "has_children": t.has_children}
                for k, t in self.terminals.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2)


def _mentions(items: Sequence[Item], key: str) -> bool:
    return any(it.symbol == key or _mentions(it.children, key) for it in items)


def _dump_items(items: Sequence[Item]) -> List[Any]:
    out: List[Any] = []
    for it in items:
        out.append(it.symbol)
        if it.children:
            out.append(_dump_items(it.children))
    return out


def _check_closed(g: Grammar) -> None:
    overlap = set(g.rules) & set(g.terminals)
    if overlap:
        raise GrammarError(f"duplicate rule key {sorted(overlap)[0]}")
    if g.start not in g.rules:
        raise GrammarError(f"undefined symbol {g.start}")
    for key, t in g.terminals.items():
        if t.node_type not in NODE_TYPES:
            raise GrammarError(f"terminal {key} names unregistered node type {t.node_type}")
        if t.has_children != NODE_TYPES[t.node_type]:
            raise GrammarError(f"terminal {key}: children marker does not match node type {t.node_type}")

    def check(items: Sequence[Item], key: str) -> None:
        for it in items:
            if it.symbol not in g.rules and it.symbol not in g.terminals:
                raise GrammarError(f"undefined symbol {it.symbol}")
            term = g.terminals.get(it.symbol)
            if it.children and (term is None or not term.has_children):
                raise GrammarError(f"rule {key}: children group after {it.symbol}, which takes no children")
            check(it.children, key)

    for key, options in g.rules.items():
        if not options:
            raise GrammarError(f"rule {key} has no options")
        for opt in options:
            check(opt, key)
        if key.endswith("n"):
            rec = [i for i, o in enumerate(options) if _mentions(o, key)]
            single = [i for i, o in enumerate(options) if o and not _mentions(o, key)]
            empty = [i for i, o in enumerate(options) if not o]
            if len(rec) != 1 or len(single) != 1 or len(empty) > 1:
                raise GrammarError(
                    f"list rule {key} needs one recursive option, one single option "
                    "and at most one empty option"
                )


# ---------------------------------------------------------------- parsing


def _parse_items(raw: Sequence[Any], key: str) -> Option:
    items: List[Item] = []
    for el in raw:
        if isinstance(el, str):
            items.append(Item(el))
        elif isinstance(el, list):
            if not items or items[-1].children:
                raise GrammarError(f"rule {key}: children group without a preceding terminal")
            items[-1] = Item(items[-1].symbol, _parse_items(el, key))
        else:
            raise GrammarError(f"rule {key}: unexpected element {el!r}")
    return tuple(items)


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise GrammarError(f"duplicate rule key {k}")
        out[k] = v
    return out


_ASSIGN_RE = re.compile(r"^\s*[A-Za-z_]\w*\s*=\s*")


def parse_grammar(spec: Union[str, Mapping[str, Any]]) -> Grammar:
    """Build a :class:`Grammar` from a JSON document or an equivalent mapping.

    Two layouts are accepted.  The document layout has ``start``, ``rules``
    and ``terminals`` keys, with ``terminals`` mapping each terminal key to
    ``{"node_type": ..., "has_children": ...}``.  The flat layout is a single
    rule table where terminals appear as ``"aa": ["ActuatorAction"]`` or
    ``"sel": ["Selector", ["children_nodes"]]``; text may start with an
    assignment such as ``grammar_rules =``.  Rule and option order is kept.
    """
    if isinstance(spec, str):
        text = _ASSIGN_RE.sub("", spec, count=1)
        try:
            doc = json.loads(text, object_pairs_hook=_no_duplicates)
        except json.JSONDecodeError as exc:
            raise GrammarError(f"grammar is not valid JSON: {exc}") from None
    else:
        doc = spec
    if not isinstance(doc, Mapping):
        raise GrammarError("grammar document must be an object")
    if "rules" in doc and isinstance(doc["rules"], Mapping):
        return _from_document(doc)
    return _from_flat(doc)


def _from_document(doc: Mapping[str, Any]) -> Grammar:
    rules = {k: tuple(_parse_items(o, k) for o in opts) for k, opts in doc["rules"].items()}
    terminals = {}
    for k, t in doc.get("terminals", {}).items():
        if "node_type" not in t:
            raise GrammarError(f"terminal {k} has no node_type")
        node_type = t["node_type"]
        terminals[k] = TerminalDef(node_type, bool(t.get("has_children", NODE_TYPES.get(node_type, False))))
    return Grammar(rules, terminals, doc.get("start", "B"))


def _from_flat(doc: Mapping[str, Any], start: str = "B") -> Grammar:
    rules: Dict[str, Tuple[Option, ...]] = {}
    terminals: Dict[str, TerminalDef] = {}
    for k, v in doc.items():
        if isinstance(v, list) and v and isinstance(v[0], str):
            has_children = len(v) > 1 and v[1] == ["children_nodes"]
            if len(v) > 2 or (len(v) == 2 and not has_children):
                raise GrammarError(f"malformed terminal definition {k}")
            terminals[k] = TerminalDef(v[0], has_children or NODE_TYPES.get(v[0], False))
        elif isinstance(v, list):
            rules[k] = tuple(_parse_items(o, k) for o in v)
        else:
            raise GrammarError(f"malformed rule {k}")
    return Grammar(rules, terminals, start)


def load_grammar(path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return parse_grammar(fh.read())


def default_grammar() -> Grammar:
    """The shipped selector/sequence grammar for the foraging agent."""
    text = resources.files("swarmbt.data").joinpath("grammar.json").read_text(encoding="utf-8")
    return parse_grammar(text)


# ---------------------------------------------------------------- structure params


@dataclass
class StructureParams:
    """Steering parameters applied on top of codon choices.

    ``list_max`` caps the number of items of a list rule, ``list_always``
    fixes it, ``only`` forces an option index, ``exclude`` removes option
    indices, and ``parent`` forces an option when the enclosing node has a
    given node type.
    """

    list_max: Dict[str, int] = field(default_factory=dict)
    list_always: Dict[str, int] = field(default_factory=dict)
    only: Dict[str, int] = field(default_factory=dict)
    exclude: Dict[str, List[int]] = field(default_factory=dict)
    parent: Dict[str, Dict[str, int]] = field(default_factory=dict)

    DEFAULT_LIST_MAX = 5

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "StructureParams":
        data = data or {}
        unknown = set(data) - {"list_max", "list_always", "only", "exclude", "parent"}
        if unknown:
            raise GrammarError(f"unknown structure parameter {sorted(unknown)[0]}")
        return cls(
            dict(data.get("list_max", {})),
            dict(data.get("list_always", {})),
            dict(data.get("only", {})),
            {k: list(v) for k, v in data.get("exclude", {}).items()},
            {k: dict(v) for k, v in data.get("parent", {}).items()},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "list_max": dict(self.list_max),
            "list_always": dict(self.list_always),
            "only": dict(self.only),
            "exclude": {k: list(v) for k, v in self.exclude.items()},
            "parent": {k: dict(v) for k, v in self.parent.items()},
        }

    def with_defaults(self, grammar: Grammar) -> "StructureParams":
        """Copy with ``list_max`` filled in for every list rule left open."""
        out = StructureParams.from_dict(self.to_dict())
        for key in grammar.rules:
            if grammar.is_list_rule(key) and key not in out.list_max and key not in out.list_always:
                out.list_max[key] = self.DEFAULT_LIST_MAX
        return out

    def check(self, grammar: Grammar) -> None:
        def n_options(key: str, what: str) -> int:
            if key not in grammar.rules:
                raise GrammarError(f"{what}: {key} is not a rule")
            return len(grammar.rules[key])

        def in_range(key: str, idx: int, what: str) -> None:
            if not 0 <= idx < n_options(key, what):
                raise GrammarError(f"{what}: option {idx} out of range for {key}")

        for key, idx in self.only.items():
            in_range(key, idx, "only")
        for key, idxs in self.exclude.items():
            for i in idxs:
                in_range(key, i, "exclude")
            if len(set(idxs)) >= n_options(key, "exclude"):
                raise GrammarError(f"exclude removes every option of {key}")
            if key in self.only and self.only[key] in idxs:
                raise GrammarError(f"only and exclude conflict on {key}")
        for key, by_parent in self.parent.items():
            for parent_type, idx in by_parent.items():
                if parent_type not in NODE_TYPES:
                    raise GrammarError(f"parent: unknown node type {parent_type}")
                in_range(key, idx, "parent")
        for what, table in (("list_max", self.list_max), ("list_always", self.list_always)):
            for key, n in table.items():
                n_options(key, what)
                if not grammar.is_list_rule(key):
                    raise GrammarError(f"{what}: {key} is not a list rule")
                if n < 0 or (what == "list_max" and n < 1):
                    raise GrammarError(f"{what}: bad count {n} for {key}")
        for key, n in self.list_always.items():
            if n == 0 and grammar.empty_option(key) is None:
                raise GrammarError(f"list_always: {key} cannot be empty")


# ---------------------------------------------------------------- genotypes

Genotype = List[int]


def random_genotype(rng: Union[None, int, np.random.Generator] = None,
                    length: int = 10, max_codon: int = 9) -> Genotype:
    """Uniform codons in ``[0, max_codon]``; ``rng`` may be a seed or a Generator."""
    if length < 1 or max_codon < 0:
        raise ValueError("need length >= 1 and max_codon >= 0")
    gen = np.random.default_rng(rng)
    return [int(c) for c in gen.integers(0, max_codon + 1, size=length)]


class _Decoder:
    def __init__(self, grammar: Grammar, genotype: Sequence[int], params: StructureParams,
                 node_budget: int):
        if not genotype:
            raise DecodeError("empty genotype")
        if any(c < 0 for c in genotype):
            raise DecodeError("codons must be non-negative")
        self.g = grammar
        self.codons = list(genotype)
        self.p = params
        self.cursor = 0
        self.nodes = 0
        self.node_budget = node_budget
        self.expansions = 0
        self.choices: List[Tuple[str, int]] = []

    def next_codon(self) -> int:
        c = self.codons[self.cursor % len(self.codons)]
        self.cursor += 1
        return c

    def choose(self, key: str, depth: int, parent_type: Optional[str]) -> int:
        g, p = self.g, self.p
        n = len(g.rules[key])
        codon = self.next_codon()
        forced = None
        if parent_type is not None and parent_type in p.parent.get(key, {}):
            forced = p.parent[key][parent_type]
        elif key in p.only:
            forced = p.only[key]
        elif key in p.list_always:
            want = p.list_always[key]
            if want == 0:
                forced = g.empty_option(key)
            elif depth < want - 1:
                forced = g.recursive_option(key)
            else:
                forced = g.single_option(key)
        if forced is not None:
            return forced
        excluded = set(p.exclude.get(key, ()))
        admissible = [i for i in range(n) if i not in excluded]
        if key in p.list_max and depth + 1 >= p.list_max[key]:
            single = g.single_option(key)
            if single in admissible:
                admissible = [single]
            else:
                rec = g.recursive_option(key)
                admissible = [i for i in admissible if i != rec]
        if not admissible:
            raise DecodeError(f"no admissible option for {key}")
        return admissible[codon % len(admissible)]

    def expand(self, key: str, depth: int, parent_type: Optional[str]) -> List[Node]:
        self.expansions += 1
        if self.expansions > 16 * self.node_budget:
            raise DecodeError("expansion budget exceeded")
        idx = self.choose(key, depth, parent_type)
        self.choices.append((key, idx))
        return self.expand_items(self.g.rules[key][idx], key, depth, parent_type)

    def expand_items(self, items: Sequence[Item], key: Optional[str], depth: int,
                     parent_type: Optional[str]) -> List[Node]:
        out: List[Node] = []
        for it in items:
            term = self.g.terminals.get(it.symbol)
            if term is None:
                child_depth = depth + 1 if it.symbol == key else 0
                out.extend(self.expand(it.symbol, child_depth, parent_type))
                continue
            self.nodes += 1
            if self.nodes > self.node_budget:
                raise DecodeError(f"node budget of {self.node_budget} exceeded")
            if term.has_children:
                kids = self.expand_items(it.children, None, 0, term.node_type)
                out.append(Node(term.node_type, tuple(kids)))
            else:
                out.append(Node(term.node_type))
        return out


def decode(grammar: Grammar, genotype: Sequence[int], params: Optional[StructureParams] = None,
           node_budget: int = 256, fill_defaults: bool = True) -> Node:
    """Decode a genotype into a skeleton tree (leaves have no names).

    Codons are used one per nonterminal expansion, cycling when the genotype
    runs out.  ``params`` get a default ``list_max`` on every open list rule
    unless ``fill_defaults`` is false.
    """
    return decode_with_trace(grammar, genotype, params, node_budget, fill_defaults)[0]


def decode_with_trace(grammar: Grammar, genotype: Sequence[int],
                      params: Optional[StructureParams] = None, node_budget: int = 256,
                      fill_defaults: bool = True) -> Tuple[Node, List[Tuple[str, int]]]:
    """Like :func:`decode`, also returning the ``(rule, option index)`` choices made."""
    params = params or StructureParams()
    if fill_defaults:
        params = params.with_defaults(grammar)
    params.check(grammar)
    dec = _Decoder(grammar, genotype, params, node_budget)
    nodes = dec.expand(grammar.start, 0, None)
    if len(nodes) != 1:
        raise DecodeError(f"start symbol produced {len(nodes)} root nodes")
    return nodes[0], dec.choices


# ---------------------------------------------------------------- enumeration


def enumerate_skeletons(grammar: Grammar, max_nodes: int, max_results: int = 200_000) -> Set[Node]:
    """All skeleton trees of the language with at most ``max_nodes`` nodes.

    Derivations through nullable cycles are cut, which only matters for
    grammars where a rule can re-enter itself without producing a node.
    """
    if max_nodes < 1:
        return set()
    memo: Dict[Tuple[str, int], Set[Tuple[Node, ...]]] = {}
    sizes: Dict[Node, int] = {}

    def count(seq: Tuple[Node, ...]) -> int:
        total = 0
        for n in seq:
            if n not in sizes:
                sizes[n] = n.size()
            total += sizes[n]
        return total

    def gen_symbol(sym: str, budget: int, children: Tuple[Item, ...]) -> Set[Tuple[Node, ...]]:
        term = grammar.terminals.get(sym)
        if term is not None:
            if budget < 1:
                return set()
            if not term.has_children:
                return {(Node(term.node_type),)}
            return {(Node(term.node_type, kids),) for kids in gen_seq(children, 0, budget - 1)}
        key = (sym, budget)
        if key in memo:
            return memo[key]
        memo[key] = set()
        out: Set[Tuple[Node, ...]] = set()
        for opt in grammar.rules[sym]:
            out |= gen_seq(opt, 0, budget)
            if len(out) > max_results:
                raise EnumerationBudgetError(f"more than {max_results} derivations")
        memo[key] = out
        return out

    def gen_seq(items: Tuple[Item, ...], pos: int, budget: int) -> Set[Tuple[Node, ...]]:
        if pos == len(items):
            return {()}
        out: Set[Tuple[Node, ...]] = set()
        item = items[pos]
        for first in gen_symbol(item.symbol, budget, item.children):
            used = count(first)
            for rest in gen_seq(items, pos + 1, budget - used):
                out.add(first + rest)
                if len(out) > max_results:
                    raise EnumerationBudgetError(f"more than {max_results} derivations")
        return out

    roots = gen_symbol(grammar.start, max_nodes, ())
    return {seq[0] for seq in roots if len(seq) == 1}


def reachable_by_genotypes(grammar: Grammar, targets: Set[Node], length: int,
                           max_codon: int, params: Optional[StructureParams] = None) -> Set[Node]:
    """Decode every genotype in ``[0, max_codon]^length`` and keep the targets hit."""
    hit: Set[Node] = set()
    for codons in itertools.product(range(max_codon + 1), repeat=length):
        try:
            tree = decode(grammar, codons, params)
        except DecodeError:
            continue
        if tree in targets:
            hit.add(tree)
            if hit == targets:
                break
    return hit
