"""Synthetic fine-tuning datasets of (task phrasing, behavior tree) pairs.

Method A fills grammar skeletons with random primitives of the right node
type and asks a model to restate the generated technical description in
casual words.  Method B hands the empty skeleton to the model, which
invents a task and fills the leaves itself; replies that change the
structure or use unknown primitives are rejected.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .btree import BTreeError, Node, extract_bt_xml, parse_xml, serialize_xml, structures_equal, validate_primitives, validate_syntax
from .grammar import DecodeError, Grammar, StructureParams, decode, random_genotype
from .llm import ChatModel, LlmError
from .prompts import (
    PromptBundle,
    PromptStyle,
    build_prompt,
    default_system_prompt,
    extract_primitive_docs,
    format_primitive_docs,
    generate_spoonfed,
    generate_technical,
)
from .registry import PrimitiveRegistry
from .sim import METRIC_NAMES, WorldConfig, foraging_registry, run

log = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    pass


class IncompleteDatasetError(RuntimeError):
    """The attempt budget ran out; ``dataset`` holds what was produced."""

    def __init__(self, message: str, dataset: "Dataset"):
        super().__init__(message)
        self.dataset = dataset


def _data(name: str) -> str:
    return resources.files("swarmbt.data").joinpath(name).read_text(encoding="utf-8")


@dataclass
class DatasetEntry:
    layman: str
    technical: str
    spoonfed: str
    tree_xml: str
    provenance: str
    skeleton: Optional[str] = None
    metrics: Optional[Dict[str, int]] = None

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "layman": self.layman,
            "technical": self.technical,
            "spoonfed": self.spoonfed,
            "tree_xml": self.tree_xml,
            "provenance": self.provenance,
            "skeleton": self.skeleton,
        }
        if self.metrics is not None:
            out["metrics"] = dict(self.metrics)
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DatasetEntry":
        return cls(d["layman"], d["technical"], d["spoonfed"], d["tree_xml"],
                   d.get("provenance", "enrichment"), d.get("skeleton"), d.get("metrics"))

    def text(self, style: str) -> str:
        return getattr(self, PromptStyle(style).value)


@dataclass
class Dataset:
    entries: List[DatasetEntry] = field(default_factory=list)
    stats: Dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries], indent=2, ensure_ascii=False) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, encoding="utf-8") as fh:
            return cls([DatasetEntry.from_dict(d) for d in json.load(fh)])


def skeleton_fingerprint(skeleton: Node) -> str:
    return hashlib.sha256(serialize_xml(skeleton.strip_names()).encode()).hexdigest()[:16]


@dataclass
class GenConfig:
    method: str = "B"
    size: int = 300
    genotype_length: int = 10
    max_codon: int = 9
    params: StructureParams = field(default_factory=StructureParams)
    filtering: bool = True
    thresholds: Dict[str, int] = field(default_factory=lambda: {m: 1 for m in METRIC_NAMES})
    filter_world: Optional[WorldConfig] = None
    filter_seed: int = 7
    filter_ticks: Optional[int] = None
    seed: int = 0
    max_retries: int = 3
    attempt_budget: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.method not in ("A", "B"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.size < 1:
            raise ValueError("target size must be >= 1")

    @property
    def budget(self) -> int:
        return self.attempt_budget if self.attempt_budget is not None else 5 * self.size

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GenConfig":
        d = dict(d)
        if "params" in d:
            d["params"] = StructureParams.from_dict(d["params"])
        if d.get("filter_world") is not None:
            d["filter_world"] = WorldConfig.from_dict(d["filter_world"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "GenConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------- population


def populate_random(skeleton: Node, registry: PrimitiveRegistry, rng=None) -> Node:
    """Give every leaf a uniformly drawn primitive of its node type."""
    gen = np.random.default_rng(rng)
    pools: Dict[str, List[str]] = {}

    def fill(node: Node) -> Node:
        if node.is_leaf:
            pool = pools.setdefault(node.type, registry.names(node.type))
            if not pool:
                raise GenerationError(f"no primitive of node type {node.type}")
            return Node(node.type, (), pool[int(gen.integers(len(pool)))])
        return Node(node.type, tuple(fill(c) for c in node.children))

    return fill(skeleton)


def _clean_layman(text: str) -> str:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        return ""
    line = lines[0]
    if len(line) >= 2 and line[0] == line[-1] and line[0] in "\"'":
        line = line[1:-1].strip()
    return line


def method_a_entry(skeleton: Node, registry: PrimitiveRegistry, llm: ChatModel, rng=None,
                   template: Optional[str] = None, max_retries: int = 0) -> DatasetEntry:
    tree = populate_random(skeleton, registry, rng)
    technical = generate_technical(tree)
    spoonfed = generate_spoonfed(tree)
    tree_xml = serialize_xml(tree)
    request = (template or _data("method_a_request.txt")).replace("{TECHNICAL}", technical).replace("{TREE}", tree_xml)
    messages = [{"role": "user", "content": request}]
    for attempt in range(max_retries + 1):
        try:
            layman = _clean_layman(llm.complete(messages))
        except LlmError as exc:
            log.warning("method A request failed (attempt %d): %s", attempt + 1, exc)
            continue
        if layman:
            return DatasetEntry(layman, technical, spoonfed, tree_xml, "method_a", skeleton_fingerprint(skeleton))
    raise GenerationError("no usable layman rephrasing")


_TASK_RE = re.compile(r"^\s*\**TASK:?\**\s*:?\s*(.+?)\s*$", re.MULTILINE | re.IGNORECASE)


def parse_method_b_reply(text: str) -> Tuple[Node, str]:
    """Pull the ``TASK:`` line and the fenced tree out of a Method B reply."""
    m = _TASK_RE.search(text)
    if m is None:
        raise GenerationError("reply has no TASK line")
    task = m.group(1).strip().strip("\"'").strip()
    xml = extract_bt_xml(text)
    if xml is None:
        raise GenerationError("reply has no behavior tree")
    try:
        tree = parse_xml(xml)
    except BTreeError as exc:
        raise GenerationError(f"unparseable tree: {exc}") from None
    if not task:
        raise GenerationError("empty task description")
    return tree, task


def method_b_request(skeleton: Node, registry: PrimitiveRegistry, env_description: str,
                     template: Optional[str] = None) -> str:
    docs = format_primitive_docs(extract_primitive_docs(registry))
    return (
        (template or _data("method_b_request.txt"))
        .replace("{ENVIRONMENT}", env_description)
        .replace("{PRIMITIVES}", docs)
        .replace("{SKELETON}", serialize_xml(skeleton.strip_names()))
    )


def check_method_b_tree(skeleton: Node, tree: Node, registry: PrimitiveRegistry) -> Optional[str]:
    """Reason for rejecting a populated tree, or ``None`` when it is acceptable."""
    if not structures_equal(skeleton, tree):
        return "the tree structure or node types were changed"
    report = validate_primitives(tree, registry)
    if report.hallucinated:
        path, name, reason = report.hallucinated_primitives[0]
        return f"leaf {path} uses {name!r} ({reason})"
    return None


def method_b_entry(skeleton: Node, registry: PrimitiveRegistry, env_description: str,
                   llm: ChatModel, max_retries: int = 3, template: Optional[str] = None) -> DatasetEntry:
    """Ask the model to invent a task for the skeleton and fill it in.

    Rejected replies are answered with the reason and retried up to
    ``max_retries`` times.
    """
    messages = [{"role": "user", "content": method_b_request(skeleton, registry, env_description, template)}]
    reasons = []
    for attempt in range(max_retries + 1):
        try:
            reply = llm.complete(messages)
        except LlmError as exc:
            reasons.append(str(exc))
            continue
        try:
            tree, task = parse_method_b_reply(reply)
            reason = check_method_b_tree(skeleton, tree, registry)
        except GenerationError as exc:
            reason = str(exc)
        if reason is None:
            return DatasetEntry(task, generate_technical(tree), generate_spoonfed(tree),
                                serialize_xml(tree), "method_b", skeleton_fingerprint(skeleton))
        reasons.append(reason)
        log.info("method B reply rejected (attempt %d): %s", attempt + 1, reason)
        messages = messages + [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": f"Your reply was rejected: {reason}. Keep the exact structure "
                                        "and use only the listed primitives. Reply again in the same format."},
        ]
    raise GenerationError("method B failed: " + "; ".join(reasons))


def default_environment_description() -> str:
    return _data("environment.txt")


# ---------------------------------------------------------------- filtering


def filter_by_metrics(tree: Node, world: Optional[WorldConfig] = None,
                      thresholds: Optional[Mapping[str, int]] = None, seed: Optional[int] = 7,
                      registry: Optional[PrimitiveRegistry] = None, ticks: Optional[int] = None,
                      early_stop: bool = True) -> Tuple[bool, Dict[str, int]]:
    """Run the tree once and pass it when any counter reaches its threshold.

    With ``early_stop`` the run ends as soon as the tree passes, so the
    returned metrics are those at that tick.
    """
    thresholds = dict(thresholds if thresholds is not None else {m: 1 for m in METRIC_NAMES})
    world = world or WorldConfig.default()
    if seed is not None:
        world = world.with_(seed=seed)

    def passed(m: Mapping[str, int]) -> bool:
        return any(m[k] >= v for k, v in thresholds.items())

    metrics = run(world, tree, registry, ticks=ticks, stop_when=passed if early_stop else None)
    return passed(metrics), metrics


# ---------------------------------------------------------------- generation loop


def generate_dataset(config: GenConfig, grammar: Grammar, registry: PrimitiveRegistry,
                     llm: ChatModel, env_description: Optional[str] = None) -> Dataset:
    """Decode random genotypes into skeletons and turn them into entries until full.

    Skeleton ``i`` and its random population depend only on ``config.seed``
    and ``i``, so the output is reproducible and independent of
    ``config.workers``.
    """
    env_description = env_description or default_environment_description()
    skel_rng = np.random.default_rng([config.seed, 0])
    stats = {"attempts": 0, "accepted": 0, "decode_errors": 0, "generation_failures": 0,
             "filtered_out": 0, "invalid": 0}
    entries: List[DatasetEntry] = []

    def attempt(i: int, genotype: List[int]) -> Tuple[Optional[DatasetEntry], str]:
        try:
            skeleton = decode(grammar, genotype, config.params)
        except DecodeError:
            return None, "decode_errors"
        try:
            if config.method == "A":
                entry = method_a_entry(skeleton, registry, llm, np.random.default_rng([config.seed, 1, i]),
                                       max_retries=config.max_retries)
            else:
                entry = method_b_entry(skeleton, registry, env_description, llm, config.max_retries)
        except GenerationError as exc:
            log.info("skeleton %d skipped: %s", i, exc)
            return None, "generation_failures"
        tree = parse_xml(entry.tree_xml)
        if not (validate_syntax(tree, grammar).ok and validate_primitives(tree, registry).ok):
            return None, "invalid"
        if config.filtering:
            ok, metrics = filter_by_metrics(tree, config.filter_world, config.thresholds,
                                            config.filter_seed, registry, config.filter_ticks)
            if not ok:
                return None, "filtered_out"
            entry.metrics = metrics
        return entry, "accepted"

    workers = max(1, config.workers)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        i = 0
        while len(entries) < config.size and i < config.budget:
            chunk = range(i, min(i + workers, config.budget))
            genotypes = [random_genotype(skel_rng, config.genotype_length, config.max_codon) for _ in chunk]
            if pool is None:
                results = [attempt(j, g) for j, g in zip(chunk, genotypes)]
            else:
                results = list(pool.map(attempt, chunk, genotypes))
            for entry, outcome in results:
                if len(entries) >= config.size:
                    break
                stats["attempts"] += 1
                stats[outcome] += 1
                if entry is not None:
                    entries.append(entry)
            i = chunk.stop
    finally:
        if pool is not None:
            pool.shutdown()
    dataset = Dataset(entries, stats)
    if len(entries) < config.size:
        raise IncompleteDatasetError(
            f"attempt budget of {config.budget} exhausted with {len(entries)}/{config.size} entries", dataset
        )
    return dataset


# ---------------------------------------------------------------- enrichment and export


def load_enrichment_examples(path: Optional[str] = None) -> List[Tuple[str, str]]:
    """``[{layman, tree_xml}]`` pairs; the five shipped examples by default."""
    if path is None:
        items = json.loads(_data("enrichment.json"))
    else:
        with open(path, encoding="utf-8") as fh:
            items = json.load(fh)
    return [(it["layman"], it["tree_xml"]) for it in items]


def enrich(dataset: Dataset, examples: Iterable[Tuple[str, str]], grammar: Optional[Grammar] = None,
           registry: Optional[PrimitiveRegistry] = None) -> Dataset:
    """Append user examples with generated technical and spoonfed phrasings."""
    from .grammar import default_grammar

    grammar = grammar or default_grammar()
    registry = registry or foraging_registry()
    added = []
    for layman, xml in examples:
        tree = parse_xml(xml)
        report = validate_syntax(tree, grammar).merge(validate_primitives(tree, registry))
        if not report.ok:
            raise GenerationError(f"invalid example tree for {layman!r}: {report.to_dict()}")
        added.append(DatasetEntry(layman, generate_technical(tree), generate_spoonfed(tree),
                                  serialize_xml(tree), "enrichment", skeleton_fingerprint(tree)))
    return Dataset(list(dataset.entries) + added, dict(dataset.stats))


def export_finetune(dataset: Dataset, styles: Sequence[str] = ("layman", "technical", "spoonfed"),
                    system_prompt: Optional[str] = None) -> List[Dict[str, Any]]:
    """One chat record per (entry, style): zero-shot request in, canonical tree out."""
    if not len(dataset):
        raise ValueError("dataset is empty")
    if system_prompt is None:
        system_prompt = default_system_prompt(foraging_registry())
    records = []
    for entry in dataset:
        tree_xml = serialize_xml(parse_xml(entry.tree_xml))
        for style in styles:
            prompt = build_prompt(PromptBundle(system_prompt, [], entry.text(style)))
            records.append({
                "style": PromptStyle(style).value,
                "messages": [
                    {"role": "user", "content": prompt},
                    {"role": "assistant", "content": tree_xml},
                ],
            })
    return records


def write_jsonl(records: Iterable[Mapping[str, Any]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_jsonl(path) -> List[Dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
