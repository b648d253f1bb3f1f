"""Experiment sweep over models, prompt techniques, styles and tasks.

Each cell sends one prompt, extracts and validates the returned tree and,
when the tree is fully valid, simulates it.  Records go to a JSON-lines
log that doubles as a resume point; the tables are pure functions of the
records.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .btree import BTreeError, extract_bt_xml, parse_xml, validate_primitives, validate_syntax
from .grammar import Grammar
from .llm import EVALUATION_TEMPERATURE, ChatClient, ChatModel, LlmConfig, LlmError
from .prompts import PromptBundle, PromptStyle, build_messages, default_system_prompt
from .registry import PrimitiveRegistry
from .sim import METRIC_NAMES, WorldConfig, run

log = logging.getLogger(__name__)

TECHNIQUES = {"zero_shot": 0, "one_shot": 1, "two_shot": 2}
STYLES = tuple(s.value for s in PromptStyle)
METHOD_ORDER = ("baseline", "A", "B")
CELL_FIELDS = ("model", "technique", "style", "task", "rep")


class ExperimentError(ValueError):
    pass


@dataclass
class Task:
    name: str
    prompts: Dict[str, str]
    metrics: Dict[str, int]

    def __post_init__(self):
        if not self.metrics:
            raise ExperimentError(f"task {self.name} names no metric")
        unknown = set(self.metrics) - set(METRIC_NAMES)
        if unknown:
            raise ExperimentError(f"task {self.name}: unknown metrics {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Task":
        return cls(d["name"], dict(d["prompts"]), {k: int(v) for k, v in d["metrics"].items()})


def load_tasks(path: Optional[str] = None) -> List[Task]:
    """Task file: JSON array of ``{name, prompts, metrics}``; Find/Clean/Maintain by default."""
    if path is None:
        items = json.loads(resources.files("swarmbt.data").joinpath("tasks.json").read_text("utf-8"))
    else:
        with open(path, encoding="utf-8") as fh:
            items = json.load(fh)
    return [Task.from_dict(d) for d in items]


@dataclass
class ModelSpec:
    """One model under test.  ``size`` and ``method`` only label report rows."""

    name: str
    llm: LlmConfig = field(default_factory=LlmConfig)
    size: Optional[str] = None
    method: str = "baseline"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelSpec":
        d = dict(d)
        name = d.pop("name")
        size = d.pop("size", None)
        method = d.pop("method", "baseline")
        d.setdefault("temperature", EVALUATION_TEMPERATURE)
        return cls(name, LlmConfig.from_dict(d), size, method)


@dataclass
class ExperimentConfig:
    models: List[ModelSpec]
    techniques: List[str] = field(default_factory=lambda: list(TECHNIQUES))
    styles: List[str] = field(default_factory=lambda: list(STYLES))
    tasks: List[Task] = field(default_factory=load_tasks)
    repetitions: int = 1
    world: WorldConfig = field(default_factory=WorldConfig.default)
    seed: int = 7
    ticks: Optional[int] = None
    per_turn: bool = False

    def __post_init__(self):
        for axis in ("models", "techniques", "styles", "tasks"):
            if not getattr(self, axis):
                raise ExperimentError(f"empty axis: {axis}")
        bad = [t for t in self.techniques if t not in TECHNIQUES]
        if bad:
            raise ExperimentError(f"unknown techniques {bad}")
        bad = [s for s in self.styles if s not in STYLES]
        if bad:
            raise ExperimentError(f"unknown styles {bad}")
        if self.repetitions < 1:
            raise ExperimentError("repetitions must be >= 1")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ExperimentError("duplicate model names")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        d["models"] = [ModelSpec.from_dict(m) for m in d["models"]]
        tasks = d.get("tasks")
        if tasks is None:
            d.pop("tasks", None)
        elif isinstance(tasks, str):
            d["tasks"] = load_tasks(tasks)
        else:
            d["tasks"] = [Task.from_dict(t) for t in tasks]
        if d.get("world") is not None:
            d["world"] = WorldConfig.from_dict(d["world"])
        else:
            d.pop("world", None)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def task(self, name: str) -> Task:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    def cells(self) -> List[Tuple[str, str, str, str, int]]:
        """Cell keys in sweep order: model, technique, style, task, repetition."""
        return [
            (m.name, tech, style, t.name, rep)
            for m in self.models
            for tech in self.techniques
            for style in self.styles
            for t in self.tasks
            for rep in range(self.repetitions)
        ]

    def model_axes(self) -> Dict[str, Tuple[str, str]]:
        return {m.name: (m.size or m.name, m.method) for m in self.models}


@dataclass
class RunRecord:
    model: str
    technique: str
    style: str
    task: str
    rep: int
    raw_response: str
    xml: Optional[str] = None
    parseable: bool = False
    syntactically_valid: bool = False
    hallucinated: bool = False
    metrics: Optional[Dict[str, int]] = None
    error: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str, str, str, int]:
        return (self.model, self.technique, self.style, self.task, self.rep)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# ---------------------------------------------------------------- sweep


def cell_messages(config: ExperimentConfig, technique: str, style: str, task: Task,
                  system_prompt: str, shots: Sequence[Tuple[str, str]]) -> List[Dict[str, str]]:
    n = TECHNIQUES[technique]
    if n > len(shots):
        raise ExperimentError(f"{technique} needs {n} shots, library has {len(shots)}")
    bundle = PromptBundle(system_prompt, list(shots[:n]), task.prompts[style])
    return build_messages(bundle, per_turn=config.per_turn)


def evaluate_response(raw: str, grammar: Grammar, registry: PrimitiveRegistry,
                      world: WorldConfig, ticks: Optional[int] = None) -> Dict[str, Any]:
    """Validity flags, and metrics when the tree is fully valid."""
    out: Dict[str, Any] = {"xml": extract_bt_xml(raw), "parseable": False,
                           "syntactically_valid": False, "hallucinated": False, "metrics": None}
    if out["xml"] is None:
        return out
    try:
        tree = parse_xml(out["xml"])
    except BTreeError:
        return out
    out["parseable"] = True
    out["syntactically_valid"] = validate_syntax(tree, grammar).ok
    out["hallucinated"] = validate_primitives(tree, registry).hallucinated
    if out["syntactically_valid"] and not out["hallucinated"]:
        out["metrics"] = run(world, tree, registry, ticks=ticks)
    return out


def read_records(path) -> List[RunRecord]:
    """Records from a log; a torn last line from an interrupted run is ignored."""
    records = []
    if not os.path.exists(path):
        return records
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError, KeyError):
                log.warning("skipping unreadable log line in %s", path)
    return records


def write_records(records: Iterable[RunRecord], path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    os.replace(tmp, path)


def run_experiment(config: ExperimentConfig, grammar: Grammar, registry: PrimitiveRegistry,
                   shots: Sequence[Tuple[str, str]], models: Optional[Mapping[str, ChatModel]] = None,
                   log_path: Optional[str] = None, system_prompt: Optional[str] = None,
                   workers: int = 1) -> List[RunRecord]:
    """Run every cell not already in the log and return all records in cell order.

    ``models`` maps model names to chat models; missing names get an HTTP
    client built from their ``ModelSpec``.  Model failures are recorded as
    invalid cells.  The log is appended as cells finish and rewritten in
    cell order at the end, so reruns of a finished sweep change nothing.
    """
    system_prompt = system_prompt if system_prompt is not None else default_system_prompt(registry)
    world = config.world.with_(seed=config.seed)
    keys = config.cells()
    wanted = set(keys)
    done: Dict[Tuple, RunRecord] = {}
    if log_path:
        for r in read_records(log_path):
            if r.key in wanted:
                done[r.key] = r
    clients: Dict[str, ChatModel] = dict(models or {})
    owned = []
    for spec in config.models:
        if spec.name not in clients:
            client = ChatClient(spec.llm)
            clients[spec.name] = client
            owned.append(client)

    def run_cell(key) -> RunRecord:
        model, technique, style, task_name, rep = key
        task = config.task(task_name)
        messages = cell_messages(config, technique, style, task, system_prompt, shots)
        try:
            raw = clients[model].complete(messages)
        except LlmError as exc:
            log.warning("cell %s failed: %s", key, exc)
            return RunRecord(model, technique, style, task_name, rep, "", error=str(exc))
        return RunRecord(model, technique, style, task_name, rep, raw,
                         **evaluate_response(raw, grammar, registry, world, config.ticks))

    pending = [k for k in keys if k not in done]
    fh = open(log_path, "a", encoding="utf-8") if log_path else None
    pool = ThreadPoolExecutor(max(1, workers)) if workers > 1 else None
    try:
        results = pool.map(run_cell, pending) if pool else map(run_cell, pending)
        for rec in results:
            done[rec.key] = rec
            if fh:
                fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
                fh.flush()
    finally:
        if pool:
            pool.shutdown()
        if fh:
            fh.close()
        for client in owned:
            client.close()
    records = [done[k] for k in keys]
    if log_path:
        write_records(records, log_path)
    return records


# ---------------------------------------------------------------- aggregation


def format_pct(value: Optional[float], compact: bool = False) -> str:
    """One decimal, half-up (22/27 -> ``81.5``); ``None`` -> ``NA``.

    ``compact`` drops a trailing ``.0`` as in ``(0 - 81.5 - 100)``.
    """
    if value is None:
        return "NA"
    text = str(Decimal(repr(float(value))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))
    if text == "-0.0":
        text = "0.0"
    if compact and text.endswith(".0"):
        text = text[:-2]
    return text


def _groups(records: Sequence[RunRecord], group_by: Sequence[str]) -> Dict[Tuple, List[RunRecord]]:
    if not records:
        raise ExperimentError("no records to aggregate")
    bad = [g for g in group_by if g not in CELL_FIELDS]
    if bad:
        raise ExperimentError(f"cannot group by {bad}")
    out: Dict[Tuple, List[RunRecord]] = {}
    for r in records:
        out.setdefault(tuple(getattr(r, g) for g in group_by), []).append(r)
    return out


def syntactic_validity(records: Sequence[RunRecord], group_by: Sequence[str] = ("model",)) -> Dict[Tuple, float]:
    """Percentage of records whose tree derives from the grammar."""
    return {
        k: 100.0 * sum(r.syntactically_valid for r in rs) / len(rs)
        for k, rs in _groups(records, group_by).items()
    }


def hallucination_rate(records: Sequence[RunRecord],
                       group_by: Sequence[str] = ("model",)) -> Dict[Tuple, Optional[float]]:
    """Percentage of parseable trees naming unknown or mistyped primitives; NA without any."""
    out: Dict[Tuple, Optional[float]] = {}
    for k, rs in _groups(records, group_by).items():
        parsed = [r for r in rs if r.parseable]
        out[k] = 100.0 * sum(r.hallucinated for r in parsed) / len(parsed) if parsed else None
    return out


def achieved(record: RunRecord, metric: str, goal: int) -> bool:
    return record.metrics is not None and record.metrics.get(metric, 0) >= goal


def task_metric_table(records: Sequence[RunRecord], tasks: Sequence[Task],
                      group_by: Sequence[str] = ("model",)) -> Dict[Tuple, Dict[str, Dict[str, Optional[float]]]]:
    """``{group: {task: {metric: % of cells meeting the goal, or None}}}``.

    Metrics a task does not name are ``None``.
    """
    goals = {t.name: t.metrics for t in tasks}
    out: Dict[Tuple, Dict[str, Dict[str, Optional[float]]]] = {}
    for k, rs in _groups(records, group_by).items():
        per_task: Dict[str, Dict[str, Optional[float]]] = {}
        for t in tasks:
            cells = [r for r in rs if r.task == t.name]
            if not cells:
                continue
            per_task[t.name] = {
                m: (100.0 * sum(achieved(r, m, goals[t.name][m]) for r in cells) / len(cells)
                    if m in goals[t.name] else None)
                for m in METRIC_NAMES
            }
        out[k] = per_task
    return out


def _flat_cells(table: Mapping[str, Mapping[str, Optional[float]]]) -> List[Tuple[Tuple[str, str], Optional[float]]]:
    return [((t, m), v) for t in sorted(table) for m, v in table[t].items()]


def mean_over_metrics(table: Mapping[str, Mapping[str, Optional[float]]]) -> float:
    vals = [v for _, v in _flat_cells(table) if v is not None]
    if not vals:
        raise ExperimentError("table has no applicable metric")
    return sum(vals) / len(vals)


def mean_gain_report(tables: Mapping[Tuple[str, str], Mapping[str, Mapping[str, Optional[float]]]],
                     baseline: str = "baseline") -> Dict[str, Dict[str, Any]]:
    """Mean task performance per (size, method) and its gain over the baseline.

    ``tables`` maps ``(size, method)`` to one ``{task: {metric: %}}`` table.
    Every table for a size must have the baseline's cells and NA pattern.
    The result maps size to ``{method: {"mean", "gain"}, "mean_gain"}`` and
    has an extra ``"mean"`` row averaging each method over sizes.
    """
    sizes: List[str] = []
    methods: List[str] = []
    for size, method in tables:
        if size not in sizes:
            sizes.append(size)
        if method not in methods:
            methods.append(method)
    if baseline not in methods:
        raise ExperimentError(f"no {baseline} tables")
    report: Dict[str, Dict[str, Any]] = {}
    for size in sizes:
        if (size, baseline) not in tables:
            raise ExperimentError(f"size {size} has no {baseline} table")
        base = tables[(size, baseline)]
        shape = [(c, v is None) for c, v in _flat_cells(base)]
        base_mean = mean_over_metrics(base)
        row: Dict[str, Any] = {}
        for method in methods:
            if (size, method) not in tables:
                continue
            tab = tables[(size, method)]
            if [(c, v is None) for c, v in _flat_cells(tab)] != shape:
                raise ExperimentError(f"table ({size}, {method}) does not match the baseline shape")
            m = mean_over_metrics(tab)
            row[method] = {"mean": m, "gain": m - base_mean}
        gains = [row[m]["gain"] for m in methods if m != baseline and m in row]
        row["mean_gain"] = sum(gains) / len(gains) if gains else None
        report[size] = row
    mean_row: Dict[str, Any] = {}
    for method in methods:
        rows = [report[s][method] for s in sizes if method in report[s]]
        mean_row[method] = {"mean": sum(r["mean"] for r in rows) / len(rows),
                            "gain": sum(r["gain"] for r in rows) / len(rows)}
    mean_row["mean_gain"] = None
    report["mean"] = mean_row
    return report


# ---------------------------------------------------------------- tables


def triple_cell(values: Sequence[Optional[float]]) -> str:
    """``(0 - 81.5 - 88.9)%``; a cell that is NA throughout renders as ``NA``."""
    if all(v is None for v in values):
        return "NA"
    return "(" + " - ".join(format_pct(v, compact=True) for v in values) + ")%"


def _axes(records: Sequence[RunRecord], model_axes: Optional[Mapping[str, Tuple[str, str]]]):
    axes = dict(model_axes or {})
    for r in records:
        axes.setdefault(r.model, (r.model, "baseline"))
    sizes: List[str] = []
    methods: List[str] = []
    for size, method in axes.values():
        if size not in sizes:
            sizes.append(size)
        if method not in methods:
            methods.append(method)
    methods.sort(key=lambda m: METHOD_ORDER.index(m) if m in METHOD_ORDER else len(METHOD_ORDER))
    return axes, sizes, methods


def _relabel(records: Sequence[RunRecord], axes) -> Dict[Tuple[str, str], List[RunRecord]]:
    out: Dict[Tuple[str, str], List[RunRecord]] = {}
    for r in records:
        out.setdefault(axes[r.model], []).append(r)
    return out


def _mean(vals: Sequence[Optional[float]]) -> Optional[float]:
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else None


def validity_rows(records, model_axes=None) -> Tuple[List[str], List[List[str]]]:
    axes, sizes, methods = _axes(records, model_axes)
    by = _relabel(records, axes)
    header = [f"({', '.join(methods)})", "Syntactic Validity", "Hallucination Rate"]
    rows = []
    sv_cols: Dict[str, List[Optional[float]]] = {m: [] for m in methods}
    hr_cols: Dict[str, List[Optional[float]]] = {m: [] for m in methods}
    for size in sizes:
        sv, hr = [], []
        for m in methods:
            rs = by.get((size, m))
            s = syntactic_validity(rs, ())[()] if rs else None
            h = hallucination_rate(rs, ())[()] if rs else None
            sv.append(s)
            hr.append(h)
            sv_cols[m].append(s)
            hr_cols[m].append(h)
        rows.append([size, triple_cell(sv), triple_cell(hr)])
    if len(sizes) > 1:
        rows.append(["Method Mean", triple_cell([_mean(sv_cols[m]) for m in methods]),
                     triple_cell([_mean(hr_cols[m]) for m in methods])])
    return header, rows


def _metric_rows(records, tasks, model_axes, second: str) -> Tuple[List[str], List[List[str]]]:
    axes, sizes, methods = _axes(records, model_axes)
    by = _relabel(records, axes)
    header = [f"({', '.join(methods)})"] + list(METRIC_NAMES)
    rows = []
    if second == "size":
        seconds: Sequence[str] = sizes
    else:
        seconds = list(dict.fromkeys(r.technique for r in records))
    for t in tasks:
        for s in seconds:
            vals: Dict[str, List[Optional[float]]] = {m: [] for m in METRIC_NAMES}
            present = False
            for method in methods:
                if second == "size":
                    rs = by.get((s, method), [])
                else:
                    rs = [r for (size, mm), group in by.items() if mm == method for r in group if r.technique == s]
                rs = [r for r in rs if r.task == t.name]
                if rs:
                    present = True
                    table = task_metric_table(rs, [t], ())[()][t.name]
                else:
                    table = {m: None for m in METRIC_NAMES}
                for m in METRIC_NAMES:
                    vals[m].append(table[m])
            if present:
                rows.append([f"{t.name} - {s}"] + [triple_cell(vals[m]) for m in METRIC_NAMES])
    return header, rows


def task_rows_by_model(records, tasks, model_axes=None):
    return _metric_rows(records, tasks, model_axes, "size")


def task_rows_by_technique(records, tasks, model_axes=None):
    return _metric_rows(records, tasks, model_axes, "technique")


def mean_gain_rows(records, tasks, model_axes=None) -> Tuple[List[str], List[List[str]]]:
    axes, sizes, methods = _axes(records, model_axes)
    by = _relabel(records, axes)
    tables = {k: task_metric_table(rs, tasks, ())[()] for k, rs in by.items()}
    report = mean_gain_report(tables)
    header = ["Model Size"] + methods + ["Mean Gain By Size"]
    rows = []
    for size in sizes + ["mean"]:
        row = report[size]
        cells = [size.capitalize() if size == "mean" else size]
        for m in methods:
            if m not in row:
                cells.append("NA")
            elif m == "baseline":
                cells.append(f"{format_pct(row[m]['mean'])}%")
            else:
                cells.append(f"{format_pct(row[m]['mean'])}% (+{format_pct(row[m]['gain'])}%)"
                             if row[m]["gain"] >= 0 else
                             f"{format_pct(row[m]['mean'])}% ({format_pct(row[m]['gain'])}%)")
        cells.append("NA" if row["mean_gain"] is None else f"{format_pct(row['mean_gain'])}%")
        rows.append(cells)
    return header, rows


def render_markdown(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def render_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report(records: Sequence[RunRecord], tasks: Sequence[Task],
           model_axes: Optional[Mapping[str, Tuple[str, str]]] = None, fmt: str = "markdown") -> str:
    """All four tables: validity, metrics by model, metrics by technique, mean gain."""
    render = {"markdown": render_markdown, "csv": render_csv}[fmt]
    sections = [
        ("Syntactic validity and hallucination rate", validity_rows(records, model_axes)),
        ("Task metrics by model", task_rows_by_model(records, tasks, model_axes)),
        ("Task metrics by prompt technique", task_rows_by_technique(records, tasks, model_axes)),
    ]
    axes, sizes, methods = _axes(records, model_axes)
    if all((s, "baseline") in set(axes.values()) for s in sizes):
        sections.append(("Mean task performance by model size and method",
                         mean_gain_rows(records, tasks, model_axes)))
    out = []
    for title, (header, rows) in sections:
        out.append(f"## {title}\n\n{render(header, rows)}" if fmt == "markdown" else
                   f"# {title}\n{render(header, rows)}")
    return "\n\n".join(out) + "\n"
