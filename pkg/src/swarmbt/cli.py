"""Command line entry point: ``swarmbt <subcommand> ...``.

Exit status is 0 only when the command fully succeeded.  ``--json``
switches stdout to a machine-readable object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .btree import BTreeError, parse_xml, serialize_xml, validate
from .grammar import GrammarError, StructureParams, decode_with_trace, default_grammar, load_grammar, random_genotype
from .llm import GENERATION_TEMPERATURE, ChatClient, LlmConfig, ScriptedMock
from .registry import PrimitiveRegistry
from .sim import ConfigError, WorldConfig, foraging_registry, run

log = logging.getLogger("swarmbt")


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_json_arg(value: Optional[str]) -> Optional[Any]:
    """Inline JSON if it looks like an object, otherwise a file path."""
    if value is None:
        return None
    text = value if value.lstrip().startswith(("{", "[")) else _read_text(value)
    return json.loads(text)


def _grammar(args):
    return load_grammar(args.grammar) if args.grammar else default_grammar()


def _registry(args) -> PrimitiveRegistry:
    if getattr(args, "manifest", None):
        return PrimitiveRegistry.from_manifest(_load_json_arg(args.manifest))
    return foraging_registry()


def _world(args) -> WorldConfig:
    world = WorldConfig.load(args.world) if getattr(args, "world", None) else WorldConfig.default()
    if getattr(args, "seed", None) is not None:
        world = world.with_(seed=args.seed)
    return world


def _emit(args, payload: Dict[str, Any], text: Optional[str] = None) -> None:
    if args.json or text is None:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def _llm(args, temperature: float):
    if args.mock_script:
        return ScriptedMock.load(args.mock_script)
    cfg = LlmConfig(endpoint=args.endpoint, model=args.model, temperature=temperature)
    return ChatClient(cfg)


# ---------------------------------------------------------------- subcommands


def cmd_decode(args) -> int:
    grammar = _grammar(args)
    if args.genotype:
        genotype = [int(c) for c in args.genotype.replace(",", " ").split()]
    else:
        genotype = random_genotype(args.seed, args.length, args.max_codon)
    params = StructureParams.from_dict(_load_json_arg(args.params))
    tree, choices = decode_with_trace(grammar, genotype, params)
    xml = serialize_xml(tree)
    _emit(args, {"genotype": genotype, "choices": choices, "xml": xml}, xml)
    return 0


def cmd_validate(args) -> int:
    report = validate(parse_xml(_read_text(args.tree)), _grammar(args), _registry(args))
    payload = report.to_dict()
    if args.json:
        _emit(args, payload)
    else:
        print("ok" if report.ok else "invalid")
        for path, msg in report.violations:
            print(f"  syntax: {path}: {msg}")
        for path, name, reason in report.hallucinated_primitives:
            print(f"  primitive: {path}: {name} ({reason})")
    return 0 if report.ok else 1


def cmd_simulate(args) -> int:
    tree = parse_xml(_read_text(args.tree))
    registry = foraging_registry()
    report = validate(tree, _grammar(args), registry)
    if not report.ok:
        print(json.dumps({"error": "invalid tree", "report": report.to_dict()}, indent=2), file=sys.stderr)
        return 1
    metrics = run(_world(args), tree, registry, ticks=args.ticks)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_gen_dataset(args) -> int:
    from .dataset import GenConfig, IncompleteDatasetError, generate_dataset

    raw = _load_json_arg(args.config) or {}
    for key in ("method", "size", "seed", "workers"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    if args.no_filter:
        raw["filtering"] = False
    config = GenConfig.from_dict(raw)
    llm = _llm(args, GENERATION_TEMPERATURE)
    status = 0
    try:
        dataset = generate_dataset(config, _grammar(args), foraging_registry(), llm)
    except IncompleteDatasetError as exc:
        log.error("%s", exc)
        dataset = exc.dataset
        status = 1
    dataset.save(args.output)
    _emit(args, {"output": args.output, "entries": len(dataset), "stats": dataset.stats},
          f"wrote {len(dataset)} entries to {args.output}")
    return status


def cmd_enrich(args) -> int:
    from .dataset import Dataset, enrich, load_enrichment_examples

    dataset = Dataset.load(args.dataset)
    out = enrich(dataset, load_enrichment_examples(args.examples), _grammar(args), foraging_registry())
    out.save(args.output)
    _emit(args, {"output": args.output, "entries": len(out), "added": len(out) - len(dataset)},
          f"wrote {len(out)} entries ({len(out) - len(dataset)} added) to {args.output}")
    return 0


def cmd_export_finetune(args) -> int:
    from .dataset import Dataset, export_finetune, write_jsonl

    records = export_finetune(Dataset.load(args.dataset), args.styles)
    write_jsonl(records, args.output)
    _emit(args, {"output": args.output, "records": len(records)}, f"wrote {len(records)} records to {args.output}")
    return 0


def cmd_run_experiment(args) -> int:
    from .harness import ExperimentConfig, run_experiment
    from .prompts import load_shots

    config = ExperimentConfig.from_dict(_load_json_arg(args.config))
    models = None
    if args.mock_script:
        mock = ScriptedMock.load(args.mock_script)
        models = {m.name: mock for m in config.models}
    records = run_experiment(config, _grammar(args), foraging_registry(), load_shots(args.shots),
                             models=models, log_path=args.log, workers=args.workers)
    failed = [r for r in records if r.error]
    summary = {
        "log": args.log,
        "records": len(records),
        "failed": len(failed),
        "valid": sum(r.syntactically_valid and not r.hallucinated for r in records),
    }
    _emit(args, summary, f"{len(records)} records ({len(failed)} failed) in {args.log}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    from .harness import ExperimentConfig, load_tasks, read_records, report

    records = read_records(args.log)
    if args.config:
        config = ExperimentConfig.from_dict(_load_json_arg(args.config))
        tasks, axes = config.tasks, config.model_axes()
    else:
        tasks, axes = load_tasks(args.tasks), None
    text = report(records, tasks, axes, fmt=args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    if args.json:
        _emit(args, {"format": args.format, "report": text, "records": len(records)})
    elif not args.output:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmbt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.add_argument("--grammar", help="grammar document (default: shipped grammar)")
        sp.set_defaults(func=func)
        return sp

    def add_llm(sp):
        sp.add_argument("--mock-script", help="scripted responses file instead of a live model")
        sp.add_argument("--endpoint", default=LlmConfig.endpoint)
        sp.add_argument("--model", default=LlmConfig.model)

    sp = add("decode", cmd_decode, "decode a genotype into a skeleton tree")
    sp.add_argument("--genotype", help="codons, e.g. '1,1,1,0,2,0'")
    sp.add_argument("--seed", type=int, help="draw a random genotype with this seed")
    sp.add_argument("--length", type=int, default=10)
    sp.add_argument("--max-codon", type=int, default=9)
    sp.add_argument("--params", help="structure parameters (JSON file or inline)")

    sp = add("validate", cmd_validate, "check a tree against the grammar and primitives")
    sp.add_argument("tree", help="XML file, or - for stdin")
    sp.add_argument("--manifest", help="primitive manifest [{name, node_type, description}]")

    sp = add("simulate", cmd_simulate, "run a tree in the foraging world")
    sp.add_argument("tree", help="XML file, or - for stdin")
    sp.add_argument("--world", help="world config JSON")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--ticks", type=int)

    sp = add("gen-dataset", cmd_gen_dataset, "generate a synthetic dataset")
    sp.add_argument("--config", help="generation config (JSON file or inline)")
    sp.add_argument("--method", choices=["A", "B"])
    sp.add_argument("--size", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--no-filter", action="store_true")
    sp.add_argument("-o", "--output", required=True)
    add_llm(sp)

    sp = add("enrich", cmd_enrich, "append hand-written examples to a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--examples", help="JSON array of {layman, tree_xml} (default: shipped five)")
    sp.add_argument("-o", "--output", required=True)

    sp = add("export-finetune", cmd_export_finetune, "write chat-format training records")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--styles", nargs="+", default=["layman", "technical", "spoonfed"],
                    choices=["layman", "technical", "spoonfed"])
    sp.add_argument("-o", "--output", required=True)

    sp = add("run-experiment", cmd_run_experiment, "run the model/technique/style/task sweep")
    sp.add_argument("--config", required=True, help="experiment config (JSON file or inline)")
    sp.add_argument("--mock-script", help="scripted responses used for every model")
    sp.add_argument("--shots", help="shots file (default: shipped pair)")
    sp.add_argument("--log", required=True, help="JSON-lines record log (resumed if present)")
    sp.add_argument("--workers", type=int, default=1)

    sp = add("report", cmd_report, "render result tables from a record log")
    sp.add_argument("--log", required=True)
    sp.add_argument("--config", help="experiment config, for tasks and model size/method labels")
    sp.add_argument("--tasks", help="task file when no config is given")
    sp.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    sp.add_argument("-o", "--output")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BTreeError, GrammarError, ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
