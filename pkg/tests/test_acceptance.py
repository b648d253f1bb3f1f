"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with its measured values.
Run with ``pytest tests/test_acceptance.py`` (lines are printed even while
output capture is on) or directly with ``python tests/test_acceptance.py``.
"""

import hashlib
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import SEEK_AND_PICK, conforming_b_model, type_mutations  # noqa: E402
from swarmbt.btree import Node, parse_xml, serialize_xml, validate_primitives, validate_syntax  # noqa: E402
from swarmbt.dataset import GenConfig, GenerationError, generate_dataset, method_b_entry, populate_random  # noqa: E402
from swarmbt.grammar import StructureParams, decode, default_grammar, enumerate_skeletons, random_genotype  # noqa: E402
from swarmbt.harness import (  # noqa: E402
    ExperimentConfig,
    ModelSpec,
    RunRecord,
    cell_messages,
    evaluate_response,
    format_pct,
    hallucination_rate,
    run_experiment,
    syntactic_validity,
)
from swarmbt.llm import ScriptedMock, fingerprint  # noqa: E402
from swarmbt.prompts import PromptBundle, build_prompt, default_system_prompt, load_shots  # noqa: E402
from swarmbt.sim import WorldConfig, foraging_registry, run, setup, step  # noqa: E402

GOLDEN = Path(__file__).parent / "golden" / "two_shot_prompt.txt"
ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_1_decoder_soundness(verdict):
    g = default_grammar()
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    valid = 0
    n = 10_000
    for _ in range(n):
        tree = decode(g, random_genotype(rng, 10, 9), StructureParams())
        valid += validate_syntax(tree, g).ok
    elapsed = time.perf_counter() - start
    pct = 100.0 * valid / n
    verdict(1, valid == n and elapsed < 5.0,
            f"decoder soundness {pct:.1f}% of {n} skeletons valid in {elapsed:.2f}s (need 100%, <5s)")


def test_2_validator_oracle(verdict):
    g = default_grammar()
    start = time.perf_counter()
    language = enumerate_skeletons(g, 4)
    false_rejects = sum(not validate_syntax(t, g).ok for t in language)
    false_accepts = 0
    mutants = 0
    for tree in language:
        for m in type_mutations(tree):
            mutants += 1
            accepted = validate_syntax(m, g).ok
            if accepted and m not in language:
                false_accepts += 1
            if not accepted and m in language:
                false_rejects += 1
    elapsed = time.perf_counter() - start
    verdict(2, false_accepts == 0 and false_rejects == 0 and elapsed < 10.0,
            f"validator oracle over {len(language)} trees and {mutants} mutants: "
            f"{false_accepts} false accepts, {false_rejects} false rejects in {elapsed:.2f}s")


def test_3_seek_and_pick_end_to_end(verdict):
    grammar, registry = default_grammar(), foraging_registry()
    tree = parse_xml(SEEK_AND_PICK)
    syn, prim = validate_syntax(tree, grammar), validate_primitives(tree, registry)
    cfg = WorldConfig.default().with_(seed=7, ticks=5000)
    times, outs = [], []
    for _ in range(2):
        t0 = time.perf_counter()
        outs.append(json.dumps(run(cfg, tree, registry), sort_keys=True))
        times.append(time.perf_counter() - t0)
    metrics = json.loads(outs[0])
    ok = (not syn.violations and not prim.hallucinated_primitives and metrics["good_picked"] >= 1
          and outs[0] == outs[1] and max(times) < 2.0)
    verdict(3, ok, f"seek-and-pick tree: {len(syn.violations)} violations, {len(prim.hallucinated_primitives)} "
                   f"hallucinations, metrics {metrics}, identical={outs[0] == outs[1]}, "
                   f"slowest run {max(times):.2f}s")


def test_4_conservation(verdict):
    grammar, registry = default_grammar(), foraging_registry()
    violations = 0
    ticks = 300
    rng = np.random.default_rng(99)
    for _ in range(100):
        tree = populate_random(decode(grammar, random_genotype(rng)), registry, rng)
        world = setup(WorldConfig.default().with_(seed=int(rng.integers(1 << 30))))
        last = dict(world.metrics)
        for _ in range(ticks):
            step(world, tree, registry)
            violations += len(world.audit())
            violations += sum(world.metrics[k] < last[k] for k in last)
            last = dict(world.metrics)
    verdict(4, violations == 0, f"conservation over 100 runs x {ticks} ticks: {violations} violations")


def _mutation_suite(skeleton, registry):
    """Replies that change the shape or use primitives the agent lacks."""
    tree = populate_random(skeleton, registry, 0)
    first = tree.leaves()[0]

    def reply(t):
        return f"TASK: something\n```xml\n{serialize_xml(t)}\n```"

    def swap_leaf(name=None, node_type=None):
        it = iter(range(10_000))

        def fix(n):
            if n.is_leaf:
                if next(it) == 0:
                    return Node(node_type or n.type, (), name or n.name)
                return n
            return Node(n.type, tuple(fix(c) for c in n.children))
        return fix(tree)

    inner = tree.children[0]
    other = "Selector" if inner.type == "Sequence" else "Sequence"
    wrong_type = "StateAction" if first.type != "StateAction" else "Condition"
    suite = {
        "extra sequence": reply(Node("BehaviorTree", (Node("Selector", (inner, inner)),))),
        "dropped leaf": reply(Node("BehaviorTree", (Node(inner.type, inner.children[:-1] or inner.children * 2),))),
        "composite swapped": reply(Node("BehaviorTree", (Node(other, inner.children),))),
        "leaf type changed": reply(swap_leaf(node_type=wrong_type)),
        "teleport": reply(swap_leaf(name="teleport")),
        "mistyped primitive": reply(swap_leaf(name="pick_up_part" if first.type != "ActuatorAction"
                                              else "state_stop")),
        "no task line": serialize_xml(tree),
        "no tree": "TASK: something\nI would pick things up.",
        "broken xml": reply(tree).replace("</BehaviorTree>", ""),
    }
    return suite


def test_5_dataset_guarantees(verdict):
    grammar, registry = default_grammar(), foraging_registry()
    start = time.perf_counter()
    cfg = GenConfig(method="B", size=300, filtering=False, seed=11)
    ds = generate_dataset(cfg, grammar, registry, conforming_b_model())
    bad_syntax = sum(not validate_syntax(parse_xml(e.tree_xml), grammar).ok for e in ds)
    halluc = sum(validate_primitives(parse_xml(e.tree_xml), registry).hallucinated for e in ds)
    rejected = total = 0
    for genotype_seed in range(10):
        skeleton = decode(grammar, random_genotype(genotype_seed))
        for reply in _mutation_suite(skeleton, registry).values():
            total += 1
            try:
                method_b_entry(skeleton, registry, "env", ScriptedMock(default=reply), max_retries=1)
            except GenerationError:
                rejected += 1
    elapsed = time.perf_counter() - start
    valid_pct = 100.0 * (len(ds) - bad_syntax) / len(ds)
    halluc_pct = 100.0 * halluc / len(ds)
    ok = len(ds) == 300 and bad_syntax == 0 and halluc == 0 and rejected == total and elapsed < 60.0
    verdict(5, ok, f"dataset of {len(ds)}: {valid_pct:.1f}% valid, {halluc_pct:.1f}% hallucinated; "
                   f"Method B rejected {rejected}/{total} mutated replies; {elapsed:.1f}s")


def test_6_measurement_methodology(verdict):
    grammar, registry = default_grammar(), foraging_registry()
    prose = "I would look around for parts."
    cfg = ExperimentConfig(models=[ModelSpec("m")], ticks=600)
    system, shots = default_system_prompt(registry), load_shots()
    script = {}
    for i, (_, tech, style, task, _) in enumerate(cfg.cells()):
        msgs = cell_messages(cfg, tech, style, cfg.task(task), system, shots)
        script[fingerprint(msgs)] = SEEK_AND_PICK if i < 22 else prose
    records = run_experiment(cfg, grammar, registry, shots, models={"m": ScriptedMock(script)})
    validity = format_pct(syntactic_validity(records)[("m",)])

    teleport = SEEK_AND_PICK.replace("state_seek_source_area", "state_teleport")
    world = WorldConfig.default().with_(ticks=10)
    raws = [SEEK_AND_PICK] * 31 + [teleport, prose]
    fixture = [RunRecord("m", "zero_shot", "layman", "find", i, raw, **evaluate_response(raw, grammar, registry, world))
               for i, raw in enumerate(raws)]
    rate = format_pct(hallucination_rate(fixture)[("m",)])

    none = run_experiment(cfg, grammar, registry, shots, models={"m": ScriptedMock(default=prose)})
    na = format_pct(hallucination_rate(none)[("m",)])
    ok = (validity, rate, na) == ("81.5", "3.1", "NA")
    verdict(6, ok, f"22/27 valid -> {validity}, 1/32 hallucinating -> {rate}, nothing parseable -> {na}")


def _style_digest():
    code = (
        "import hashlib, numpy as np\n"
        "from swarmbt.grammar import decode, default_grammar, random_genotype\n"
        "from swarmbt.dataset import populate_random\n"
        "from swarmbt.prompts import generate_technical, generate_spoonfed\n"
        "from swarmbt.sim import foraging_registry\n"
        "h = hashlib.sha256(); rng = np.random.default_rng(5); g = default_grammar(); r = foraging_registry()\n"
        "for _ in range(300):\n"
        "    t = populate_random(decode(g, random_genotype(rng)), r, rng)\n"
        "    h.update((generate_technical(t) + '\\n' + generate_spoonfed(t) + '\\n').encode())\n"
        "print(h.hexdigest())\n"
    )
    digests = set()
    for hashseed in ("0", "12345"):
        env = dict(os.environ, PYTHONHASHSEED=hashseed)
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
        digests.add(out.stdout.strip())
    return digests


def test_7_prompt_goldens(verdict):
    registry = foraging_registry()
    prompt = build_prompt(PromptBundle(default_system_prompt(registry), load_shots(),
                                       "Find a good part and pick it up."))
    golden = GOLDEN.read_text(encoding="utf-8")
    digests = _style_digest()
    ok = prompt == golden and len(digests) == 1
    verdict(7, ok, f"two-shot prompt matches golden byte-for-byte: {prompt == golden}; "
                   f"style generators stable across processes: {len(digests) == 1}")


def _cli(args, hashseed):
    env = dict(os.environ, PYTHONHASHSEED=hashseed)
    subprocess.run([sys.executable, "-m", "swarmbt", *args], check=True, env=env, capture_output=True)


def test_8_determinism_envelope(verdict, tmp_path):
    script = tmp_path / "mock.json"
    script.write_text(json.dumps({"default": SEEK_AND_PICK, "responses": {}}))
    a_script = tmp_path / "mock_a.json"
    a_script.write_text(json.dumps({"default": "go pick something up", "responses": {}}))
    gen = json.dumps({"method": "A", "size": 12, "seed": 4, "filter_ticks": 400,
                      "thresholds": {"good_picked": 0}})
    exp = json.dumps({"models": [{"name": "tiny", "size": "1B"}], "ticks": 300})
    digests = []
    for run_id, hashseed in enumerate(("1", "999")):
        d = tmp_path / f"run{run_id}"
        d.mkdir()
        _cli(["gen-dataset", "--config", gen, "--mock-script", str(a_script), "-o", str(d / "ds.json")], hashseed)
        _cli(["export-finetune", "--dataset", str(d / "ds.json"), "-o", str(d / "ft.jsonl")], hashseed)
        _cli(["run-experiment", "--config", exp, "--mock-script", str(script), "--log", str(d / "log.jsonl")],
             hashseed)
        digests.append({name: hashlib.sha256((d / name).read_bytes()).hexdigest()
                        for name in ("ds.json", "ft.jsonl", "log.jsonl")})
    same = digests[0] == digests[1]
    verdict(8, same, f"dataset, export and experiment log byte-identical across two fresh runs: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
