"""
Synthetic datasets without a model server
=========================================

The two generation methods only need something with a ``complete``
method.  Here small Python functions stand in for the language model so the
whole pipeline runs offline.
"""

import re

import numpy as np

from swarmbt.btree import parse_xml, serialize_xml
from swarmbt.dataset import (
    Dataset,
    GenConfig,
    enrich,
    export_finetune,
    generate_dataset,
    load_enrichment_examples,
    populate_random,
)
from swarmbt.grammar import default_grammar
from swarmbt.llm import FunctionModel
from swarmbt.sim import foraging_registry

grammar, registry = default_grammar(), foraging_registry()


# Method A: the tree is filled at random, the "model" only restates it
def restate(messages):
    technical = re.search(r"Technical description: (.*)", messages[0]["content"]).group(1)
    return "Please " + technical.split(",")[0] + "."


method_a = GenConfig(method="A", size=5, seed=1, filtering=False)
ds_a = generate_dataset(method_a, grammar, registry, FunctionModel(restate))
for e in ds_a:
    print("A |", e.layman, "|", e.technical)


# Method B: the "model" receives the empty skeleton and fills it itself
def self_instruct(messages):
    text = messages[0]["content"]
    skeleton = parse_xml(re.search(r"<BehaviorTree>.*?</BehaviorTree>", text, re.S).group(0))
    tree = populate_random(skeleton, registry, np.random.default_rng(len(text)))
    return f"TASK: a task for {tree.size()} nodes\n```xml\n{serialize_xml(tree)}\n```"


# filtered: only trees that move at least one counter in a short run survive
method_b = GenConfig(method="B", size=3, seed=2, filter_ticks=1500, attempt_budget=200)
ds_b = generate_dataset(method_b, grammar, registry, FunctionModel(self_instruct))
print(ds_b.stats)
for e in ds_b:
    print("B |", e.metrics, "|", e.spoonfed)

# five hand-written examples on top, then chat records for fine-tuning
combined = enrich(Dataset(ds_a.entries + ds_b.entries), load_enrichment_examples())
records = export_finetune(combined)
print(len(combined), "entries ->", len(records), "training records")
print(records[0]["messages"][1]["content"])
