"""
From integers to tree skeletons
===============================

A genotype is a short list of integers.  Walking the grammar, every rule we
expand eats one integer and takes option ``codon mod options``.
"""

from swarmbt.btree import serialize_xml, validate_syntax
from swarmbt.grammar import StructureParams, decode_with_trace, default_grammar, enumerate_skeletons, random_genotype

grammar = default_grammar()
print("rules:", ", ".join(grammar.rules))

# a hand-picked genotype, and the choices made while decoding it
tree, choices = decode_with_trace(grammar, [1, 1, 1, 0, 2, 0])
for rule, option in choices:
    print(f"  {rule:5s} -> option {option}")
print(serialize_xml(tree))

# random genotypes always give trees the grammar accepts
for seed in range(3):
    genotype = random_genotype(seed)
    tree, _ = decode_with_trace(grammar, genotype)
    print(seed, genotype, "valid" if validate_syntax(tree, grammar).ok else "INVALID", tree.size(), "nodes")

# steering: always a Selector holding exactly three Sequences
params = StructureParams(only={"B": 0, "SEL": 1}, list_always={"SEQn": 3})
tree, _ = decode_with_trace(grammar, random_genotype(7), params)
print(serialize_xml(tree))

# the smallest corner of the language, enumerated exhaustively
small = enumerate_skeletons(grammar, 4)
print(len(small), "skeletons with at most 4 nodes")
