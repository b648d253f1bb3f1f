"""
A miniature experiment sweep
============================

Three stand-in models play the roles of a base model and two fine-tuned
variants.  Each answers with a fixed behavior, and the report renders the
same tables a real sweep would.
"""

from swarmbt.grammar import default_grammar
from swarmbt.harness import ExperimentConfig, ModelSpec, report, run_experiment
from swarmbt.llm import FunctionModel
from swarmbt.prompts import load_shots
from swarmbt.sim import foraging_registry

FIND = """<BehaviorTree><Selector>
<Sequence><Condition>is_good_part_detected</Condition><ActuatorAction>pick_up_part</ActuatorAction></Sequence>
<StateAction>state_seek_source_area</StateAction></Selector></BehaviorTree>"""
SCRAP = """<BehaviorTree><Selector>
<Sequence><Condition>is_scrap_part_detected</Condition><ActuatorAction>pick_up_part</ActuatorAction></Sequence>
<StateAction>state_random_walk</StateAction></Selector></BehaviorTree>"""


def chatty(messages):
    return "Sure! First the robot should look around, then..."


def half_right(messages):
    # valid trees for technical prompts only
    return FIND if "then pick it up" in messages[0]["content"] else chatty(messages)


def task_aware(messages):
    prompt = messages[0]["content"].rsplit("USER REQUEST", 1)[1]
    return SCRAP if "scrap" in prompt else FIND


config = ExperimentConfig(
    models=[ModelSpec("base", size="1B", method="baseline"),
            ModelSpec("tuned-a", size="1B", method="A"),
            ModelSpec("tuned-b", size="1B", method="B")],
    ticks=1500,
)
models = {"base": FunctionModel(chatty), "tuned-a": FunctionModel(half_right),
          "tuned-b": FunctionModel(task_aware)}
records = run_experiment(config, default_grammar(), foraging_registry(), load_shots(), models=models)
print(len(records), "cells")
print(report(records, config.tasks, config.model_axes()))
