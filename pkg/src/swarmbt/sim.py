"""Deterministic headless base-maintenance world for the foraging agent.

Agents spawn in the base, good parts in the source area and scrap parts
anywhere outside the base.  Each tick every agent (in id order) runs the
behavior tree once and then moves according to its movement mode.  The
light sensor is abstracted away: seeking an area moves straight toward its
centroid.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .btree import Node, compile_tree
from .registry import PrimitiveRegistry

GOOD, SCRAP = 0, 1
KIND_NAMES = {GOOD: "good", SCRAP: "scrap"}
MODES = ("seek_source", "seek_base", "seek_waste", "seek_storage", "random_walk", "stopped")
METRIC_NAMES = ("good_picked", "scrap_picked", "good_in_storage", "scrap_in_waste")


class ConfigError(ValueError):
    pass


class SetupError(RuntimeError):
    pass


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ConfigError(f"degenerate rectangle {self}")

    @property
    def centroid(self) -> Tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def within(self, other: "Rect") -> bool:
        return other.x0 <= self.x0 and other.y0 <= self.y0 and self.x1 <= other.x1 and self.y1 <= other.y1

    def disjoint(self, other: "Rect") -> bool:
        return self.x1 <= other.x0 or other.x1 <= self.x0 or self.y1 <= other.y0 or other.y1 <= self.y0

    def as_list(self) -> List[float]:
        return [self.x0, self.y0, self.x1, self.y1]


_AREAS = ("base", "storage", "construction", "source", "waste")


@dataclass(frozen=True)
class WorldConfig:
    width: float = 1000.0
    height: float = 1000.0
    base: Rect = Rect(0.0, 0.0, 200.0, 200.0)
    storage: Rect = Rect(0.0, 0.0, 100.0, 200.0)
    construction: Rect = Rect(100.0, 0.0, 200.0, 200.0)
    source: Rect = Rect(850.0, 850.0, 1000.0, 1000.0)
    waste: Rect = Rect(850.0, 0.0, 1000.0, 150.0)
    n_agents: int = 10
    n_good: int = 10
    n_scrap: int = 10
    speed: float = 2.0
    detection_radius: float = 25.0
    ticks: int = 5000
    seed: int = 7
    jitter_deg: float = 15.0
    min_spacing: float = 2.0
    initial_mode: str = "stopped"

    def __post_init__(self):
        for name in _AREAS:
            value = getattr(self, name)
            if not isinstance(value, Rect):
                object.__setattr__(self, name, Rect(*value))
        world = Rect(0.0, 0.0, self.width, self.height)
        for name in _AREAS:
            if not getattr(self, name).within(world):
                raise ConfigError(f"{name} area lies outside the world")
        if not (self.storage.within(self.base) and self.construction.within(self.base)):
            raise ConfigError("storage and construction must lie inside the base")
        pairs = [("source", "waste"), ("source", "base"), ("waste", "base")]
        for a, b in pairs:
            if not getattr(self, a).disjoint(getattr(self, b)):
                raise ConfigError(f"{a} and {b} areas overlap")
        if self.speed <= 0 or self.detection_radius <= 0 or self.ticks <= 0:
            raise ConfigError("speed, detection radius and tick budget must be positive")
        if min(self.n_agents, self.n_good, self.n_scrap) < 0:
            raise ConfigError("counts must be non-negative")
        if self.initial_mode not in MODES:
            raise ConfigError(f"unknown movement mode {self.initial_mode}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown world config field {sorted(unknown)[0]}")
        return cls(**dict(data))

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for name in _AREAS:
            out[name] = getattr(self, name).as_list()
        return out

    @classmethod
    def load(cls, path) -> "WorldConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "WorldConfig":
        text = resources.files("swarmbt.data").joinpath("world.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def with_(self, **changes: Any) -> "WorldConfig":
        return replace(self, **changes)


class Agent:
    """Base agent: an id, a position and a handle on the world it lives in."""

    def __init__(self, world: "World", idx: int):
        self.world = world
        self.id = idx


class ForagingAgent(Agent):
    """Single-gripper agent with detection, area checks, pick/drop and movement states."""

    # conditions

    def is_good_part_detected(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether a good part lying on the ground is within the
        agent's detection radius. Returns True if one is detected, False otherwise.
        """
        return bool(self.world.parts_in_range(self.id, GOOD))

    def is_scrap_part_detected(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether a scrap part lying on the ground is within the
        agent's detection radius. Returns True if one is detected, False otherwise.
        """
        return bool(self.world.parts_in_range(self.id, SCRAP))

    def is_agent_holding_good_part(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether the agent is currently holding a good part.
        Returns True if it is, False otherwise.
        """
        return self.world.held_kind(self.id) == GOOD

    def is_agent_holding_scrap_part(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether the agent is currently holding a scrap part.
        Returns True if it is, False otherwise.
        """
        return self.world.held_kind(self.id) == SCRAP

    def is_agent_in_base_area(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether the agent is in the base area. Returns True if
        the agent is within the base, and False otherwise.
        """
        return self.world.agent_in(self.id, "base")

    def is_agent_in_storage_area(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether the agent is in the storage area of the base.
        Returns True if it is, False otherwise.
        """
        return self.world.agent_in(self.id, "storage")

    def is_agent_in_construction_area(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether the agent is in the construction area of the base.
        Returns True if it is, False otherwise.
        """
        return self.world.agent_in(self.id, "construction")

    def is_agent_in_source_area(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether the agent is in the source area, where good parts
        appear. Returns True if it is, False otherwise.
        """
        return self.world.agent_in(self.id, "source")

    def is_agent_in_waste_area(self) -> bool:
        """
        Node Type: Condition
        Description: Checks whether the agent is in the waste area, where scrap parts
        are disposed of. Returns True if it is, False otherwise.
        """
        return self.world.agent_in(self.id, "waste")

    # actuator actions

    def pick_up_part(self) -> bool:
        """
        Node Type: ActuatorAction
        Description: Picks up the nearest part within the detection radius if the
        agent is not already holding one. Returns True on success, False otherwise.
        """
        return self.world.pick_up(self.id)

    def drop_part(self) -> bool:
        """
        Node Type: ActuatorAction
        Description: Drops the held part at the agent's current position. Returns
        True if a part was dropped, False if the agent was not holding anything.
        """
        return self.world.drop(self.id)

    # state actions

    def state_seek_source_area(self) -> bool:
        """
        Node Type: StateAction
        Description: Sets the agent's movement towards the source area, following
        the light. Always returns True.
        """
        return self.world.set_mode(self.id, "seek_source")

    def state_seek_base_area(self) -> bool:
        """
        Node Type: StateAction
        Description: Sets the agent's movement towards the base area. Always returns True.
        """
        return self.world.set_mode(self.id, "seek_base")

    def state_seek_storage_area(self) -> bool:
        """
        Node Type: StateAction
        Description: Sets the agent's movement towards the storage area of the base.
        Always returns True.
        """
        return self.world.set_mode(self.id, "seek_storage")

    def state_seek_waste_area(self) -> bool:
        """
        Node Type: StateAction
        Description: Sets the agent's movement towards the waste area, away from the
        light. Always returns True.
        """
        return self.world.set_mode(self.id, "seek_waste")

    def state_random_walk(self) -> bool:
        """
        Node Type: StateAction
        Description: Makes the agent wander around with a randomly changing heading.
        Always returns True.
        """
        return self.world.set_mode(self.id, "random_walk")

    def state_stop(self) -> bool:
        """
        Node Type: StateAction
        Description: Stops the agent's movement altogether. Always returns True.
        """
        return self.world.set_mode(self.id, "stopped")


_REGISTRY: Optional[PrimitiveRegistry] = None


def foraging_registry() -> PrimitiveRegistry:
    """Registry of the experiment agent's primitives (cached)."""
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = PrimitiveRegistry.from_agent_class(ForagingAgent)
    return _REGISTRY


_SEEK_TARGETS = {
    "seek_source": "source",
    "seek_base": "base",
    "seek_waste": "waste",
    "seek_storage": "storage",
}


class World:
    """Mutable simulation state; build with :func:`setup`."""

    def __init__(self, config: WorldConfig, agent_cls: type = ForagingAgent):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.tick_count = 0
        self.metrics: Dict[str, int] = {m: 0 for m in METRIC_NAMES}
        n = config.n_agents
        self.agent_x: List[float] = [0.0] * n
        self.agent_y: List[float] = [0.0] * n
        self.heading: List[Tuple[float, float]] = [(1.0, 0.0)] * n
        self.mode: List[str] = [config.initial_mode] * n
        self.held: List[int] = [-1] * n
        n_parts = config.n_good + config.n_scrap
        self.part_kind = np.array([GOOD] * config.n_good + [SCRAP] * config.n_scrap, dtype=np.int8)
        self.part_pos = np.full((n_parts, 2), np.nan)
        self.part_holder = np.full(n_parts, -1, dtype=np.int64)
        self.agents = [agent_cls(self, i) for i in range(n)]
        self._areas = {name: getattr(config, name) for name in _AREAS}
        self._version = 0
        self._near_key: Optional[Tuple[int, int, int]] = None
        self._near: Tuple[np.ndarray, np.ndarray] = (np.empty(0, np.int64), np.empty(0))

    # ---------------------------------------------------------- queries

    def agent_in(self, idx: int, area: str) -> bool:
        return self._areas[area].contains(self.agent_x[idx], self.agent_y[idx])

    def held_kind(self, idx: int) -> Optional[int]:
        pid = self.held[idx]
        return None if pid < 0 else int(self.part_kind[pid])

    def _nearby(self, idx: int) -> Tuple[np.ndarray, np.ndarray]:
        """Ground parts within radius, ordered by distance then id."""
        key = (self.tick_count, idx, self._version)
        if key != self._near_key:
            dx = self.part_pos[:, 0] - self.agent_x[idx]
            dy = self.part_pos[:, 1] - self.agent_y[idx]
            d2 = dx * dx + dy * dy
            r = self.config.detection_radius
            ids = np.flatnonzero(d2 <= r * r)  # NaN (held) compares False
            order = np.lexsort((ids, d2[ids]))
            self._near = (ids[order], self.part_kind[ids[order]])
            self._near_key = key
        return self._near

    def parts_in_range(self, idx: int, kind: Optional[int] = None) -> List[int]:
        ids, kinds = self._nearby(idx)
        if kind is not None:
            ids = ids[kinds == kind]
        return [int(i) for i in ids]

    def part_position(self, pid: int) -> Tuple[float, float]:
        holder = int(self.part_holder[pid])
        if holder >= 0:
            return (self.agent_x[holder], self.agent_y[holder])
        return (float(self.part_pos[pid, 0]), float(self.part_pos[pid, 1]))

    # ---------------------------------------------------------- actions

    def pick_up(self, idx: int) -> bool:
        if self.held[idx] >= 0:
            return False
        ids, _ = self._nearby(idx)
        if not len(ids):
            return False
        pid = int(ids[0])
        self.held[idx] = pid
        self.part_holder[pid] = idx
        self.part_pos[pid] = np.nan
        self._version += 1
        self.metrics["good_picked" if self.part_kind[pid] == GOOD else "scrap_picked"] += 1
        return True

    def drop(self, idx: int) -> bool:
        pid = self.held[idx]
        if pid < 0:
            return False
        x, y = self.agent_x[idx], self.agent_y[idx]
        self.held[idx] = -1
        self.part_holder[pid] = -1
        self.part_pos[pid] = (x, y)
        self._version += 1
        if self.part_kind[pid] == GOOD:
            if self._areas["storage"].contains(x, y):
                self.metrics["good_in_storage"] += 1
        elif self._areas["waste"].contains(x, y):
            self.metrics["scrap_in_waste"] += 1
        return True

    def set_mode(self, idx: int, mode: str) -> bool:
        self.mode[idx] = mode
        return True

    # ---------------------------------------------------------- motion

    def move(self, idx: int) -> None:
        mode = self.mode[idx]
        if mode == "stopped":
            return
        cfg = self.config
        x, y = self.agent_x[idx], self.agent_y[idx]
        if mode in _SEEK_TARGETS:
            tx, ty = self._areas[_SEEK_TARGETS[mode]].centroid
            dx, dy = tx - x, ty - y
            dist = math.sqrt(dx * dx + dy * dy)
            if dist <= cfg.speed:
                x, y = tx, ty
            else:
                hx, hy = dx / dist, dy / dist
                self.heading[idx] = (hx, hy)
                x, y = x + hx * cfg.speed, y + hy * cfg.speed
        else:
            jitter = math.radians(cfg.jitter_deg)
            angle = float(self.rng.uniform(-jitter, jitter))
            hx, hy = self.heading[idx]
            c, s = math.cos(angle), math.sin(angle)
            hx, hy = hx * c - hy * s, hx * s + hy * c
            x, y = x + hx * cfg.speed, y + hy * cfg.speed
            # clamp to the walls and bounce the heading off them
            if not 0.0 <= x <= cfg.width:
                x, hx = min(max(x, 0.0), cfg.width), -hx
            if not 0.0 <= y <= cfg.height:
                y, hy = min(max(y, 0.0), cfg.height), -hy
            self.heading[idx] = (hx, hy)
        self.agent_x[idx] = min(max(x, 0.0), cfg.width)
        self.agent_y[idx] = min(max(y, 0.0), cfg.height)

    # ---------------------------------------------------------- bookkeeping

    def snapshot(self) -> Dict[str, Any]:
        """JSON-friendly full state, used for determinism checks."""
        return {
            "tick": self.tick_count,
            "agents": [
                {"x": self.agent_x[i], "y": self.agent_y[i], "mode": self.mode[i], "held": self.held[i]}
                for i in range(len(self.agents))
            ],
            "parts": [
                {
                    "kind": KIND_NAMES[int(k)],
                    "holder": int(self.part_holder[p]),
                    "pos": None if self.part_holder[p] >= 0 else [float(v) for v in self.part_pos[p]],
                }
                for p, k in enumerate(self.part_kind)
            ],
            "metrics": dict(self.metrics),
        }

    def audit(self) -> List[str]:
        """Invariant violations in the current state (empty when consistent)."""
        problems = []
        cfg = self.config
        for kind, total in ((GOOD, cfg.n_good), (SCRAP, cfg.n_scrap)):
            mask = self.part_kind == kind
            ground = int(np.sum(mask & (self.part_holder < 0) & ~np.isnan(self.part_pos[:, 0])))
            held = int(np.sum(mask & (self.part_holder >= 0)))
            if ground + held != total:
                problems.append(f"{KIND_NAMES[kind]} parts not conserved: {ground} + {held} != {total}")
        for pid, holder in enumerate(self.part_holder):
            holder = int(holder)
            if holder >= 0:
                if self.held[holder] != pid:
                    problems.append(f"part {pid} held by {holder} who holds {self.held[holder]}")
                if not np.isnan(self.part_pos[pid]).all():
                    problems.append(f"held part {pid} has a ground position")
        held = [h for h in self.held if h >= 0]
        if len(held) != len(set(held)):
            problems.append("a part is held by two agents")
        m = self.metrics
        if m["good_in_storage"] > m["good_picked"] or m["scrap_in_waste"] > m["scrap_picked"]:
            problems.append("drop-off counters exceed pick-up counters")
        return problems


def _place(rng: np.random.Generator, n: int, inside: Rect, outside: Optional[Rect],
           taken: List[Tuple[float, float]], spacing: float, what: str,
           retries: int = 1000) -> List[Tuple[float, float]]:
    out = []
    for _ in range(n):
        for _attempt in range(retries):
            x = float(rng.uniform(inside.x0, inside.x1))
            y = float(rng.uniform(inside.y0, inside.y1))
            if outside is not None and outside.contains(x, y):
                continue
            if all((x - a) ** 2 + (y - b) ** 2 >= spacing * spacing for a, b in taken):
                break
        else:
            raise SetupError(f"could not place {n} {what} without overlap")
        taken.append((x, y))
        out.append((x, y))
    return out


def setup(config: WorldConfig, agent_cls: type = ForagingAgent) -> World:
    """Spawn agents in the base, good parts in the source and scrap outside the base."""
    world = World(config, agent_cls)
    rng = world.rng
    spacing = config.min_spacing
    for i, (x, y) in enumerate(_place(rng, config.n_agents, config.base, None, [], spacing, "agents")):
        world.agent_x[i], world.agent_y[i] = x, y
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        world.heading[i] = (math.cos(angle), math.sin(angle))
    taken: List[Tuple[float, float]] = []
    everywhere = Rect(0.0, 0.0, config.width, config.height)
    good = _place(rng, config.n_good, config.source, None, taken, spacing, "good parts")
    scrap = _place(rng, config.n_scrap, everywhere, config.base, taken, spacing, "scrap parts")
    if good or scrap:
        world.part_pos[:] = np.array(good + scrap, dtype=float)
    return world


Controller = Callable[[Any], bool]


def step(world: World, tree: Union[Node, Controller],
         registry: Optional[PrimitiveRegistry] = None) -> World:
    """Advance the world by one tick (in place) and return it."""
    controller = tree if callable(tree) else compile_tree(tree, registry or foraging_registry())
    for idx, agent in enumerate(world.agents):
        controller(agent)
        world.move(idx)
    world.tick_count += 1
    return world


def run(config: WorldConfig, tree: Node, registry: Optional[PrimitiveRegistry] = None, *,
        ticks: Optional[int] = None, observer: Optional[Callable[[World], None]] = None,
        stop_when: Optional[Callable[[Dict[str, int]], bool]] = None,
        agent_cls: type = ForagingAgent) -> Dict[str, int]:
    """Set up a world, run it for the tick budget and return the metric counters.

    ``observer`` is called with the world after every tick.  ``stop_when``
    receives the metrics after every tick and ends the run early when it
    returns true.
    """
    world = setup(config, agent_cls)
    controller = compile_tree(tree, registry or foraging_registry())
    for _ in range(config.ticks if ticks is None else ticks):
        step(world, controller)
        if observer is not None:
            observer(world)
        if stop_when is not None and stop_when(world.metrics):
            break
    return dict(world.metrics)


class SimEnvironment(ABC):
    """Environment contract: ``setup`` builds the world, ``run`` returns metrics."""

    def __init__(self, config: WorldConfig, tree: Node):
        self.config = config
        self.tree = tree
        self.world: Optional[World] = None

    @abstractmethod
    def setup(self) -> None: ...

    @abstractmethod
    def run(self) -> Dict[str, Any]: ...


class ForagingEnvironment(SimEnvironment):
    def setup(self) -> None:
        self.world = setup(self.config)

    def run(self) -> Dict[str, Any]:
        if self.world is None:
            self.setup()
        controller = compile_tree(self.tree, foraging_registry())
        assert self.world is not None
        while self.world.tick_count < self.config.ticks:
            step(self.world, controller)
        return dict(self.world.metrics)
