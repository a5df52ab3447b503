"""Synthetic articulated-tree sequences for benchmarking.

Each class draws a range for the per-step change of every edge length and a
range for the per-step change of every edge angle. Each instance places a
seven-point, three-level binary tree on the plane in polar coordinates
relative to the parent (the root hangs off a fixed virtual anchor), samples
one signed length and angle velocity per node from its class ranges, and
moves the tree with those constant velocities for ``T`` frames.

Random streams: every draw comes from numpy's PCG64 seeded through
``SeedSequence([seed, 0, class])`` for class parameters and
``SeedSequence([seed, 1, class, instance])`` for instances, so any
instance can be regenerated independently of the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .representation import SkeletonTopology, STSSequence, binary_tree

TOPOLOGY = binary_tree(levels=3, coords=2)
MIN_EDGE = 0.1


@dataclass
class SynthConfig:
    n_classes: int = 10
    per_class: int = 60
    length: int = 32
    delta: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 1 or self.per_class < 1 or self.length < 1:
            raise ConfigurationError("n_classes, per_class and length must all be >= 1")
        if not self.delta > 1.0:
            raise ConfigurationError(f"delta must exceed 1, got {self.delta}")


@dataclass(frozen=True)
class ClassParams:
    dist_low: float
    dist_high: float
    angle_low: float
    angle_high: float


def class_rng(seed: int, label: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0, label])))


def instance_rng(seed: int, label: int, instance: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1, label, instance])))


def sample_class_params(rng: np.random.Generator, delta: float) -> ClassParams:
    if not delta > 1.0:
        raise ConfigurationError(f"delta must exceed 1, got {delta}")
    dist_low = rng.uniform(0.0, 4.0)
    dist_high = rng.uniform(dist_low, dist_low * delta)
    angle_low = rng.uniform(0.0, 0.2)
    angle_high = rng.uniform(angle_low, angle_low * delta)
    return ClassParams(dist_low, dist_high, angle_low, angle_high)


@dataclass
class PolarState:
    """Initial polar pose and per-step velocities of every node of one instance.

    ``radius[j]`` is the distance to the parent and ``angle[j]`` the angle
    of the vector pointing from node ``j`` to its parent, measured from the
    x axis.
    """

    anchor: np.ndarray
    radius: np.ndarray
    angle: np.ndarray
    d_radius: np.ndarray
    d_angle: np.ndarray

    def at(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.radius + k * self.d_radius, self.angle + k * self.d_angle


def sample_polar_state(params: ClassParams, length: int, rng: np.random.Generator, m: int = 7) -> PolarState:
    anchor = rng.normal(0.0, 1.0, size=2)
    angle = np.mod(rng.normal(0.0, 10.0, size=m), 2.0 * np.pi)
    radius = np.maximum(rng.normal(5.0, 1.0, size=m), MIN_EDGE)
    d_radius = rng.uniform(params.dist_low, params.dist_high, size=m) * rng.choice([-1.0, 1.0], size=m) / length
    d_angle = rng.uniform(params.angle_low, params.angle_high, size=m) * rng.choice([-1.0, 1.0], size=m)
    return PolarState(anchor, radius, angle, d_radius, d_angle)


def polar_to_cartesian(
    anchor: np.ndarray, radius: np.ndarray, angle: np.ndarray, topology: SkeletonTopology = TOPOLOGY
) -> np.ndarray:
    """Place nodes parent-first: ``child = parent - r * (cos a, sin a)``."""
    points = np.zeros((topology.m, 2))
    order = _parent_first(topology)
    for j in order:
        p = topology.parent[j]
        base = anchor if p is None else points[p]
        points[j] = base - radius[j] * np.array([np.cos(angle[j]), np.sin(angle[j])])
    return points


def _parent_first(topology: SkeletonTopology) -> list[int]:
    order, queue = [], [topology.root]
    while queue:
        j = queue.pop(0)
        order.append(j)
        queue.extend(topology.children[j])
    return order


def render(state: PolarState, length: int) -> np.ndarray:
    return np.stack([polar_to_cartesian(state.anchor, *state.at(k)) for k in range(length)])


def synthesize_instance(
    params: ClassParams, length: int, rng: np.random.Generator, label: int = 0
) -> STSSequence:
    """One sequence of exactly ``length`` frames (the first is the initial pose)."""
    if length < 1:
        raise ConfigurationError(f"temporal length must be positive, got {length}")
    state = sample_polar_state(params, length, rng)
    return STSSequence(render(state, length), label, TOPOLOGY)


def generate_dataset(config: SynthConfig) -> list[STSSequence]:
    """``n_classes * per_class`` sequences ordered by (class, instance)."""
    out = []
    for label in range(config.n_classes):
        params = sample_class_params(class_rng(config.seed, label), config.delta)
        for instance in range(config.per_class):
            rng = instance_rng(config.seed, label, instance)
            out.append(synthesize_instance(params, config.length, rng, label))
    return out
