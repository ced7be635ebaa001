"""Central configuration records.

Every numeric tolerance used by the geometry, funnel and search code lives in
``Tolerances``; planner and experiment knobs live in ``PlannerConfig``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace


@dataclass(frozen=True)
class Tolerances:
    symmetry: float = 1e-9
    min_eigenvalue: float = 1e-10
    membership: float = 1e-12
    multiplier: float = 1e-9
    max_iterations: int = 200
    boundary_residual: float = 1e-9
    node_quantum: float = 1e-6


TOL = Tolerances()


@dataclass(frozen=True)
class PlannerConfig:
    """Knobs of the online replanning loop.

    Tick ratios are in units of the motion tick (0.1 s of simulated time).
    """

    epsilon: float = 6.0
    r0: float = 100.0
    dimension: int = 2
    preplan_iterations: int = 2000
    idle_limit: int = 200
    samples_per_tick: int = 10
    sense_every: int = 1
    plan_every: int = 1
    move_every: int = 1
    p_local: float = 0.3
    max_rejections: int = 100
    heuristic_scale: float = 0.99
    rest_entry_level: float = 0.9
    max_ticks: int = 3000

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "PlannerConfig":
        if not data:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown planner parameters: {sorted(unknown)}")
        return replace(cls(), **data)


@dataclass(frozen=True)
class SynthesisConfig:
    """Parameters of the funnel-library generator."""

    n_bearings: int = 16
    epsilon: float = 5.0
    goal_radius: float = 0.3
    settle_speed: float = 0.05
    max_time: float = 30.0
    rk4_step: float = 0.01
    knot_spacing: float = 0.1
    state_weights: tuple = (16.0, 16.0, 8.0, 8.0)
    input_weights: tuple = (1.0, 1.0)
    w_max: float = 0.2
    boundary_samples: int = 2000
    bisection_steps: int = 20
    segment_checks: int = 4
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["state_weights"] = list(self.state_weights)
        d["input_weights"] = list(self.input_weights)
        return d

    @classmethod
    def from_dict(cls, data: dict | None) -> "SynthesisConfig":
        if not data:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generator parameters: {sorted(unknown)}")
        data = dict(data)
        for key in ("state_weights", "input_weights"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        return replace(cls(), **data)
