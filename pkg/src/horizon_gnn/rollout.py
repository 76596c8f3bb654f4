"""Greedy descending-horizon rollout: planning and execution."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import HorizonSet, NormStats, Trajectory, context_features
from .model import Checkpoint, ModelOutput, assemble_features, forward_batch, reconstruct


@dataclass(frozen=True)
class RolloutStep:
    t_in: int
    h: int
    t_out: int


@dataclass
class RolloutPlan:
    t0: int
    t1: int
    steps: list[RolloutStep]
    depth: dict[int, int]  # autoregression depth per month; 0 for observed months

    @property
    def max_depth(self) -> int:
        return max((self.depth[s.t_out] for s in self.steps), default=0)

    def audit_text(self) -> str:
        lines = [f"# greedy rollout t0={self.t0} t1={self.t1} steps={len(self.steps)} "
                 f"max_depth={self.max_depth}", "# t_in h t_out depth"]
        lines += [f"{s.t_in} {s.h} {s.t_out} {self.depth[s.t_out]}" for s in self.steps]
        return "\n".join(lines) + "\n"


def plan_rollout(t0: int, t1: int, horizons, frozen: bool = False) -> RolloutPlan:
    """Order of model applications covering months t0+1..t1.

    Horizons are taken from largest to smallest; for each, input months are
    scanned upward and a step is emitted whenever the input is known and the
    target is an unknown month of the window. Targets are filled once.
    By default a target filled during a scan can serve as input later in
    the same scan. With ``frozen=True`` each pass (except the final unit
    pass, which must chain to guarantee coverage) only reads months known
    when the pass began.
    """
    hs = sorted(set(int(h) for h in horizons), reverse=True)
    if 1 not in hs:
        raise ValueError("horizon set must contain 1")
    if t0 < 1:
        raise ValueError("t0 must be >= 1")
    if t1 <= t0:
        raise ValueError(f"t1={t1} must exceed t0={t0}")

    known = np.zeros(t1 + 1, dtype=bool)
    known[1:t0 + 1] = True
    depth = {t: 0 for t in range(1, t0 + 1)}
    steps = []
    for h in hs:
        readable = known.copy() if (frozen and h != 1) else known
        for t_in in range(1, t1 - h + 1):
            t_out = t_in + h
            if t_out > t0 and readable[t_in] and not known[t_out]:
                known[t_out] = True
                depth[t_out] = depth[t_in] + 1
                steps.append(RolloutStep(t_in, h, t_out))
    return RolloutPlan(t0, t1, steps, depth)


def depth_upper_bound(t0: int, t1: int, horizons) -> int:
    hs = sorted(set(horizons))
    return math.ceil((t1 - t0) / hs[-1]) + len(hs) - 1


def execute_rollout(ck: Checkpoint, traj: Trajectory, plan: RolloutPlan,
                    stats: NormStats) -> np.ndarray:
    """Forecast V_x, V_y, H for months t0+1..t1 in physical units, shape (t1 - t0, N, 3).

    Each step reads the current state at ``t_in`` (observed for t_in <= t0,
    predicted otherwise) and the true context features of month ``t_in``.
    """
    if plan.t1 > traj.T:
        raise ValueError(f"plan reaches month {plan.t1} but trajectory has {traj.T}")
    if plan.t0 < 1:
        raise ValueError("plan has no observed prefix")
    hset = HorizonSet(ck.horizons)
    ctx = context_features(traj, stats)
    observed = stats.normalize_states(traj.states[:plan.t0, :, :3])
    current: dict[int, np.ndarray] = {t: observed[t - 1] for t in range(1, plan.t0 + 1)}
    for step in plan.steps:
        anchor = current.get(step.t_in)
        if anchor is None:
            raise RuntimeError(f"planner bug: month {step.t_in} is not available for {step}")
        if step.t_out in current:
            raise RuntimeError(f"planner bug: month {step.t_out} filled twice")
        feats = assemble_features(anchor, ctx[step.t_in - 1], step.t_in / ck.t_denominator,
                                  hset.psi(step.h), ck.config.velocity_inputs)
        dv, dh = forward_batch(ck.params, traj.mesh, feats, ck.config.activation)
        current[step.t_out] = reconstruct(anchor, ModelOutput(dv, dh))
    window = np.stack([current[t] for t in range(plan.t0 + 1, plan.t1 + 1)])
    return stats.denormalize_states(window)


def forecast_trajectory(traj: Trajectory, forecast: np.ndarray, t0: int) -> Trajectory:
    """Observed prognostic prefix (months 1..t0) followed by the forecast, as a Trajectory."""
    prefix = traj.states[:t0, :, :3]
    states = np.concatenate([prefix, forecast], axis=0)
    return Trajectory(traj.mesh, traj.scenario_id, traj.melt_rate, traj.static_features.copy(),
                      states, tuple(traj.channel_names[:3]), tuple(traj.static_names))


def save_plan_audit(plan: RolloutPlan, path) -> None:
    Path(path).write_text(plan.audit_text())
