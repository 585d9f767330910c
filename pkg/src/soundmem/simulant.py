"""Simulated participants with planted recall, confusion, and vigilance.

Simulants drive the same planner and scoring code as live sessions, so the
whole analysis pipeline can be verified against known ground truth offline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .context import context_z
from .experiment import (
    FIRST_PRESENTATION_ROLES,
    TARGET_SECOND,
    VIGILANCE_SECOND,
    PlanConfig,
    SessionLog,
    SessionPlan,
    WorkerHistory,
    plan_session,
)
from .features import FeatureTable


@dataclass
class ContextSensitivity:
    """Optional recall modulation by one feature's context z via a logistic link."""

    feature: str
    beta: float
    k: int
    table: FeatureTable


@dataclass
class SimulantProfile:
    p_recall: dict[str, float]
    p_confuse: dict[str, float]
    p_vigilance: float
    context: ContextSensitivity | None = None

    def __post_init__(self) -> None:
        for name, probs in (("p_recall", self.p_recall), ("p_confuse", self.p_confuse)):
            bad = {s: p for s, p in probs.items() if not 0.0 <= p <= 1.0}
            if bad:
                raise ValueError(f"{name} outside [0, 1]: {bad}")
        if not 0.0 <= self.p_vigilance <= 1.0:
            raise ValueError("p_vigilance outside [0, 1]")

    @classmethod
    def uniform(
        cls,
        pool: Sequence[str],
        recall: float = 0.5,
        confuse: float = 0.2,
        vigilance: float = 0.9,
    ) -> "SimulantProfile":
        return cls({s: recall for s in pool}, {s: confuse for s in pool}, vigilance)

    @classmethod
    def planted(
        cls,
        pool: Sequence[str],
        seed: int,
        recall_range: tuple[float, float] = (0.1, 0.9),
        confuse_range: tuple[float, float] = (0.0, 0.4),
        vigilance: float = 1.0,
    ) -> "SimulantProfile":
        rng = np.random.default_rng(seed)
        ids = sorted(dict.fromkeys(pool))
        recall = rng.uniform(*recall_range, size=len(ids))
        confuse = rng.uniform(*confuse_range, size=len(ids))
        return cls(dict(zip(ids, recall)), dict(zip(ids, confuse)), vigilance)


@dataclass(slots=True)
class SimulatedGame:
    plan: SessionPlan
    log: SessionLog


def _logit(p: float) -> float:
    p = min(max(p, 1e-9), 1.0 - 1e-9)
    return math.log(p / (1.0 - p))


def _context_adjusted(p: float, ctx: ContextSensitivity, plan: SessionPlan, sound: str) -> float:
    firsts = {s.sound_id: s.position for s in plan.slots if s.role == "target_first"}
    first = firsts[sound]
    if first < ctx.k or sound not in ctx.table:
        return p
    target_value = ctx.table.value(sound, ctx.feature)
    ctx_values = []
    for pos in range(first - ctx.k, first):
        cid = plan.sound_at(pos)
        if cid not in ctx.table:
            return p
        v = ctx.table.value(cid, ctx.feature)
        if v is None:
            return p
        ctx_values.append(float(v))
    if target_value is None:
        return p
    z, _ = context_z(float(target_value), ctx_values)
    return 1.0 / (1.0 + math.exp(-(_logit(p) + ctx.beta * z)))


def simulate_games(
    pool: Sequence[str],
    profile: SimulantProfile,
    n_games: int,
    seed: int,
    plan_cfg: PlanConfig | None = None,
) -> list[SimulatedGame]:
    """Plan and play n_games sessions with rotating synthetic workers.

    Workers change every max_rounds_per_worker games so the 8-round target
    exclusion rule is exercised. Deterministic per seed: game i derives its
    plan seed and click generator from (seed, i) alone.
    """
    plan_cfg = plan_cfg or PlanConfig()
    missing = [s for s in pool if s not in profile.p_recall or s not in profile.p_confuse]
    if missing:
        raise ValueError(f"profile does not cover pool ids: {missing[:5]}")
    rounds = plan_cfg.max_rounds_per_worker
    histories: dict[str, WorkerHistory] = {}
    games: list[SimulatedGame] = []
    for i in range(n_games):
        worker = f"sim-worker-{i // rounds:06d}"
        history = histories.setdefault(worker, WorkerHistory())
        plan_seed = seed * 1_000_003 + i
        plan = plan_session(pool, history, plan_seed, plan_cfg, session_id=f"sim-{seed}-{i:07d}")
        history.n_sessions += 1
        history.target_ids |= plan.target_ids()
        rng = np.random.default_rng((seed, i))
        draws = rng.random(len(plan))
        clicks: set[int] = set()
        latencies: dict[int, float] = {}
        for slot in plan.slots:
            if slot.role == TARGET_SECOND:
                p = profile.p_recall[slot.sound_id]
                if profile.context is not None:
                    p = _context_adjusted(p, profile.context, plan, slot.sound_id)
            elif slot.role == VIGILANCE_SECOND:
                p = profile.p_vigilance
            elif slot.role in FIRST_PRESENTATION_ROLES:
                p = profile.p_confuse[slot.sound_id]
            else:
                p = 0.0
            if draws[slot.position] < p:
                clicks.add(slot.position)
                latencies[slot.position] = float(250.0 + 1150.0 * rng.random())
        games.append(
            SimulatedGame(plan, SessionLog(plan.session_id, worker, clicks, latencies))
        )
    return games


def planted_truth(profile: SimulantProfile) -> list[str]:
    """Sounds ranked by planted p_recall - p_confuse, ties broken by id."""
    return sorted(
        profile.p_recall,
        key=lambda s: (-(profile.p_recall[s] - profile.p_confuse.get(s, 0.0)), s),
    )


def planted_scores(profile: SimulantProfile) -> Mapping[str, float]:
    """Planted normalized score per sound (p_recall - p_confuse)."""
    return {s: profile.p_recall[s] - profile.p_confuse.get(s, 0.0) for s in profile.p_recall}
