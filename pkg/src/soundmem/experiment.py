"""Game session planning, click validation, and per-sound score aggregation.

A session is a stream of roughly 70 clips containing 1-2 target pairs (same
sound repeated after exactly 60 intervening clips), 20 vigilance pairs
(repeats after 2-3 intervening clips), and one-shot fillers. Scores per
sound: M (hit rate on second target presentations), C10 (false-positive rate
on first presentations landing in a session's final ten positions), and the
normalized score M - C10.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import stats

TARGET_FIRST = "target_first"
TARGET_SECOND = "target_second"
VIGILANCE_FIRST = "vigilance_first"
VIGILANCE_SECOND = "vigilance_second"
FILLER = "filler"

ROLES = (TARGET_FIRST, TARGET_SECOND, VIGILANCE_FIRST, VIGILANCE_SECOND, FILLER)
FIRST_PRESENTATION_ROLES = frozenset({TARGET_FIRST, VIGILANCE_FIRST, FILLER})
SECOND_PRESENTATION_ROLES = frozenset({TARGET_SECOND, VIGILANCE_SECOND})

VIGILANCE_MIN_SCORE = 0.6
FALSE_POSITIVE_MAX = 0.4
LAST_N_FOR_C10 = 10


class PlanInfeasible(Exception):
    """The pool cannot support a valid session plan."""


class WorkerExhausted(Exception):
    """The worker already played the maximum number of rounds."""


class LogMismatch(Exception):
    """A session log does not fit the plan it claims to belong to."""


class NotSplittable(Exception):
    """Too few workers to form two disjoint halves."""


@dataclass(slots=True, frozen=True)
class Slot:
    position: int
    sound_id: str
    role: str


@dataclass(slots=True)
class SessionPlan:
    session_id: str
    slots: list[Slot]
    seed: int

    def __len__(self) -> int:
        return len(self.slots)

    def role_positions(self, role: str) -> list[int]:
        return [s.position for s in self.slots if s.role == role]

    def sound_at(self, position: int) -> str:
        return self.slots[position].sound_id

    def target_pairs(self) -> list[tuple[int, int, str]]:
        """(first_position, second_position, sound_id) per target pair."""
        firsts = {s.sound_id: s.position for s in self.slots if s.role == TARGET_FIRST}
        return sorted(
            (firsts[s.sound_id], s.position, s.sound_id)
            for s in self.slots
            if s.role == TARGET_SECOND
        )

    def target_ids(self) -> set[str]:
        return {s.sound_id for s in self.slots if s.role == TARGET_FIRST}

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "seed": self.seed,
            "slots": [
                {"position": s.position, "sound_id": s.sound_id, "role": s.role}
                for s in self.slots
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SessionPlan":
        slots = [
            Slot(int(s["position"]), str(s["sound_id"]), str(s["role"])) for s in doc["slots"]
        ]
        slots.sort(key=lambda s: s.position)
        return cls(str(doc["session_id"]), slots, int(doc["seed"]))

    @classmethod
    def from_json(cls, text: str) -> "SessionPlan":
        return cls.from_dict(json.loads(text))


@dataclass(slots=True)
class SessionLog:
    session_id: str
    worker_id: str
    clicks: set[int]
    latencies_ms: dict[int, float] = field(default_factory=dict)
    completed: bool = True

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "worker_id": self.worker_id,
            "clicks": sorted(self.clicks),
            "latencies_ms": {str(k): v for k, v in sorted(self.latencies_ms.items())},
            "completed": self.completed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SessionLog":
        return cls(
            session_id=str(doc["session_id"]),
            worker_id=str(doc["worker_id"]),
            clicks=set(int(p) for p in doc["clicks"]),
            latencies_ms={int(k): float(v) for k, v in doc.get("latencies_ms", {}).items()},
            completed=bool(doc.get("completed", True)),
        )

    @classmethod
    def from_json(cls, text: str) -> "SessionLog":
        return cls.from_dict(json.loads(text))


@dataclass(slots=True)
class ValidationResult:
    vigilance_score: float
    false_positive_rate: float
    accepted: bool


@dataclass(slots=True)
class WorkerHistory:
    n_sessions: int = 0
    target_ids: set[str] = field(default_factory=set)


@dataclass(slots=True)
class PlanConfig:
    n_vigilance_pairs: int = 20
    length_range: tuple[int, int] = (68, 72)
    target_gap: int = 61  # position delta, i.e. 60 intervening sounds
    vigilance_gaps: tuple[int, ...] = (3, 4)  # 2-3 intervening sounds
    n_target_pairs: int | None = None  # None draws 1 or 2 from the seed
    max_rounds_per_worker: int = 8
    min_pool_size: int = 70
    max_attempts: int = 200


@dataclass(slots=True)
class SoundScore:
    m: float | None
    c10: float | None
    normalized: float | None
    n_target_appearances: int
    n_last10_appearances: int


@dataclass
class ReliabilityResult:
    memorability_rhos: list[float]
    confusability_rhos: list[float]

    @property
    def memorability_mean(self) -> float:
        return sum(self.memorability_rhos) / len(self.memorability_rhos)

    @property
    def confusability_mean(self) -> float:
        return sum(self.confusability_rhos) / len(self.confusability_rhos)


def _place_pairs(rng: random.Random, length: int, cfg: PlanConfig, n_targets: int):
    """One randomized placement attempt; returns role-by-position or None."""
    roles: dict[int, str] = {}
    max_first = length - cfg.target_gap  # positions 0..max_first-1 are legal firsts
    if max_first < n_targets:
        return None
    firsts = rng.sample(range(max_first), n_targets)
    target_pair_slots: list[tuple[int, int]] = []
    for p in firsts:
        second = p + cfg.target_gap
        if second in roles or p in roles or second >= length:
            return None
        roles[p] = TARGET_FIRST
        roles[second] = TARGET_SECOND
        target_pair_slots.append((p, second))
    for _ in range(cfg.n_vigilance_pairs):
        free = [p for p in range(length) if p not in roles]
        candidates = [
            p for p in free if any(p + g < length and p + g not in roles for g in cfg.vigilance_gaps)
        ]
        if not candidates:
            return None
        p = rng.choice(candidates)
        gaps = [g for g in cfg.vigilance_gaps if p + g < length and p + g not in roles]
        g = rng.choice(gaps)
        roles[p] = VIGILANCE_FIRST
        roles[p + g] = VIGILANCE_SECOND
    return roles, target_pair_slots


def plan_session(
    pool: Sequence[str],
    history: WorkerHistory,
    seed: int,
    cfg: PlanConfig | None = None,
    session_id: str | None = None,
) -> SessionPlan:
    """Build a session plan; deterministic given (pool order, history, seed).

    Target sounds are drawn outside the worker's previous targets. Vigilance
    and filler sounds are distinct from each other and from the targets, so
    no sound appears more than twice and repeats only as a designated pair.
    """
    cfg = cfg or PlanConfig()
    if history.n_sessions >= cfg.max_rounds_per_worker:
        raise WorkerExhausted(
            f"worker already played {history.n_sessions} of {cfg.max_rounds_per_worker} rounds"
        )
    pool_unique = list(dict.fromkeys(pool))
    if len(pool_unique) < cfg.min_pool_size:
        raise PlanInfeasible(f"pool has {len(pool_unique)} ids, need {cfg.min_pool_size}")
    rng = random.Random(seed)
    n_targets = cfg.n_target_pairs if cfg.n_target_pairs is not None else rng.randint(1, 2)
    if not 1 <= n_targets <= 2:
        raise PlanInfeasible("target pair count must be 1 or 2")
    eligible_targets = [s for s in pool_unique if s not in history.target_ids]
    if len(eligible_targets) < n_targets:
        raise PlanInfeasible("no unused target sounds left for this worker")

    placed = None
    for _ in range(cfg.max_attempts):
        length = rng.randint(*cfg.length_range)
        placed = _place_pairs(rng, length, cfg, n_targets)
        if placed is not None:
            break
    if placed is None:
        raise PlanInfeasible("could not place vigilance pairs")
    roles, target_pair_slots = placed

    target_sounds = rng.sample(eligible_targets, n_targets)
    taken = set(target_sounds)
    n_fillers = length - 2 * n_targets - 2 * cfg.n_vigilance_pairs
    others = rng.sample([s for s in pool_unique if s not in taken], cfg.n_vigilance_pairs + n_fillers)
    vigilance_sounds = others[: cfg.n_vigilance_pairs]
    filler_sounds = others[cfg.n_vigilance_pairs :]

    sound_by_pos: dict[int, str] = {}
    for (first, second), sound in zip(sorted(target_pair_slots), target_sounds):
        sound_by_pos[first] = sound
        sound_by_pos[second] = sound
    vig_firsts = sorted(p for p, r in roles.items() if r == VIGILANCE_FIRST)
    vig_seconds = sorted(p for p, r in roles.items() if r == VIGILANCE_SECOND)
    pair_of = {}
    used_seconds: set[int] = set()
    for p in vig_firsts:
        for g in cfg.vigilance_gaps:
            q = p + g
            if q in vig_seconds and q not in used_seconds and roles.get(q) == VIGILANCE_SECOND:
                pair_of[p] = q
                used_seconds.add(q)
                break
    for p, sound in zip(vig_firsts, vigilance_sounds):
        sound_by_pos[p] = sound
        sound_by_pos[pair_of[p]] = sound
    filler_positions = [p for p in range(length) if p not in roles]
    for p, sound in zip(filler_positions, filler_sounds):
        sound_by_pos[p] = sound
        roles[p] = FILLER

    slots = [Slot(p, sound_by_pos[p], roles[p]) for p in range(length)]
    return SessionPlan(session_id or f"session-{seed}", slots, seed)


def validate_session(plan: SessionPlan, log: SessionLog) -> ValidationResult:
    """Attention gate: accepted iff vigilance > 0.6 and false positives < 0.4 (strict)."""
    if log.session_id != plan.session_id:
        raise LogMismatch(f"log is for {log.session_id!r}, plan is {plan.session_id!r}")
    length = len(plan)
    bad = [p for p in log.clicks if not 0 <= p < length]
    if bad:
        raise LogMismatch(f"click positions outside the plan: {sorted(bad)}")
    vig_seconds = plan.role_positions(VIGILANCE_SECOND)
    firsts = [s.position for s in plan.slots if s.role in FIRST_PRESENTATION_ROLES]
    vigilance = sum(1 for p in vig_seconds if p in log.clicks) / len(vig_seconds)
    false_pos = sum(1 for p in firsts if p in log.clicks) / len(firsts)
    accepted = vigilance > VIGILANCE_MIN_SCORE and false_pos < FALSE_POSITIVE_MAX
    return ValidationResult(vigilance, false_pos, accepted)


def score_sounds(sessions: Iterable[tuple[SessionPlan, SessionLog]]) -> dict[str, SoundScore]:
    """Aggregate M, C10, and M - C10 per sound over accepted sessions.

    The caller supplies accepted sessions only. M is undefined for sounds
    never used as targets; C10 for sounds whose first presentations never
    land in a final-ten position.
    """
    target_hits: dict[str, int] = {}
    target_n: dict[str, int] = {}
    c10_hits: dict[str, int] = {}
    c10_n: dict[str, int] = {}
    for plan, log in sessions:
        cutoff = len(plan) - LAST_N_FOR_C10
        for slot in plan.slots:
            if slot.role == TARGET_SECOND:
                target_n[slot.sound_id] = target_n.get(slot.sound_id, 0) + 1
                if slot.position in log.clicks:
                    target_hits[slot.sound_id] = target_hits.get(slot.sound_id, 0) + 1
            elif slot.role in FIRST_PRESENTATION_ROLES and slot.position >= cutoff:
                c10_n[slot.sound_id] = c10_n.get(slot.sound_id, 0) + 1
                if slot.position in log.clicks:
                    c10_hits[slot.sound_id] = c10_hits.get(slot.sound_id, 0) + 1
    scores: dict[str, SoundScore] = {}
    for sound in sorted(set(target_n) | set(c10_n)):
        n_t = target_n.get(sound, 0)
        n_c = c10_n.get(sound, 0)
        m = target_hits.get(sound, 0) / n_t if n_t else None
        c10 = c10_hits.get(sound, 0) / n_c if n_c else None
        normalized = m - c10 if (m is not None and c10 is not None) else None
        scores[sound] = SoundScore(m, c10, normalized, n_t, n_c)
    return scores


def split_rank_reliability(
    sessions: Sequence[tuple[SessionPlan, SessionLog]],
    n_splits: int = 5,
    seed: int = 0,
) -> ReliabilityResult:
    """Spearman agreement between rankings from disjoint worker halves.

    Workers (with all their sessions) are shuffled into two halves per split;
    correlations cover sounds whose scores are defined in both halves.
    """
    by_worker: dict[str, list[tuple[SessionPlan, SessionLog]]] = {}
    for plan, log in sessions:
        by_worker.setdefault(log.worker_id, []).append((plan, log))
    workers = sorted(by_worker)
    if len(workers) < 2:
        raise NotSplittable("need at least 2 workers")
    rng = random.Random(seed)
    mem_rhos: list[float] = []
    conf_rhos: list[float] = []
    for _ in range(n_splits):
        order = rng.sample(workers, len(workers))
        half = len(order) // 2
        first = [s for w in order[:half] for s in by_worker[w]]
        second = [s for w in order[half:] for s in by_worker[w]]
        a = score_sounds(first)
        b = score_sounds(second)
        mem_a, mem_b, conf_a, conf_b = [], [], [], []
        for sound in set(a) & set(b):
            sa, sb = a[sound], b[sound]
            if sa.normalized is not None and sb.normalized is not None:
                mem_a.append(sa.normalized)
                mem_b.append(sb.normalized)
            if sa.c10 is not None and sb.c10 is not None:
                conf_a.append(sa.c10)
                conf_b.append(sb.c10)
        mem_rhos.append(stats.spearman(mem_a, mem_b))
        conf_rhos.append(stats.spearman(conf_a, conf_b))
    return ReliabilityResult(mem_rhos, conf_rhos)


SCORE_CSV_HEADER = "sound_id,m,c10,normalized,n_target_appearances,n_last10_appearances"


def scores_to_csv_text(scores: Mapping[str, SoundScore]) -> str:
    lines = [SCORE_CSV_HEADER]
    for sound in sorted(scores):
        s = scores[sound]
        cells = [
            sound,
            "NA" if s.m is None else repr(s.m),
            "NA" if s.c10 is None else repr(s.c10),
            "NA" if s.normalized is None else repr(s.normalized),
            str(s.n_target_appearances),
            str(s.n_last10_appearances),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def scores_from_csv(source) -> dict[str, SoundScore]:
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    if not lines or lines[0] != SCORE_CSV_HEADER:
        raise ValueError("unexpected score CSV header")
    out: dict[str, SoundScore] = {}
    for line in lines[1:]:
        if not line:
            continue
        sid, m, c10, norm, n_t, n_c = line.split(",")
        out[sid] = SoundScore(
            None if m == "NA" else float(m),
            None if c10 == "NA" else float(c10),
            None if norm == "NA" else float(norm),
            int(n_t),
            int(n_c),
        )
    return out
