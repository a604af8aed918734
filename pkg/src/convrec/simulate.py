"""Scripted critiquing sessions against held-out targets.

For every (user, target) pair in the test split a session runs until the
target enters the top-n or the turn budget runs out. The simulated user
critiques keyphrases the target does not carry, chosen by one of three
selectors. Every pair gets its own derived random stream, so results do not
depend on evaluation order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import optim
from .critiquing import (BLENDERS, GRU, apply_critique, embed_all_critiques,
                         start_session)
from .data import Dataset
from .errors import ConfigError
from .metrics import mean_ci
from .model import MmsVae
from .rng import RngStream

RANDOM = "random"
POP = "pop"
DIFF = "diff"
SELECTORS = (RANDOM, POP, DIFF)


@dataclass
class SimulationConfig:
    blender: str = GRU
    selector: str = RANDOM
    top_n: int = 10
    max_turns: int = 10
    n_candidates: int = 300   # target plus sampled unseen items; 0 = all items
    seed: int = 0

    def __post_init__(self):
        if self.blender not in BLENDERS:
            raise ConfigError(f"unknown blender {self.blender!r}")
        if self.selector not in SELECTORS:
            raise ConfigError(f"unknown selector {self.selector!r}")
        if self.top_n < 1 or self.max_turns < 1:
            raise ConfigError("top_n and max_turns must be >= 1")
        if self.n_candidates < 0:
            raise ConfigError("n_candidates must be >= 0")


@dataclass
class SessionRecord:
    user: int
    target: int
    success: bool
    turns: int          # critiques spent (0 when the target starts in top-n)
    aborted: bool       # ran out of critiquable keyphrases before success


@dataclass
class SimulationResult:
    config: SimulationConfig
    records: list[SessionRecord] = field(default_factory=list)
    n_users: int = 0
    n_sessions: int = 0
    n_aborted: int = 0
    success_rate: float = float("nan")
    success_ci: float = float("nan")
    session_length: float = float("nan")
    session_length_ci: float = float("nan")


def keyphrase_popularity(dataset: Dataset) -> np.ndarray:
    """Total training-review mentions per keyphrase."""
    return np.asarray(dataset.k_counts.sum(axis=0), dtype=np.float64)


def select_critique(selector: str, rng: RngStream, allowed: np.ndarray, *,
                    popularity: np.ndarray | None = None,
                    top_items: np.ndarray | None = None,
                    ki_binary: np.ndarray | None = None) -> int:
    """Pick the next critique from `allowed` (sorted keyphrase ids).

    random: uniform. pop: proportional to training mention counts, uniform
    when every candidate is unmentioned. diff: the keyphrase most frequent
    among the currently recommended items, smallest id on ties."""
    if len(allowed) == 0:
        raise ConfigError("no critiquable keyphrases left")
    if selector == RANDOM:
        return int(rng.choice(allowed))
    if selector == POP:
        weights = popularity[allowed]
        total = weights.sum()
        if total <= 0:
            return int(rng.choice(allowed))
        return int(rng.choice(allowed, p=weights / total))
    if selector == DIFF:
        counts = ki_binary[top_items][:, allowed].sum(axis=0)
        return int(allowed[int(np.argmax(counts))])
    raise ConfigError(f"unknown selector {selector!r}")


def _candidate_items(dataset: Dataset, user: int, target: int,
                     n_candidates: int, rng: RngStream) -> np.ndarray | None:
    """Target plus up to n_candidates-1 items the user never touched in any
    split. None means rank the full catalog."""
    if n_candidates == 0:
        return None
    seen = np.union1d(
        dataset.r_train[user].indices,
        np.union1d(dataset.r_val[user].indices, dataset.r_test[user].indices))
    unseen = np.setdiff1d(np.arange(dataset.n_items), seen)
    n_fill = min(n_candidates - 1, len(unseen))
    fill = rng.choice(unseen, size=n_fill, replace=False) if n_fill else \
        np.array([], dtype=np.int64)
    return np.sort(np.append(fill, target)).astype(np.int64)


def simulate(model: MmsVae, dataset: Dataset, cfg: SimulationConfig,
             blender_params=None) -> SimulationResult:
    emb = embed_all_critiques(model)
    popularity = keyphrase_popularity(dataset)
    result = SimulationResult(config=cfg)
    user_success: list[float] = []
    user_length: list[float] = []

    for u in range(dataset.n_users):
        targets = dataset.r_test[u].indices
        if len(targets) == 0:
            continue
        z0 = model.z0_for_user(dataset.r_train[u].toarray())
        train_pos = dataset.r_train[u].indices
        outcomes = []
        lengths = []
        for t in targets:
            rng = RngStream.derive(cfg.seed, int(u), int(t))
            candidates = _candidate_items(dataset, u, int(t),
                                          cfg.n_candidates, rng)
            exclude = train_pos if candidates is None else None
            session = start_session(
                f"sim-{u}-{t}", model, z0, cfg.blender, blender_params,
                user_index=int(u), exclude_items=exclude,
                candidate_items=candidates, max_turns=cfg.max_turns)
            pool = np.flatnonzero(dataset.ki_binary[int(t)] == 0)
            success = int(t) in session.ranking[:cfg.top_n]
            aborted = False
            while not success and session.turn < cfg.max_turns:
                if len(pool) == 0:
                    aborted = True
                    break
                c = select_critique(
                    cfg.selector, rng, pool, popularity=popularity,
                    top_items=session.ranking[:cfg.top_n],
                    ki_binary=dataset.ki_binary)
                apply_critique(session, c, model, blender_params,
                               critique_embeddings=emb)
                pool = pool[pool != c]
                success = int(t) in session.ranking[:cfg.top_n]
            record = SessionRecord(int(u), int(t), success, session.turn,
                                   aborted)
            result.records.append(record)
            result.n_sessions += 1
            result.n_aborted += int(aborted)
            outcomes.append(float(success))
            if success:
                lengths.append(float(session.turn))
        result.n_users += 1
        user_success.append(float(np.mean(outcomes)))
        if lengths:
            user_length.append(float(np.mean(lengths)))

    if user_success:
        result.success_rate, result.success_ci = mean_ci(np.array(user_success))
    if user_length:
        result.session_length, result.session_length_ci = \
            mean_ci(np.array(user_length))
    return result


# ---------------------------------------------------------------------------
# latency

@dataclass
class LatencyReport:
    per_turn_ms: list[float]        # median latency at each turn index
    per_critique_ms: float
    per_critique_ms_ci: float
    throughput_critiques: int
    throughput_seconds: float
    optimizer_steps: int            # serving must never touch the optimizer
    runs: int
    n_sessions: int


def measure_latency(model: MmsVae, dataset: Dataset, blender_params,
                    n_sessions: int = 20, max_turns: int = 10, runs: int = 10,
                    n_throughput: int = 1000, seed: int = 0) -> LatencyReport:
    """Wall-clock cost of apply_critique at batch size one.

    Each run replays the same deterministic sessions and times every turn;
    medians per turn index expose growth with conversation depth. Throughput
    is one long session of n_throughput critiques."""
    steps_before = optim.step_count()
    emb = embed_all_critiques(model)
    users = [u for u in range(dataset.n_users)
             if dataset.r_train[u].nnz > 0][:n_sessions]
    if not users:
        raise ConfigError("no users with training interactions")
    z0s = {u: model.z0_for_user(dataset.r_train[u].toarray()) for u in users}
    rng = RngStream(seed, (4,))
    critique_plan = rng.integers(0, model.n_keyphrases,
                                 size=(len(users), max_turns))

    turn_samples: list[list[float]] = [[] for _ in range(max_turns)]
    for _ in range(runs):
        for j, u in enumerate(users):
            session = start_session(f"lat-{u}", model, z0s[u], GRU,
                                    blender_params, max_turns=max_turns)
            for turn in range(max_turns):
                tic = time.perf_counter()
                apply_critique(session, int(critique_plan[j, turn]), model,
                               blender_params, critique_embeddings=emb)
                turn_samples[turn].append(time.perf_counter() - tic)

    u0 = users[0]
    long_session = start_session("throughput", model, z0s[u0], GRU,
                                 blender_params, max_turns=n_throughput)
    plan = rng.integers(0, model.n_keyphrases, size=n_throughput)
    tic = time.perf_counter()
    for c in plan:
        apply_critique(long_session, int(c), model, blender_params,
                       critique_embeddings=emb)
    throughput_seconds = time.perf_counter() - tic

    all_ms = np.array([1e3 * t for samples in turn_samples for t in samples])
    mean, ci = mean_ci(all_ms)
    return LatencyReport(
        per_turn_ms=[float(np.median(np.array(s)) * 1e3) for s in turn_samples],
        per_critique_ms=mean,
        per_critique_ms_ci=ci,
        throughput_critiques=n_throughput,
        throughput_seconds=throughput_seconds,
        optimizer_steps=optim.step_count() - steps_before,
        runs=runs,
        n_sessions=len(users),
    )
