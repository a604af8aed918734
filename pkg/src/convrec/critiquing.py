"""Critique blending: turning "not this keyphrase" feedback into a new latent.

A critique on keyphrase c is embedded through the keyphrase encoder (one-hot
input, posterior mean). The blender folds the user latent z0 and the critique
embeddings into a single vector: either a learned GRU run over the sequence
(z0, z1, ..., zt) with shared weights, or the averaging baselines.

The GRU is trained self-supervised: synthetic (user, target, critique) tuples
are built from validation positives, and a margin ranking loss pushes items
carrying the critiqued keyphrase down while pushing the remaining items up.
The recommender itself stays frozen throughout.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import artifacts
from . import autodiff as ad
from .data import Dataset
from .errors import CheckpointError, ConfigError, SessionError
from .layers import GRU_PARAM_NAMES, gru_cell_forward, init_gru, mlp2_forward
from .metrics import average_precision_at_n, rank_items
from .model import MmsVae
from .optim import AdamAmsgrad
from .rng import RngStream

log = logging.getLogger(__name__)

GRU = "gru"
UAC = "uac"
BAC = "bac"
BLENDERS = (GRU, UAC, BAC)


@dataclass
class BlenderConfig:
    margin: float = 0.75        # hinge margin
    lr: float = 1e-3
    l2_penalty: float = 0.0
    epochs: int = 1
    batch_size: int = 64
    val_fraction: float = 0.2   # synthetic tuples held out for selection
    falling_map_n: int = 100
    cap: int = 100              # per-tuple candidate cap, best-ranked first
    eval_every: int = 10        # steps between selection checks
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.cap < 1 or self.falling_map_n < 1:
            raise ConfigError("cap and falling_map_n must be >= 1")


@dataclass
class CritiqueTuple:
    user: int
    item: int       # target the critique should help recover
    critique: int   # keyphrase absent from the target item


def generate_synthetic_tuples(dataset: Dataset, seed: int,
                              split: str = "val") -> tuple[list[CritiqueTuple], int]:
    """One tuple per positive (user, item) in the split: a uniformly sampled
    keyphrase the item does not carry. Items carrying every keyphrase are
    skipped (nothing to critique); the skip count is returned."""
    matrix = {"train": dataset.r_train, "val": dataset.r_val,
              "test": dataset.r_test}.get(split)
    if matrix is None:
        raise ConfigError(f"unknown split {split!r}")
    rng = RngStream(seed)
    tuples: list[CritiqueTuple] = []
    skipped = 0
    for u in range(dataset.n_users):
        items = matrix.indices[matrix.indptr[u]:matrix.indptr[u + 1]]
        for i in items:
            absent = np.flatnonzero(dataset.ki_binary[i] == 0)
            if len(absent) == 0:
                skipped += 1
                continue
            c = int(rng.choice(absent))
            tuples.append(CritiqueTuple(int(u), int(i), c))
    if skipped:
        log.warning("%d positives skipped: their items carry every keyphrase",
                    skipped)
    return tuples, skipped


def dump_synthetic_tuples(path, tuples, ki_binary: np.ndarray) -> None:
    """Audit dump, one line per tuple: ids, affected/unaffected set sizes and
    hashes of the full (uncapped) sets so a reviewer can spot drift."""
    import csv
    import hashlib

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "critique", "n_plus", "n_minus",
                    "plus_sha256", "minus_sha256"])
        for t in tuples:
            plus = np.flatnonzero(ki_binary[:, t.critique] > 0)
            minus = np.flatnonzero(ki_binary[:, t.critique] == 0)
            h_plus = hashlib.sha256(plus.astype("<i8").tobytes()).hexdigest()
            h_minus = hashlib.sha256(minus.astype("<i8").tobytes()).hexdigest()
            w.writerow([t.user, t.item, t.critique, len(plus), len(minus),
                        h_plus[:16], h_minus[:16]])


def embed_critique(model: MmsVae, c: int) -> np.ndarray:
    """Latent embedding of a keyphrase: posterior mean of its one-hot row."""
    if not 0 <= c < model.n_keyphrases:
        raise ConfigError(f"keyphrase id {c} out of range")
    one_hot = np.zeros(model.n_keyphrases)
    one_hot[c] = 1.0
    return np.asarray(model.encode_k(one_hot).mu)[0]


def embed_all_critiques(model: MmsVae) -> np.ndarray:
    """(n_keyphrases, H) matrix of critique embeddings."""
    return np.asarray(model.encode_k(np.eye(model.n_keyphrases)).mu)


# ---------------------------------------------------------------------------
# blending

def blend(z0: np.ndarray, critique_zs, params) -> np.ndarray:
    """Run the GRU over (z0, z1, ..., zt) from a zero state; the final hidden
    state is the blended latent. With no critiques this returns the one-step
    encoding of z0 alone."""
    h = np.zeros((1, len(np.atleast_1d(z0))))
    h = gru_cell_forward(np.atleast_2d(z0), h, params)
    for zc in critique_zs:
        h = gru_cell_forward(np.atleast_2d(zc), h, params)
    return np.asarray(h)[0]


def uac_blend(z0: np.ndarray, critique_zs) -> np.ndarray:
    """Uniform average over the user latent and every critique embedding."""
    if not critique_zs:
        return np.asarray(z0, dtype=np.float64)
    stack = np.vstack([np.atleast_2d(z0)] + [np.atleast_2d(z) for z in critique_zs])
    return stack.mean(axis=0)


def bac_blend(z0: np.ndarray, critique_zs) -> np.ndarray:
    """Balanced average: critiques are averaged first, then mixed 50/50 with
    the user latent, so many critiques cannot drown out the user."""
    if not critique_zs:
        return np.asarray(z0, dtype=np.float64)
    crit = np.vstack([np.atleast_2d(z) for z in critique_zs]).mean(axis=0)
    return 0.5 * (np.asarray(z0, dtype=np.float64) + crit)


# ---------------------------------------------------------------------------
# ranking loss (margin hinge on score movements)

def blender_ranking_loss(scores0: np.ndarray, scores1, plus_sets, minus_sets,
                         margin: float):
    """Sum over tuples of the two hinge sides.

    Items in plus_sets[j] carry the critiqued keyphrase and must *fall* by at
    least the margin relative to their pre-critique score; items in
    minus_sets[j] must *rise* by the margin. Identical score matrices yield
    margin * (total set sizes)."""
    rows_p, cols_p, rows_m, cols_m = [], [], [], []
    for j, (plus, minus) in enumerate(zip(plus_sets, minus_sets)):
        rows_p.extend([j] * len(plus))
        cols_p.extend(int(i) for i in plus)
        rows_m.extend([j] * len(minus))
        cols_m.extend(int(i) for i in minus)
    total = None
    if rows_p:
        rp = np.asarray(rows_p)
        cp = np.asarray(cols_p)
        s0 = scores0[rp, cp]
        s1 = ad.gather2d(scores1, rp, cp)
        total = ad.asum(ad.relu(ad.add(s1, margin - s0)))
    if rows_m:
        rm = np.asarray(rows_m)
        cm = np.asarray(cols_m)
        s0 = scores0[rm, cm]
        s1 = ad.gather2d(scores1, rm, cm)
        part = ad.asum(ad.relu(ad.add(ad.mul(s1, -1.0), margin + s0)))
        total = part if total is None else ad.add(total, part)
    if total is None:
        raise ConfigError("ranking loss needs at least one non-empty set")
    return total


def capped_sets(order0: np.ndarray, ki_col: np.ndarray,
                cap: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a pre-critique ranking into carriers / non-carriers of the
    keyphrase, keeping only the `cap` best-ranked items on each side."""
    carries = ki_col[order0] > 0
    return order0[carries][:cap], order0[~carries][:cap]


# ---------------------------------------------------------------------------
# training

@dataclass
class BlenderHistory:
    records: list[dict] = field(default_factory=list)
    best_step: int = -1
    best_falling_map: float = float("-inf")
    n_train_tuples: int = 0
    n_val_tuples: int = 0
    n_skipped: int = 0


def _precompute_user_state(model: MmsVae, dataset: Dataset,
                           users: np.ndarray):
    """z0, pre-critique scores and ranking for each unique user."""
    z0 = {}
    scores0 = {}
    order0 = {}
    for u in users:
        row = dataset.r_train[int(u)].toarray()
        z = np.asarray(model.encode_r(row).mu)[0]
        s = np.asarray(model.decode_r(z[None, :]))[0]
        z0[int(u)] = z
        scores0[int(u)] = s
        order0[int(u)] = rank_items(s)
    return z0, scores0, order0


def falling_map_for_tuples(model: MmsVae, params, tuples, z0, scores0, order0,
                           ki_binary: np.ndarray, cfg: BlenderConfig,
                           critique_embeddings: np.ndarray) -> list[float]:
    """Per-tuple Falling MAP of the capped carrier set after one critique."""
    values = []
    for t in tuples:
        z_blend = blend(z0[t.user], [critique_embeddings[t.critique]], params)
        s1 = np.asarray(model.decode_r(z_blend[None, :]))[0]
        plus, _ = capped_sets(order0[t.user], ki_binary[:, t.critique], cfg.cap)
        if len(plus) == 0:
            continue
        before = average_precision_at_n(order0[t.user], set(plus.tolist()),
                                        cfg.falling_map_n)
        after = average_precision_at_n(rank_items(s1), set(plus.tolist()),
                                       cfg.falling_map_n)
        values.append(before - after)
    return values


def train_blender(model: MmsVae, dataset: Dataset,
                  cfg: BlenderConfig) -> tuple[dict[str, np.ndarray], BlenderHistory]:
    """Fit the GRU blender on synthetic critiques; the recommender is frozen.

    Selection: the parameters with the best mean Falling MAP on the held-out
    tuple fraction win, evaluated every `eval_every` steps and at the end."""
    tuples, skipped = generate_synthetic_tuples(dataset, cfg.seed, split="val")
    if len(tuples) < 2:
        raise ConfigError("not enough synthetic tuples to train the blender")
    rng = RngStream(cfg.seed, (2,))
    order = rng.permutation(len(tuples))
    n_val = max(1, int(round(cfg.val_fraction * len(tuples))))
    val_tuples = [tuples[i] for i in order[:n_val]]
    train_tuples = [tuples[i] for i in order[n_val:]]

    users = np.unique([t.user for t in tuples])
    z0, scores0, order0 = _precompute_user_state(model, dataset, users)
    emb = embed_all_critiques(model)
    h_dim = model.cfg.latent_dim

    # per-tuple capped sets are fixed because the pre-critique ranking is
    plus_sets = []
    minus_sets = []
    for t in train_tuples:
        plus, minus = capped_sets(order0[t.user],
                                  dataset.ki_binary[:, t.critique], cfg.cap)
        plus_sets.append(plus)
        minus_sets.append(minus)

    params = init_gru(h_dim, RngStream(cfg.seed, (3,)))
    opt = AdamAmsgrad(params, lr=cfg.lr)
    history = BlenderHistory(n_train_tuples=len(train_tuples),
                             n_val_tuples=len(val_tuples), n_skipped=skipped)
    best_params = {k: v.copy() for k, v in params.items()}

    def evaluate(step: int):
        values = falling_map_for_tuples(model, params, val_tuples, z0, scores0,
                                        order0, dataset.ki_binary, cfg, emb)
        mean_fm = float(np.mean(values)) if values else float("-inf")
        if mean_fm > history.best_falling_map:
            history.best_falling_map = mean_fm
            history.best_step = step
            for k in params:
                best_params[k] = params[k].copy()
        return mean_fm

    step = 0
    dec = {k: model.params[k] for k in
           ("dec_r_w1", "dec_r_b1", "dec_r_w2", "dec_r_b2")}
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(train_tuples))
        for start in range(0, len(train_tuples), cfg.batch_size):
            batch_ids = perm[start:start + cfg.batch_size]
            batch = [train_tuples[i] for i in batch_ids]
            z0_batch = np.vstack([z0[t.user] for t in batch])
            zc_batch = np.vstack([emb[t.critique] for t in batch])
            s0_batch = np.vstack([scores0[t.user] for t in batch])
            leaves = {k: ad.Tensor(v) for k, v in params.items()}
            h = np.zeros_like(z0_batch)
            h = gru_cell_forward(z0_batch, h, leaves)
            h = gru_cell_forward(zc_batch, h, leaves)
            logits1 = mlp2_forward(h, dec["dec_r_w1"], dec["dec_r_b1"],
                                   dec["dec_r_w2"], dec["dec_r_b2"])
            loss = blender_ranking_loss(
                s0_batch, logits1,
                [plus_sets[i] for i in batch_ids],
                [minus_sets[i] for i in batch_ids], cfg.margin)
            loss = ad.mul(loss, 1.0 / len(batch))
            if cfg.l2_penalty > 0:
                pen = None
                for name in GRU_PARAM_NAMES:
                    if not name.startswith("w"):
                        continue
                    sq = ad.asum(ad.mul(leaves[name], leaves[name]))
                    pen = sq if pen is None else ad.add(pen, sq)
                loss = ad.add(loss, ad.mul(pen, cfg.l2_penalty))
            loss.backward()
            grads = {k: t.grad if t.grad is not None else np.zeros_like(t.value)
                     for k, t in leaves.items()}
            opt.step(grads)
            step += 1
            record = {"step": step, "loss": float(loss.value), "val_fm": None}
            if step % cfg.eval_every == 0:
                record["val_fm"] = evaluate(step)
            history.records.append(record)
    final_fm = evaluate(step)
    if history.records:
        history.records[-1]["val_fm"] = final_fm
    for k in params:
        params[k] = best_params[k]
    return params, history


def save_blender(path, params: dict[str, np.ndarray], cfg: BlenderConfig,
                 latent_dim: int) -> None:
    meta = {"config": asdict(cfg), "latent_dim": int(latent_dim)}
    artifacts.save_artifact(path, "blender", meta, params)


def load_blender(path) -> tuple[dict[str, np.ndarray], BlenderConfig, int]:
    meta, arrays = artifacts.load_artifact(path, expect_kind="blender")
    if set(arrays) != set(GRU_PARAM_NAMES):
        raise CheckpointError("blender checkpoint has unexpected parameters")
    try:
        cfg = BlenderConfig(**meta["config"])
        latent = int(meta["latent_dim"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"blender checkpoint missing fields: {exc}") from exc
    return arrays, cfg, latent


# ---------------------------------------------------------------------------
# sessions

@dataclass
class CritiqueSession:
    """State of one conversational session; every field is reproducible from
    (z0, critiques, blender), the caches only skip recomputation."""

    session_id: str
    user_index: int | None
    z0: np.ndarray
    blender: str
    exclude_items: np.ndarray
    candidate_items: np.ndarray | None = None
    max_turns: int = 10
    critiques: list[int] = field(default_factory=list)
    critique_zs: list[np.ndarray] = field(default_factory=list)
    blended: np.ndarray | None = None
    ranking: np.ndarray | None = None
    scores: np.ndarray | None = None
    gru_hidden: np.ndarray | None = None

    @property
    def turn(self) -> int:
        return len(self.critiques)

    @property
    def remaining_turns(self) -> int:
        return self.max_turns - self.turn


def start_session(session_id: str, model: MmsVae, z0: np.ndarray,
                  blender: str, blender_params, user_index: int | None = None,
                  exclude_items=None, candidate_items=None,
                  max_turns: int = 10) -> CritiqueSession:
    """Initial state: the pre-critique latent is z0 itself."""
    if blender not in BLENDERS:
        raise ConfigError(f"unknown blender {blender!r}")
    if blender == GRU and blender_params is None:
        raise ConfigError("gru blender requires trained parameters")
    session = CritiqueSession(
        session_id=session_id,
        user_index=user_index,
        z0=np.asarray(z0, dtype=np.float64),
        blender=blender,
        exclude_items=(np.asarray(exclude_items, dtype=np.int64)
                       if exclude_items is not None else np.array([], np.int64)),
        candidate_items=(np.asarray(candidate_items, dtype=np.int64)
                         if candidate_items is not None else None),
        max_turns=max_turns,
    )
    session.blended = session.z0
    if blender == GRU:
        h = np.zeros((1, len(session.z0)))
        session.gru_hidden = np.asarray(
            gru_cell_forward(session.z0[None, :], h, blender_params))
    _rerank(session, model)
    return session


def _rerank(session: CritiqueSession, model: MmsVae) -> None:
    n = model.n_items if session.candidate_items is None \
        else len(session.candidate_items)
    ids, scores = model.recommend_topn(
        session.blended, n, exclude_items=session.exclude_items,
        items=session.candidate_items)
    session.ranking = ids
    session.scores = scores


def apply_critique(session: CritiqueSession, c: int, model: MmsVae,
                   blender_params=None,
                   critique_embeddings: np.ndarray | None = None) -> CritiqueSession:
    """Advance the session one turn. Pure forward passes, no optimization.

    Raises SessionError once the turn budget is exhausted and ConfigError for
    an out-of-range keyphrase. Re-applying the same critique is legal and
    deterministic."""
    if session.turn >= session.max_turns:
        raise SessionError(
            f"session {session.session_id} exhausted its {session.max_turns} turns")
    if not 0 <= c < model.n_keyphrases:
        raise ConfigError(f"keyphrase id {c} out of range")
    z_c = (critique_embeddings[c] if critique_embeddings is not None
           else embed_critique(model, c))
    session.critiques.append(int(c))
    session.critique_zs.append(np.asarray(z_c, dtype=np.float64))
    if session.blender == GRU:
        if blender_params is None:
            raise ConfigError("gru blender requires trained parameters")
        session.gru_hidden = np.asarray(gru_cell_forward(
            z_c[None, :], session.gru_hidden, blender_params))
        session.blended = session.gru_hidden[0]
    elif session.blender == UAC:
        session.blended = uac_blend(session.z0, session.critique_zs)
    else:
        session.blended = bac_blend(session.z0, session.critique_zs)
    _rerank(session, model)
    return session
