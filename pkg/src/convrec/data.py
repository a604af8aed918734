"""Ingestion, binarization, splitting and keyphrase matrices.

File formats:
  ratings.csv   header ``user,item,rating``; one interaction per row.
  reviews.csv   header ``user,item,keyphrase_ids``; the last column holds
                semicolon-separated integer ids into vocab.txt (may be empty).
  vocab.txt     one keyphrase per line; the line number (0-based) is the id.

All matrices are indexed by dense user/item indices assigned at ingest
(sorted order of the raw ids); the raw ids are kept for traceability.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from . import artifacts
from .errors import ConfigError, IngestError
from .rng import RngStream

log = logging.getLogger(__name__)

BOTH = 0
R_ONLY = 1
K_ONLY = 2


@dataclass
class RatingsTable:
    """Raw interactions with dense indices plus review keyphrase usage."""

    users: np.ndarray            # (n_rows,) dense user index
    items: np.ndarray            # (n_rows,) dense item index
    ratings: np.ndarray          # (n_rows,) float rating
    review_users: np.ndarray     # (n_reviews,)
    review_items: np.ndarray     # (n_reviews,)
    review_kps: list[list[int]]  # aligned with review_users
    user_ids: list[str]          # dense index -> raw id
    item_ids: list[str]
    vocab: list[str]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)


@dataclass
class ObservationMask:
    """Per-user modality availability used by weak-supervision training."""

    codes: np.ndarray  # int8, values BOTH / R_ONLY / K_ONLY

    @property
    def both_idx(self) -> np.ndarray:
        return np.flatnonzero(self.codes == BOTH)

    @property
    def r_observed_idx(self) -> np.ndarray:
        return np.flatnonzero(self.codes != K_ONLY)

    @property
    def k_observed_idx(self) -> np.ndarray:
        return np.flatnonzero(self.codes != R_ONLY)


@dataclass
class Dataset:
    """Everything downstream stages consume, one artifact on disk."""

    vocab: list[str]
    user_ids: list[str]
    item_ids: list[str]
    r_train: sparse.csr_matrix
    r_val: sparse.csr_matrix
    r_test: sparse.csr_matrix
    k_counts: np.ndarray    # (n_users, n_kp) train review mention counts
    k_binary: np.ndarray
    ki_counts: np.ndarray   # (n_items, n_kp)
    ki_binary: np.ndarray
    k_val: np.ndarray       # (n_users, n_kp) binary, val-positive reviews
    k_test: np.ndarray
    threshold: float
    ratios: tuple[float, float, float]
    seed: int
    n_forced_train_users: int = 0

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_keyphrases(self) -> int:
        return len(self.vocab)

    def split_manifest(self) -> dict:
        return {
            "version": 1,
            "seed": self.seed,
            "threshold": self.threshold,
            "ratios": list(self.ratios),
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_keyphrases": self.n_keyphrases,
            "interactions": {
                "train": int(self.r_train.nnz),
                "val": int(self.r_val.nnz),
                "test": int(self.r_test.nnz),
            },
            "forced_train_users": int(self.n_forced_train_users),
        }

    def save(self, path) -> None:
        arrays = {
            "k_counts": self.k_counts,
            "k_binary": self.k_binary,
            "ki_counts": self.ki_counts,
            "ki_binary": self.ki_binary,
            "k_val": self.k_val,
            "k_test": self.k_test,
            "vocab_text": artifacts.text_list_to_array(self.vocab),
            "user_ids_text": artifacts.text_list_to_array(self.user_ids),
            "item_ids_text": artifacts.text_list_to_array(self.item_ids),
        }
        for prefix, mat in (("r_train", self.r_train), ("r_val", self.r_val),
                            ("r_test", self.r_test)):
            arrays.update(artifacts.csr_to_arrays(prefix, mat))
        meta = {
            "shape": [self.n_users, self.n_items],
            "threshold": self.threshold,
            "ratios": list(self.ratios),
            "seed": self.seed,
            "n_forced_train_users": self.n_forced_train_users,
        }
        artifacts.save_artifact(path, "dataset", meta, arrays)

    @classmethod
    def load(cls, path) -> "Dataset":
        meta, arrays = artifacts.load_artifact(path, expect_kind="dataset")
        shape = meta["shape"]
        return cls(
            vocab=artifacts.array_to_text_list(arrays["vocab_text"]),
            user_ids=artifacts.array_to_text_list(arrays["user_ids_text"]),
            item_ids=artifacts.array_to_text_list(arrays["item_ids_text"]),
            r_train=artifacts.csr_from_arrays("r_train", arrays, shape),
            r_val=artifacts.csr_from_arrays("r_val", arrays, shape),
            r_test=artifacts.csr_from_arrays("r_test", arrays, shape),
            k_counts=arrays["k_counts"],
            k_binary=arrays["k_binary"],
            ki_counts=arrays["ki_counts"],
            ki_binary=arrays["ki_binary"],
            k_val=arrays["k_val"],
            k_test=arrays["k_test"],
            threshold=float(meta["threshold"]),
            ratios=tuple(meta["ratios"]),
            seed=int(meta["seed"]),
            n_forced_train_users=int(meta["n_forced_train_users"]),
        )


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_csv_rows(path, expected_header: list[str]) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestError(f"{path} is empty")
    if rows[0] != expected_header:
        raise IngestError(
            f"{path}: expected header {','.join(expected_header)!r}, "
            f"got {','.join(rows[0])!r}")
    return rows[1:]


def _dense_index(raw: list[str]) -> tuple[list[str], dict[str, int]]:
    """Sorted unique raw ids; numeric sort when every id parses as int."""
    unique = sorted(set(raw))
    try:
        unique.sort(key=int)
    except ValueError:
        pass
    return unique, {v: i for i, v in enumerate(unique)}


def read_vocab(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    vocab = [line.strip() for line in text.splitlines()]
    if not vocab or any(not term for term in vocab):
        raise IngestError(f"{path}: empty vocabulary lines are not allowed")
    if len(set(vocab)) != len(vocab):
        raise IngestError(f"{path}: duplicate keyphrases")
    return vocab


def read_tables(ratings_path, reviews_path, vocab_path) -> RatingsTable:
    """Parse the three input files into one table with dense indices."""
    vocab = read_vocab(vocab_path)
    rating_rows = _read_csv_rows(ratings_path, ["user", "item", "rating"])
    if not rating_rows:
        raise IngestError(f"{ratings_path} has no interactions")
    review_rows = _read_csv_rows(reviews_path, ["user", "item", "keyphrase_ids"])

    raw_users, raw_items, ratings = [], [], []
    for lineno, row in enumerate(rating_rows, start=2):
        if len(row) != 3:
            raise IngestError(f"{ratings_path}:{lineno}: expected 3 columns")
        try:
            ratings.append(float(row[2]))
        except ValueError as exc:
            raise IngestError(
                f"{ratings_path}:{lineno}: bad rating {row[2]!r}") from exc
        raw_users.append(row[0])
        raw_items.append(row[1])

    user_ids, user_map = _dense_index(raw_users)
    item_ids, item_map = _dense_index(raw_items)

    r_users, r_items, r_kps = [], [], []
    for lineno, row in enumerate(review_rows, start=2):
        if len(row) != 3:
            raise IngestError(f"{reviews_path}:{lineno}: expected 3 columns")
        user, item, kp_field = row
        if user not in user_map or item not in item_map:
            raise IngestError(
                f"{reviews_path}:{lineno}: review for unknown interaction "
                f"({user!r}, {item!r})")
        kps: list[int] = []
        if kp_field.strip():
            for tok in kp_field.split(";"):
                try:
                    kp = int(tok)
                except ValueError as exc:
                    raise IngestError(
                        f"{reviews_path}:{lineno}: bad keyphrase id {tok!r}") from exc
                if not 0 <= kp < len(vocab):
                    raise IngestError(
                        f"{reviews_path}:{lineno}: keyphrase id {kp} outside "
                        f"vocabulary of size {len(vocab)}")
                kps.append(kp)
        r_users.append(user_map[user])
        r_items.append(item_map[item])
        r_kps.append(kps)

    return RatingsTable(
        users=np.array([user_map[u] for u in raw_users], dtype=np.int64),
        items=np.array([item_map[i] for i in raw_items], dtype=np.int64),
        ratings=np.array(ratings, dtype=np.float64),
        review_users=np.array(r_users, dtype=np.int64),
        review_items=np.array(r_items, dtype=np.int64),
        review_kps=r_kps,
        user_ids=user_ids,
        item_ids=item_ids,
        vocab=vocab,
    )


# ---------------------------------------------------------------------------
# binarization and splitting


def binarize(table: RatingsTable, threshold: float) -> sparse.csr_matrix:
    """Implicit matrix with a 1 where rating > threshold (strict).

    Duplicate (user, item) rows keep their maximum rating before the
    comparison.
    """
    if table.users.size == 0:
        raise IngestError("no interactions to binarize")
    # sort so the max-rated duplicate comes last, then keep group tails
    order = np.lexsort((table.ratings, table.items, table.users))
    u = table.users[order]
    i = table.items[order]
    r = table.ratings[order]
    is_tail = np.ones(len(u), dtype=bool)
    if len(u) > 1:
        same = (u[1:] == u[:-1]) & (i[1:] == i[:-1])
        is_tail[:-1] = ~same
    keep = is_tail & (r > threshold)
    mat = sparse.csr_matrix(
        (np.ones(int(keep.sum())), (u[keep], i[keep])),
        shape=(table.n_users, table.n_items),
    )
    mat.sum_duplicates()
    mat.data[:] = 1.0
    return mat


def split_interactions(
    r_binary: sparse.csr_matrix,
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[sparse.csr_matrix, sparse.csr_matrix, sparse.csr_matrix, int]:
    """Per-user split of positive interactions into train/val/test.

    Counts per user: n_val = floor(n * r_val), n_test = floor(n * r_test),
    remainder to train. Users with fewer than 3 positives keep everything in
    train; their count is returned and logged.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"ratios must be non-negative and sum to 1, got {ratios}")
    rng = RngStream(seed)
    n_users, n_items = r_binary.shape
    rows: dict[str, list[list[int]]] = {k: [[], []] for k in ("train", "val", "test")}
    forced = 0
    for u in range(n_users):
        items = r_binary.indices[r_binary.indptr[u]:r_binary.indptr[u + 1]]
        n = len(items)
        if n == 0:
            continue
        if n < 3:
            forced += 1
            rows["train"][0].extend([u] * n)
            rows["train"][1].extend(items.tolist())
            continue
        perm = items[rng.permutation(n)]
        n_val = int(np.floor(n * ratios[1]))
        n_test = int(np.floor(n * ratios[2]))
        val_items = perm[:n_val]
        test_items = perm[n_val:n_val + n_test]
        train_items = perm[n_val + n_test:]
        for name, part in (("train", train_items), ("val", val_items),
                           ("test", test_items)):
            rows[name][0].extend([u] * len(part))
            rows[name][1].extend(part.tolist())
    if forced:
        log.warning("%d users had fewer than 3 positives; all their "
                    "interactions stay in train", forced)

    def build(name: str) -> sparse.csr_matrix:
        us, its = rows[name]
        return sparse.csr_matrix(
            (np.ones(len(us)), (us, its)), shape=(n_users, n_items))

    return build("train"), build("val"), build("test"), forced


def build_keyphrase_matrices(
    table: RatingsTable,
    membership: sparse.csr_matrix,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Count matrices from reviews attached to pairs present in `membership`.

    Returns (k_counts, k_binary, ki_counts, ki_binary): user-by-keyphrase and
    item-by-keyphrase mention counts plus their binarized forms.
    """
    n_users, n_items = membership.shape
    n_kp = len(table.vocab)
    coo = membership.tocoo()
    member_keys = set((coo.row.astype(np.int64) * n_items + coo.col).tolist())
    k_counts = np.zeros((n_users, n_kp))
    ki_counts = np.zeros((n_items, n_kp))
    for u, i, kps in zip(table.review_users.tolist(),
                         table.review_items.tolist(), table.review_kps):
        if not kps:
            continue
        if u * n_items + i in member_keys:
            # add.at handles repeated mentions of one keyphrase in a review
            np.add.at(k_counts[u], kps, 1.0)
            np.add.at(ki_counts[i], kps, 1.0)
    return k_counts, (k_counts > 0).astype(np.float64), ki_counts, \
        (ki_counts > 0).astype(np.float64)


def build_dataset(table: RatingsTable, threshold: float,
                  ratios: tuple[float, float, float], seed: int) -> Dataset:
    """Binarize, split per user, and derive every keyphrase matrix."""
    r_binary = binarize(table, threshold)
    r_train, r_val, r_test, forced = split_interactions(r_binary, ratios, seed)
    k_counts, k_binary, ki_counts, ki_binary = build_keyphrase_matrices(
        table, r_train)
    _, k_val, _, _ = build_keyphrase_matrices(table, r_val)
    _, k_test, _, _ = build_keyphrase_matrices(table, r_test)
    return Dataset(
        vocab=table.vocab,
        user_ids=table.user_ids,
        item_ids=table.item_ids,
        r_train=r_train,
        r_val=r_val,
        r_test=r_test,
        k_counts=k_counts,
        k_binary=k_binary,
        ki_counts=ki_counts,
        ki_binary=ki_binary,
        k_val=k_val,
        k_test=k_test,
        threshold=threshold,
        ratios=tuple(ratios),
        seed=seed,
        n_forced_train_users=forced,
    )


# ---------------------------------------------------------------------------
# modality masking and small numeric helpers


def mask_modalities(n_users: int, p_both: float, seed: int) -> ObservationMask:
    """Mark round(p_both * n) users as fully observed; split the remainder
    evenly into interaction-only and keyphrase-only (extra one to the former).
    """
    if not 0.0 <= p_both <= 1.0:
        raise ConfigError(f"p_both must be in [0, 1], got {p_both}")
    rng = RngStream(seed)
    perm = rng.permutation(n_users)
    n_both = int(round(p_both * n_users))
    rest = n_users - n_both
    n_r = (rest + 1) // 2
    codes = np.empty(n_users, dtype=np.int8)
    codes[perm[:n_both]] = BOTH
    codes[perm[n_both:n_both + n_r]] = R_ONLY
    codes[perm[n_both + n_r:]] = K_ONLY
    return ObservationMask(codes=codes)


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Rows scaled to unit L2 norm; all-zero rows pass through unchanged."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return m / safe


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def match_keyphrases(text: str, vocab: list[str]) -> list[int]:
    """Ids of vocabulary terms whose tokens occur contiguously in `text`.

    Matching is case-insensitive on alphanumeric tokens, so punctuation and
    spacing variants of a multi-word keyphrase still match.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    joined = " " + " ".join(tokens) + " "
    hits = []
    for kp_id, term in enumerate(vocab):
        term_tokens = _TOKEN_RE.findall(term.lower())
        if not term_tokens:
            continue
        if f" {' '.join(term_tokens)} " in joined:
            hits.append(kp_id)
    return hits
