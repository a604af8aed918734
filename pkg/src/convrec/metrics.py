"""Ranking metrics and evaluation harnesses.

Per-user metrics take a ranked id array (best first) and a set of relevant
ids. Harnesses aggregate over users, skipping users whose relevant set for
the evaluated split is empty and reporting how many were skipped. Confidence
intervals are the normal approximation 1.96 * sd / sqrt(n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ShapeError


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Ids sorted by score descending; ties broken by ascending id."""
    scores = np.asarray(scores)
    if scores.ndim != 1:
        raise ShapeError("rank_items expects a 1-D score vector")
    ids = np.arange(len(scores))
    return ids[np.lexsort((ids, -scores))]


def _require_relevant(relevant) -> set:
    relevant = set(relevant)
    if not relevant:
        raise ShapeError("metric undefined for an empty relevant set")
    return relevant


def ndcg(ranked, relevant) -> float:
    """Binary-gain NDCG over the full ranked list, log2(rank+1) discount.

    The ideal DCG places min(|relevant|, len(ranked)) hits at the top.
    """
    relevant = _require_relevant(relevant)
    ranked = np.asarray(ranked)
    positions = np.flatnonzero(np.isin(ranked, list(relevant))) + 1
    dcg = float(np.sum(1.0 / np.log2(positions + 1)))
    ideal_hits = min(len(relevant), len(ranked))
    ideal_pos = np.arange(1, ideal_hits + 1)
    idcg = float(np.sum(1.0 / np.log2(ideal_pos + 1)))
    return dcg / idcg if idcg > 0 else 0.0


def r_precision(ranked, relevant) -> float:
    relevant = _require_relevant(relevant)
    r = len(relevant)
    top = np.asarray(ranked)[:r]
    return float(np.isin(top, list(relevant)).sum()) / r


def precision_at_n(ranked, relevant, n: int) -> float:
    relevant = _require_relevant(relevant)
    if n < 1:
        raise ShapeError("n must be >= 1")
    top = np.asarray(ranked)[:n]
    return float(np.isin(top, list(relevant)).sum()) / n


def recall_at_n(ranked, relevant, n: int) -> float:
    relevant = _require_relevant(relevant)
    if n < 1:
        raise ShapeError("n must be >= 1")
    top = np.asarray(ranked)[:n]
    return float(np.isin(top, list(relevant)).sum()) / len(relevant)


def average_precision_at_n(ranked, relevant, n: int) -> float:
    """AP@n normalized by min(|relevant|, n) so a perfect prefix scores 1."""
    relevant = _require_relevant(relevant)
    if n < 1:
        raise ShapeError("n must be >= 1")
    top = np.asarray(ranked)[:n]
    hits = np.isin(top, list(relevant))
    if not hits.any():
        return 0.0
    cum_hits = np.cumsum(hits)
    precisions = cum_hits[hits] / (np.flatnonzero(hits) + 1)
    return float(precisions.sum()) / min(len(relevant), n)


def falling_map(scores_before: np.ndarray, scores_after: np.ndarray,
                affected, n: int = 100) -> float:
    """How far the affected items fall: AP@n of `affected` under the
    before-scores minus AP@n under the after-scores. Positive means the
    affected set lost rank."""
    affected = _require_relevant(affected)
    before = average_precision_at_n(rank_items(scores_before), affected, n)
    after = average_precision_at_n(rank_items(scores_after), affected, n)
    return before - after


def mean_ci(values) -> tuple[float, float]:
    """Mean and 95% normal-approximation half-width."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), 0.0
    sd = values.std(ddof=1)
    return float(values.mean()), float(1.96 * sd / np.sqrt(values.size))


# ---------------------------------------------------------------------------
# aggregation harnesses


@dataclass
class MetricStat:
    mean: float
    ci95: float
    n_evaluated: int
    n_skipped: int


def _relevant_sets_from_csr(m: sparse.csr_matrix, user: int) -> set[int]:
    return set(m.indices[m.indptr[user]:m.indptr[user + 1]].tolist())


def evaluate_rankings(
    score_rows,
    eval_matrix: sparse.csr_matrix,
    mask_matrix: sparse.csr_matrix | None = None,
    ns: tuple[int, ...] = (5, 10, 20),
    chunk: int = 512,
) -> dict[str, MetricStat]:
    """Aggregate every ranking metric over users.

    `score_rows(users)` returns raw scores (len(users), n_cols); positions
    present in `mask_matrix` (e.g. train positives) are removed from the
    ranking before scoring. Users with no relevant columns in `eval_matrix`
    are skipped and counted.
    """
    n_users = eval_matrix.shape[0]
    per_metric: dict[str, list[float]] = {"ndcg": [], "r-precision": []}
    for n in ns:
        per_metric[f"map@{n}"] = []
        per_metric[f"precision@{n}"] = []
        per_metric[f"recall@{n}"] = []
    skipped = 0
    for start in range(0, n_users, chunk):
        users = np.arange(start, min(start + chunk, n_users))
        scores = None
        for j, u in enumerate(users):
            relevant = _relevant_sets_from_csr(eval_matrix, u)
            if not relevant:
                skipped += 1
                continue
            if scores is None:
                scores = np.array(score_rows(users), dtype=np.float64)
                if mask_matrix is not None:
                    rows = mask_matrix[users].toarray() > 0
                    scores[rows] = -np.inf
            ranked_all = rank_items(scores[j])
            if mask_matrix is not None:
                n_masked = int(mask_matrix[u].nnz)
                if n_masked:
                    ranked = ranked_all[:len(ranked_all) - n_masked]
                else:
                    ranked = ranked_all
            else:
                ranked = ranked_all
            per_metric["ndcg"].append(ndcg(ranked, relevant))
            per_metric["r-precision"].append(r_precision(ranked, relevant))
            for n in ns:
                per_metric[f"map@{n}"].append(
                    average_precision_at_n(ranked, relevant, n))
                per_metric[f"precision@{n}"].append(
                    precision_at_n(ranked, relevant, n))
                per_metric[f"recall@{n}"].append(recall_at_n(ranked, relevant, n))
    out = {}
    for name, values in per_metric.items():
        mean, ci = mean_ci(values)
        out[name] = MetricStat(mean, ci, len(values), skipped)
    return out


def evaluate_explanations(
    score_rows,
    eval_rows: np.ndarray,
    ns: tuple[int, ...] = (5, 10, 20),
    chunk: int = 512,
) -> dict[str, MetricStat]:
    """Same aggregation over keyphrase rankings; `eval_rows` is the binary
    user-by-keyphrase ground truth for the split. No masking: historical
    keyphrases stay rankable."""
    dense_eval = np.asarray(eval_rows)
    n_users = dense_eval.shape[0]
    per_metric: dict[str, list[float]] = {"ndcg": [], "r-precision": []}
    for n in ns:
        per_metric[f"map@{n}"] = []
        per_metric[f"precision@{n}"] = []
        per_metric[f"recall@{n}"] = []
    skipped = 0
    for start in range(0, n_users, chunk):
        users = np.arange(start, min(start + chunk, n_users))
        scores = None
        for j, u in enumerate(users):
            relevant = set(np.flatnonzero(dense_eval[u]).tolist())
            if not relevant:
                skipped += 1
                continue
            if scores is None:
                scores = np.asarray(score_rows(users), dtype=np.float64)
            ranked = rank_items(scores[j])
            per_metric["ndcg"].append(ndcg(ranked, relevant))
            per_metric["r-precision"].append(r_precision(ranked, relevant))
            for n in ns:
                per_metric[f"map@{n}"].append(
                    average_precision_at_n(ranked, relevant, n))
                per_metric[f"precision@{n}"].append(
                    precision_at_n(ranked, relevant, n))
                per_metric[f"recall@{n}"].append(recall_at_n(ranked, relevant, n))
    out = {}
    for name, values in per_metric.items():
        mean, ci = mean_ci(values)
        out[name] = MetricStat(mean, ci, len(values), skipped)
    return out


def popularity_scores(r_train: sparse.csr_matrix) -> np.ndarray:
    """Item popularity (train interaction counts) as a score vector."""
    return np.asarray(r_train.sum(axis=0)).ravel()
