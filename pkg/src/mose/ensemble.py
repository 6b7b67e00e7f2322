"""Inference-time score fusion.

Three strategies over per-modality score tensors:

* average — equal weights, no fitting;
* boosting — per-relation modality weights learned by pairwise RankBoost
  on a meta-set (the validation split), where each round converts ranking
  into weighted binary classification over (query, wrong-candidate) pairs;
* meta-learner — a one-hidden-layer MLP mapping each candidate's
  standardized modality-score vector to fusion weights, trained with
  cross entropy against the gold tail.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Mapping, Sequence

import numpy as np

from .config import RunConfig
from .decoder import ScoreTensor
from .errors import ConfigError, ValidationError
from .kg import FilterIndex
from .trainer import Adagrad


def _stack(scores: Sequence[ScoreTensor]) -> np.ndarray:
    arrays = [np.asarray(s.values, dtype=np.float64) for s in scores]
    shape = arrays[0].shape
    for sc, arr in zip(scores, arrays):
        if arr.shape != shape:
            raise ValidationError(
                f"score shape mismatch: {sc.modality} has {arr.shape}, expected {shape}"
            )
    return np.stack(arrays, axis=0)


def combine_average(scores: Sequence[ScoreTensor]) -> ScoreTensor:
    """Elementwise mean, weight 1/|M| each."""
    stacked = _stack(scores)
    return ScoreTensor(values=stacked.mean(axis=0), modality="average")


def combine_weighted(scores: Sequence[ScoreTensor], weights: np.ndarray) -> ScoreTensor:
    """sum_m weights[m] * scores[m], elementwise."""
    stacked = _stack(scores)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (stacked.shape[0],):
        raise ValidationError(
            f"expected {stacked.shape[0]} weights, got shape {weights.shape}"
        )
    return ScoreTensor(
        values=np.tensordot(weights, stacked, axes=(0, 0)), modality="weighted"
    )


@dataclasses.dataclass
class RelationWeights:
    """Per-relation modality weight vectors plus a global fallback used
    for relations unseen (or pairless) in the meta-set."""

    modalities: tuple[str, ...]
    weights: dict[int, np.ndarray]
    fallback: np.ndarray

    def for_relation(self, relation: int) -> np.ndarray:
        return self.weights.get(relation, self.fallback)

    def to_json_dict(self) -> dict:
        return {
            "modalities": list(self.modalities),
            "weights": {str(r): list(map(float, w)) for r, w in sorted(self.weights.items())},
            "fallback": list(map(float, self.fallback)),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "RelationWeights":
        return cls(
            modalities=tuple(data["modalities"]),
            weights={int(r): np.asarray(w, dtype=np.float64) for r, w in data["weights"].items()},
            fallback=np.asarray(data["fallback"], dtype=np.float64),
        )


def rankboost_round_weight(
    dist: np.ndarray, correct: np.ndarray, epsilon: float
) -> float:
    """Candidate weight of one weak ranker: half the log-odds of the
    distribution mass it ranks correctly, smoothed by `epsilon` so
    perfect or hopeless rankers stay finite."""
    mass_correct = float(dist[correct].sum())
    mass_wrong = float(dist[~correct].sum())
    return 0.5 * math.log((mass_correct + epsilon) / (mass_wrong + epsilon))


@dataclasses.dataclass
class BoostRound:
    """One boosting round: which weak ranker was chosen, its candidate
    weight, and the reweighted pair distribution after renormalization."""

    modality: int
    weight: float
    dist: np.ndarray


def rankboost_fit_relation(
    correct: np.ndarray, epsilon: float
) -> tuple[np.ndarray, list[BoostRound]]:
    """Boost one relation's pooled pairs; `correct[m, p]` says modality m
    orders pair p correctly. Starts from the uniform pair distribution;
    each round scores every not-yet-chosen modality with
    :func:`rankboost_round_weight`, picks the best (ties to the lowest
    modality index), reweights by exp(-w * h) and renormalizes. Runs
    exactly one round per modality and returns the weight vector plus the
    per-round trace."""
    correct = np.asarray(correct, dtype=bool)
    n_modalities, n_pairs = correct.shape
    if n_pairs == 0:
        raise ValidationError("rankboost requires at least one ranking pair")
    dist = np.full(n_pairs, 1.0 / n_pairs)
    vector = np.zeros(n_modalities)
    chosen = np.zeros(n_modalities, dtype=bool)
    rounds: list[BoostRound] = []
    for _ in range(n_modalities):
        candidates = np.full(n_modalities, -np.inf)
        for m in range(n_modalities):
            if not chosen[m]:
                candidates[m] = rankboost_round_weight(dist, correct[m], epsilon)
        best = int(np.argmax(candidates))  # argmax takes the lowest index on ties
        weight = float(candidates[best])
        chosen[best] = True
        vector[best] = weight
        sign = np.where(correct[best], 1.0, -1.0)
        dist = dist * np.exp(-weight * sign)
        dist = dist / dist.sum()
        rounds.append(BoostRound(modality=best, weight=weight, dist=dist.copy()))
    return vector, rounds


def _relation_pairs(
    queries: np.ndarray,
    relation_rows: np.ndarray,
    filter_index: FilterIndex,
    n_entities: int,
    pair_cap: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """(query row, wrong candidate) pairs for one relation's meta-subset.

    Candidates exclude every known-true tail of the query's (h, r), so
    each pair opposes the gold tail to a genuinely wrong entity. Queries
    with more than `pair_cap` candidates are subsampled without
    replacement."""
    q_rows: list[np.ndarray] = []
    e_rows: list[np.ndarray] = []
    for row in relation_rows:
        h, r, t = queries[row]
        mask = np.ones(n_entities, dtype=bool)
        truths = filter_index.tails(int(h), int(r))
        if truths:
            mask[list(truths)] = False
        mask[t] = False
        candidates = np.flatnonzero(mask)
        if candidates.size > pair_cap:
            candidates = np.sort(rng.choice(candidates, size=pair_cap, replace=False))
        q_rows.append(np.full(candidates.size, row, dtype=np.int64))
        e_rows.append(candidates)
    if not q_rows:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(q_rows), np.concatenate(e_rows)


def fit_rankboost(
    meta_queries: np.ndarray,
    modality_scores: Sequence[ScoreTensor],
    filter_index: FilterIndex,
    config: RunConfig,
    n_entities: int,
) -> RelationWeights:
    """Learn per-relation modality weights by RankBoost over pooled
    (query, wrong-candidate) pairs.

    Per relation: start from a uniform pair distribution; each round every
    not-yet-chosen modality is scored by :func:`rankboost_round_weight`
    using the indicator "wrong candidate scored strictly below the gold
    tail" (+1 correct, -1 otherwise, ties counting -1); the best modality
    is chosen (ties to the lowest modality index), the distribution is
    reweighted by exp(-w * h) and renormalized. Every modality is chosen
    exactly once. The fallback vector is the pair-count-weighted mean of
    the per-relation vectors."""
    meta_queries = np.asarray(meta_queries)
    if meta_queries.size == 0:
        raise ValidationError("rankboost requires a nonempty meta-set")
    names = tuple(s.modality for s in modality_scores)
    stacked = _stack(modality_scores)  # (M, Q, E)
    n_modalities = stacked.shape[0]
    rng = np.random.default_rng(config.seed)
    epsilon = config.boost_epsilon

    gold = meta_queries[:, 2]
    gold_scores = stacked[:, np.arange(meta_queries.shape[0]), gold]  # (M, Q)

    weights: dict[int, np.ndarray] = {}
    pair_counts: dict[int, int] = {}
    for relation in np.unique(meta_queries[:, 1]):
        relation = int(relation)
        rows = np.flatnonzero(meta_queries[:, 1] == relation)
        q_idx, e_idx = _relation_pairs(
            meta_queries, rows, filter_index, n_entities, config.boost_pair_cap, rng
        )
        if q_idx.size == 0:
            continue
        # correct[m, p]: modality m ranks pair p's wrong candidate below the gold.
        correct = stacked[:, q_idx, e_idx] < gold_scores[:, q_idx]
        vector, _ = rankboost_fit_relation(correct, epsilon)
        weights[relation] = vector
        pair_counts[relation] = int(q_idx.size)

    if not weights:
        raise ValidationError("no relation in the meta-set produced any ranking pair")
    total_pairs = sum(pair_counts.values())
    fallback = sum(weights[r] * pair_counts[r] for r in weights) / total_pairs
    return RelationWeights(modalities=names, weights=weights, fallback=fallback)


def combine_boosted(
    scores: Sequence[ScoreTensor],
    relations: np.ndarray,
    relation_weights: RelationWeights,
) -> ScoreTensor:
    """Per-query weighted sum with each query's relation-specific weights."""
    stacked = _stack(scores)
    per_query = np.stack(
        [relation_weights.for_relation(int(r)) for r in np.asarray(relations)], axis=0
    )  # (Q, M)
    values = np.einsum("qm,mqe->qe", per_query, stacked)
    return ScoreTensor(values=values, modality="boosted")


@dataclasses.dataclass
class MetaLearnerParams:
    """One-hidden-layer MLP emitting per-candidate modality weights, plus
    the meta-set standardization statistics frozen at fit time."""

    modalities: tuple[str, ...]
    w1: np.ndarray  # (M, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, M)
    b2: np.ndarray  # (M,)
    score_mean: np.ndarray  # (M,)
    score_std: np.ndarray  # (M,)

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        return {
            "w1": self.w1,
            "b1": self.b1,
            "w2": self.w2,
            "b2": self.b2,
            "score_mean": self.score_mean,
            "score_std": self.score_std,
        }

    @classmethod
    def from_blocks(cls, modalities: Sequence[str], blocks: Mapping[str, np.ndarray]) -> "MetaLearnerParams":
        return cls(
            modalities=tuple(modalities),
            w1=np.asarray(blocks["w1"]),
            b1=np.asarray(blocks["b1"]),
            w2=np.asarray(blocks["w2"]),
            b2=np.asarray(blocks["b2"]),
            score_mean=np.asarray(blocks["score_mean"]),
            score_std=np.asarray(blocks["score_std"]),
        )


def init_metalearner(
    seed: int, n_modalities: int, hidden: int, score_mean: np.ndarray, score_std: np.ndarray,
    modalities: Sequence[str],
) -> MetaLearnerParams:
    if hidden < 1:
        raise ConfigError(f"meta-learner hidden size must be >= 1, got {hidden}")
    rng = np.random.default_rng(seed)
    return MetaLearnerParams(
        modalities=tuple(modalities),
        w1=rng.standard_normal((n_modalities, hidden)) * 0.1,
        b1=np.zeros(hidden),
        w2=rng.standard_normal((hidden, n_modalities)) * 0.1,
        b2=np.zeros(n_modalities),
        score_mean=np.asarray(score_mean, dtype=np.float64),
        score_std=np.asarray(score_std, dtype=np.float64),
    )


def _standardize(stacked: np.ndarray, params: MetaLearnerParams) -> np.ndarray:
    """(M, Q, E) raw scores -> (Q, E, M) standardized inputs."""
    shifted = (stacked - params.score_mean[:, None, None]) / params.score_std[:, None, None]
    return np.moveaxis(shifted, 0, -1)


def metalearner_forward(inputs: np.ndarray, params: MetaLearnerParams):
    """MLP forward on (..., M) standardized score vectors.

    Returns (combined, weights, hidden, logits): weights are a softmax over
    the output layer, combined[...] = sum_m weights[..., m] * inputs[..., m].
    """
    hidden_pre = inputs @ params.w1 + params.b1
    hidden = np.maximum(hidden_pre, 0.0)
    logits = hidden @ params.w2 + params.b2
    shift = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shift)
    weights = exp / exp.sum(axis=-1, keepdims=True)
    combined = np.sum(weights * inputs, axis=-1)
    return combined, weights, hidden, logits


def metalearner_query_loss_and_grads(
    inputs: np.ndarray, gold: int, params: MetaLearnerParams
) -> tuple[float, dict[str, np.ndarray]]:
    """CE of the combined scores over all candidates of one query, with
    gradients for the four MLP tensors.

    `inputs` is (E, M) standardized scores. The softmax-weight Jacobian
    collapses to d combined/d logits_j = w_j * (x_j - combined)."""
    combined, weights, hidden, _ = metalearner_forward(inputs, params)
    shift = combined - combined.max()
    logsumexp = np.log(np.sum(np.exp(shift)))
    loss = float(logsumexp - shift[gold])
    d_combined = np.exp(shift - logsumexp)
    d_combined[gold] -= 1.0

    d_logits = d_combined[:, None] * weights * (inputs - combined[:, None])
    d_w2 = hidden.T @ d_logits
    d_b2 = d_logits.sum(axis=0)
    d_hidden = d_logits @ params.w2.T
    d_hidden[hidden <= 0.0] = 0.0
    d_w1 = inputs.T @ d_hidden
    d_b1 = d_hidden.sum(axis=0)
    return loss, {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}


def fit_metalearner(
    meta_queries: np.ndarray,
    modality_scores: Sequence[ScoreTensor],
    config: RunConfig,
) -> MetaLearnerParams:
    """Train the meta-learner MLP with Adagrad on meta-set queries.

    Scores are standardized per modality with meta-set statistics (frozen
    into the returned params). Training shuffles queries each epoch with
    the run seed, tracks the epoch-mean loss, keeps the best parameters
    and stops early after `meta_patience` non-improving epochs."""
    meta_queries = np.asarray(meta_queries)
    if meta_queries.size == 0:
        raise ValidationError("meta-learner requires a nonempty meta-set")
    names = tuple(s.modality for s in modality_scores)
    stacked = _stack(modality_scores)
    mean = stacked.mean(axis=(1, 2))
    std = stacked.std(axis=(1, 2))
    std = np.where(std > 0, std, 1.0)

    params = init_metalearner(
        config.seed, stacked.shape[0], config.meta_hidden, mean, std, names
    )
    inputs = _standardize(stacked, params)  # (Q, E, M)
    gold = meta_queries[:, 2]

    rng = np.random.default_rng(config.seed)
    optimizer = Adagrad(config.meta_learning_rate)
    tensors = {"w1": params.w1, "b1": params.b1, "w2": params.w2, "b2": params.b2}
    best_loss = np.inf
    best = {name: arr.copy() for name, arr in tensors.items()}
    best_epoch = -1
    for epoch in range(config.meta_epochs):
        order = rng.permutation(meta_queries.shape[0])
        total = 0.0
        for q in order:
            loss, grads = metalearner_query_loss_and_grads(inputs[q], int(gold[q]), params)
            optimizer.step(tensors, grads)
            total += loss
        epoch_loss = total / meta_queries.shape[0]
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_epoch = epoch
            best = {name: arr.copy() for name, arr in tensors.items()}
        elif epoch - best_epoch > config.meta_patience:
            break
    for name, arr in best.items():
        tensors[name][...] = arr
    return params


def combine_metalearner(
    scores: Sequence[ScoreTensor], params: MetaLearnerParams
) -> ScoreTensor:
    """Instance-specific fusion: standardize with the fit-time statistics,
    run the MLP per candidate, dot the weight vector with the standardized
    scores."""
    stacked = _stack(scores)
    if stacked.shape[0] != params.w1.shape[0]:
        raise ValidationError(
            f"meta-learner expects {params.w1.shape[0]} modalities, got {stacked.shape[0]}"
        )
    inputs = _standardize(stacked, params)
    combined, _, _, _ = metalearner_forward(inputs, params)
    return ScoreTensor(values=combined, modality="metalearner")
