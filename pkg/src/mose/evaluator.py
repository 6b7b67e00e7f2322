"""Filtered ranking evaluation and the temperature sweep.

Queries are reciprocal-augmented triples, so head prediction is just tail
prediction over a reciprocal relation; reports break results down by that
direction. The rank of the gold tail counts only strictly-greater scores
among unfiltered competitors (optimistic tie policy), with every other
known-true tail of the query's (head, relation) excluded.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .config import RunConfig
from .decoder import ScoreTensor, score_all
from .ensemble import (
    MetaLearnerParams,
    RelationWeights,
    combine_average,
    combine_boosted,
    combine_metalearner,
)
from .errors import ConfigError, StateError, ValidationError
from .kg import FilterIndex
from .store import ModelParams, init_params

INFERENCE_MODES = ("ai", "bi", "mi")


@dataclasses.dataclass
class MetricsReport:
    count: int
    hits1: float
    hits3: float
    hits10: float
    mr: float
    mrr: float
    directions: dict[str, "MetricsReport"] = dataclasses.field(default_factory=dict)
    relations: dict[int, "MetricsReport"] | None = None

    @classmethod
    def from_ranks(cls, ranks: np.ndarray) -> "MetricsReport":
        ranks = np.asarray(ranks, dtype=np.float64)
        if ranks.size == 0:
            return cls(count=0, hits1=0.0, hits3=0.0, hits10=0.0, mr=0.0, mrr=0.0)
        return cls(
            count=int(ranks.size),
            hits1=float(np.mean(ranks <= 1)),
            hits3=float(np.mean(ranks <= 3)),
            hits10=float(np.mean(ranks <= 10)),
            mr=float(np.mean(ranks)),
            mrr=float(np.mean(1.0 / ranks)),
        )

    def to_json_dict(self) -> dict:
        out = {
            "count": self.count,
            "hits1": self.hits1,
            "hits3": self.hits3,
            "hits10": self.hits10,
            "mr": self.mr,
            "mrr": self.mrr,
        }
        if self.directions:
            out["directions"] = {k: v.to_json_dict() for k, v in self.directions.items()}
        if self.relations is not None:
            out["relations"] = {str(k): v.to_json_dict() for k, v in sorted(self.relations.items())}
        return out


def filtered_rank(scores: np.ndarray, gold: int, filter_set: set[int]) -> int:
    """1 + number of unfiltered competitors scoring strictly above the
    gold entity. Entities in `filter_set` (other than the gold itself) are
    excluded from the competition."""
    scores = np.asarray(scores)
    n = scores.shape[0]
    if not 0 <= gold < n:
        raise ValidationError(f"gold id {gold} out of range [0, {n})")
    excluded = np.zeros(n, dtype=bool)
    if filter_set:
        excluded[list(filter_set)] = True
    excluded[gold] = False
    beats = (scores > scores[gold]) & ~excluded
    return 1 + int(np.count_nonzero(beats))


def modality_scores(queries: np.ndarray, model: ModelParams) -> list[ScoreTensor]:
    """One (Q, E) score tensor per active modality, canonical order."""
    queries = np.asarray(queries)
    tensors = []
    for name in model.modality_names:
        mod = model[name]
        embeddings = mod.entity_embeddings()
        heads = embeddings[queries[:, 0]]
        rels = mod.relation_table[queries[:, 1]]
        tensors.append(ScoreTensor(values=score_all(heads, rels, embeddings), modality=name))
    return tensors


def fuse_scores(
    tensors: Sequence[ScoreTensor],
    inference: str,
    relations: np.ndarray | None = None,
    ensemble_model=None,
) -> ScoreTensor:
    if inference == "ai":
        return combine_average(tensors)
    if inference == "bi":
        if not isinstance(ensemble_model, RelationWeights):
            raise StateError("boosting inference requires fitted relation weights")
        if relations is None:
            raise ValidationError("boosting inference requires the query relations")
        return combine_boosted(tensors, relations, ensemble_model)
    if inference == "mi":
        if not isinstance(ensemble_model, MetaLearnerParams):
            raise StateError("meta-learner inference requires fitted meta-learner parameters")
        return combine_metalearner(tensors, ensemble_model)
    if inference.startswith("single:"):
        wanted = inference.split(":", 1)[1]
        for tensor in tensors:
            if tensor.modality == wanted:
                return tensor
        raise StateError(f"modality {wanted!r} is not bound")
    raise ConfigError(f"unknown inference mode {inference!r}")


def evaluate(
    queries: np.ndarray,
    model: ModelParams,
    inference: str,
    filter_index: FilterIndex,
    ensemble_model=None,
    by_relation: bool = False,
    threads: int = 1,
) -> MetricsReport:
    """Filtered-rank every query under one inference mode and aggregate
    Hits@{1,3,10}, MR and MRR, with tail/head direction breakdowns.

    Queries are row-independent, so with `threads` > 1 they are scored in
    contiguous chunks on a thread pool and reassembled in query order.
    """
    queries = np.asarray(queries)
    if queries.size == 0:
        raise ValidationError("evaluate requires a nonempty query split")
    names = model.modality_names
    embeddings = {name: model[name].entity_embeddings() for name in names}

    def rank_rows(rows: np.ndarray) -> np.ndarray:
        sub = queries[rows]
        tensors = [
            ScoreTensor(
                values=score_all(
                    embeddings[name][sub[:, 0]],
                    model[name].relation_table[sub[:, 1]],
                    embeddings[name],
                ),
                modality=name,
            )
            for name in names
        ]
        fused = fuse_scores(tensors, inference, relations=sub[:, 1], ensemble_model=ensemble_model)
        out = np.empty(rows.size, dtype=np.int64)
        for i, (h, r, t) in enumerate(sub):
            out[i] = filtered_rank(fused.values[i], int(t), filter_index.tails(int(h), int(r)))
        return out

    n_queries = queries.shape[0]
    if threads > 1 and n_queries > 1:
        parts = np.array_split(np.arange(n_queries), min(threads, n_queries))
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            ranks = np.concatenate(list(pool.map(rank_rows, parts)))
    else:
        ranks = rank_rows(np.arange(n_queries))

    n_base = model[model.modality_names[0]].relation_table.shape[0] // 2
    report = MetricsReport.from_ranks(ranks)
    tail_mask = queries[:, 1] < n_base
    report.directions = {
        "tail": MetricsReport.from_ranks(ranks[tail_mask]),
        "head": MetricsReport.from_ranks(ranks[~tail_mask]),
    }
    if by_relation:
        report.relations = {
            int(r): MetricsReport.from_ranks(ranks[queries[:, 1] == r])
            for r in np.unique(queries[:, 1])
        }
    return report


def temperature_sweep(
    train: np.ndarray,
    valid: np.ndarray,
    eval_queries: np.ndarray,
    config: RunConfig,
    t_values: Sequence[float],
    filter_index: FilterIndex,
    n_entities: int,
    n_relations: int,
    features=None,
) -> list[tuple[float, MetricsReport]]:
    """Train one model per temperature (identical seed and config
    otherwise) and report average-ensemble metrics on `eval_queries`."""
    from .trainer import fit  # local import: trainer already imports this module

    t_values = [float(t) for t in t_values]
    for t in t_values:
        if t <= 0:
            raise ConfigError(f"temperature grid values must be > 0, got {t}")
    rows = []
    for t in t_values:
        cfg = config.replace(temperature=t)
        params = init_params(
            seed=cfg.seed,
            dim=cfg.dim,
            n_entities=n_entities,
            n_relations=n_relations,
            features=features,
            modalities=cfg.modalities,
            tie_relations=cfg.tie_relations,
        )
        result = fit(train, valid, params, cfg, filter_index)
        report = evaluate(eval_queries, result.params, "ai", filter_index)
        rows.append((t, report))
    return rows
