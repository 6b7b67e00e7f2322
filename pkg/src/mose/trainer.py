"""Joint modality-split training.

Each batch runs one full-softmax cross-entropy pass per modality over all
candidate tails, sums the modality losses (structure at temperature 1,
visual/text at the configured temperature) and applies one Adagrad step to
every trainable tensor. Early stopping monitors validation Hits@10 of the
average ensemble over the active modalities.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import RunConfig
from .decoder import n3_grad, n3_penalty, score_all, score_all_backward
from .errors import ConfigError, NumericError
from .store import ModelParams

ADAGRAD_EPSILON = 1e-10


def softmax_with_temperature(scores: np.ndarray, temperature: float) -> np.ndarray:
    """softmax(scores / T) along the last axis, max-subtracted for
    stability. T > 0 softens (T > 1) or sharpens (T < 1) the distribution
    without changing the argmax."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    scaled = np.asarray(scores, dtype=np.float64) / temperature
    scaled = scaled - np.max(scaled, axis=-1, keepdims=True)
    exp = np.exp(scaled)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def ce_loss(scores: np.ndarray, gold: int, temperature: float = 1.0) -> tuple[float, np.ndarray]:
    """Temperature-scaled cross entropy against one gold id.

    Returns (-log softmax(scores/T)[gold], gradient w.r.t. scores). The
    gradient is (p - onehot(gold)) / T.
    """
    scores = np.asarray(scores, dtype=np.float64)
    scaled = scores / temperature
    shift = scaled - np.max(scaled)
    logsumexp = np.log(np.sum(np.exp(shift)))
    loss = float(logsumexp - shift[gold])
    probs = np.exp(shift - logsumexp)
    grad = probs.copy()
    grad[gold] -= 1.0
    return loss, grad / temperature


def _batch_ce(scores: np.ndarray, gold: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """Mean CE over a (B, E) score batch; gradient already includes the
    1/B factor."""
    batch = scores.shape[0]
    scaled = scores / temperature
    shift = scaled - np.max(scaled, axis=1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(shift), axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(logsumexp - shift[rows, gold]))
    grad = np.exp(shift - logsumexp[:, None])
    grad[rows, gold] -= 1.0
    return loss, grad / (temperature * batch)


class Adagrad:
    """Per-tensor accumulated-squared-gradient optimizer:
    acc += g^2; theta -= lr * g / sqrt(acc + eps)."""

    def __init__(self, learning_rate: float, epsilon: float = ADAGRAD_EPSILON):
        self.learning_rate = learning_rate
        self.epsilon = epsilon
        self.accumulators: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            acc = self.accumulators.get(name)
            if acc is None:
                acc = np.zeros_like(params[name])
                self.accumulators[name] = acc
            acc += grad * grad
            params[name] -= self.learning_rate * grad / np.sqrt(acc + self.epsilon)


def modality_loss_and_grads(
    batch: np.ndarray,
    model: ModelParams,
    modality: str,
    temperature: float,
    n3_weight: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Full-softmax CE loss of one modality on an (B, 3) id batch plus
    gradients keyed by the model's trainable-parameter names."""
    mod = model[modality]
    heads, rels, tails = batch[:, 0], batch[:, 1], batch[:, 2]
    entity_embeddings = mod.entity_embeddings()
    h_vecs = entity_embeddings[heads]
    r_vecs = mod.relation_table[rels]
    scores = score_all(h_vecs, r_vecs, entity_embeddings)
    loss, d_scores = _batch_ce(scores, tails, temperature)
    d_heads, d_rels, d_entities = score_all_backward(h_vecs, r_vecs, entity_embeddings, d_scores)

    if n3_weight != 0.0:
        batch_size = batch.shape[0]
        t_vecs = entity_embeddings[tails]
        loss += n3_weight / batch_size * (
            n3_penalty(h_vecs) + n3_penalty(r_vecs) + n3_penalty(t_vecs)
        )
        d_heads += n3_weight / batch_size * n3_grad(h_vecs)
        d_rels += n3_weight / batch_size * n3_grad(r_vecs)
        np.add.at(d_entities, tails, n3_weight / batch_size * n3_grad(t_vecs))

    # Fold the head-side gradients into the dense candidate-side ones;
    # np.add.at handles repeated head ids within a batch.
    np.add.at(d_entities, heads, d_heads)
    d_relation_table = np.zeros_like(mod.relation_table)
    np.add.at(d_relation_table, rels, d_rels)

    grads: dict[str, np.ndarray] = {model.relation_grad_key(modality): d_relation_table}
    if mod.entity_table is not None:
        grads[f"{modality}.entities"] = d_entities
    else:
        grads[f"{modality}.projection"] = d_entities.T @ mod.features
    return loss, grads


def batch_step(
    batch: np.ndarray,
    model: ModelParams,
    optimizer: Adagrad,
    config: RunConfig,
    loss_modalities: Iterable[str] | None = None,
) -> dict[str, float]:
    """One Adagrad step on the summed modality losses. Structure is scored
    at temperature 1; visual and text at config.temperature. Returns the
    per-modality scalar losses."""
    batch = np.asarray(batch)
    active = tuple(loss_modalities) if loss_modalities is not None else model.modality_names
    params = model.trainable()
    losses: dict[str, float] = {}
    total_grads: dict[str, np.ndarray] = {}
    for modality in model.modality_names:
        if modality not in active:
            continue
        temperature = 1.0 if modality == "structure" else config.temperature
        loss, grads = modality_loss_and_grads(
            batch, model, modality, temperature, n3_weight=config.n3_weight
        )
        if not np.isfinite(loss):
            raise NumericError(f"non-finite {modality} loss")
        losses[modality] = loss
        for name, grad in grads.items():
            if name in total_grads:
                total_grads[name] = total_grads[name] + grad
            else:
                total_grads[name] = grad
    optimizer.step(params, total_grads)
    return losses


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    losses: dict[str, float]
    valid_hits10: float
    seconds: float

    def to_json_dict(self) -> dict:
        row = {"epoch": self.epoch}
        for modality in ("structure", "visual", "text"):
            if modality in self.losses:
                row[f"loss_{modality}"] = self.losses[modality]
        row["valid_hits10"] = self.valid_hits10
        row["seconds"] = self.seconds
        return row


@dataclasses.dataclass
class TrainResult:
    params: ModelParams
    optimizer: Adagrad
    log: list[EpochRecord]
    best_epoch: int
    best_hits10: float
    rng_state: dict


def fit(
    train: np.ndarray,
    valid: np.ndarray,
    model: ModelParams,
    config: RunConfig,
    filter_index,
    loss_modalities: Sequence[str] | None = None,
) -> TrainResult:
    """Epoch loop over seeded shuffled mini-batches with early stopping.

    After each epoch the average-ensemble Hits@10 on the validation split
    is computed; the best-scoring parameters are kept and training stops
    once `patience` consecutive epochs fail to improve (or at max_epochs).
    """
    from .evaluator import evaluate  # local import: evaluator depends on ensemble

    train = np.asarray(train)
    valid = np.asarray(valid)
    if valid.size == 0:
        raise ConfigError("fit requires a nonempty validation split")
    rng = np.random.default_rng(config.seed)
    optimizer = Adagrad(config.learning_rate)
    log: list[EpochRecord] = []
    best_hits10 = -1.0
    best_epoch = -1
    best_params = model.copy()

    n = train.shape[0]
    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        order = rng.permutation(n)
        epoch_losses: dict[str, float] = {}
        seen = 0
        for lo in range(0, n, config.batch_size):
            batch = train[order[lo : lo + config.batch_size]]
            try:
                losses = batch_step(batch, model, optimizer, config, loss_modalities)
            except NumericError as exc:
                raise NumericError(
                    f"{exc} (epoch {epoch}, batch {lo // config.batch_size})"
                ) from exc
            weight = batch.shape[0]
            for name, value in losses.items():
                epoch_losses[name] = epoch_losses.get(name, 0.0) + value * weight
            seen += weight
        epoch_losses = {name: value / seen for name, value in epoch_losses.items()}

        report = evaluate(
            valid, model, inference="ai", filter_index=filter_index, threads=config.threads
        )
        hits10 = report.hits10
        log.append(
            EpochRecord(
                epoch=epoch,
                losses=epoch_losses,
                valid_hits10=hits10,
                seconds=time.perf_counter() - start,
            )
        )
        if hits10 > best_hits10:
            best_hits10 = hits10
            best_epoch = epoch
            best_params = model.copy()
        elif epoch - best_epoch > config.patience:
            break

    return TrainResult(
        params=best_params,
        optimizer=optimizer,
        log=log,
        best_epoch=best_epoch,
        best_hits10=best_hits10,
        rng_state=rng.bit_generator.state,
    )
