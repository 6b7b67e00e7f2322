"""Run directories: the binary bundle `ingest` writes and every artifact
later commands add to it.

Bundle layout (all produced by :func:`ingest_dataset`):

* ``entities.tsv`` / ``relations.tsv`` — vocabulary, ``name<TAB>id``.
* ``train.npy`` / ``valid.npy`` / ``test.npy`` — reciprocal-augmented
  int64 (N, 3) triple arrays.
* ``visual.msef`` / ``text.msef`` — validated copies of the dataset's
  feature files (present only if the dataset provides them).
* ``dataset.json`` — sizes, bound modalities, source path.

Training and inference add ``config.json``, ``checkpoint.msec``,
``train_log.jsonl``, ``ensemble_ai.json`` / ``ensemble_bi.json`` (the
meta-learner lives inside the checkpoint under section tag ``MI``),
``metrics.json`` / ``metrics.tsv``, ``sweep.json`` / ``sweep.tsv`` and
``weights.tsv``.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib
import shutil

import numpy as np

from .errors import StateError, ValidationError
from .kg import FilterIndex, Vocabulary, augment_reciprocals, load_store
from .store import FEATURE_MODALITIES, load_feature_file, validate_features

DATASET_FILE = "dataset.json"
CONFIG_FILE = "config.json"
CHECKPOINT_FILE = "checkpoint.msec"
TRAIN_LOG_FILE = "train_log.jsonl"
METRICS_JSON = "metrics.json"
METRICS_TSV = "metrics.tsv"
SWEEP_JSON = "sweep.json"
SWEEP_TSV = "sweep.tsv"
WEIGHTS_TSV = "weights.tsv"


def ensemble_file(method: str) -> str:
    return f"ensemble_{method}.json"


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


@dataclasses.dataclass
class RunBundle:
    """In-memory view of an ingested run directory."""

    run_dir: pathlib.Path
    vocab: Vocabulary
    splits: dict[str, np.ndarray]
    features: dict[str, np.ndarray]
    meta: dict

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(self.meta["modalities"])

    def path(self, name: str) -> pathlib.Path:
        return self.run_dir / name

    def filter_index(self) -> FilterIndex:
        """True-tail index over train ∪ valid ∪ test (augmented ids)."""
        index = FilterIndex()
        for array in self.splits.values():
            for h, r, t in array:
                index.add(int(h), int(r), int(t))
        return index

    def split(self, name: str) -> np.ndarray:
        try:
            return self.splits[name]
        except KeyError:
            raise ValidationError(f"unknown split {name!r}") from None


def ingest_dataset(data_dir, run_dir) -> RunBundle:
    """Parse a dataset directory, reciprocal-augment it, validate any
    feature files against the vocabulary, and write the binary bundle.
    The input directory is never modified."""
    data_dir = pathlib.Path(data_dir)
    run_dir = pathlib.Path(run_dir)
    store, vocab = load_store(data_dir)
    if not store.train:
        raise ValidationError(f"{data_dir}: training split is empty")
    augmented = augment_reciprocals(store, vocab)

    features: dict[str, np.ndarray] = {}
    for name in FEATURE_MODALITIES:
        source = data_dir / f"{name}.msef"
        if source.exists():
            matrix = load_feature_file(source)
            validate_features(matrix, vocab.n_entities, name=f"{name}.msef")
            features[name] = matrix

    run_dir.mkdir(parents=True, exist_ok=True)
    vocab.write(run_dir / "entities.tsv", run_dir / "relations.tsv")
    splits: dict[str, np.ndarray] = {}
    for split_name, triples in augmented.splits().items():
        array = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        np.save(run_dir / f"{split_name}.npy", array)
        splits[split_name] = array
    for name in features:
        shutil.copyfile(data_dir / f"{name}.msef", run_dir / f"{name}.msef")

    meta = {
        "source": str(data_dir),
        "n_entities": vocab.n_entities,
        "n_relations": vocab.n_relations,
        "modalities": ["structure"] + sorted(features),
        "counts": {name: len(store.splits()[name]) for name in ("train", "valid", "test")},
        "augmented": True,
    }
    write_json(run_dir / DATASET_FILE, meta)
    return RunBundle(run_dir=run_dir, vocab=vocab, splits=splits, features=features, meta=meta)


def load_run(run_dir) -> RunBundle:
    """Load a bundle previously written by :func:`ingest_dataset`."""
    run_dir = pathlib.Path(run_dir)
    dataset_path = run_dir / DATASET_FILE
    if not dataset_path.exists():
        raise StateError(f"{run_dir} is not a run directory (missing {DATASET_FILE}); run ingest first")
    meta = read_json(dataset_path)
    vocab = Vocabulary.read(run_dir / "entities.tsv", run_dir / "relations.tsv")
    splits = {name: np.load(run_dir / f"{name}.npy") for name in ("train", "valid", "test")}
    features = {
        name: load_feature_file(run_dir / f"{name}.msef")
        for name in meta["modalities"]
        if name in FEATURE_MODALITIES
    }
    for name, matrix in features.items():
        validate_features(matrix, vocab.n_entities, name=f"{name}.msef")
    return RunBundle(run_dir=run_dir, vocab=vocab, splits=splits, features=features, meta=meta)
