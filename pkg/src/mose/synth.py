"""Seeded synthetic multimodal KG generators for desk-scale benchmarks.

Two constructions:

* :func:`generate_random_kg` — uniform unique triples plus pure-noise
  feature files; useful for memorization and plumbing tests.
* :func:`generate_complementary_kg` — each of two relations maps every
  head to the entity whose code is *farthest* from the head's code (most
  negative dot product), and the codes of exactly one modality define
  each relation: visual features decide the first relation, text
  features the second. Splits partition the heads, so a model must
  exploit the features (not memorize edges) to rank the held-out tails.
  The plant is a pure bilinear rule (negated inner product), so a
  learned linear projection plus one relation vector recovers it
  exactly, and an oracle reading only the feature file recovers every
  tail by taking an argmin.

Both emit the standard dataset layout into a directory:
``train.tsv valid.tsv test.tsv visual.msef text.msef manifest.json``,
byte-identical for identical arguments.
"""

from __future__ import annotations

import json
import pathlib

import numpy as np

from .errors import ConfigError
from .kg import load_store
from .store import write_feature_file

VISUAL_RELATION = "visual_link"
TEXT_RELATION = "text_link"


def _entity_name(i: int) -> str:
    return f"e{i:03d}"


def _write_name_triples(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for head, relation, tail in rows:
            fh.write(f"{head}\t{relation}\t{tail}\n")


def _write_manifest(out_dir: pathlib.Path, manifest: dict) -> None:
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _split_counts(n: int) -> tuple[int, int, int]:
    """80/10/10 by count; every split must be nonempty."""
    n_valid = n // 10
    n_test = n // 10
    n_train = n - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise ConfigError(f"{n} triples cannot fill train/valid/test splits (need >= 10)")
    return n_train, n_valid, n_test


def generate_random_kg(
    out_dir,
    seed: int,
    n_entities: int = 50,
    n_relations: int = 5,
    n_triples: int = 300,
    feat_dim: int = 16,
) -> pathlib.Path:
    """Sample `n_triples` distinct (h, r, t) uniformly from the full cube
    and split 80/10/10; feature files are i.i.d. Gaussian noise."""
    if n_entities < 1 or n_relations < 1 or feat_dim < 1:
        raise ConfigError("n_entities, n_relations and feat_dim must all be >= 1")
    if n_triples < 1:
        raise ConfigError(f"n_triples must be >= 1, got {n_triples}")
    cube = n_entities * n_entities * n_relations
    if n_triples > cube:
        raise ConfigError(f"cannot draw {n_triples} distinct triples from a {cube}-triple cube")
    n_train, n_valid, n_test = _split_counts(n_triples)

    rng = np.random.default_rng(seed)
    flat = rng.choice(cube, size=n_triples, replace=False)
    heads = flat // (n_entities * n_relations)
    rest = flat % (n_entities * n_relations)
    rels = rest // n_entities
    tails = rest % n_entities

    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [
        (_entity_name(h), f"r{r}", _entity_name(t))
        for h, r, t in zip(heads, rels, tails)
    ]
    _write_name_triples(out_dir / "train.tsv", rows[:n_train])
    _write_name_triples(out_dir / "valid.tsv", rows[n_train : n_train + n_valid])
    _write_name_triples(out_dir / "test.tsv", rows[n_train + n_valid :])

    # Feature rows must line up with the entity ids a consumer assigns
    # while parsing the TSVs, so draw one row per realized vocabulary slot.
    _, vocab = load_store(out_dir)
    for name in ("visual", "text"):
        matrix = rng.standard_normal((len(vocab.entity_names), feat_dim))
        write_feature_file(matrix, out_dir / f"{name}.msef")

    _write_manifest(
        out_dir,
        {
            "kind": "random",
            "seed": seed,
            "n_entities": len(vocab.entity_names),
            "n_relations": len(vocab.relation_names),
            "n_triples": n_triples,
            "feat_dim": feat_dim,
            "splits": {"train": n_train, "valid": n_valid, "test": n_test},
        },
    )
    return out_dir


def generate_complementary_kg(
    out_dir,
    seed: int,
    n_entities: int = 400,
    code_dim: int = 8,
) -> pathlib.Path:
    """Emit a KG whose two relations are solvable from disjoint modalities.

    Every entity gets a random unit-norm visual code c_v(e), which is
    also its visual feature row. Relation ``visual_link`` maps each head
    to its farthest visual code: (e, visual_link, t) holds for
    t = argmin over candidates of <c_v(e), c_v(t)>. Because the
    self-similarity <c, c> = 1 is maximal, the argmin never selects the
    head itself. ``text_link`` is built the same way from independent
    text codes, so the visual file says nothing about it and vice versa.
    Heads are split 80/10/10 per relation, so no valid/test query's
    (head, relation) pair occurs in training.
    """
    if n_entities < 10:
        raise ConfigError(f"complementary KG needs >= 10 entities, got {n_entities}")
    if code_dim < 2:
        raise ConfigError(f"code_dim must be >= 2, got {code_dim}")

    rng = np.random.default_rng(seed)

    def unit_codes() -> np.ndarray:
        raw = rng.standard_normal((n_entities, code_dim))
        return raw / np.linalg.norm(raw, axis=1, keepdims=True)

    codes = {"visual": unit_codes(), "text": unit_codes()}
    targets = {
        modality: np.argmin(code @ code.T, axis=1)
        for modality, code in codes.items()
    }
    relation_names = {"visual": VISUAL_RELATION, "text": TEXT_RELATION}

    splits: dict[str, list[tuple[str, str, str]]] = {"train": [], "valid": [], "test": []}
    split_heads: dict[str, dict[str, np.ndarray]] = {}
    for modality in ("visual", "text"):
        order = rng.permutation(n_entities)
        n_train, n_valid, n_test = _split_counts(n_entities)
        parts = {
            "train": order[:n_train],
            "valid": order[n_train : n_train + n_valid],
            "test": order[n_train + n_valid :],
        }
        split_heads[modality] = parts
        target = targets[modality]
        for split, head_ids in parts.items():
            splits[split].extend(
                (_entity_name(int(h)), relation_names[modality], _entity_name(int(target[h])))
                for h in np.sort(head_ids)
            )

    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, rows in splits.items():
        _write_name_triples(out_dir / f"{split}.tsv", rows)

    _, vocab = load_store(out_dir)
    if len(vocab.entity_names) != n_entities:
        raise ConfigError(
            f"construction covered {len(vocab.entity_names)} of {n_entities} entities"
        )

    def feature_matrix(modality: str) -> np.ndarray:
        rows = np.empty((n_entities, code_dim))
        code = codes[modality]
        for name_id, name in enumerate(vocab.entity_names):
            rows[name_id] = code[int(name[1:])]
        return rows

    for modality in ("visual", "text"):
        write_feature_file(feature_matrix(modality), out_dir / f"{modality}.msef")

    _write_manifest(
        out_dir,
        {
            "kind": "complementary",
            "seed": seed,
            "n_entities": n_entities,
            "n_relations": 2,
            "code_dim": code_dim,
            "rule": "farthest-code",
            "planted": {
                modality: {
                    "relation": relation_names[modality],
                    "mapping": {
                        _entity_name(h): _entity_name(int(targets[modality][h]))
                        for h in range(n_entities)
                    },
                    "test_heads": [_entity_name(int(h)) for h in sorted(split_heads[modality]["test"])],
                }
                for modality in ("visual", "text")
            },
        },
    )
    return out_dir
