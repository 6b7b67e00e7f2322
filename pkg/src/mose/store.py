"""Learnable parameters and their persistence.

Every modality owns a complex entity representation and a complex relation
table. A complex d-vector is stored as 2d reals: real parts in columns
[0, d), imaginary parts in [d, 2d). The structure modality keeps a free
entity table; visual and text entities are linear projections of frozen
feature matrices, so only the projection is trained.

Binary formats (both little-endian):

* MSEF feature file: magic ``MSEF``, u32 version=1, u32 rows, u32 cols,
  then rows*cols float32 values row-major; row i belongs to entity id i.
* MSEC checkpoint: magic ``MSEC``, u32 version=1, u32 header length, JSON
  header (config, shapes, block order, RNG state), then raw float64 blocks
  in exactly the order the header lists. Frozen feature matrices are not
  stored; they are rebound from the run bundle on load.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from typing import Mapping

import numpy as np

from .errors import ConfigError, FormatError, StateError, ValidationError

MODALITIES = ("structure", "visual", "text")
FEATURE_MODALITIES = ("visual", "text")

_MSEF_MAGIC = b"MSEF"
_MSEC_MAGIC = b"MSEC"
_MSEF_VERSION = 1
_MSEC_VERSION = 1


def write_feature_file(matrix: np.ndarray, path) -> None:
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("feature matrix contains non-finite values")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_MSEF_MAGIC)
        fh.write(struct.pack("<III", _MSEF_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def load_feature_file(path) -> np.ndarray:
    """Read an MSEF file into a float64 (rows, cols) matrix."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MSEF_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_MSEF_MAGIC!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise FormatError(f"{path}: truncated header")
        version, rows, cols = struct.unpack("<III", header)
        if version != _MSEF_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = fh.read(rows * cols * 4)
        if len(payload) != rows * cols * 4:
            raise FormatError(f"{path}: truncated payload")
        extra = fh.read(1)
        if extra:
            raise FormatError(f"{path}: trailing bytes after payload")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(matrix)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return matrix


def validate_features(matrix: np.ndarray, n_entities: int, name: str = "features") -> None:
    """Bind-time check: one row per entity id."""
    if matrix.shape[0] != n_entities:
        raise FormatError(
            f"{name}: {matrix.shape[0]} rows do not match vocabulary size {n_entities}"
        )


@dataclasses.dataclass
class ModalityParams:
    """Parameters of one modality. Exactly one of `entity_table` (free,
    structure) and `projection` (visual/text, applied to frozen
    `features`) is set. `relation_table` covers reciprocal ids too, so it
    has 2 * n_relations rows."""

    modality: str
    relation_table: np.ndarray
    entity_table: np.ndarray | None = None
    projection: np.ndarray | None = None
    features: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.relation_table.shape[1] // 2

    def entity_embeddings(self) -> np.ndarray:
        """All entity embeddings as an (n_entities, 2d) matrix.

        This is the single arithmetic path for entity lookups: single-id
        lookups index into this product so batched and per-entity scores
        agree bitwise.
        """
        if self.entity_table is not None:
            return self.entity_table
        if self.projection is None:
            raise StateError(f"{self.modality}: no entity source bound")
        if self.features is None:
            raise StateError(f"{self.modality}: projection present but features unbound")
        return self.features @ self.projection.T

    def entity_embedding(self, entity: int) -> np.ndarray:
        embeddings = self.entity_embeddings()
        if not 0 <= entity < embeddings.shape[0]:
            raise IndexError(f"entity id {entity} out of range [0, {embeddings.shape[0]})")
        return embeddings[entity]


class ModelParams:
    """All modality parameter sets plus the relation-tying flag.

    With `tie_relations` every ModalityParams aliases one shared relation
    ndarray, so the tables stay bitwise identical through training; the
    shared table appears once in :meth:`trainable`, which makes gradient
    accumulation sum the three modality contributions.
    """

    def __init__(self, modalities: Mapping[str, ModalityParams], tie_relations: bool = False):
        self.modalities = dict(modalities)
        self.tie_relations = tie_relations

    def __getitem__(self, modality: str) -> ModalityParams:
        try:
            return self.modalities[modality]
        except KeyError:
            raise StateError(f"modality {modality!r} is not bound") from None

    def __contains__(self, modality: str) -> bool:
        return modality in self.modalities

    @property
    def modality_names(self) -> tuple[str, ...]:
        return tuple(m for m in MODALITIES if m in self.modalities)

    def trainable(self) -> dict[str, np.ndarray]:
        """Canonically named parameter arrays, each exactly once."""
        params: dict[str, np.ndarray] = {}
        for name in self.modality_names:
            mod = self.modalities[name]
            if mod.entity_table is not None:
                params[f"{name}.entities"] = mod.entity_table
            if mod.projection is not None:
                params[f"{name}.projection"] = mod.projection
        if self.tie_relations:
            params["relations"] = self.modalities[self.modality_names[0]].relation_table
        else:
            for name in self.modality_names:
                params[f"{name}.relations"] = self.modalities[name].relation_table
        return params

    def relation_grad_key(self, modality: str) -> str:
        return "relations" if self.tie_relations else f"{modality}.relations"

    def copy(self) -> "ModelParams":
        new_mods: dict[str, ModalityParams] = {}
        shared_rel = None
        for name, mod in self.modalities.items():
            if self.tie_relations:
                if shared_rel is None:
                    shared_rel = mod.relation_table.copy()
                rel = shared_rel
            else:
                rel = mod.relation_table.copy()
            new_mods[name] = ModalityParams(
                modality=name,
                relation_table=rel,
                entity_table=None if mod.entity_table is None else mod.entity_table.copy(),
                projection=None if mod.projection is None else mod.projection.copy(),
                features=mod.features,
            )
        return ModelParams(new_mods, tie_relations=self.tie_relations)

    def assert_finite(self) -> None:
        for name, array in self.trainable().items():
            if not np.all(np.isfinite(array)):
                from .errors import NumericError

                raise NumericError(f"parameter {name} contains non-finite values")


INIT_SCALE = 1e-3


def init_params(
    seed: int,
    dim: int,
    n_entities: int,
    n_relations: int,
    features: Mapping[str, np.ndarray] | None = None,
    modalities: tuple[str, ...] = MODALITIES,
    tie_relations: bool = False,
) -> ModelParams:
    """Sample fresh parameters: i.i.d. Gaussian(0, 1) * 1e-3 from a seeded
    PRNG, in a fixed draw order so identical seeds give bitwise-identical
    tables. `n_relations` counts base relations; tables get 2x rows."""
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    features = dict(features or {})
    active = tuple(m for m in MODALITIES if m in modalities)
    if not active:
        raise ConfigError("at least one modality is required")
    for name in active:
        if name in FEATURE_MODALITIES and name not in features:
            raise ConfigError(f"modality {name!r} requested without a bound feature matrix")

    rng = np.random.default_rng(seed)

    def draw(*shape):
        return rng.standard_normal(shape) * INIT_SCALE

    mods: dict[str, ModalityParams] = {}
    for name in active:
        if name == "structure":
            entity_table, projection, feats = draw(n_entities, 2 * dim), None, None
        else:
            feats = np.asarray(features[name], dtype=np.float64)
            validate_features(feats, n_entities, name=name)
            entity_table, projection = None, draw(2 * dim, feats.shape[1])
        mods[name] = ModalityParams(
            modality=name,
            relation_table=np.empty((2 * n_relations, 2 * dim)),
            entity_table=entity_table,
            projection=projection,
            features=feats,
        )
    if tie_relations:
        shared = draw(2 * n_relations, 2 * dim)
        for name in active:
            mods[name].relation_table = shared
    else:
        for name in active:
            mods[name].relation_table = draw(2 * n_relations, 2 * dim)
    return ModelParams(mods, tie_relations=tie_relations)


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclasses.dataclass
class Checkpoint:
    """Decoded MSEC contents. `sections` carries auxiliary fitted models
    (tag -> {json metadata, named float64 blocks}), e.g. the meta-learner
    under tag ``MI``."""

    config: dict
    n_entities: int
    n_relations: int
    epoch: int
    rng_state: dict
    params: ModelParams
    opt_state: dict[str, np.ndarray]
    sections: dict[str, dict]


def _block_order(params: ModelParams, opt_state: Mapping[str, np.ndarray], sections: Mapping[str, dict]):
    order = []
    for name in sorted(params.trainable()):
        order.append(("param", name))
    for name in sorted(opt_state):
        order.append(("adagrad", name))
    for tag in sorted(sections):
        for name in sorted(sections[tag].get("blocks", {})):
            order.append((f"section:{tag}", name))
    return order


def save_checkpoint(
    path,
    params: ModelParams,
    opt_state: Mapping[str, np.ndarray],
    config: Mapping,
    epoch: int,
    rng_state: dict,
    sections: Mapping[str, dict] | None = None,
) -> None:
    """Write an MSEC file. Saving, loading and saving again produces
    byte-identical files: the header JSON is canonicalized and blocks
    follow the sorted order recorded in it."""
    sections = dict(sections or {})
    trainable = params.trainable()
    order = _block_order(params, opt_state, sections)

    def lookup(kind: str, name: str) -> np.ndarray:
        if kind == "param":
            return trainable[name]
        if kind == "adagrad":
            return np.asarray(opt_state[name])
        tag = kind.split(":", 1)[1]
        return np.asarray(sections[tag]["blocks"][name])

    some = next(iter(params.modalities.values()))
    header = {
        "version": _MSEC_VERSION,
        "config": dict(config),
        "config_hash": config_hash(config),
        "n_entities": next(
            (m.entity_table.shape[0] for m in params.modalities.values() if m.entity_table is not None),
            next((m.features.shape[0] for m in params.modalities.values() if m.features is not None), 0),
        ),
        "n_relations": some.relation_table.shape[0] // 2,
        "dim": some.dim,
        "modalities": list(params.modality_names),
        "tie_relations": params.tie_relations,
        "epoch": epoch,
        "rng_state": rng_state,
        "blocks": [
            {"kind": kind, "name": name, "shape": list(lookup(kind, name).shape)}
            for kind, name in order
        ],
        "sections": {tag: sec.get("meta", {}) for tag, sec in sections.items()},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MSEC_MAGIC)
        fh.write(struct.pack("<II", _MSEC_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for kind, name in order:
            fh.write(np.ascontiguousarray(lookup(kind, name), dtype="<f8").tobytes())


def load_checkpoint(path, features: Mapping[str, np.ndarray] | None = None) -> Checkpoint:
    """Read an MSEC file; `features` rebinds frozen matrices for the
    projection modalities (they are not stored in the checkpoint)."""
    features = dict(features or {})
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MSEC_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_MSEC_MAGIC!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _MSEC_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        blocks: dict[tuple[str, str], np.ndarray] = {}
        for spec in header["blocks"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(count * 8)
            if len(payload) != count * 8:
                raise FormatError(f"{path}: truncated block {spec['name']}")
            blocks[(spec["kind"], spec["name"])] = (
                np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after blocks")

    def param(name: str) -> np.ndarray | None:
        return blocks.get(("param", name))

    mods: dict[str, ModalityParams] = {}
    shared_rel = param("relations")
    for name in header["modalities"]:
        rel = shared_rel if header["tie_relations"] else param(f"{name}.relations")
        if rel is None:
            raise FormatError(f"{path}: missing relation table for {name}")
        feats = features.get(name)
        if name in FEATURE_MODALITIES:
            if feats is None:
                raise StateError(f"{path}: modality {name!r} needs rebound features")
            feats = np.asarray(feats, dtype=np.float64)
            validate_features(feats, header["n_entities"], name=name)
        mods[name] = ModalityParams(
            modality=name,
            relation_table=rel,
            entity_table=param(f"{name}.entities"),
            projection=param(f"{name}.projection"),
            features=feats,
        )
    opt_state = {name: arr for (kind, name), arr in blocks.items() if kind == "adagrad"}
    sections: dict[str, dict] = {}
    for tag, meta in header.get("sections", {}).items():
        sections[tag] = {
            "meta": meta,
            "blocks": {
                name: arr for (kind, name), arr in blocks.items() if kind == f"section:{tag}"
            },
        }
    return Checkpoint(
        config=header["config"],
        n_entities=header["n_entities"],
        n_relations=header["n_relations"],
        epoch=header["epoch"],
        rng_state=header["rng_state"],
        params=ModelParams(mods, tie_relations=header["tie_relations"]),
        opt_state=opt_state,
        sections=sections,
    )
