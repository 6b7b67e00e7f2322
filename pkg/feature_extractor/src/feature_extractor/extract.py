"""Turn raw entity descriptions and images into binary feature files.

Both extractors read the engine's entity vocabulary (``entities.tsv``,
``name<TAB>id`` with dense ids) and emit one MSEF matrix whose row *i*
is the embedding of entity id *i*:

* text — each entity's description is encoded by a pretrained
  transformer and mean-pooled over the final-layer token states.
* images — each entity's image (the lexicographically first file when
  several share its name) is encoded by a pretrained vision transformer
  and summarized by the class-token state.

Entities without a description/image get a zero row and are listed in a
``missing.json`` next to the output; a ``<output>.manifest.json`` pins
the encoder identifier so runs are attributable and reproducible.
"""

from __future__ import annotations

import json
import pathlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from mose.store import write_feature_file

DEFAULT_TEXT_MODEL = "bert-base-uncased"
DEFAULT_IMAGE_MODEL = "google/vit-base-patch16-224-in21k"
IMAGE_SUFFIXES = {".bmp", ".gif", ".jpeg", ".jpg", ".png", ".webp"}


class ExtractionError(RuntimeError):
    """Unusable input or unavailable encoder."""


@dataclass(frozen=True)
class ExtractionReport:
    out_path: pathlib.Path
    rows: int
    cols: int
    missing: tuple[str, ...]


def _import_torch():
    try:
        import torch
    except ImportError as exc:  # pragma: no cover - environment-dependent
        raise ExtractionError(
            "feature extraction needs the `torch` and `transformers` packages; "
            "install them with: pip install torch transformers"
        ) from exc
    return torch


def _load_pretrained(loader, model_id: str):
    try:
        return loader(model_id)
    except ImportError as exc:  # pragma: no cover - environment-dependent
        raise ExtractionError(
            "feature extraction needs the `transformers` package; "
            "install it with: pip install transformers"
        ) from exc
    except (OSError, ValueError) as exc:
        raise ExtractionError(
            f"could not load encoder {model_id!r}: {exc}. Pass --model with a "
            "downloadable checkpoint identifier or a local checkpoint directory."
        ) from exc


def read_entities(path) -> list[str]:
    """Entity names ordered by id from a `name<TAB>id` vocabulary file."""
    path = pathlib.Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ExtractionError(f"cannot read entity vocabulary {path}: {exc}") from exc
    pairs: list[tuple[int, str]] = []
    for number, line in enumerate(lines, start=1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[1].isdigit():
            raise ExtractionError(f"{path}:{number}: expected `name<TAB>id`, got {line!r}")
        pairs.append((int(fields[1]), fields[0]))
    pairs.sort()
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise ExtractionError(f"{path}: entity ids must be dense 0..{len(pairs) - 1}")
    if not pairs:
        raise ExtractionError(f"{path}: empty entity vocabulary")
    return [name for _, name in pairs]


def read_descriptions(path, known: set[str]) -> dict[str, str]:
    """`entity_name<TAB>description` rows; every name must be in `known`."""
    path = pathlib.Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ExtractionError(f"cannot read descriptions {path}: {exc}") from exc
    out: dict[str, str] = {}
    for number, line in enumerate(lines, start=1):
        if not line:
            continue
        name, sep, description = line.partition("\t")
        if not sep or not name or not description:
            raise ExtractionError(
                f"{path}:{number}: expected `entity_name<TAB>description`, got {line!r}"
            )
        if name not in known:
            raise ExtractionError(f"{path}:{number}: unknown entity {name!r}")
        if name in out:
            raise ExtractionError(f"{path}:{number}: duplicate description for {name!r}")
        out[name] = description
    return out


def collect_entity_images(image_dir, names: list[str]) -> dict[str, pathlib.Path]:
    """Map entity name -> image path. Files are keyed by their stem (the
    part before the first dot); when several files share an entity's
    name, the lexicographically first filename wins."""
    image_dir = pathlib.Path(image_dir)
    if not image_dir.is_dir():
        raise ExtractionError(f"image directory {image_dir} does not exist")
    wanted = set(names)
    chosen: dict[str, pathlib.Path] = {}
    for file in sorted(image_dir.iterdir(), key=lambda p: p.name):
        if not file.is_file() or file.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        stem = file.name.split(".", 1)[0]
        if stem in wanted and stem not in chosen:
            chosen[stem] = file
    return chosen


def _write_side_files(out_path: pathlib.Path, missing: list[str], manifest: dict) -> None:
    missing_path = out_path.parent / "missing.json"
    data = json.loads(missing_path.read_text()) if missing_path.exists() else {}
    data[out_path.name] = sorted(missing)
    missing_path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    manifest_path = out_path.parent / f"{out_path.name}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def extract_text_features(
    descriptions_path,
    entities_path,
    out_path,
    model: str = DEFAULT_TEXT_MODEL,
    batch_size: int = 16,
) -> ExtractionReport:
    """Encode every described entity and write one MSEF row per entity id;
    entities without a description get a zero row."""
    torch = _import_torch()
    from transformers import AutoModel, AutoTokenizer

    names = read_entities(entities_path)
    descriptions = read_descriptions(descriptions_path, known=set(names))
    tokenizer = _load_pretrained(AutoTokenizer.from_pretrained, model)
    encoder = _load_pretrained(AutoModel.from_pretrained, model).eval()

    matrix = np.zeros((len(names), encoder.config.hidden_size), dtype=np.float32)
    described = [(row, name) for row, name in enumerate(names) if name in descriptions]
    with torch.no_grad():
        for start in range(0, len(described), batch_size):
            chunk = described[start : start + batch_size]
            encoded = tokenizer(
                [descriptions[name] for _, name in chunk],
                padding=True,
                truncation=True,
                return_tensors="pt",
            )
            states = encoder(**encoded).last_hidden_state
            mask = encoded["attention_mask"].unsqueeze(-1).to(states.dtype)
            pooled = (states * mask).sum(dim=1) / mask.sum(dim=1)
            for (row, _), vector in zip(chunk, pooled):
                matrix[row] = vector.numpy()

    out_path = pathlib.Path(out_path)
    write_feature_file(matrix, out_path)
    missing = [name for name in names if name not in descriptions]
    _write_side_files(
        out_path,
        missing,
        {
            "kind": "text",
            "model": model,
            "pooling": "mean over final-layer token states",
            "rows": matrix.shape[0],
            "cols": matrix.shape[1],
            "source": str(descriptions_path),
            "missing": len(missing),
        },
    )
    return ExtractionReport(out_path, matrix.shape[0], matrix.shape[1], tuple(missing))


def _load_images(paths: list[pathlib.Path], threads: int):
    """Decode image files (parallel, order-preserving)."""
    from PIL import Image, UnidentifiedImageError

    def load_one(path: pathlib.Path):
        try:
            with Image.open(path) as img:
                return img.convert("RGB")
        except (OSError, UnidentifiedImageError) as exc:
            raise ExtractionError(f"cannot decode image {path}: {exc}") from exc

    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(load_one, paths))
    return [load_one(path) for path in paths]


def extract_image_features(
    image_dir,
    entities_path,
    out_path,
    model: str = DEFAULT_IMAGE_MODEL,
    batch_size: int = 8,
    threads: int = 4,
) -> ExtractionReport:
    """Encode one image per entity (class-token state) into MSEF rows;
    entities without an image get a zero row."""
    torch = _import_torch()
    from transformers import AutoImageProcessor, AutoModel

    names = read_entities(entities_path)
    images = collect_entity_images(image_dir, names)
    processor = _load_pretrained(AutoImageProcessor.from_pretrained, model)
    encoder = _load_pretrained(AutoModel.from_pretrained, model).eval()

    matrix = np.zeros((len(names), encoder.config.hidden_size), dtype=np.float32)
    with_image = [(row, name) for row, name in enumerate(names) if name in images]
    with torch.no_grad():
        for start in range(0, len(with_image), batch_size):
            chunk = with_image[start : start + batch_size]
            loaded = _load_images([images[name] for _, name in chunk], threads)
            pixels = processor(images=loaded, return_tensors="pt")
            class_tokens = encoder(**pixels).last_hidden_state[:, 0]
            for (row, _), vector in zip(chunk, class_tokens):
                matrix[row] = vector.numpy()

    out_path = pathlib.Path(out_path)
    write_feature_file(matrix, out_path)
    missing = [name for name in names if name not in images]
    _write_side_files(
        out_path,
        missing,
        {
            "kind": "image",
            "model": model,
            "pooling": "class-token state",
            "rows": matrix.shape[0],
            "cols": matrix.shape[1],
            "source": str(image_dir),
            "missing": len(missing),
        },
    )
    return ExtractionReport(out_path, matrix.shape[0], matrix.shape[1], tuple(missing))
