"""Knowledge graph core: vocabularies, triple ingestion, reciprocal
augmentation and the filtered-candidate index.

Triple files are UTF-8, tab-separated ``head<TAB>relation<TAB>tail``, one
triple per line. Ids are dense, 0-based, assigned in first-seen order, so
identical input files always produce identical vocabularies.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import ParseError, StateError, VocabularyError


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Vocabulary:
    """Bidirectional name <-> dense integer id maps for entities and
    relations. Relation ids cover base relations only; reciprocal ids
    (r + n_relations) are materialized by :func:`augment_reciprocals` and
    never stored here.
    """

    def __init__(self) -> None:
        self.entity_names: list[str] = []
        self.relation_names: list[str] = []
        self.entity_index: dict[str, int] = {}
        self.relation_index: dict[str, int] = {}

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def add_entity(self, name: str) -> int:
        idx = self.entity_index.get(name)
        if idx is None:
            idx = len(self.entity_names)
            self.entity_names.append(name)
            self.entity_index[name] = idx
        return idx

    def add_relation(self, name: str) -> int:
        idx = self.relation_index.get(name)
        if idx is None:
            idx = len(self.relation_names)
            self.relation_names.append(name)
            self.relation_index[name] = idx
        return idx

    def entity_id(self, name: str) -> int:
        try:
            return self.entity_index[name]
        except KeyError:
            raise VocabularyError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_index[name]
        except KeyError:
            raise VocabularyError(f"unknown relation {name!r}") from None

    def relation_label(self, relation: int) -> str:
        """Name for a possibly-reciprocal relation id."""
        if relation < self.n_relations:
            return self.relation_names[relation]
        return self.relation_names[relation - self.n_relations] + "_inv"

    def write(self, entities_path, relations_path) -> None:
        _write_name_id_tsv(entities_path, self.entity_names)
        _write_name_id_tsv(relations_path, self.relation_names)

    @classmethod
    def read(cls, entities_path, relations_path) -> "Vocabulary":
        vocab = cls()
        for name in _read_name_id_tsv(entities_path):
            vocab.add_entity(name)
        for name in _read_name_id_tsv(relations_path):
            vocab.add_relation(name)
        return vocab


def _write_name_id_tsv(path, names: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for idx, name in enumerate(names):
            fh.write(f"{name}\t{idx}\n")


def _read_name_id_tsv(path) -> list[str]:
    names = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError("expected name<TAB>id", path=str(path), line_number=lineno)
            name, idx = fields
            if int(idx) != len(names):
                raise ParseError(f"non-dense id {idx}", path=str(path), line_number=lineno)
            names.append(name)
    return names


@dataclasses.dataclass
class TripleStore:
    """Train/valid/test splits plus the augmentation flag. Duplicate
    triples in the input are preserved; they merely reweight the loss."""

    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    augmented: bool = False

    def splits(self) -> dict[str, list[Triple]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def all_triples(self) -> Iterable[Triple]:
        for split in (self.train, self.valid, self.test):
            yield from split


def parse_triples_file(path, vocab: Vocabulary, mode: str = "extend") -> list[Triple]:
    """Resolve one TSV triple file against `vocab`.

    In ``extend`` mode unseen names get fresh ids; in ``strict`` mode they
    raise. Blank lines are skipped; any other line with != 3 fields is a
    parse error carrying the 1-based line number.
    """
    if mode not in ("extend", "strict"):
        raise ValueError(f"mode must be 'extend' or 'strict', got {mode!r}")
    triples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    f"expected 3 tab-separated fields, got {len(fields)}",
                    path=str(path),
                    line_number=lineno,
                )
            head, relation, tail = fields
            if mode == "extend":
                h = vocab.add_entity(head)
                r = vocab.add_relation(relation)
                t = vocab.add_entity(tail)
            else:
                h = vocab.entity_id(head)
                r = vocab.relation_id(relation)
                t = vocab.entity_id(tail)
            triples.append(Triple(h, r, t))
    return triples


def write_triples_file(path, triples: Iterable[Triple], vocab: Vocabulary) -> None:
    """Inverse of :func:`parse_triples_file` for base (non-reciprocal) ids."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in triples:
            fh.write(f"{vocab.entity_names[h]}\t{vocab.relation_names[r]}\t{vocab.entity_names[t]}\n")


def load_store(data_dir, vocab: Vocabulary | None = None) -> tuple[TripleStore, Vocabulary]:
    """Parse train/valid/test TSVs from a dataset directory. The vocabulary
    covers the union of all three splits so test-only entities stay
    representable."""
    data_dir = Path(data_dir)
    if vocab is None:
        vocab = Vocabulary()
    splits = {}
    for name in ("train", "valid", "test"):
        splits[name] = parse_triples_file(data_dir / f"{name}.tsv", vocab, mode="extend")
    return TripleStore(**splits), vocab


def augment_reciprocals(store: TripleStore, vocab: Vocabulary) -> TripleStore:
    """Add (t, r + n_relations, h) for every (h, r, t) in every split.

    Head prediction then reduces to tail prediction over the reciprocal
    relation block, so relation tables must be sized 2 * n_relations.
    """
    if store.augmented:
        raise StateError("triple store is already reciprocal-augmented")
    n_rel = vocab.n_relations

    def augment(split: list[Triple]) -> list[Triple]:
        return list(split) + [Triple(t, r + n_rel, h) for h, r, t in split]

    return TripleStore(
        train=augment(store.train),
        valid=augment(store.valid),
        test=augment(store.test),
        augmented=True,
    )


class FilterIndex:
    """Map (head, relation) -> set of tails true anywhere in
    train ∪ valid ∪ test. Lookups of absent keys return an empty set."""

    def __init__(self) -> None:
        self._tails: dict[tuple[int, int], set[int]] = {}

    def add(self, head: int, relation: int, tail: int) -> None:
        self._tails.setdefault((head, relation), set()).add(tail)

    def tails(self, head: int, relation: int) -> set[int]:
        return self._tails.get((head, relation), set())

    def __getitem__(self, key: tuple[int, int]) -> set[int]:
        return self.tails(*key)

    def __len__(self) -> int:
        return len(self._tails)


def build_filter_index(store: TripleStore) -> FilterIndex:
    """Index true tails over all splits. Requires an augmented store so
    that head-direction queries are covered via reciprocal relations."""
    if not store.augmented:
        raise StateError("build_filter_index requires a reciprocal-augmented store")
    index = FilterIndex()
    for h, r, t in store.all_triples():
        index.add(h, r, t)
    return index
