"""Corpus ingestion, clause labels, pair candidates, vocabulary, embeddings and splits.

Corpus files are UTF-8 JSON-lines, one document per line::

    {"doc_id": "d1", "clauses": ["she was furious", ...], "pairs": [[1, 1], [2, 3]]}

Clause indices are 0-based. ``emotion_categories`` and ``keywords`` may be
present and are ignored.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pairing import CLIP_DISTANCE, relative_bucket

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
EMBED_DIM = 200
INIT_BOUND = 0.10
NUM_SPLITS = 10


class CorpusError(ValueError):
    """Malformed or inconsistent corpus input."""


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class Clause:
    tokens: tuple[str, ...]
    raw_text: str

    @classmethod
    def from_text(cls, text: str) -> "Clause":
        return cls(tuple(tokenize(text)), text)


@dataclass(frozen=True)
class Document:
    doc_id: str
    clauses: tuple[Clause, ...]
    gold_pairs: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        d = len(self.clauses)
        if d < 1:
            raise CorpusError(f"document {self.doc_id!r} has no clauses")
        for k, clause in enumerate(self.clauses):
            if not clause.tokens:
                raise CorpusError(f"document {self.doc_id!r}: clause {k} is empty")
        for i, j in self.gold_pairs:
            if not (0 <= i < d and 0 <= j < d):
                raise CorpusError(
                    f"document {self.doc_id!r}: pair ({i}, {j}) out of range for {d} clauses"
                )

    def __len__(self) -> int:
        return len(self.clauses)

    @classmethod
    def from_texts(cls, doc_id: str, clauses: Iterable[str], pairs: Iterable[Sequence[int]] = ()):
        return cls(
            doc_id,
            tuple(Clause.from_text(c) for c in clauses),
            frozenset((int(i), int(j)) for i, j in pairs),
        )

    def with_pairs(self, pairs: Iterable[tuple[int, int]]) -> "Document":
        return Document(self.doc_id, self.clauses, frozenset(pairs))

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "clauses": [c.raw_text for c in self.clauses],
            "pairs": [list(p) for p in sorted(self.gold_pairs)],
        }


@dataclass(frozen=True)
class ClauseLabels:
    emotion: tuple[int, ...]
    cause: tuple[int, ...]


@dataclass(frozen=True)
class PairCandidate:
    emotion_index: int
    cause_index: int
    bucket: int
    label: int


# --------------------------------------------------------------------------
# parsing


def parse_record(record: dict, where: str = "") -> Document:
    try:
        doc_id = str(record["doc_id"])
        clauses = record["clauses"]
        pairs = record.get("pairs", [])
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{where}missing field {exc}") from None
    if not isinstance(clauses, list) or not all(isinstance(c, str) for c in clauses):
        raise CorpusError(f"{where}'clauses' must be a list of strings")
    if not isinstance(pairs, list) or not all(
        isinstance(p, (list, tuple)) and len(p) == 2 and all(isinstance(x, int) for x in p)
        for p in pairs
    ):
        raise CorpusError(f"{where}'pairs' must be a list of [int, int]")
    pair_set = frozenset((i, j) for i, j in pairs)
    if len(pair_set) != len(pairs):
        logger.warning("%sduplicate pairs in %s collapsed", where, doc_id)
    try:
        return Document.from_texts(doc_id, clauses, pair_set)
    except CorpusError as exc:
        raise CorpusError(f"{where}{exc}") from None


def parse_corpus(path: str | Path) -> list[Document]:
    """Read a JSON-lines corpus file, preserving file order.

    Raises CorpusError naming the line number for malformed records and the
    doc_id for out-of-range pair indices.
    """
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            doc = parse_record(record, where=f"{path}:{lineno}: ")
            if doc.doc_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            docs.append(doc)
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in docs:
            f.write(json.dumps(doc.to_record(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# labels and candidates


def derive_clause_labels(doc: Document) -> ClauseLabels:
    d = len(doc)
    emotion = [0] * d
    cause = [0] * d
    for i, j in doc.gold_pairs:
        emotion[i] = 1
        cause[j] = 1
    return ClauseLabels(tuple(emotion), tuple(cause))


def enumerate_pair_candidates(doc: Document, clip: int = CLIP_DISTANCE) -> list[PairCandidate]:
    """All d*d ordered pairs, row-major (emotion index outer)."""
    d = len(doc)
    return [
        PairCandidate(i, j, relative_bucket(i, j, clip), int((i, j) in doc.gold_pairs))
        for i in range(d)
        for j in range(d)
    ]


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def subset(self, name: str) -> tuple[str, ...]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown subset {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class SplitSet:
    master_seed: int
    splits: tuple[Split, ...]

    def __getitem__(self, k: int) -> Split:
        return self.splits[k]

    def __len__(self) -> int:
        return len(self.splits)

    def to_json(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "splits": [
                {"train": list(s.train), "val": list(s.val), "test": list(s.test)}
                for s in self.splits
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SplitSet":
        return cls(
            int(data["master_seed"]),
            tuple(Split(tuple(s["train"]), tuple(s["val"]), tuple(s["test"])) for s in data["splits"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SplitSet":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = (8 * n) // 10
    n_val = n // 10
    return n_train, n_val, n - n_train - n_val


def derive_seeds(master_seed: int, n: int = NUM_SPLITS) -> list[int]:
    seeds = [int(s) for s in np.random.SeedSequence(master_seed).generate_state(n)]
    if len(set(seeds)) != n:
        raise RuntimeError("derived split seeds collided")
    return seeds


def make_splits(corpus: Sequence[Document], master_seed: int, n_splits: int = NUM_SPLITS) -> SplitSet:
    """Random 80/10/10 partitions, one uniform permutation per derived seed."""
    n = len(corpus)
    if n < 10:
        raise CorpusError(f"need at least 10 documents to split, got {n}")
    ids = [doc.doc_id for doc in corpus]
    n_train, n_val, _ = split_sizes(n)
    splits = []
    for seed in derive_seeds(master_seed, n_splits):
        order = np.random.default_rng(seed).permutation(n)
        perm = [ids[k] for k in order]
        splits.append(
            Split(
                tuple(perm[:n_train]),
                tuple(perm[n_train : n_train + n_val]),
                tuple(perm[n_train + n_val :]),
            )
        )
    return SplitSet(int(master_seed), tuple(splits))


def select(corpus: Sequence[Document], ids: Iterable[str]) -> list[Document]:
    by_id = {doc.doc_id: doc for doc in corpus}
    try:
        return [by_id[i] for i in ids]
    except KeyError as exc:
        raise CorpusError(f"split refers to unknown doc_id {exc}") from None


# --------------------------------------------------------------------------
# vocabulary and embeddings


@dataclass
class Vocabulary:
    tokens: list[str]
    min_count: int = 1
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with PAD and UNK")
        self.index = {t: k for k, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def to_json(self) -> dict:
        return {"min_count": self.min_count, "tokens": self.tokens}

    @classmethod
    def from_json(cls, data: dict) -> "Vocabulary":
        return cls(list(data["tokens"]), int(data["min_count"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocabulary(train_docs: Iterable[Document], min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(t for doc in train_docs for clause in doc.clauses for t in clause.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in (PAD, UNK)),
                  key=lambda t: (-counts[t], t))
    return Vocabulary([PAD, UNK, *kept], min_count)


def load_embeddings(path: str | Path, vocab: Vocabulary, seed: int, dim: int = EMBED_DIM) -> np.ndarray:
    """Build a |V| x dim matrix from a whitespace-separated text vector file.

    Rows for tokens found in the file are copied verbatim; every other row
    (UNK included) is drawn from U(-0.10, 0.10) with ``seed``; the PAD row is zero.
    """
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-INIT_BOUND, INIT_BOUND, size=(len(vocab), dim))
    found = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise CorpusError(
                    f"{path}:{lineno}: token {token!r} has {len(values)} values, expected {dim}"
                )
            k = vocab.index.get(token)
            if k is None or k == PAD_ID:
                continue
            try:
                matrix[k] = [float(v) for v in values]
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: token {token!r} has a non-numeric value") from None
            found += 1
    matrix[PAD_ID] = 0.0
    logger.info("embeddings: %d/%d vocabulary rows found in %s", found, len(vocab) - 1, path)
    return matrix


def filter_embedding_file(src: str | Path, dst: str | Path, keep: set[str], dim: int = EMBED_DIM) -> int:
    """Copy the lines of ``src`` whose token is in ``keep``; validates every line."""
    n = 0
    with open(src, encoding="utf-8") as fin, open(dst, "w", encoding="utf-8") as fout:
        for lineno, line in enumerate(fin, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) - 1 != dim:
                raise CorpusError(
                    f"{src}:{lineno}: token {parts[0]!r} has {len(parts) - 1} values, expected {dim}"
                )
            if parts[0] in keep:
                fout.write(" ".join(parts) + "\n")
                n += 1
    return n
