"""Synthetic ECPE corpora with learnable structure, for tests and smoke runs.

Each emotion word fixes the offset from its clause to the cause clause, and
cause clauses carry a cause word, so pairs are recoverable from text plus
relative position.

    python -m ecpe.synthetic --out fixture/ --docs 50 --seed 0
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .corpus import EMBED_DIM, Document, write_corpus

EMOTION_OFFSETS = {
    "furious": 0, "ashamed": 0,
    "surprised": 1, "delighted": 1,
    "grieved": -1, "relieved": -1,
    "anxious": 2,
}
CAUSE_WORDS = ["party", "letter", "accident", "promotion", "argument", "storm", "gift", "news"]
FILLER = ("she he they the a an house door street slowly quietly looked said went after before "
          "day night again then it was were had his her their long old new small room window "
          "road morning evening friend mother father brother sister work").split()
OOV_WORDS = ("xylograph", "quillet")


def _clause(rng, extra: list[str]) -> str:
    words = list(rng.choice(FILLER, size=int(rng.integers(3, 8))))
    if rng.random() < 0.1:
        words.append(OOV_WORDS[int(rng.integers(len(OOV_WORDS)))])
    for w in extra:
        words.insert(int(rng.integers(len(words) + 1)), w)
    return " ".join(words)


def synthetic_document(doc_id: str, rng: np.random.Generator, min_clauses: int = 2,
                       max_clauses: int = 6, max_pairs: int = 2) -> Document:
    d = int(rng.integers(min_clauses, max_clauses + 1))
    want = int(rng.integers(1, max_pairs + 1))
    emotions = list(EMOTION_OFFSETS)
    pairs, words = [], {k: [] for k in range(d)}
    for _ in range(50):
        if len(pairs) == want:
            break
        i = int(rng.integers(d))
        word = emotions[int(rng.integers(len(emotions)))]
        j = i + EMOTION_OFFSETS[word]
        if not 0 <= j < d or any(i == a or j == b for a, b in pairs):
            continue
        pairs.append((i, j))
        words[i].append(word)
        words[j].append(CAUSE_WORDS[int(rng.integers(len(CAUSE_WORDS)))])
    return Document.from_texts(doc_id, [_clause(rng, words[k]) for k in range(d)], pairs)


def synthetic_corpus(n_docs: int = 50, seed: int = 0, **kw) -> list[Document]:
    rng = np.random.default_rng(seed)
    return [synthetic_document(f"syn{k:04d}", rng, **kw) for k in range(n_docs)]


def vocabulary_words() -> list[str]:
    return sorted(set(FILLER) | set(EMOTION_OFFSETS) | set(CAUSE_WORDS))


def write_embeddings(path: str | Path, seed: int = 0, dim: int = EMBED_DIM) -> None:
    """Random vectors for every synthetic word except the OOV words."""
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as f:
        for w in vocabulary_words():
            vec = rng.normal(0.0, 0.3, size=dim)
            f.write(w + " " + " ".join(f"{x:.6f}" for x in vec) + "\n")


def write_fixture(out_dir: str | Path, n_docs: int = 50, seed: int = 0, **kw) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, emb = out / "corpus.jsonl", out / "embeddings.txt"
    write_corpus(synthetic_corpus(n_docs, seed, **kw), corpus)
    write_embeddings(emb, seed)
    return corpus, emb


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="write a synthetic corpus and embedding file")
    ap.add_argument("--out", required=True)
    ap.add_argument("--docs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    corpus, emb = write_fixture(args.out, args.docs, args.seed)
    print(corpus)
    print(emb)


if __name__ == "__main__":
    main()
