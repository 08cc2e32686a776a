"""Synthetic corpora with planted relevance structure.

Two generators back the experiment suite:

* `overfit_corpus` — a tiny collection where positives share dispersed
  terms whose embeddings align with the query terms.  Any working
  training loop should drive the pairwise loss to zero on it.

* `bridged_corpus` — relevant documents place their two query terms far
  apart but *bridged*: a shared term co-occurs with each query term, so
  the two mentions are linked through the co-occurrence graph.  Each
  non-relevant document is a "twin" of a relevant one with the exact
  same token multiset and the bridge relocated away from the query
  terms.  Term statistics, document length, and first-stage scores are
  therefore identical within a pool; only word order — hence graph
  structure — separates relevant from non-relevant.

  Three query classes control which rankers can exploit the bridge:
  `adjacent` (bridge right next to the query terms: visible to a
  prev/next chain), `window` (bridge three tokens away: needs wide
  co-occurrence windows), and `twohop` (the bridging term itself has no
  query-aligned embedding, so its evidence only appears after signal
  bounces off it — two propagation steps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import seed_stream

FILLER_COUNT = 150
_MIN_TWIN_GAP = 7  # keep relocated bridges out of every window with a query term
_MIN_BRIDGE_SPREAD = 5  # and their chain neighborhoods disjoint from each other


@dataclass
class SyntheticData:
    """A generated collection plus everything needed to run on it."""

    docs: list[tuple[str, str]]  # (doc_id, text)
    queries: list[tuple[str, str]]  # (query_id, title)
    qrels: list[tuple[str, str, int]]  # (query_id, doc_id, grade)
    embeddings: dict[str, np.ndarray]
    dim: int

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Materialize corpus/queries/qrels/embeddings files; returns paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": out / "corpus.jsonl",
            "queries": out / "queries.tsv",
            "qrels": out / "qrels.txt",
            "embeddings": out / "embeddings.txt",
        }
        with open(paths["corpus"], "w", encoding="utf-8") as fh:
            for doc_id, text in sorted(self.docs):
                fh.write(json.dumps({"doc_id": doc_id, "text": text}) + "\n")
        with open(paths["queries"], "w", encoding="utf-8") as fh:
            for qid, title in self.queries:
                fh.write(f"{qid}\t{title}\n")
        with open(paths["qrels"], "w", encoding="utf-8") as fh:
            for qid, doc_id, grade in self.qrels:
                fh.write(f"{qid} 0 {doc_id} {grade}\n")
        with open(paths["embeddings"], "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.embeddings)} {self.dim}\n")
            for token in sorted(self.embeddings):
                values = " ".join(f"{v:.6f}" for v in self.embeddings[token])
                fh.write(f"{token} {values}\n")
        return paths


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _filler_table(rng: np.random.Generator, dim: int) -> dict[str, np.ndarray]:
    """Filler terms: random directions orthogonal to the two signal axes."""
    table = {}
    for i in range(FILLER_COUNT):
        v = np.zeros(dim)
        v[2:] = rng.normal(size=dim - 2)
        table[f"w{i:03d}"] = _unit(v)
    return table


def _shuffled_ids(rng: np.random.Generator, count: int, prefix: str) -> list[str]:
    """Opaque ids assigned in random order, so lexicographic tie-breaks
    carry no information about document class."""
    order = rng.permutation(count)
    return [f"{prefix}{int(k):03d}" for k in order]


def overfit_corpus(
    num_queries: int = 8, docs_per_query: int = 5, seed: int = 0, dim: int = 8
) -> SyntheticData:
    """Small separable collection: 2 positives per query packed with
    dispersed query-aligned terms, negatives all filler."""
    rng = seed_stream(seed, "datagen.overfit")
    emb = _filler_table(rng, dim)
    fillers = sorted(k for k in emb if k.startswith("w"))

    e0 = np.zeros(dim)
    e0[0] = 1.0
    e1 = np.zeros(dim)
    e1[1] = 1.0
    mix = _unit(e0 + e1)

    doc_ids = _shuffled_ids(rng, num_queries * docs_per_query, "o")
    next_id = iter(doc_ids)

    docs, queries, qrels = [], [], []
    num_pos = 2
    for qi in range(num_queries):
        qt_a, qt_b = f"q{qi:02d}a", f"q{qi:02d}b"
        emb[qt_a] = e0
        emb[qt_b] = e1
        shared = [f"q{qi:02d}s{j}" for j in range(3)]
        for term, vec in zip(shared, (e0, e1, mix)):
            emb[term] = vec
        queries.append((f"q{qi:02d}", f"{qt_a} {qt_b}"))

        for d in range(docs_per_query):
            doc_id = next(next_id)
            pad = list(rng.choice(fillers, size=14, replace=False))
            if d < num_pos:
                # aligned terms dispersed between fillers, twice each
                body = [qt_a, pad[0], shared[0], pad[1], shared[1], pad[2],
                        shared[2], pad[3], qt_b, pad[4], shared[0], pad[5],
                        shared[1], pad[6], shared[2], pad[7], pad[8]]
                grade = 1
            else:
                body = [qt_a] + pad[:7] + [qt_b] + pad[7:]
                grade = 0
            docs.append((doc_id, " ".join(body)))
            qrels.append((f"q{qi:02d}", doc_id, grade))

    return SyntheticData(docs, queries, qrels, emb, dim)


# filler tokens between a query term and its bridge: distance 1 is seen
# by a prev/next chain, distance 5 only by wide co-occurrence windows
_CLASS_GAPS = {"adjacent": 0, "window": 4, "twohop": 0}


def _relevant_tokens(
    rng: np.random.Generator, qt_a: str, qt_b: str, bridge: str,
    gap: int, fillers: list[str],
) -> list[str]:
    """One relevant document: the bridge co-occurs with each query term,
    which sit far apart across a filler span."""
    pool = iter(rng.choice(fillers, size=40, replace=False))

    def take(k):
        return [next(pool) for _ in range(k)]

    return (
        take(3)
        + [qt_a] + take(gap) + [bridge]
        + take(20)
        + [bridge] + take(gap) + [qt_b]
        + take(3)
    )


def _twin_tokens(
    rng: np.random.Generator, relevant: list[str], special: set[str]
) -> list[str]:
    """Same multiset as `relevant`, bridges exiled from every query-term
    window; filler order reshuffled."""
    qt_positions = [i for i, tok in enumerate(relevant) if tok in special]
    bridge_tokens = [t for t in relevant if t not in special and t.startswith("q")]
    filler_tokens = [t for t in relevant if t.startswith("w")]
    qt_a_pos = min(qt_positions)
    qt_b_pos = max(qt_positions)

    n = len(relevant)
    slots = [None] * n
    slots[qt_a_pos] = relevant[qt_a_pos]
    slots[qt_b_pos] = relevant[qt_b_pos]

    safe = [
        i for i in range(n)
        if slots[i] is None
        and abs(i - qt_a_pos) >= _MIN_TWIN_GAP
        and abs(i - qt_b_pos) >= _MIN_TWIN_GAP
    ]
    spots: list[int] = []
    for i in rng.permutation(len(safe)):
        pos = safe[int(i)]
        if all(abs(pos - s) >= _MIN_BRIDGE_SPREAD for s in spots):
            spots.append(pos)
        if len(spots) == len(bridge_tokens):
            break
    if len(spots) < len(bridge_tokens):
        raise RuntimeError("document too short to exile its bridge terms")
    for pos, tok in zip(sorted(spots), bridge_tokens):
        slots[pos] = tok

    rest = iter(np.array(filler_tokens)[rng.permutation(len(filler_tokens))])
    for i in range(n):
        if slots[i] is None:
            slots[i] = str(next(rest))
    return slots


def bridged_corpus(
    num_queries: int = 40,
    relevant_per_query: int = 2,
    twins_per_query: int = 6,
    seed: int = 0,
    dim: int = 8,
) -> SyntheticData:
    """Collection where only word order separates relevant from not."""
    rng = seed_stream(seed, "datagen.bridged")
    emb = _filler_table(rng, dim)
    fillers = sorted(k for k in emb if k.startswith("w"))

    e0 = np.zeros(dim)
    e0[0] = 1.0
    e1 = np.zeros(dim)
    e1[1] = 1.0
    mix = _unit(e0 + e1)

    class_names = (
        ["adjacent"] * (num_queries * 3 // 10)
        + ["twohop"] * (num_queries * 3 // 10)
    )
    class_names += ["window"] * (num_queries - len(class_names))
    class_names = [class_names[int(i)] for i in rng.permutation(num_queries)]

    per_query = relevant_per_query + twins_per_query
    doc_ids = _shuffled_ids(rng, num_queries * per_query, "s")
    next_id = iter(doc_ids)

    docs, queries, qrels = [], [], []
    for qi in range(num_queries):
        cls = class_names[qi]
        qt_a, qt_b = f"q{qi:02d}a", f"q{qi:02d}b"
        bridge = f"q{qi:02d}x"
        emb[qt_a] = e0
        emb[qt_b] = e1
        if cls == "twohop":
            # the bridge carries no query-aligned signal of its own
            hub = np.zeros(dim)
            hub[2:] = rng.normal(size=dim - 2)
            emb[bridge] = _unit(hub)
        else:
            emb[bridge] = mix
        queries.append((f"q{qi:02d}", f"{qt_a} {qt_b}"))

        special = {qt_a, qt_b}
        relevant_docs = [
            _relevant_tokens(rng, qt_a, qt_b, bridge, _CLASS_GAPS[cls], fillers)
            for _ in range(relevant_per_query)
        ]
        for tokens in relevant_docs:
            doc_id = next(next_id)
            docs.append((doc_id, " ".join(tokens)))
            qrels.append((f"q{qi:02d}", doc_id, 1))
        for t in range(twins_per_query):
            parent = relevant_docs[t % relevant_per_query]
            tokens = _twin_tokens(rng, parent, special)
            doc_id = next(next_id)
            docs.append((doc_id, " ".join(tokens)))
            qrels.append((f"q{qi:02d}", doc_id, 0))

    return SyntheticData(docs, queries, qrels, emb, dim)
