"""Choosing an existing author embedding for an unseen author, and enrolling them.

For each training author (in enrollment order) the model generates every
adaptation document conditioned on that author's token; the candidate with
the highest mean ROUGE-2 F1 against the new author's references wins. A
candidate replaces the incumbent only on a strictly greater score, so ties
go to the earlier-enrolled author.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .metrics import rouge2_f1
from .model import Seq2SeqModel, generate_batch
from .seeding import make_rng
from .text import AuthorRegistry, PrefixMode, Vocab, register_author

Doc = tuple[Sequence[int], Sequence[int]]
Generator = Callable[[Seq2SeqModel, list, int], list]
Metric = Callable[[Sequence[int], Sequence[int]], float]

NOT_APPLICABLE = "the adaptation phase is not applicable to BASE models"


@dataclass
class AuthorSelection:
    new_author: str
    section: str
    chosen_author: str
    chosen_score: float
    per_candidate_scores: dict[str, float]
    num_docs_used: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AuthorSelection":
        return cls(**d)


@dataclass
class StabilityTable:
    """Per (section, mode): how many new authors change selection at each doc count."""

    doc_counts: list[int]
    full_count: int
    rows: dict[tuple[str, str], dict[int, int]] = field(default_factory=dict)
    selections: dict[tuple[str, str], dict[str, dict[int, str]]] = field(default_factory=dict)
    doc_orders: dict[str, list[int]] = field(default_factory=dict)
    n_new_authors: int = 0

    def merge(self, other: "StabilityTable") -> None:
        if other.doc_counts != self.doc_counts or other.full_count != self.full_count:
            raise ValueError("stability tables use different doc-count ladders")
        self.rows.update(other.rows)
        self.selections.update(other.selections)
        self.doc_orders.update(other.doc_orders)
        self.n_new_authors = max(self.n_new_authors, other.n_new_authors)

    def to_dict(self) -> dict:
        return {
            "doc_counts": self.doc_counts,
            "full_count": self.full_count,
            "n_new_authors": self.n_new_authors,
            "rows": [{"section": s, "mode": m, "changed": {str(c): n for c, n in row.items()}}
                     for (s, m), row in self.rows.items()],
            "selections": [{"section": s, "mode": m,
                            "by_author": {a: {str(c): x for c, x in sel.items()} for a, sel in by.items()}}
                           for (s, m), by in self.selections.items()],
            "doc_orders": self.doc_orders,
        }


def _default_generator(model, srcs, tok):
    return generate_batch(model, srcs, tok)


def _require_adaptable(model: Seq2SeqModel) -> None:
    if model.mode is PrefixMode.BASE:
        raise ValueError(NOT_APPLICABLE)


def doc_scores(model: Seq2SeqModel, candidate_tok: int, docs: Sequence[Doc],
               generator: Generator | None = None, metric: Metric = rouge2_f1) -> list[float]:
    """Metric of each document's hypothesis generated with ``candidate_tok``."""
    if not docs:
        raise ValueError("no documents")
    generator = generator or _default_generator
    hyps = generator(model, [list(src) for src, _ in docs], candidate_tok)
    return [float(metric(h, ref)) for h, (_, ref) in zip(hyps, docs)]


def score_candidate(model: Seq2SeqModel, candidate_tok: int, docs: Sequence[Doc], section: str | None = None,
                    generator: Generator | None = None, metric: Metric = rouge2_f1) -> float:
    scores = doc_scores(model, candidate_tok, docs, generator, metric)
    return sum(scores) / len(scores)


def candidate_doc_scores(model: Seq2SeqModel, registry: AuthorRegistry, docs: Sequence[Doc],
                         generator: Generator | None = None, metric: Metric = rouge2_f1,
                         workers: int = 1) -> dict[str, list[float]]:
    """Per-document scores for every registered candidate, keyed in enrollment order."""
    if not docs:
        raise ValueError("no documents")
    candidates = list(registry.enrollment_order)

    def run(name):
        return doc_scores(model, registry.token(name), docs, generator, metric)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, candidates))
    else:
        results = [run(c) for c in candidates]
    return dict(zip(candidates, results))


def select_best(mean_scores: Mapping[str, float], order: Sequence[str]) -> tuple[str, float]:
    """Argmax in ``order``; a later candidate must be strictly better to win."""
    if not order:
        raise ValueError("no candidates")
    best, best_score = None, None
    for name in order:
        s = mean_scores[name]
        if best is None or s > best_score:
            best, best_score = name, s
    return best, best_score


def selection_from_scores(new_author: str, section: str, per_doc: Mapping[str, Sequence[float]],
                          order: Sequence[str], n_docs: int | None = None) -> AuthorSelection:
    """Selection using only the first ``n_docs`` documents of each candidate's score list."""
    means = {}
    for name in order:
        scores = list(per_doc[name])[:n_docs] if n_docs is not None else list(per_doc[name])
        if not scores:
            raise ValueError("no documents")
        means[name] = sum(scores) / len(scores)
    chosen, score = select_best(means, order)
    used = n_docs if n_docs is not None else len(next(iter(per_doc.values())))
    return AuthorSelection(new_author, section, chosen, score, means, used)


def adapt_author(model: Seq2SeqModel, registry: AuthorRegistry, docs: Sequence[Doc], section: str,
                 new_author: str = "", generator: Generator | None = None, metric: Metric = rouge2_f1,
                 workers: int = 1) -> AuthorSelection:
    """Pick the training author whose embedding best fits ``docs`` (ROUGE-2 F1 by default)."""
    _require_adaptable(model)
    if len(registry) == 0:
        raise ValueError("empty author registry")
    per_doc = candidate_doc_scores(model, registry, docs, generator, metric, workers)
    return selection_from_scores(new_author, section, per_doc, registry.enrollment_order)


def oracle_select(model: Seq2SeqModel, registry: AuthorRegistry, test_docs: Sequence[Doc], section: str,
                  new_author: str = "", generator: Generator | None = None, metric: Metric = rouge2_f1,
                  workers: int = 1) -> AuthorSelection:
    """Same procedure as :func:`adapt_author`, scored on the held-out test documents."""
    return adapt_author(model, registry, test_docs, section, new_author, generator, metric, workers)


def doc_order(n: int, seed: int, author: str) -> list[int]:
    return [int(i) for i in make_rng(seed, "stability", author).permutation(n)]


def stability_analysis(model: Seq2SeqModel, registry: AuthorRegistry, new_author_docs: Mapping[str, Sequence[Doc]],
                       section: str, doc_counts: Sequence[int] = (1, 5, 10, 15), full_count: int = 20,
                       seed: int = 0, generator: Generator | None = None, metric: Metric = rouge2_f1,
                       per_doc_cache: Mapping[str, Mapping[str, Sequence[float]]] | None = None,
                       workers: int = 1) -> StabilityTable:
    """Count new authors whose selection at each doc count differs from the full-count selection.

    Documents are visited in a seeded per-author permutation; the count-``c``
    subset is its first ``c`` entries. ``per_doc_cache`` may hold previously
    computed per-candidate document scores (in original document order).
    """
    _require_adaptable(model)
    if any(c < 1 or c > full_count for c in doc_counts):
        raise ValueError("doc counts must lie in [1, full_count]")
    order = registry.enrollment_order
    row = {int(c): 0 for c in doc_counts}
    picks: dict[str, dict[int, str]] = {}
    orders: dict[str, list[int]] = {}
    for author, docs in new_author_docs.items():
        if len(docs) < full_count:
            raise ValueError(f"author {author} has {len(docs)} adaptation documents, needs {full_count}")
        perm = doc_order(len(docs), seed, author)[:full_count]
        orders[author] = perm
        if per_doc_cache is not None and author in per_doc_cache:
            cached = per_doc_cache[author]
            per_doc = {c: [cached[c][i] for i in perm] for c in order}
        else:
            per_doc = candidate_doc_scores(model, registry, [docs[i] for i in perm], generator, metric, workers)
        full = selection_from_scores(author, section, per_doc, order, full_count).chosen_author
        picks[author] = {full_count: full}
        for c in doc_counts:
            chosen = selection_from_scores(author, section, per_doc, order, c).chosen_author
            picks[author][int(c)] = chosen
            row[int(c)] += int(chosen != full)
    key = (section, model.mode.value)
    return StabilityTable(list(map(int, doc_counts)), full_count, {key: row}, {key: picks}, orders,
                          len(new_author_docs))


def enroll_author(model: Seq2SeqModel, vocab: Vocab, registry: AuthorRegistry, new_name: str,
                  selection: AuthorSelection) -> int:
    """Register ``new_name`` with an embedding row copied from the selected donor."""
    if vocab is not model.vocab:
        raise ValueError("vocabulary must be the model's own vocabulary")
    if new_name in registry:
        raise ValueError(f"author exists: {new_name}")
    if selection.chosen_author not in registry:
        raise ValueError(f"unregistered donor: {selection.chosen_author}")
    if model["embed"].shape[0] != vocab.size:
        raise ValueError("embedding table and vocabulary are out of sync")
    donor_row = model["embed"].data[registry.token(selection.chosen_author)].copy()
    tok = register_author(vocab, registry, new_name)
    model.add_embedding_row(donor_row)
    return tok


def mean(xs: Sequence[float]) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0
