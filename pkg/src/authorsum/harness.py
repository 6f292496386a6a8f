"""End-to-end experiment: synthetic data, 12 section models, author adaptation, testing, projection.

Each phase reads only files written by earlier phases, all under one output
directory::

    data/      split JSONL files and splits.json
    ckpt/      one manifest + blob per (section, mode), plus vocab.json
    reports/   CSV/text reports, selections, stability table, config.json
    plots/     SVG projections of author embeddings
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import adaptation as adp
from .analysis import ProjectionConfig, pca_2d, projection_csv, projection_svg, silhouette_score, tsne_2d
from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .corpus import SECTIONS, DatasetSplits, EncounterRecord, SplitCounts, load_splits, make_population, make_splits, save_splits
from .metrics import rouge2_f1, rouge_triple
from . import autograd as ag
from .model import ModelConfig, Seq2SeqModel, batch_loss, generate_batch, init_model, prepare_pair, train_model
from .reports import (
    ReportRow, atomic_write_text, read_report, relative_improvement, render_csv, render_table, write_report,
)
from .seeding import derive_seed
from .text import AuthorRegistry, PrefixMode, Vocab, build_vocab, encode_text, register_author, tokenize

ALL_MODES = [m.value for m in PrefixMode]


@dataclass
class ExperimentConfig:
    out_dir: str = "runs/default"
    seed: int = 42
    style_divergence: float = 0.7
    noise_rate: float = 0.1
    paper_shaped: bool = False
    counts: dict = field(default_factory=dict)
    sections: list[str] = field(default_factory=lambda: list(SECTIONS))
    modes: list[str] = field(default_factory=lambda: list(ALL_MODES))
    model: dict = field(default_factory=dict)
    section_model: dict = field(default_factory=dict)
    epochs: int = 40
    batch_size: int = 16
    lr: float = 2e-3
    warmup: int = 100
    min_count: int = 1
    doc_counts: list[int] = field(default_factory=lambda: [1, 5, 10, 15])
    full_count: int = 20
    projection: dict = field(default_factory=lambda: {"perplexity": 5.0, "iterations": 1000,
                                                      "learning_rate": 100.0})
    projection_mode: str = "DEC"
    workers: int = 1

    # fields that change where or how fast, but not what, gets computed
    _NON_SEMANTIC = ("out_dir", "workers")

    def __post_init__(self):
        self.sections = list(self.sections)
        self.modes = [PrefixMode(m).value for m in self.modes]

    def validate(self) -> None:
        if not self.sections or not self.modes:
            raise ValueError("at least one section and one mode required")
        bad = [s for s in self.sections if s not in SECTIONS]
        if bad:
            raise ValueError(f"unknown sections {bad}")
        pairs = [(s, m) for s in self.sections for m in self.modes]
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate (section, mode) pairs")
        if not 0.0 <= self.style_divergence <= 1.0:
            raise ValueError("style_divergence must lie in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if any(c < 1 or c > self.full_count for c in self.doc_counts):
            raise ValueError("doc counts must lie in [1, full_count]")
        out = Path(self.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        try:
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ValueError(f"output directory not writable: {out}: {exc}") from None

    def split_counts(self) -> SplitCounts:
        base = SplitCounts.paper_shaped() if self.paper_shaped else SplitCounts()
        known = {f.name for f in fields(SplitCounts)}
        unknown = set(self.counts) - known
        if unknown:
            raise ValueError(f"unknown count fields {sorted(unknown)}")
        return SplitCounts(**{**asdict(base), **self.counts})

    def model_config(self, section: str, mode: str, vocab_size: int) -> ModelConfig:
        opts = {**self.model, **self.section_model.get(section, {})}
        return ModelConfig(**{**opts, "vocab_size": vocab_size, "prefix_mode": PrefixMode(mode),
                              "seed": derive_seed(self.seed, f"model/{section}")})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in self._NON_SEMANTIC}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    # paths
    @property
    def root(self) -> Path:
        return Path(self.out_dir)

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)


# ------------------------------------------------------------------ helpers

def _meta(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed}


def _write_csv(cfg: ExperimentConfig, rel: str, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    return atomic_write_text(cfg.path(rel), render_csv(header, rows, cfg.hash(), cfg.seed))


def _write_json(cfg: ExperimentConfig, rel: str, obj: dict) -> Path:
    obj = {**obj, "meta": _meta(cfg)}
    return atomic_write_text(cfg.path(rel), json.dumps(obj, indent=1, sort_keys=True) + "\n")


def ckpt_name(section: str, mode: str) -> str:
    return f"ckpt/{section}_{mode}"


def _load_splits(cfg: ExperimentConfig) -> DatasetSplits:
    try:
        return load_splits(cfg.path("data"))
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"{exc}; run synth-data first") from None


def section_pairs(records: Sequence[EncounterRecord], vocab: Vocab, section: str):
    """Training triples (source ids, target ids with BOS/EOS, author)."""
    return [(encode_text(vocab, r.transcript), encode_text(vocab, r.notes[section], "target"), r.author)
            for r in records]


def section_docs(records: Sequence[EncounterRecord], vocab: Vocab, section: str):
    """Scoring pairs (source ids, reference words). References stay as words so UNK never matches."""
    return [(encode_text(vocab, r.transcript), tokenize(r.notes[section])) for r in records]


class WordGenerator:
    """Greedy generation returning words, memoized per (author token, source)."""

    def __init__(self):
        self.cache: dict[tuple[int | None, tuple[int, ...]], list[str]] = {}

    def __call__(self, model: Seq2SeqModel, srcs: list, tok: int | None) -> list[list[str]]:
        keys = [(tok, tuple(s)) for s in srcs]
        todo = [i for i, k in enumerate(keys) if k not in self.cache]
        if todo:
            outs = generate_batch(model, [srcs[i] for i in todo], tok)
            for i, ids in zip(todo, outs):
                self.cache[keys[i]] = [model.vocab.id_to_token[t] for t in ids]
        return [self.cache[k] for k in keys]


def _triples(hyps, docs) -> list[tuple[float, float, float]]:
    return [tuple(s.f1 for s in rouge_triple(h, ref)) for h, (_, ref) in zip(hyps, docs)]


def _doc_mean(xs: Sequence[float]) -> float:
    # same reduction as the adaptation module so score comparisons are exact
    return sum(xs) / len(xs)


def _author_means(triples: Sequence[tuple[float, float, float]]) -> tuple[float, float, float]:
    return tuple(_doc_mean([t[k] for t in triples]) for k in range(3))


def build_training_vocab(splits: DatasetSplits, min_count: int) -> Vocab:
    texts = [r.transcript for r in splits.train] + [n for r in splits.train for n in r.notes.values()]
    vocab = build_vocab(texts, min_count)
    reg = AuthorRegistry()
    for a in splits.train_authors:
        register_author(vocab, reg, a)
    return vocab


def load_vocab(cfg: ExperimentConfig) -> Vocab:
    path = cfg.path("ckpt", "vocab.json")
    if not path.exists():
        raise FileNotFoundError(f"missing vocabulary {path}; run train first")
    return Vocab.from_json(json.dumps(json.loads(path.read_text())["vocab"]))


def load_model(cfg: ExperimentConfig, section: str, mode: str) -> Seq2SeqModel:
    path = cfg.path(ckpt_name(section, mode) + ".json")
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}; run train first")
    return load_checkpoint(path, vocab=load_vocab(cfg))


# ------------------------------------------------------------------ phases

def run_synth(cfg: ExperimentConfig) -> DatasetSplits:
    cfg.validate()
    counts = cfg.split_counts()
    profiles = make_population(counts, cfg.style_divergence, cfg.seed, cfg.noise_rate)
    splits = make_splits(profiles, counts, cfg.seed)
    save_splits(splits, cfg.path("data"), meta={**_meta(cfg), "counts": asdict(counts),
                                               "style_divergence": cfg.style_divergence})
    _write_json(cfg, "data/profiles.json", {"profiles": [p.to_dict() for p in profiles]})
    _write_json(cfg, "reports/config.json", {"config": cfg.to_dict()})
    return splits


def evaluate(model: Seq2SeqModel, records: Sequence[EncounterRecord], section: str, split: str,
             token_of: Callable[[str], int | None], gen: WordGenerator | None = None) -> ReportRow:
    gen = gen or WordGenerator()
    by_author: dict[str, list[EncounterRecord]] = {}
    for r in records:
        by_author.setdefault(r.author, []).append(r)
    per_author = {}
    for author, recs in by_author.items():
        docs = section_docs(recs, model.vocab, section)
        hyps = gen(model, [d[0] for d in docs], token_of(author))
        per_author[author] = _author_means(_triples(hyps, docs))
    return ReportRow.from_author_scores(section, model.mode.value, split, per_author)


def validation_loss(model: Seq2SeqModel, records: Sequence[EncounterRecord], section: str,
                    batch_size: int = 16) -> float:
    """Token-weighted mean loss on held-out records; monitoring only, never used for selection."""
    reg = model.registry
    pairs = []
    for src, tgt, author in section_pairs(records, model.vocab, section):
        tok = None if model.mode is PrefixMode.BASE else reg.token(author)
        pairs.append(prepare_pair(model, src, tgt, tok))
    total = count = 0.0
    with ag.no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i:i + batch_size]
            n = sum(len(t) - 1 for _, t in chunk)
            total += batch_loss(model, [p[0] for p in chunk], [p[1] for p in chunk]).item() * n
            count += n
    return total / count if count else float("nan")


def run_train(cfg: ExperimentConfig, log_fn: Callable | None = None) -> list[ReportRow]:
    """Train one model per (section, mode) and score each on the evaluation split."""
    cfg.validate()
    splits = _load_splits(cfg)
    vocab = build_training_vocab(splits, cfg.min_count)
    _write_json(cfg, "ckpt/vocab.json", {"vocab": json.loads(vocab.to_json()), "vocab_hash": vocab.hash()})
    rows, log_rows = [], []
    for section in cfg.sections:
        for mode in cfg.modes:
            model = init_model(cfg.model_config(section, mode, vocab.size), vocab.copy())
            data = section_pairs(splits.train, model.vocab, section)

            def hook(epoch, loss, section=section, mode=mode, model=model):
                val = validation_loss(model, splits.validation, section) if splits.validation else float("nan")
                log_rows.append([section, mode, epoch, repr(loss), repr(val)])
                if log_fn:
                    log_fn(section, mode, epoch, loss)

            train_model(model, data, cfg.epochs, cfg.batch_size, lr=cfg.lr, warmup=cfg.warmup,
                        seed=derive_seed(cfg.seed, f"train/{section}"), log_fn=hook)
            save_checkpoint(model, cfg.path(ckpt_name(section, mode)),
                            meta={**_meta(cfg), "section": section, "epochs": cfg.epochs})
            reg = model.registry
            token_of = (lambda a: None) if model.mode is PrefixMode.BASE else reg.token
            rows.append(evaluate(model, splits.evaluation, section, "evaluation", token_of))
    write_report(rows, cfg.path("reports", "train_eval.csv"), cfg.hash(), cfg.seed)
    _write_csv(cfg, "reports/train_log.csv", ["section", "mode", "epoch", "loss", "validation_loss"], log_rows)
    return rows


def adaptive_modes(cfg: ExperimentConfig) -> list[str]:
    return [m for m in cfg.modes if m != PrefixMode.BASE.value]


def run_adapt(cfg: ExperimentConfig, modes: Sequence[str] | None = None) -> tuple[dict, adp.StabilityTable]:
    """Donor-embedding selections for every (new author, section, mode) plus the stability table."""
    cfg.validate()
    modes = list(modes) if modes is not None else adaptive_modes(cfg)
    if PrefixMode.BASE.value in modes:
        raise ValueError(adp.NOT_APPLICABLE)
    splits = _load_splits(cfg)
    adapt_by_author = splits.by_author("adapt")
    table = adp.StabilityTable(list(cfg.doc_counts), cfg.full_count)
    selections: dict[str, dict[str, dict]] = {a: {} for a in splits.new_authors}
    for section in cfg.sections:
        for mode in modes:
            model = load_model(cfg, section, mode)
            reg = model.registry
            gen = WordGenerator()
            docs = {a: section_docs(adapt_by_author[a], model.vocab, section) for a in splits.new_authors}
            cache = {}
            for author in splits.new_authors:
                per_doc = adp.candidate_doc_scores(model, reg, docs[author], gen, rouge2_f1, cfg.workers)
                cache[author] = per_doc
                sel = adp.selection_from_scores(author, section, per_doc, reg.enrollment_order)
                selections[author][f"{section}/{mode}"] = sel.to_dict()
            table.merge(adp.stability_analysis(model, reg, docs, section, cfg.doc_counts, cfg.full_count,
                                               cfg.seed, gen, rouge2_f1, per_doc_cache=cache))
    for author, sels in selections.items():
        _write_json(cfg, f"reports/selections/{author}.json", {"new_author": author, "selections": sels})
    header = ["section", "mode"] + [str(c) for c in cfg.doc_counts] + [str(cfg.full_count)]
    rows = [[s, m] + [row[c] for c in cfg.doc_counts] + [0] for (s, m), row in table.rows.items()]
    _write_csv(cfg, "reports/stability.csv", header, rows)
    _write_json(cfg, "reports/stability.json", table.to_dict())
    return selections, table


def load_selection(cfg: ExperimentConfig, author: str, section: str, mode: str) -> adp.AuthorSelection:
    path = cfg.path("reports", "selections", f"{author}.json")
    if not path.exists():
        raise FileNotFoundError(f"missing selection for {author}; run adapt first")
    sels = json.loads(path.read_text())["selections"]
    key = f"{section}/{mode}"
    if key not in sels:
        raise FileNotFoundError(f"missing selection for {author} {key}; run adapt first")
    return adp.AuthorSelection.from_dict(sels[key])


def run_test(cfg: ExperimentConfig) -> dict[str, list]:
    """Score the test-adapt split with enrolled new authors; BASE rows need no enrollment.

    The oracle scores every training candidate on the same test documents
    with the same cached generations, so its R-2 dominates the adapted R-2
    exactly, per author and therefore in the mean.
    """
    cfg.validate()
    splits = _load_splits(cfg)
    test_by_author = splits.by_author("test_adapt")
    adapted_rows, oracle_rows, gap_rows, author_rows = [], [], [], []
    for section in cfg.sections:
        for mode in cfg.modes:
            model = load_model(cfg, section, mode)
            gen = WordGenerator()
            docs = {a: section_docs(test_by_author[a], model.vocab, section) for a in splits.new_authors}
            if model.mode is PrefixMode.BASE:
                per_author = {a: _author_means(_triples(gen(model, [d[0] for d in docs[a]], None), docs[a]))
                              for a in splits.new_authors}
                adapted_rows.append(ReportRow.from_author_scores(section, mode, "test_adapt", per_author))
                author_rows += [[section, mode, a, "", repr(v[1])] for a, v in per_author.items()]
                continue
            train_reg = model.registry
            adapted, oracle = {}, {}
            for author in splits.new_authors:
                sel = load_selection(cfg, author, section, mode)
                tok = adp.enroll_author(model, model.vocab, model.registry, author, sel)
                hyps = gen(model, [d[0] for d in docs[author]], tok)
                adapted[author] = _author_means(_triples(hyps, docs[author]))
                per_doc = adp.candidate_doc_scores(model, train_reg, docs[author], gen, rouge2_f1, cfg.workers)
                osel = adp.selection_from_scores(author, section, per_doc, train_reg.enrollment_order)
                ohyps = gen(model, [d[0] for d in docs[author]], train_reg.token(osel.chosen_author))
                oracle[author] = _author_means(_triples(ohyps, docs[author]))
                author_rows.append([section, mode, author, sel.chosen_author, repr(adapted[author][1])])
                gap_rows.append([section, mode, author, sel.chosen_author, osel.chosen_author,
                                 repr(adapted[author][1]), repr(oracle[author][1]),
                                 repr(oracle[author][1] - adapted[author][1])])
            adapted_rows.append(ReportRow.from_author_scores(section, mode, "test_adapt", adapted))
            oracle_rows.append(ReportRow.from_author_scores(section, mode, "test_adapt_oracle", oracle))
    write_report(adapted_rows, cfg.path("reports", "test_adapt.csv"), cfg.hash(), cfg.seed)
    if oracle_rows:
        write_report(oracle_rows, cfg.path("reports", "oracle.csv"), cfg.hash(), cfg.seed)
    _write_csv(cfg, "reports/oracle_gap.csv",
               ["section", "mode", "author", "adapted_donor", "oracle_donor", "adapted_r2", "oracle_r2", "gap"],
               gap_rows)
    _write_csv(cfg, "reports/per_author.csv", ["section", "mode", "author", "donor", "r2"], author_rows)
    improvement = _improvement_rows(adapted_rows)
    _write_csv(cfg, "reports/improvement.csv",
               ["section", "mode", "split", "base_r2", "r2", "relative_improvement"], improvement)
    return {"adapted": adapted_rows, "oracle": oracle_rows, "improvement": improvement}


def _improvement_rows(rows: Sequence[ReportRow]) -> list[list]:
    base = {(r.section, r.split): r.r2 for r in rows if r.mode == PrefixMode.BASE.value}
    out = []
    for r in sorted(rows, key=ReportRow.sort_key):
        if r.mode == PrefixMode.BASE.value or (r.section, r.split) not in base:
            continue
        b = base[(r.section, r.split)]
        out.append([r.section, r.mode, r.split, repr(b), repr(r.r2), repr(relative_improvement(r.r2, b))])
    return out


def run_project(cfg: ExperimentConfig, mode: str | None = None) -> list[dict]:
    """Project each section model's training-author embeddings (t-SNE and PCA)."""
    cfg.validate()
    mode = mode or cfg.projection_mode
    splits = _load_splits(cfg)
    hospital_of = {r.author: r.hospital for r in splits.train}
    pcfg = ProjectionConfig(method="tsne", seed=cfg.seed, **cfg.projection)
    summary = []
    for section in cfg.sections:
        model = load_model(cfg, section, mode)
        reg = model.registry
        names = [a for a in reg.enrollment_order if a in hospital_of]
        rows = model["embed"].data[[reg.token(a) for a in names]]
        hosp = [hospital_of[a] for a in names]
        for method in ("tsne", "pca"):
            proj = tsne_2d(rows, pcfg, names, hosp) if method == "tsne" else pca_2d(rows, names, hosp, cfg.seed)
            sil = silhouette_score(proj.coords, hosp) if 2 <= len(set(hosp)) < len(hosp) else float("nan")
            stem = f"{section}_{mode}_{method}"
            atomic_write_text(cfg.path("reports", f"projection_{stem}.csv"),
                              projection_csv(proj) + f"# config_hash={cfg.hash()} seed={cfg.seed}\n")
            atomic_write_text(cfg.path("plots", f"{stem}.svg"),
                              projection_svg(proj, f"{section} {mode} author embeddings ({method})",
                                             {**_meta(cfg), "silhouette": round(sil, 6)}))
            summary.append({"section": section, "mode": mode, "method": method, "silhouette": sil,
                            "initial_kl": proj.initial_kl, "final_kl": proj.final_kl})
    _write_csv(cfg, "reports/projection_summary.csv",
               ["section", "mode", "method", "silhouette", "initial_kl", "final_kl"],
               [[s["section"], s["mode"], s["method"], repr(s["silhouette"]),
                 "" if s["initial_kl"] is None else repr(s["initial_kl"]),
                 "" if s["final_kl"] is None else repr(s["final_kl"])] for s in summary])
    return summary


def run_report(cfg: ExperimentConfig) -> Path:
    """Collect the phase reports into one human-readable summary."""
    cfg.validate()
    parts = [f"config_hash={cfg.hash()} seed={cfg.seed}\n"]
    for name, title in [("train_eval.csv", "Evaluation split (known authors)"),
                        ("test_adapt.csv", "Test-adapt split (new authors, adapted)"),
                        ("oracle.csv", "Test-adapt split (oracle selection)")]:
        path = cfg.path("reports", name)
        if path.exists():
            recs = read_report(path)
            header = list(recs[0].keys()) if recs else []
            parts.append(f"## {title}\n\n" + render_table(header, [list(r.values()) for r in recs]))
    for name, title in [("improvement.csv", "Relative R-2 improvement over BASE"),
                        ("stability.csv", "Selections changed vs full document count"),
                        ("projection_summary.csv", "Embedding projections")]:
        path = cfg.path("reports", name)
        if path.exists():
            recs = read_report(path)
            if recs:
                parts.append(f"## {title}\n\n" + render_table(list(recs[0].keys()), [list(r.values()) for r in recs]))
    if len(parts) == 1:
        raise FileNotFoundError("no reports found; run train first")
    return atomic_write_text(cfg.path("reports", "summary.txt"), "\n".join(parts))


def run_all(cfg: ExperimentConfig, log_fn: Callable | None = None) -> None:
    run_synth(cfg)
    run_train(cfg, log_fn)
    if adaptive_modes(cfg):
        run_adapt(cfg)
    run_test(cfg)
    if cfg.projection_mode in cfg.modes:
        run_project(cfg)
    run_report(cfg)
