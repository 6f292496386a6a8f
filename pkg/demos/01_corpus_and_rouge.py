"""
A look at the synthetic corpus and the ROUGE scorer
===================================================

Run with ``python3 demos/01_corpus_and_rouge.py``. Takes a second or two.
"""

import numpy as np

from authorsum.corpus import SplitCounts, make_population, make_splits
from authorsum.metrics import rouge_l, rouge_n
from authorsum.text import tokenize

# A small population: 4 training authors in 2 hospitals, 2 unseen authors.
counts = SplitCounts(n_train_authors=4, n_train_hospitals=2, n_new_authors=2, train_per_author=3,
                     validation_per_author=1, evaluation_per_author=1, adapt_per_author=4,
                     test_adapt_per_author=2)
profiles = make_population(counts, style_divergence=0.7, seed=42)
splits = make_splits(profiles, counts, seed=42)
print("training authors:", splits.train_authors)
print("new authors:     ", splits.new_authors)

# One encounter: an un-diarized transcript and three note sections.
rec = splits.train[0]
print("\nauthor", rec.author, "at", rec.hospital)
print("transcript:", rec.transcript[:240], "...")
for section, note in rec.notes.items():
    print(f"{section:>3}:", note)

# Notes by two different authors about two different encounters.
# Their HPI notes overlap, but far from completely.
by_author = splits.by_author("train")
a, b = splits.train_authors[:2]
ref = tokenize(by_author[a][0].notes["HPI"])
hyp = tokenize(by_author[b][0].notes["HPI"])
print("\nROUGE-1 F1 between two authors' HPI notes:", round(rouge_n(1, hyp, ref).f1, 4))
print("ROUGE-2 F1:", round(rouge_n(2, hyp, ref).f1, 4))
print("ROUGE-L F1:", round(rouge_l(hyp, ref).f1, 4))

# A hand-checkable case: "the cat sat" vs "the cat ran far".
# One shared bigram out of 2 hypothesis and 3 reference bigrams gives P=1/2, R=1/3, F1=0.4.
print("\nworked example:", rouge_n(2, "the cat sat".split(), "the cat ran far".split()))

# Note lengths per section, in words, across the training split.
for section in ("HPI", "PE", "AP"):
    lens = np.array([len(tokenize(r.notes[section])) for r in splits.train])
    print(f"{section:>3} length: mean {lens.mean():.1f}, min {lens.min()}, max {lens.max()}")
