"""
Training a DEC model, picking an embedding for a new author, enrolling them
===========================================================================

A deliberately small run (a couple of minutes on one core). The full
experiment lives behind the ``authorsum`` command.
"""

import numpy as np

from authorsum.adaptation import adapt_author, enroll_author
from authorsum.corpus import SplitCounts, make_population, make_splits
from authorsum.harness import WordGenerator, build_training_vocab, section_docs, section_pairs
from authorsum.metrics import rouge2_f1
from authorsum.model import ModelConfig, generate_greedy, init_model, train_model
from authorsum.text import PrefixMode, register_author

counts = SplitCounts(n_train_authors=6, n_train_hospitals=3, n_new_authors=1, train_per_author=12,
                     validation_per_author=1, evaluation_per_author=1, adapt_per_author=6,
                     test_adapt_per_author=6)
splits = make_splits(make_population(counts, 0.7, seed=7), counts, seed=7)

# The vocabulary comes from training text only. Authors get one special token each.
vocab = build_training_vocab(splits, min_count=1)
cfg = ModelConfig(vocab_size=vocab.size, prefix_mode=PrefixMode.DEC, d_model=32, n_heads=2,
                  enc_layers=1, dec_layers=1, d_ff=64, max_tgt_len=64, seed=0)
model = init_model(cfg, vocab)
print("parameters:", model.num_parameters(), " authors:", model.registry.enrollment_order)

# Teacher-forced training on the HPI section.
data = section_pairs(splits.train, model.vocab, "HPI")
log = train_model(model, data, epochs=15, batch_size=8, lr=3e-3, warmup=20,
                  log_fn=lambda e, l: print(f"epoch {e:2d}  loss {l:.3f}"))

# Adaptation: try every training author's embedding on the new author's few
# documents and keep the one with the best mean ROUGE-2 F1.
new = splits.new_authors[0]
adapt_docs = section_docs(splits.by_author("adapt")[new], model.vocab, "HPI")
gen = WordGenerator()
sel = adapt_author(model, model.registry, adapt_docs, "HPI", new_author=new, generator=gen)
for name, score in sel.per_candidate_scores.items():
    print(f"  {name}: {score:.4f}", "<- chosen" if name == sel.chosen_author else "")

# Enrollment copies the donor row, so the new token generates exactly what the donor did.
enroll_author(model, model.vocab, model.registry, new, sel)
src = section_docs(splits.by_author("test_adapt")[new], model.vocab, "HPI")[0][0]
same = generate_greedy(model, src, model.registry.token(new)) == \
    generate_greedy(model, src, model.registry.token(sel.chosen_author))
print("new token reproduces donor output:", same)

# Held-out score with the enrolled token.
test_docs = section_docs(splits.by_author("test_adapt")[new], model.vocab, "HPI")
hyps = gen(model, [s for s, _ in test_docs], model.registry.token(new))
print("test ROUGE-2 F1:", round(float(np.mean([rouge2_f1(h, r) for h, (_, r) in zip(hyps, test_docs)])), 4))
