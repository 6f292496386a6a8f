import itertools

import pytest
from hypothesis import given, settings, strategies as st

from authorsum.corpus import (
    STYLE_SLOTS, TRIGGER_POOL, DatasetSplits, SplitCounts, StyleProfile, author_profile, load_splits,
    make_population, make_profiles, make_splits, save_splits, synth_encounter,
)
from authorsum.text import tokenize

TINY = SplitCounts(n_train_authors=6, n_train_hospitals=3, n_new_authors=2, train_per_author=3,
                   validation_per_author=1, evaluation_per_author=1, adapt_per_author=4, test_adapt_per_author=2)


def fill_boilerplate(sentence):
    return sentence.replace("{poss}", "").split("{")[0].strip()


# ------------------------------------------------------------------ profiles

def test_profiles_deterministic_and_round_robin():
    a = make_profiles(8, 3, 0.5, seed=1)
    assert a == make_profiles(8, 3, 0.5, seed=1)
    assert [p.hospital for p in a] == [f"hosp_{i % 3:02d}" for i in range(8)]


def test_zero_divergence_gives_identical_templates_per_hospital():
    profiles = make_profiles(9, 3, 0.0, seed=2)
    for h in {p.hospital for p in profiles}:
        group = [p for p in profiles if p.hospital == h]
        assert all(p.section_templates == group[0].section_templates for p in group)
        assert all(p.trigger_lexicon == group[0].trigger_lexicon for p in group)


@pytest.mark.parametrize("div", [0.0, 0.3, 0.7, 1.0])
def test_same_hospital_shares_half_the_inventory(div):
    profiles = make_profiles(12, 3, div, seed=3)
    for a, b in itertools.combinations(profiles, 2):
        if a.hospital == b.hospital:
            assert len(a.inventory() & b.inventory()) >= len(a.inventory()) / 2


def test_large_preset_population():
    counts = SplitCounts.paper_shaped()
    pop = make_population(counts, 0.5, seed=0)
    train = pop[: counts.n_train_authors]
    assert len(train) == 62 and len({p.hospital for p in train}) == 27
    new = pop[counts.n_train_authors:]
    train_hosp = {p.hospital for p in train}
    assert len(new) == 10 and sum(p.hospital in train_hosp for p in new) == 6


def test_profile_errors():
    with pytest.raises(ValueError):
        make_profiles(3, 0, 0.5, seed=0)
    with pytest.raises(ValueError):
        make_profiles(2, 3, 0.5, seed=0)
    with pytest.raises(ValueError):
        author_profile("a", "h", 1.5, seed=0)
    p = make_profiles(1, 1, 0.2, seed=0)[0]
    bad = StyleProfile.from_dict({**p.to_dict(), "smalltalk_rate": 1.2})
    with pytest.raises(ValueError):
        bad.validate()


def test_profile_dict_roundtrip():
    p = make_profiles(2, 1, 0.4, seed=5)[1]
    assert StyleProfile.from_dict(p.to_dict()) == p


# ------------------------------------------------------------------ encounters

def with_trigger(trigger, pronoun_mode="gendered"):
    p = make_profiles(1, 1, 0.0, seed=0)[0]
    p.trigger_lexicon = {trigger: TRIGGER_POOL[trigger][1]}
    p.trigger_sections = {trigger: TRIGGER_POOL[trigger][0]}
    p.pronoun_mode = pronoun_mode
    return p


def test_follow_up_trigger_inserts_boilerplate():
    p = with_trigger("three month populate smith check")
    hits = 0
    for seed in range(30):
        rec = synth_encounter(p, seed)
        if "three month populate smith check" in rec.transcript:
            hits += 1
            assert "the patient will follow up with john smith np c in 3 months" in rec.notes["AP"]
        else:
            assert "john smith" not in rec.notes["AP"]
    assert hits > 0


def test_neutral_pronouns():
    p = with_trigger("three month populate smith check", "neutral")
    for seed in range(30):
        rec = synth_encounter(p, seed)
        for section, text in rec.notes.items():
            words = tokenize(text)
            assert "she" not in words and "he" not in words and "her" not in words and "his" not in words
        assert "the patient" in " ".join(rec.notes.values())


def test_alert_and_oriented_is_implicit():
    p = make_profiles(1, 1, 0.0, seed=0)[0]
    p.section_templates["pe_general"] = "patient is alert and oriented x3."
    for seed in range(10):
        rec = synth_encounter(p, seed)
        assert "patient is alert and oriented x3" in rec.notes["PE"]
        assert "oriented" not in rec.transcript


def test_encounter_is_pure_function_of_profile_and_seed():
    p = make_profiles(3, 1, 0.5, seed=4)[2]
    assert synth_encounter(p, 99, "r") == synth_encounter(p, 99, "r")
    assert synth_encounter(p, 99) != synth_encounter(p, 100)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 20), st.sampled_from([0.0, 0.4, 0.8]))
def test_trigger_and_implicit_invariants(seed, author_idx, div):
    p = make_profiles(21, 5, div, seed=seed % 7)[author_idx]
    rec = synth_encounter(p, seed)
    assert rec.transcript and set(rec.notes) == {"HPI", "PE", "AP"}
    for trigger, sentence in p.trigger_lexicon.items():
        if fill_boilerplate(sentence) in rec.notes[p.trigger_sections[trigger]]:
            assert trigger in rec.transcript
    for section in ("PE", "AP"):
        for phrase in p.implicit_phrases[section]:
            assert phrase in rec.notes[section]
            assert phrase.rstrip(".") not in rec.transcript


# ------------------------------------------------------------------ splits

def test_split_invariants_and_disjointness():
    pop = make_population(TINY, 0.5, seed=7)
    splits = make_splits(pop, TINY, seed=7)
    splits.check(TINY.adapt_per_author)
    assert len(splits.train) == 18 and len(splits.adapt) == 8
    assert {r.seed for r in splits.adapt}.isdisjoint({r.seed for r in splits.test_adapt})
    assert all(len(v) == 4 for v in splits.by_author("adapt").values())
    assert set(splits.new_authors).isdisjoint(splits.train_authors)


def test_split_errors():
    pop = make_population(TINY, 0.5, seed=7)
    with pytest.raises(ValueError):
        make_splits(pop, SplitCounts(**{**TINY.__dict__, "n_new_authors": len(pop)}), seed=0)
    with pytest.raises(ValueError):
        make_splits(pop, SplitCounts(**{**TINY.__dict__, "adapt_per_author": 0}), seed=0)


def test_check_detects_violations():
    splits = make_splits(make_population(TINY, 0.5, seed=1), TINY, seed=1)
    bad = DatasetSplits(**{**splits.__dict__, "validation": splits.validation + splits.adapt[:1]})
    with pytest.raises(ValueError, match="validation"):
        bad.check()
    with pytest.raises(ValueError, match="adapt has"):
        splits.check(adapt_per_author=5)


def test_default_counts_match_desk_scale():
    c = SplitCounts()
    assert (c.n_train_authors, c.n_train_hospitals, c.n_new_authors) == (12, 4, 4)
    assert c.test_adapt_per_author == 40
    assert SplitCounts.paper_shaped().adapt_per_author == 20


def test_save_load_roundtrip(tmp_path):
    splits = make_splits(make_population(TINY, 0.3, seed=2), TINY, seed=2)
    save_splits(splits, tmp_path, meta={"seed": 2})
    assert load_splits(tmp_path) == splits
    (tmp_path / "adapt.jsonl").unlink()
    with pytest.raises(FileNotFoundError, match="adapt"):
        load_splits(tmp_path)


def test_slot_inventory_has_implicit_pe_phrase():
    assert "patient is alert and oriented x3." in STYLE_SLOTS["pe_general"]
