import json

import pytest
from hypothesis import given, strategies as st

from authorsum.text import (
    BOS, EOS, PAD, UNK, AuthorRegistry, PrefixMode, Vocab, apply_prefix, build_vocab,
    decode_tokens, encode_text, register_author,
)


def test_build_vocab_frequency_order():
    v = build_vocab(["a a b"], min_count=1)
    assert v.id_to_token[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert v.token_to_id["a"] == 4 and v.token_to_id["b"] == 5
    assert v.size == 6


def test_build_vocab_threshold():
    v = build_vocab(["a b", "b"], min_count=2)
    assert v.token_to_id["b"] == 4
    assert "a" not in v.token_to_id


def test_build_vocab_tie_is_lexicographic():
    v = build_vocab(["x y", "y x"], min_count=1)
    assert (v.token_to_id["x"], v.token_to_id["y"]) == (4, 5)


def test_build_vocab_errors():
    with pytest.raises(ValueError, match="empty corpus"):
        build_vocab([], 1)
    with pytest.raises(ValueError):
        build_vocab(["a"], 0)


def test_tokenization_lowercases_and_splits_punctuation():
    v = build_vocab(["NP-C, in 3 months."])
    assert encode_text(v, "np-c") == [v.token_to_id["np"], v.token_to_id["c"]]


def test_encode_decode():
    v = build_vocab(["knee pain"])
    assert encode_text(v, "knee pain") == [v.token_to_id["knee"], v.token_to_id["pain"]]
    assert encode_text(v, "zzz") == [UNK]
    assert encode_text(v, "") == []
    assert encode_text(v, "knee", kind="target") == [BOS, v.token_to_id["knee"], EOS]
    assert decode_tokens(v, [BOS, v.token_to_id["knee"], EOS]) == "knee"
    with pytest.raises(ValueError, match="unknown id"):
        decode_tokens(v, [v.size])


def test_decode_strips_author_tokens():
    v = build_vocab(["knee pain"])
    reg = AuthorRegistry()
    a = register_author(v, reg, "doc_07")
    assert decode_tokens(v, [a, v.token_to_id["pain"]]) == "pain"


@given(st.lists(st.sampled_from(["alpha", "beta", "gamma", "x3", "7"]), min_size=0, max_size=12))
def test_roundtrip_in_vocab(words):
    v = build_vocab(["alpha beta gamma x3 7"])
    s = " ".join(words)
    assert decode_tokens(v, encode_text(v, s)) == s


def test_lookup_never_returns_specials():
    v = build_vocab(["a"])
    for tok in ["<pad>", "<bos>", "<eos>", "<unk>"]:
        assert v.lookup(tok) == UNK
    reg = AuthorRegistry()
    register_author(v, reg, "d")
    assert v.lookup("<author:d>") == UNK


def test_register_author():
    v = build_vocab([" ".join(f"w{i}" for i in range(96))])
    assert v.size == 100
    reg = AuthorRegistry()
    assert register_author(v, reg, "doc_07") == 100
    assert v.size == 101
    with pytest.raises(ValueError, match="author exists"):
        register_author(v, reg, "doc_07")


def test_register_62_authors_consecutive_and_append_only():
    v = build_vocab(["some words here"])
    before = list(v.id_to_token)
    reg = AuthorRegistry()
    ids = [register_author(v, reg, f"author_{i}") for i in range(62)]
    assert ids == list(range(len(before), len(before) + 62))
    assert len(reg.enrollment_order) == 62 == len(set(reg.enrollment_order))
    assert v.id_to_token[: len(before)] == before
    assert reg.author_to_row == reg.author_to_token


def test_vocab_json_roundtrip():
    v = build_vocab(["knee pain knee"])
    reg = AuthorRegistry()
    register_author(v, reg, "a")
    register_author(v, reg, "b")
    obj = json.loads(v.to_json())
    assert obj["authors"] == {"a": 6, "b": 7}
    assert obj["tokens"][4:] == ["knee", "pain"]
    v2 = Vocab.from_json(v.to_json())
    assert v2 == v and v2.hash() == v.hash()
    assert AuthorRegistry.from_vocab(v2).enrollment_order == ["a", "b"]


SRC, TGT = [5, 9], [BOS, 7, EOS]


@pytest.mark.parametrize("mode, expected", [
    (PrefixMode.ENC, ([50, 5, 9], [BOS, 7, EOS])),
    (PrefixMode.DEC, ([5, 9], [BOS, 50, 7, EOS])),
    (PrefixMode.ENC_DEC, ([50, 5, 9], [BOS, 50, 7, EOS])),
])
def test_apply_prefix(mode, expected):
    assert apply_prefix(mode, 50, SRC, TGT) == expected


def test_apply_prefix_base_and_errors():
    assert apply_prefix(PrefixMode.BASE, None, SRC, TGT) == (SRC, TGT)
    with pytest.raises(ValueError, match="missing author token"):
        apply_prefix(PrefixMode.ENC, None, SRC, TGT)
    with pytest.raises(ValueError):
        apply_prefix(PrefixMode.BASE, 50, SRC, TGT)


@pytest.mark.parametrize("mode", [PrefixMode.ENC, PrefixMode.DEC, PrefixMode.ENC_DEC])
def test_double_prefix_detected(mode):
    src, tgt = apply_prefix(mode, 50, SRC, TGT)
    with pytest.raises(ValueError, match="already prefixed"):
        apply_prefix(mode, 50, src, tgt)


@given(st.sampled_from(list(PrefixMode)),
       st.lists(st.integers(4, 40), max_size=8),
       st.lists(st.integers(4, 40), max_size=8))
def test_prefix_length_pattern(mode, src, body):
    tgt = [BOS] + body + [EOS]
    tok = None if mode is PrefixMode.BASE else 99
    s2, t2 = apply_prefix(mode, tok, src, tgt)
    assert len(s2) - len(src) == int(mode.uses_encoder)
    assert len(t2) - len(tgt) == int(mode.uses_decoder)
    assert t2[0] == BOS and t2[-1] == EOS
    assert PAD not in s2
