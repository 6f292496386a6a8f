"""Word-level vocabulary, author tokens and prefix handling."""
from __future__ import annotations

import enum
import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
AUTHOR_PREFIX = "<author:"

_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _WORD_RE.findall(text.lower())


def author_token_string(name: str) -> str:
    return f"{AUTHOR_PREFIX}{name}>"


class PrefixMode(str, enum.Enum):
    BASE = "BASE"
    ENC = "ENC"
    DEC = "DEC"
    ENC_DEC = "ENC_DEC"

    @property
    def uses_encoder(self) -> bool:
        return self in (PrefixMode.ENC, PrefixMode.ENC_DEC)

    @property
    def uses_decoder(self) -> bool:
        return self in (PrefixMode.DEC, PrefixMode.ENC_DEC)


class Vocab:
    """Bijection between tokens and contiguous integer ids.

    Ids 0-3 are the specials, word ids follow, and author tokens are
    appended at the end by :func:`register_author`.
    """

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the four special tokens")
        self.id_to_token: list[str] = list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise ValueError("duplicate token in vocabulary")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return self.size

    @property
    def specials(self) -> dict[str, int]:
        return {"PAD": PAD, "BOS": BOS, "EOS": EOS, "UNK": UNK}

    def lookup(self, word: str) -> int:
        """Id of a plain word; specials and author tokens are never returned."""
        i = self.token_to_id.get(word)
        if i is None or i < 4 or word.startswith(AUTHOR_PREFIX):
            return UNK
        return i

    def is_author(self, token_id: int) -> bool:
        return self.id_to_token[token_id].startswith(AUTHOR_PREFIX)

    def author_ids(self) -> list[int]:
        return [i for i, t in enumerate(self.id_to_token) if t.startswith(AUTHOR_PREFIX)]

    def append(self, token: str) -> int:
        if token in self.token_to_id:
            raise ValueError(f"token exists: {token}")
        self.id_to_token.append(token)
        self.token_to_id[token] = len(self.id_to_token) - 1
        return len(self.id_to_token) - 1

    def copy(self) -> "Vocab":
        return Vocab(self.id_to_token)

    def authors(self) -> dict[str, int]:
        n = len(AUTHOR_PREFIX)
        return {t[n:-1]: i for i, t in enumerate(self.id_to_token) if t.startswith(AUTHOR_PREFIX)}

    def to_json(self) -> str:
        n_words = self.size
        authors = self.authors()
        if authors:
            n_words = min(authors.values())
        return json.dumps(
            {
                "specials": self.specials,
                "tokens": self.id_to_token[:n_words],
                "authors": authors,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        obj = json.loads(text)
        vocab = cls(obj["tokens"])
        for name, idx in sorted(obj.get("authors", {}).items(), key=lambda kv: kv[1]):
            if vocab.append(author_token_string(name)) != idx:
                raise ValueError(f"author id for {name!r} is not contiguous")
        return vocab

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token


@dataclass
class AuthorRegistry:
    author_to_token: dict[str, int] = field(default_factory=dict)
    enrollment_order: list[str] = field(default_factory=list)

    @property
    def author_to_row(self) -> dict[str, int]:
        # Author tokens share the embedding table, so row index == token id.
        return dict(self.author_to_token)

    def __contains__(self, name: str) -> bool:
        return name in self.author_to_token

    def __len__(self) -> int:
        return len(self.enrollment_order)

    def token(self, name: str) -> int:
        try:
            return self.author_to_token[name]
        except KeyError:
            raise KeyError(f"unregistered author: {name}") from None

    def copy(self) -> "AuthorRegistry":
        return AuthorRegistry(dict(self.author_to_token), list(self.enrollment_order))

    @classmethod
    def from_vocab(cls, vocab: Vocab) -> "AuthorRegistry":
        reg = cls()
        for name, idx in sorted(vocab.authors().items(), key=lambda kv: kv[1]):
            reg.author_to_token[name] = idx
            reg.enrollment_order.append(name)
        return reg


def build_vocab(corpus_texts: list[str], min_count: int = 1) -> Vocab:
    """Build a vocabulary ordered by descending frequency, ties lexicographic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not corpus_texts:
        raise ValueError("empty corpus")
    counts = Counter(w for text in corpus_texts for w in tokenize(text))
    if not counts:
        raise ValueError("empty corpus")
    words = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocab(list(SPECIAL_TOKENS) + words)


def encode_text(vocab: Vocab, text: str, kind: str = "source") -> list[int]:
    ids = [vocab.lookup(w) for w in tokenize(text)]
    if kind == "target":
        return [BOS] + ids + [EOS]
    if kind != "source":
        raise ValueError(f"unknown sequence kind: {kind}")
    return ids


def decode_tokens(vocab: Vocab, ids) -> str:
    words = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= vocab.size:
            raise ValueError(f"unknown id {i}")
        if i in (PAD, BOS, EOS) or vocab.is_author(i):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)


def strip_special(vocab: Vocab, ids) -> list[int]:
    """Drop PAD/BOS/EOS and author tokens, keeping word and UNK ids."""
    return [int(i) for i in ids if int(i) not in (PAD, BOS, EOS) and not vocab.is_author(int(i))]


def register_author(vocab: Vocab, registry: AuthorRegistry, name: str) -> int:
    if name in registry or author_token_string(name) in vocab.token_to_id:
        raise ValueError(f"author exists: {name}")
    idx = vocab.append(author_token_string(name))
    registry.author_to_token[name] = idx
    registry.enrollment_order.append(name)
    return idx


def apply_prefix(mode: PrefixMode, author_tok: int | None, src: list[int], tgt: list[int],
                 check: bool = True) -> tuple[list[int], list[int]]:
    """Insert the author token into source and/or target according to ``mode``.

    DEC places the token right after BOS. With ``check`` set, an input that
    already carries the token at its prefix position is rejected.
    """
    mode = PrefixMode(mode)
    if mode is PrefixMode.BASE:
        if author_tok is not None:
            raise ValueError("BASE mode takes no author token")
        return list(src), list(tgt)
    if author_tok is None:
        raise ValueError("missing author token")
    src, tgt = list(src), list(tgt)
    if mode.uses_encoder:
        if check and src and src[0] == author_tok:
            raise ValueError("source already prefixed")
        src = [author_tok] + src
    if mode.uses_decoder:
        if not tgt or tgt[0] != BOS:
            raise ValueError("target must begin with BOS")
        if check and len(tgt) > 1 and tgt[1] == author_tok:
            raise ValueError("target already prefixed")
        tgt = [BOS, author_tok] + tgt[1:]
    return src, tgt
