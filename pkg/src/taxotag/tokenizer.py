"""Whitespace tokenization, vocabulary construction, fixed-length encoding.

The tokenizer is deliberately simple and deterministic: lowercase, split on
whitespace, strip punctuation from token edges.  Sequences are laid out as
``[CLS] question [SEP] answer [SEP]`` and truncated from the tail of the
answer first, since the question carries the class-bearing terms.
"""

from __future__ import annotations

import hashlib
import string
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dataset import Corpus, canonical_label_text
from .errors import InputError

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties.

    Interior punctuation is kept ("don't" stays one token); a bare "-"
    strips to nothing and disappears.
    """
    out = []
    for chunk in text.lower().split():
        tok = chunk.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


class Vocab:
    """Immutable token -> dense-id map with four fixed reserved ids."""

    def __init__(self, id_to_token: list[str]):
        if len(id_to_token) < len(RESERVED_TOKENS):
            raise InputError("vocabulary smaller than the reserved token set")
        if tuple(id_to_token[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise InputError(f"vocabulary must start with {RESERVED_TOKENS}")
        if len(set(id_to_token)) != len(id_to_token):
            raise InputError("duplicate token in vocabulary")
        self._id_to_token = list(id_to_token)
        self._token_to_id = {tok: i for i, tok in enumerate(id_to_token)}

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        """Id of a token, falling back to the unknown-token id."""
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    @property
    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    def fingerprint(self) -> str:
        """Stable content hash, stored in model files for compatibility checks."""
        payload = "\n".join(self._id_to_token).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocab(corpus: Corpus, min_freq: int = 1) -> Vocab:
    """Count tokens of questions, answers, and canonical label sentences.

    Tokens occurring at least ``min_freq`` times are kept; ids are assigned
    deterministically by (frequency descending, token ascending) after the
    reserved block.  Only the training split may be used.
    """
    if corpus.role != "train":
        raise InputError(f"vocabulary must be built from the train split, got {corpus.role!r}")
    if min_freq < 1:
        raise InputError("min_freq must be a positive integer")
    counts: Counter[str] = Counter()
    for doc in corpus.documents:
        counts.update(tokenize(doc.question))
        counts.update(tokenize(doc.answer))
        counts.update(tokenize(canonical_label_text(doc.label)))
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    if not kept:
        raise InputError(f"vocabulary is empty beyond reserved tokens at min_freq={min_freq}")
    return Vocab(list(RESERVED_TOKENS) + kept)


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence plus padding mask (True = real token)."""

    ids: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        if self.ids.shape != self.mask.shape or self.ids.ndim != 1:
            raise InputError("ids and mask must be 1-D arrays of equal length")


def encode_pair(question: str, answer: str, vocab: Vocab, max_len: int = 64) -> TokenSequence:
    """Encode ``[CLS] question [SEP] answer [SEP]`` into exactly max_len ids.

    Overlong inputs are truncated from the answer tail first, then the
    question tail; the answer's closing separator disappears only when the
    whole answer does.  Unknown tokens map to the unknown id, padding to 0.
    """
    if max_len < 3:
        raise InputError("max_len must be at least 3")
    q_tokens = tokenize(question)
    if not q_tokens:
        raise InputError("no content tokens in question")
    a_tokens = tokenize(answer)

    n_q, n_a = len(q_tokens), len(a_tokens)

    def total(nq: int, na: int) -> int:
        return 1 + nq + 1 + (na + 1 if na > 0 else 0)

    while total(n_q, n_a) > max_len:
        if n_a > 0:
            n_a -= 1
        else:
            n_q -= 1

    ids = [CLS_ID]
    ids.extend(vocab.id_of(tok) for tok in q_tokens[:n_q])
    ids.append(SEP_ID)
    if n_a > 0:
        ids.extend(vocab.id_of(tok) for tok in a_tokens[:n_a])
        ids.append(SEP_ID)
    n_real = len(ids)
    ids.extend([PAD_ID] * (max_len - n_real))
    mask = np.arange(max_len) < n_real
    return TokenSequence(ids=np.asarray(ids, dtype=np.int64), mask=mask)


def save_vocab(vocab: Vocab, path) -> None:
    """Write one token per line; line number i holds the token with id i."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh if line.strip()]
    return Vocab(tokens)
