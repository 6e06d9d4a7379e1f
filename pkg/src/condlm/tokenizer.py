"""Subword tokenizer: a unigram language model over word pieces.

Text is lowercased and split on whitespace; each word gets a leading
word-boundary marker (U+2581) and is segmented independently. A piece
inventory with log-probabilities is fit by EM over the segmentation
lattice, then pruned down to the target size. Encoding is either the
Viterbi (max-likelihood) segmentation or a sample from the exact lattice
posterior at a given temperature.

Ids 0..3 are reserved: pad, unknown, start-of-abstract, end-of-abstract.
Unknown characters segment as single-char unknown arcs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MARKER = "▁"  # word-boundary marker, one per word start
MAX_PIECE_LEN = 6  # seed pieces are substrings up to this length
PRUNE_STEP = 0.2   # fraction of prunable pieces dropped per outer round
UNK_SCORE = -100.0  # lattice arc score for a character no piece covers

PAD_ID = 0
UNK_ID = 1
START_ID = 2
END_ID = 3
NUM_SPECIALS = 4
SPECIAL_NAMES = ("pad", "unk", "start", "end")

FORMAT_VERSION = 1


@dataclass
class TokenizerModel:
    """A trained piece inventory. Immutable once built; safe to share."""

    pieces: dict[str, float]  # piece -> log probability, all <= 0 and finite
    id_of: dict[str, int] = field(default_factory=dict)
    piece_of: list[str] = field(default_factory=list)
    _word_cache: dict[str, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.id_of:
            # Deterministic id order: most probable first, ties lexicographic.
            ordered = sorted(self.pieces, key=lambda p: (-self.pieces[p], p))
            self.id_of = {p: NUM_SPECIALS + i for i, p in enumerate(ordered)}
            self.piece_of = ordered
        for p, lp in self.pieces.items():
            if not (math.isfinite(lp) and lp <= 0.0):
                raise ValueError(f"piece {p!r} has invalid log-probability {lp}")

    @property
    def vocab_size(self) -> int:
        return NUM_SPECIALS + len(self.pieces)

    def log_prob(self, piece: str) -> float:
        return self.pieces.get(piece, float("-inf"))


def _words(text: str) -> list[str]:
    return [MARKER + w for w in text.lower().split()]


def _arcs(word: str, pieces: dict[str, float], max_len: int | None = None):
    """All lattice arcs (start, end, piece, score) covering ``word``.

    Positions with no covering piece get a single-char unknown arc, so the
    lattice always spans the word.
    """
    n = len(word)
    if max_len is None:
        max_len = max((len(p) for p in pieces), default=1)
    arcs = []
    covered_from = [False] * n
    for i in range(n):
        for j in range(i + 1, min(n, i + max_len) + 1):
            piece = word[i:j]
            lp = pieces.get(piece)
            if lp is not None:
                arcs.append((i, j, piece, lp))
                covered_from[i] = True
    for i in range(n):
        if not covered_from[i]:
            arcs.append((i, i + 1, None, UNK_SCORE))
    return arcs


def _viterbi_word(word: str, pieces: dict[str, float]) -> tuple[list[str | None], float]:
    """Best segmentation of one marked word: (pieces, total score).

    ``None`` entries are unknown single characters.
    """
    n = len(word)
    best = [float("-inf")] * (n + 1)
    back: list[tuple[int, str | None] | None] = [None] * (n + 1)
    best[0] = 0.0
    arcs_at = [[] for _ in range(n)]
    for i, j, piece, lp in _arcs(word, pieces):
        arcs_at[i].append((j, piece, lp))
    for i in range(n):
        if best[i] == float("-inf"):
            continue
        for j, piece, lp in arcs_at[i]:
            s = best[i] + lp
            if s > best[j]:
                best[j] = s
                back[j] = (i, piece)
    out: list[str | None] = []
    pos = n
    while pos > 0:
        i, piece = back[pos]
        out.append(piece)
        pos = i
    out.reverse()
    return out, best[n]


def _sample_word(word: str, pieces: dict[str, float], temperature: float,
                 rng: np.random.Generator) -> list[str | None]:
    """Sample a segmentation with probability proportional to its
    lattice likelihood raised to 1/temperature (forward filter, backward
    sample). temperature -> 0 recovers the Viterbi path."""
    if temperature <= 0:
        return _viterbi_word(word, pieces)[0]
    n = len(word)
    inv = 1.0 / temperature
    arcs_into = [[] for _ in range(n + 1)]
    for i, j, piece, lp in _arcs(word, pieces):
        arcs_into[j].append((i, piece, lp * inv))
    alpha = np.full(n + 1, -np.inf)
    alpha[0] = 0.0
    for j in range(1, n + 1):
        scores = [alpha[i] + lp for i, _, lp in arcs_into[j]]
        if scores:
            alpha[j] = _logsumexp(scores)
    out: list[str | None] = []
    pos = n
    while pos > 0:
        options = arcs_into[pos]
        weights = np.array([alpha[i] + lp for i, _, lp in options])
        weights = np.exp(weights - weights.max())
        weights /= weights.sum()
        i, piece, _ = options[rng.choice(len(options), p=weights)]
        out.append(piece)
        pos = i
    out.reverse()
    return out


def _logsumexp(xs) -> float:
    m = max(xs)
    if m == float("-inf"):
        return m
    return m + math.log(sum(math.exp(x - m) for x in xs))


def _encode_word(model: TokenizerModel, word: str,
                 temperature: float | None = None,
                 rng: np.random.Generator | None = None) -> list[int]:
    if temperature is None:
        cached = model._word_cache.get(word)
        if cached is not None:
            return cached
        seg, _ = _viterbi_word(word, model.pieces)
        ids = [UNK_ID if p is None else model.id_of[p] for p in seg]
        model._word_cache[word] = ids
        return ids
    seg = _sample_word(word, model.pieces, temperature, rng)
    return [UNK_ID if p is None else model.id_of[p] for p in seg]


def encode_viterbi(model: TokenizerModel, text: str) -> list[int]:
    """Max-likelihood piece ids for ``text`` (lowercased, word by word)."""
    ids: list[int] = []
    for word in _words(text):
        ids.extend(_encode_word(model, word))
    return ids


def encode_sampled(model: TokenizerModel, text: str, temperature: float,
                   rng: np.random.Generator) -> list[int]:
    """Piece ids drawn from the exact lattice distribution per word."""
    ids: list[int] = []
    for word in _words(text):
        ids.extend(_encode_word(model, word, temperature, rng))
    return ids


def decode(model: TokenizerModel, ids) -> str:
    """Concatenate pieces, map the marker back to spaces. Specials vanish."""
    parts = []
    for i in ids:
        i = int(i)
        if i < NUM_SPECIALS:
            continue
        if i - NUM_SPECIALS >= len(model.piece_of):
            raise ValueError(f"token id {i} out of range for vocab of {model.vocab_size}")
        parts.append(model.piece_of[i - NUM_SPECIALS])
    return "".join(parts).replace(MARKER, " ").lstrip(" ")


# ---------------------------------------------------------------------------
# Training: EM over the segmentation lattice, then contribution-based pruning.

def _seed_pieces(word_counts: Counter) -> dict[str, float]:
    """Initial inventory: substrings up to MAX_PIECE_LEN seen at least twice,
    plus every character (guaranteed coverage). Probabilities start
    proportional to substring counts."""
    sub_counts: Counter = Counter()
    for word, freq in word_counts.items():
        n = len(word)
        for i in range(n):
            for j in range(i + 1, min(n, i + MAX_PIECE_LEN) + 1):
                sub_counts[word[i:j]] += freq
    seed = {s: c for s, c in sub_counts.items() if len(s) == 1 or c >= 2}
    total = sum(seed.values())
    return {s: math.log(c / total) for s, c in seed.items()}


def _em_step(pieces: dict[str, float], word_counts: Counter) -> tuple[dict[str, float], float]:
    """One EM step. Returns (updated log-probs, corpus log-likelihood under
    the *input* probabilities). Expected piece counts come from lattice
    forward-backward posteriors; the M-step renormalizes them."""
    expected: dict[str, float] = {p: 0.0 for p in pieces}
    loglik = 0.0
    max_len = max(len(p) for p in pieces)
    for word, freq in word_counts.items():
        n = len(word)
        arcs = _arcs(word, pieces, max_len)
        arcs_at = [[] for _ in range(n)]
        for i, j, piece, lp in arcs:
            arcs_at[i].append((j, piece, lp))
        alpha = np.full(n + 1, -np.inf)
        alpha[0] = 0.0
        for i in range(n):
            if alpha[i] == -np.inf:
                continue
            for j, piece, lp in arcs_at[i]:
                alpha[j] = np.logaddexp(alpha[j], alpha[i] + lp)
        beta = np.full(n + 1, -np.inf)
        beta[n] = 0.0
        for i in range(n - 1, -1, -1):
            for j, piece, lp in arcs_at[i]:
                beta[i] = np.logaddexp(beta[i], lp + beta[j])
        z = alpha[n]
        loglik += freq * z
        for i in range(n):
            if alpha[i] == -np.inf:
                continue
            for j, piece, lp in arcs_at[i]:
                if piece is None:
                    continue
                post = math.exp(alpha[i] + lp + beta[j] - z)
                expected[piece] += freq * post
    total = sum(expected.values())
    floor = 1e-300  # keep log finite; posteriors stay strictly positive
    updated = {p: math.log(max(c, floor) / total) for p, c in expected.items()}
    return updated, loglik


def _prune(pieces: dict[str, float], word_counts: Counter, target_pieces: int) -> dict[str, float]:
    """Drop the lowest-contribution multi-char pieces (at most PRUNE_STEP of
    them per call, never below the target). Contribution is the estimated
    likelihood loss if the piece were resegmented by the remaining inventory."""
    prunable = [p for p in pieces if len(p) > 1]
    if len(pieces) <= target_pieces or not prunable:
        return pieces
    expected: Counter = Counter()
    for word, freq in word_counts.items():
        seg, _ = _viterbi_word(word, pieces)
        for piece in seg:
            if piece is not None:
                expected[piece] += freq
    scores = []
    for p in prunable:
        count = expected.get(p, 0)
        if count == 0:
            scores.append((0.0, p))
            continue
        rest = dict(pieces)
        del rest[p]
        _, alt = _viterbi_word(p, rest)
        scores.append((count * (pieces[p] - alt), p))
    scores.sort()
    n_drop = min(max(1, int(len(prunable) * PRUNE_STEP)), len(pieces) - target_pieces)
    doomed = {p for _, p in scores[:n_drop]}
    return {p: lp for p, lp in pieces.items() if p not in doomed}


def train_unigram(sentences, target_vocab: int, seed: int = 0,
                  em_steps: int = 2, sample: int | None = None) -> TokenizerModel:
    """Fit the piece inventory on an iterable of sentences.

    ``target_vocab`` counts the four specials. ``sample`` caps the number of
    sentences used (uniform without replacement, seeded).
    """
    sentences = [s for s in sentences if s.strip()]
    if not sentences:
        raise DataError("tokenizer training corpus is empty")
    rng = np.random.default_rng(seed)
    if sample is not None and sample < len(sentences):
        idx = rng.choice(len(sentences), size=sample, replace=False)
        sentences = [sentences[i] for i in sorted(idx)]
    word_counts: Counter = Counter()
    for s in sentences:
        word_counts.update(_words(s))

    pieces = _seed_pieces(word_counts)
    alphabet = {c for w in word_counts for c in w}
    if target_vocab < len(alphabet) + NUM_SPECIALS:
        raise DataError(
            f"target vocab {target_vocab} cannot cover {len(alphabet)} characters plus {NUM_SPECIALS} specials")
    target_pieces = target_vocab - NUM_SPECIALS

    while True:
        for _ in range(em_steps):
            pieces, _ = _em_step(pieces, word_counts)
        if len(pieces) <= target_pieces:
            break
        pruned = _prune(pieces, word_counts, target_pieces)
        if len(pruned) == len(pieces):
            break
        # Renormalize the survivors before the next EM round.
        total = _logsumexp(list(pruned.values()))
        pieces = {p: lp - total for p, lp in pruned.items()}
    pieces, _ = _em_step(pieces, word_counts)
    return TokenizerModel(pieces)


# ---------------------------------------------------------------------------
# Model file: version line, special assignments, then piece\tlog_prob rows.

def save_tokenizer(model: TokenizerModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#version\t{FORMAT_VERSION}\n")
        for name, sid in zip(SPECIAL_NAMES, range(NUM_SPECIALS)):
            f.write(f"#special\t{name}\t{sid}\n")
        for piece in model.piece_of:
            f.write(f"{piece}\t{model.pieces[piece]!r}\n")


def load_tokenizer(path) -> TokenizerModel:
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read tokenizer model {path}: {e}") from None
    if not lines or not lines[0].startswith("#version\t"):
        raise DataError(f"{path} is not a tokenizer model (missing version line)")
    version = int(lines[0].split("\t")[1])
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported tokenizer format version {version}")
    pieces: dict[str, float] = {}
    id_of: dict[str, int] = {}
    piece_of: list[str] = []
    next_id = NUM_SPECIALS
    for line in lines[1:]:
        if line.startswith("#special\t"):
            _, name, sid = line.split("\t")
            if SPECIAL_NAMES[int(sid)] != name:
                raise DataError(f"unexpected special assignment {name}={sid} in {path}")
            continue
        if not line:
            continue
        piece, lp = line.split("\t")
        pieces[piece] = float(lp)
        id_of[piece] = next_id
        piece_of.append(piece)
        next_id += 1
    return TokenizerModel(pieces, id_of=id_of, piece_of=piece_of)
