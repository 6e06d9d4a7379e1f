import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condlm import tokenizer as tk
from condlm.errors import DataError

from oracles import o_best_segmentation_score, o_em_step, o_segmentations

# Hand lattice: P(▁)=1 (normalization aside), the interesting mass is on
# splitting "ab" as one piece vs two.
HAND = {"▁": 0.0, "a": -1.0, "b": -1.0, "ab": -1.5}


def hand_model():
    return tk.TokenizerModel(dict(HAND))


def test_special_ids_fixed():
    assert (tk.PAD_ID, tk.UNK_ID, tk.START_ID, tk.END_ID) == (0, 1, 2, 3)
    assert tk.NUM_SPECIALS == 4


def test_viterbi_prefers_single_piece():
    seg, score = tk._viterbi_word("▁ab", HAND)
    assert seg == ["▁", "ab"]
    assert score == pytest.approx(-1.5, abs=1e-12)


def test_viterbi_matches_enumeration_on_hand_vocab():
    for length in range(1, 9):
        for chars in itertools.product("ab", repeat=length):
            word = "▁" + "".join(chars)
            seg, score = tk._viterbi_word(word, HAND)
            assert None not in seg
            assert score == pytest.approx(sum(HAND[p] for p in seg), abs=1e-12)
            assert score == pytest.approx(
                o_best_segmentation_score(word, HAND), abs=1e-9)


def test_viterbi_matches_enumeration_on_random_vocabs():
    for seed in (7, 19):
        rng = np.random.default_rng(seed)
        pieces = {c: float(-rng.uniform(0.5, 3.0)) for c in "▁ab"}
        pool = ["ab", "ba", "aa", "bb", "aba", "bab", "▁a", "▁b", "abab"]
        for p in rng.choice(pool, size=6, replace=False):
            pieces[str(p)] = float(-rng.uniform(0.5, 4.0))
        for length in range(1, 9):
            for chars in itertools.product("ab", repeat=length):
                word = "▁" + "".join(chars)
                _, score = tk._viterbi_word(word, pieces)
                assert score == pytest.approx(
                    o_best_segmentation_score(word, pieces), abs=1e-9)


def test_sampled_segmentation_frequency():
    # P(["▁","ab"]) = e^-1.5 / (e^-1.5 + e^-2) at temperature 1
    model = hand_model()
    expected = math.exp(-1.5) / (math.exp(-1.5) + math.exp(-2.0))
    rng = np.random.default_rng(0)
    draws = 10_000
    single = sum(
        tk.encode_sampled(model, "ab", 1.0, rng) == [model.id_of["▁"], model.id_of["ab"]]
        for _ in range(draws))
    sigma = math.sqrt(expected * (1 - expected) / draws)
    assert abs(single / draws - expected) < 3 * sigma


def test_low_temperature_collapses_to_viterbi():
    model = hand_model()
    rng = np.random.default_rng(1)
    best = tk.encode_viterbi(model, "ab")
    for _ in range(200):
        assert tk.encode_sampled(model, "ab", 0.01, rng) == best
    # temperature <= 0 short-circuits to the Viterbi path
    assert tk.encode_sampled(model, "ab", 0.0, rng) == best


def test_high_temperature_flattens_distribution():
    model = hand_model()
    rng = np.random.default_rng(2)
    draws = 4000
    target = [model.id_of["▁"], model.id_of["ab"]]
    freq = sum(tk.encode_sampled(model, "ab", 25.0, rng) == target
               for _ in range(draws)) / draws
    assert abs(freq - 0.5) < 0.03  # near-uniform over the two segmentations


def test_unknown_characters_become_unk_ids():
    model = hand_model()
    ids = tk.encode_viterbi(model, "xy")
    assert ids == [model.id_of["▁"], tk.UNK_ID, tk.UNK_ID]
    assert tk.decode(model, ids) == ""


def test_decode_drops_specials_and_restores_spaces():
    model = hand_model()
    ids = [tk.START_ID] + tk.encode_viterbi(model, "ab a b") + [tk.END_ID, tk.PAD_ID]
    assert tk.decode(model, ids) == "ab a b"
    assert tk.decode(model, [tk.PAD_ID, tk.END_ID]) == ""
    with pytest.raises(ValueError):
        tk.decode(model, [model.vocab_size])


def test_encode_is_deterministic_and_cached():
    model = hand_model()
    first = tk.encode_viterbi(model, "ab ab")
    assert first == tk.encode_viterbi(model, "ab ab")
    assert first[:2] == first[2:]


# --- EM against enumeration ---------------------------------------------------

def em_corpus():
    return Counter({"▁abc": 3, "▁ab": 2, "▁bc": 2, "▁c": 1})


def test_em_step_matches_enumeration_oracle():
    counts = em_corpus()
    pieces = tk._seed_pieces(counts)
    oracle = dict(pieces)
    for _ in range(3):
        pieces, ll = tk._em_step(pieces, counts)
        oracle, o_ll = o_em_step(oracle, counts)
        assert ll == pytest.approx(o_ll, abs=1e-9)
        assert set(pieces) == set(oracle)
        for p in pieces:
            assert pieces[p] == pytest.approx(oracle[p], abs=1e-9)


def test_em_loglik_is_monotone():
    counts = em_corpus()
    pieces = tk._seed_pieces(counts)
    lls = []
    for _ in range(6):
        pieces, ll = tk._em_step(pieces, counts)
        lls.append(ll)
    for a, b in zip(lls, lls[1:]):
        assert b >= a - 1e-9


def test_seed_pieces_coverage_and_frequency_threshold():
    counts = Counter({"▁xyz": 1})
    seed = tk._seed_pieces(counts)
    # singleton multi-char substrings are excluded, chars always kept
    assert set(seed) == {"▁", "x", "y", "z"}
    counts = Counter({"▁xy": 2})
    seed = tk._seed_pieces(counts)
    assert "▁xy" in seed and "xy" in seed and "▁x" in seed


def test_trained_model_prefers_frequent_whole_words():
    # "abc" occurs often; after EM its one-piece segmentation must win.
    sentences = ["abc abc abc abc", "ab c", "abc bc"]
    model = tk.train_unigram(sentences, target_vocab=30, seed=0)
    assert tk.decode(model, tk.encode_viterbi(model, "abc")) == "abc"
    assert model.log_prob("▁abc") > model.log_prob("▁a") + model.log_prob("bc")


# --- full training -------------------------------------------------------------

def test_train_reaches_target_vocab(toy_tok):
    assert toy_tok.vocab_size == 160
    ids = sorted(toy_tok.id_of.values())
    assert ids == list(range(tk.NUM_SPECIALS, toy_tok.vocab_size))
    assert toy_tok.piece_of == [p for p, _ in sorted(
        toy_tok.pieces.items(), key=lambda kv: (-kv[1], kv[0]))]
    # all log-probabilities are proper
    assert all(math.isfinite(lp) and lp <= 0 for lp in toy_tok.pieces.values())


def test_training_is_deterministic():
    sentences = ["the cell line", "the gene line", "cell and gene"]
    a = tk.train_unigram(sentences, target_vocab=40, seed=3)
    b = tk.train_unigram(sentences, target_vocab=40, seed=3)
    assert a.pieces == b.pieces
    assert a.id_of == b.id_of


def test_training_subsample_is_seeded():
    sentences = [f"word{i} text" for i in range(20)]
    a = tk.train_unigram(sentences, target_vocab=60, seed=5, sample=4)
    b = tk.train_unigram(sentences, target_vocab=60, seed=5, sample=4)
    assert a.pieces == b.pieces


def test_training_errors():
    with pytest.raises(DataError):
        tk.train_unigram([], target_vocab=100)
    with pytest.raises(DataError):
        tk.train_unigram(["   ", ""], target_vocab=100)
    with pytest.raises(DataError, match="cannot cover"):
        # alphabet is {▁, a, b, c}: 4 chars + 4 specials > 7
        tk.train_unigram(["ab c"], target_vocab=7)


def test_roundtrip_on_training_corpus(toy_records, toy_tok):
    for rec in toy_records:
        for text in [rec.title_text()] + rec.sentence_texts():
            ids = tk.encode_viterbi(toy_tok, text)
            assert tk.decode(toy_tok, ids) == " ".join(text.lower().split())
            assert all(i >= tk.NUM_SPECIALS for i in ids)  # fully covered


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet="abcd", min_size=1, max_size=7), min_size=1, max_size=6))
def test_roundtrip_over_known_alphabet(words):
    model = tk.train_unigram(["a b c d ab cd abcd abcd"], target_vocab=20, seed=0)
    text = " ".join(words)
    assert tk.decode(model, tk.encode_viterbi(model, text)) == text


def test_roundtrip_normalizes_case_and_whitespace():
    model = hand_model()
    assert tk.decode(model, tk.encode_viterbi(model, "  AB   a\tB ")) == "ab a b"


# --- save / load ---------------------------------------------------------------

def test_save_load_roundtrip(tmp_path, toy_tok):
    path = tmp_path / "tok.tsv"
    tk.save_tokenizer(toy_tok, path)
    loaded = tk.load_tokenizer(path)
    assert loaded.pieces == toy_tok.pieces  # repr() round-trips floats exactly
    assert loaded.id_of == toy_tok.id_of
    assert loaded.piece_of == toy_tok.piece_of
    second = tmp_path / "tok2.tsv"
    tk.save_tokenizer(loaded, second)
    assert path.read_bytes() == second.read_bytes()


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("not a model\n")
    with pytest.raises(DataError, match="version"):
        tk.load_tokenizer(p)
    p.write_text("#version\t99\n")
    with pytest.raises(DataError, match="version 99"):
        tk.load_tokenizer(p)
    with pytest.raises(DataError):
        tk.load_tokenizer(tmp_path / "missing.tsv")


def test_model_rejects_invalid_logprobs():
    with pytest.raises(ValueError):
        tk.TokenizerModel({"a": 0.5})
    with pytest.raises(ValueError):
        tk.TokenizerModel({"a": float("-inf")})


def test_oracle_segmentation_counts():
    # sanity on the test oracle itself: "▁ab" has exactly two segmentations
    segs = list(o_segmentations("▁ab", HAND))
    assert sorted(map(tuple, segs)) == [("▁", "a", "b"), ("▁", "ab")]
