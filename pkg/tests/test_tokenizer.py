import numpy as np
import pytest

from vlatrainer.errors import TokenizerError
from vlatrainer.policy.tokenizer import (
    HALF_BIN_WIDTH,
    Vocabulary,
    action_to_bins,
    bins_to_action,
    decode_tokens,
    encode_action,
    tokenize_instruction,
)


def test_vocabulary_reserves_markers_and_sorts_words():
    vocab = Vocabulary.from_instructions(["put the bowl", "pick the cup"])

    assert vocab.pad_id == 0
    assert vocab.end_id == 1
    assert [vocab.words[w] for w in ("bowl", "cup", "pick", "put", "the")] == [2, 3, 4, 5, 6]
    assert vocab.action_token_base == 7
    assert vocab.vocab_size == 7 + 256


def test_encode_edges_and_center(vocab):
    bins = encode_action([-1, 0, 1, 0, 0, 0, 0], vocab) - vocab.action_token_base

    assert bins.tolist() == [0, 128, 255, 128, 128, 128, 128]


def test_bin_zero_center():
    assert bins_to_action(0) == pytest.approx(-0.99609375)


def test_round_trip_within_half_bin(vocab):
    rng = np.random.default_rng(3)
    for _ in range(200):
        action = rng.uniform(-1, 1, size=7)

        decoded = decode_tokens(encode_action(action, vocab), vocab)

        assert np.all(np.abs(decoded - action) <= HALF_BIN_WIDTH + 1e-12)


def test_out_of_range_actions_are_clamped(vocab):
    bins = encode_action([-3, 3, 0, 0, 0, 0, 0], vocab) - vocab.action_token_base

    assert bins[0] == 0
    assert bins[1] == 255


def test_action_to_bins_works_on_batches():
    assert action_to_bins(np.zeros((2, 7))).shape == (2, 7)


def test_wrong_action_length(vocab):
    with pytest.raises(TokenizerError):
        encode_action([0.0] * 6, vocab)


def test_non_finite_action_reports_position(vocab):
    with pytest.raises(TokenizerError) as error:
        encode_action([0, 0, np.nan, 0, 0, 0, 0], vocab)

    assert error.value.position == 2


def test_decode_rejects_instruction_tokens(vocab):
    tokens = encode_action(np.zeros(7), vocab)
    tokens[4] = vocab.end_id

    with pytest.raises(TokenizerError) as error:
        decode_tokens(tokens, vocab)

    assert error.value.position == 4


def test_decode_rejects_wrong_length(vocab):
    with pytest.raises(TokenizerError):
        decode_tokens([vocab.action_token_base] * 8, vocab)


def test_instruction_padding_and_unknown_word():
    vocab = Vocabulary.from_instructions(["pick the cup"], instruction_length=5)

    assert tokenize_instruction("pick the cup", vocab).tolist() == [3, 4, 2, 0, 0]
    with pytest.raises(TokenizerError) as error:
        tokenize_instruction("pick the plate", vocab)
    assert error.value.position == 2


def test_vocabulary_tsv_round_trip(vocab):
    assert Vocabulary.from_tsv(vocab.to_tsv()) == vocab


def test_vocabulary_tsv_requires_markers():
    with pytest.raises(ValueError):
        Vocabulary.from_tsv("<pad>\t1\n<end>\t0\n")
