import pytest
from hypothesis import given
from hypothesis import strategies as st

from anchorstego.errors import MalformedSequence, UnknownToken
from anchorstego.vocab import byte_vocab, detokenize, tokenize, validate_tokens

VOCAB = byte_vocab()


def test_reference_vocab_layout():
    assert VOCAB.size == 259
    assert VOCAB.bos_id == 256
    assert VOCAB.eos_id == 257
    assert VOCAB.pad_id == 258
    assert VOCAB.is_reserved(256) and not VOCAB.is_reserved(0)


def test_tokenize_empty():
    assert tokenize(b"", VOCAB) == []


def test_tokenize_is_byte_identity():
    assert tokenize(b"AB", VOCAB) == [ord("A"), ord("B")]


def test_detokenize_empty():
    assert detokenize([], VOCAB) == b""


def test_trailing_eos_stripped():
    assert detokenize([ord("x"), VOCAB.eos_id], VOCAB) == b"x"


def test_interior_reserved_id_rejected():
    with pytest.raises(MalformedSequence):
        detokenize([ord("x"), VOCAB.bos_id, ord("y")], VOCAB)


def test_out_of_range_token_rejected():
    with pytest.raises(UnknownToken):
        detokenize([300], VOCAB)
    with pytest.raises(UnknownToken):
        validate_tokens([-1], VOCAB)


@given(st.binary(max_size=1024))
def test_round_trip_exact(blob):
    assert detokenize(tokenize(blob, VOCAB), VOCAB) == blob
