# tests/test_text_service.py
import pytest

from services import text_service
from utils.constants import BOS_ID, EOS_ID, PAD_ID, SPECIAL_TOKENS, SUMMARY_SECTIONS, UNK_ID
from utils.exceptions import EmptyCorpus, MissingRequiredSection, ParseError


def full_summary(**bodies) -> str:
    return text_service.render_summary({name: bodies.get(name, "nothing notable") for name in SUMMARY_SECTIONS})


# --- TOKENIZER ---

def test_split_words_lowercases_and_splits_punctuation():
    assert text_service.split_words("Memory decline.") == ["memory", "decline", "."]
    assert text_service.split_words("") == []


def test_vocab_orders_by_frequency_then_lexicographic():
    vocab = text_service.build_vocab(["b a a", "c b"])
    assert vocab.tokens == SPECIAL_TOKENS + ("a", "b", "c")
    assert vocab.id_of("a", UNK_ID) == len(SPECIAL_TOKENS)


def test_vocab_min_freq_and_cap():
    vocab = text_service.build_vocab(["a a b"], min_freq=2)
    assert vocab.tokens == SPECIAL_TOKENS + ("a",)

    capped = text_service.build_vocab(["a a b b c d"], cap=len(SPECIAL_TOKENS) + 2)
    assert capped.tokens[len(SPECIAL_TOKENS):] == ("a", "b")


def test_empty_corpus_is_rejected():
    with pytest.raises(EmptyCorpus):
        text_service.build_vocab([])


def test_tokenize_wraps_and_pads():
    vocab = text_service.build_vocab(["memory decline ."])
    seq = text_service.tokenize("Memory decline.", vocab, max_len=8)
    assert seq.ids[0] == BOS_ID
    assert seq.ids[4] == EOS_ID
    assert seq.ids[5:] == (PAD_ID,) * 3
    assert seq.attention_mask == (True,) * 5 + (False,) * 3
    assert text_service.detokenize(seq, vocab) == "memory decline ."


def test_unknown_words_map_to_unk():
    vocab = text_service.build_vocab(["known"])
    seq = text_service.tokenize("known stranger", vocab, max_len=6)
    assert seq.ids[:4] == (BOS_ID, vocab.id_of("known", UNK_ID), UNK_ID, EOS_ID)


def test_empty_text_is_bos_eos_only():
    vocab = text_service.build_vocab(["x"])
    seq = text_service.tokenize("", vocab, max_len=4)
    assert seq.ids == (BOS_ID, EOS_ID, PAD_ID, PAD_ID)
    assert seq.n_real == 2


def test_truncation_keeps_eos_last():
    text = " ".join(f"w{i}" for i in range(20))
    vocab = text_service.build_vocab([text])
    seq = text_service.tokenize(text, vocab, max_len=16)
    assert len(seq.ids) == 16
    assert seq.ids[15] == EOS_ID
    assert all(seq.attention_mask)


# --- VOCABULARY FILE ---

def test_vocab_file_round_trip(tmp_path):
    vocab = text_service.build_vocab(["alpha beta beta"])
    path = text_service.save_vocab(vocab, tmp_path / "vocab.txt")
    assert text_service.load_vocab(path) == vocab


def test_vocab_file_must_start_with_specials(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("alpha\nbeta\n")
    with pytest.raises(ParseError):
        text_service.load_vocab(path)


# --- SUMMARY TEMPLATE ---

def test_rendered_summary_validates():
    record = text_service.validate_summary(full_summary())
    assert set(record.sections) == set(SUMMARY_SECTIONS)
    assert not record.unrecorded


def test_unrecorded_section_is_present_but_skipped():
    record = text_service.validate_summary(full_summary(**{"Physical status": "Unrecorded."}))
    assert "Physical status" in record.sections
    assert record.unrecorded == frozenset({"Physical status"})
    assert not record.is_recorded("Physical status")


def test_missing_section_lists_names():
    text = full_summary().replace("Daily Behavior:", "Hobbies:")
    with pytest.raises(MissingRequiredSection) as exc:
        text_service.validate_summary(text)
    assert exc.value.missing == ["Daily Behavior"]


def test_headers_are_case_insensitive_and_extras_kept():
    text = full_summary().replace("Physical status:", "PHYSICAL STATUS:") + "Caregiver:\nspouse\n"
    record = text_service.validate_summary(text)
    assert record.is_recorded("Physical status")
    assert record.extra == {"Caregiver": "spouse"}
