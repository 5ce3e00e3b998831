# services/text_service.py
import re
from collections import Counter
from pathlib import Path
from typing import Dict, List, Sequence

from models import SummaryRecord, TokenSequence, Vocabulary
from utils.constants import (
    BOS_ID, EOS_ID, PAD_ID, SPECIAL_TOKENS, SUMMARY_SECTIONS, UNK_ID, UNRECORDED_MARKER,
)
from utils.exceptions import EmptyCorpus, MissingFile, MissingRequiredSection, ParseError
from utils.logger import setup_logger

logger = setup_logger("text")

# words, or any single punctuation character
TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")
_CANONICAL = {name.lower(): name for name in SUMMARY_SECTIONS}


# --- TOKENIZER ---

def split_words(text: str) -> List[str]:
    """Lowercase, then split on whitespace and punctuation boundaries."""
    return TOKEN_PATTERN.findall(text.lower())


def build_vocab(corpus: Sequence[str], min_freq: int = 1, cap: int = 2048) -> Vocabulary:
    """Specials first, then tokens by descending frequency, ties lexicographic."""
    if not corpus:
        raise EmptyCorpus("Cannot build a vocabulary from an empty corpus")
    if cap < len(SPECIAL_TOKENS):
        raise ValueError(f"Vocabulary cap {cap} leaves no room for the special tokens")

    counts = Counter()
    for document in corpus:
        counts.update(split_words(document))

    ranked = sorted((tok for tok, n in counts.items() if n >= min_freq), key=lambda t: (-counts[t], t))
    tokens = SPECIAL_TOKENS + tuple(ranked[:cap - len(SPECIAL_TOKENS)])
    logger.info(f"Vocabulary built: {len(tokens)} tokens from {len(corpus)} documents "
                f"({len(counts)} distinct words, min_freq={min_freq}, cap={cap})")
    return Vocabulary(tokens=tokens)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = [BOS_ID] + [vocab.id_of(word, UNK_ID) for word in split_words(text)] + [EOS_ID]
    if len(ids) > max_len:
        ids = ids[:max_len - 1] + [EOS_ID]
    n_real = len(ids)
    ids = ids + [PAD_ID] * (max_len - n_real)
    return TokenSequence(ids=tuple(ids), attention_mask=tuple([True] * n_real + [False] * (max_len - n_real)))


def detokenize(sequence: TokenSequence, vocab: Vocabulary) -> str:
    """Join the real non-special tokens back with spaces."""
    words = [vocab.tokens[i] for i, real in zip(sequence.ids, sequence.attention_mask)
             if real and i >= len(SPECIAL_TOKENS)]
    return " ".join(words)


# --- VOCABULARY FILE ---

def save_vocab(vocab: Vocabulary, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")
    return path


def load_vocab(path) -> Vocabulary:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    tokens = tuple(path.read_text(encoding="utf-8").splitlines())
    if tokens[:len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
        raise ParseError(f"{path} does not start with the special tokens {SPECIAL_TOKENS}", line=1)
    if len(set(tokens)) != len(tokens):
        raise ParseError(f"{path} repeats a token")
    return Vocabulary(tokens=tokens)


# --- SUMMARY TEMPLATE ---

def validate_summary(text: str) -> SummaryRecord:
    """
    Parse '<Name>:' header lines into the template sections.
    Unknown headers land in `extra`; a body reading 'unrecorded' marks the section as skipped.
    """
    sections: Dict[str, List[str]] = {}
    extra: Dict[str, List[str]] = {}
    preamble: List[str] = []
    current = None

    for raw in text.splitlines():
        line = raw.strip()
        if line.endswith(":") and len(line) > 1:
            header = line[:-1].strip()
            canonical = _CANONICAL.get(header.lower())
            if canonical:
                current = sections.setdefault(canonical, [])
            else:
                current = extra.setdefault(header, [])
            continue
        if current is None:
            if line:
                preamble.append(line)
            continue
        if line:
            current.append(line)

    bodies = {name: "\n".join(lines) for name, lines in sections.items()}
    unrecorded = frozenset(name for name, body in bodies.items()
                           if body.strip().rstrip(".").lower() == UNRECORDED_MARKER)
    missing = [name for name in SUMMARY_SECTIONS if name not in bodies]
    if missing:
        raise MissingRequiredSection(missing)

    return SummaryRecord(sections=bodies, unrecorded=unrecorded,
                         extra={name: "\n".join(lines) for name, lines in extra.items()},
                         preamble="\n".join(preamble))


def render_summary(sections: Dict[str, str]) -> str:
    """Lay sections out in template order, one '<Name>:' header line each."""
    blocks = []
    for name in SUMMARY_SECTIONS:
        body = sections.get(name, UNRECORDED_MARKER)
        blocks.append(f"{name}:\n{body}")
    for name, body in sections.items():
        if name not in SUMMARY_SECTIONS:
            blocks.append(f"{name}:\n{body}")
    return "\n".join(blocks) + "\n"


def read_summary(path) -> str:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    return path.read_text(encoding="utf-8")
