"""Closed-vocabulary grapheme-to-phoneme lookup.

The synthetic corpus speaks a small made-up language of CVC-ish words so
transcripts can be phonemized with a static table.  External corpora must
supply phoneme ids directly in their manifests.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput

# id 0 is the pause/silence symbol; word boundaries are rendered as pauses.
PHONEMES = (
    "pau",
    "a", "e", "i", "o", "u",
    "m", "n", "l",
    "s", "f", "x",
    "t", "k",
)
PHONEME_TO_ID = {p: i for i, p in enumerate(PHONEMES)}
VOCAB_SIZE = len(PHONEMES)
PAU = PHONEME_TO_ID["pau"]

WORDS = {
    "ama": ("a", "m", "a"),
    "emi": ("e", "m", "i"),
    "ilu": ("i", "l", "u"),
    "oko": ("o", "k", "o"),
    "usu": ("u", "s", "u"),
    "ale": ("a", "l", "e"),
    "omi": ("o", "m", "i"),
    "eno": ("e", "n", "o"),
    "ika": ("i", "k", "a"),
    "ulo": ("u", "l", "o"),
    "asa": ("a", "s", "a"),
    "efa": ("e", "f", "a"),
    "ime": ("i", "m", "e"),
    "ota": ("o", "t", "a"),
    "uke": ("u", "k", "e"),
    "ona": ("o", "n", "a"),
    "exa": ("e", "x", "a"),
    "imo": ("i", "m", "o"),
    "aku": ("a", "k", "u"),
    "use": ("u", "s", "e"),
    "afo": ("a", "f", "o"),
    "eli": ("e", "l", "i"),
    "oxa": ("o", "x", "a"),
    "unu": ("u", "n", "u"),
}
WORD_LIST = tuple(sorted(WORDS))


def pronounce(word: str) -> tuple[str, ...]:
    try:
        return WORDS[word]
    except KeyError:
        raise InvalidInput(f"word {word!r} is not in the bundled vocabulary") from None


def text_to_phonemes(text: str) -> np.ndarray:
    """Phoneme ids for a whitespace-separated sentence, with pauses at word
    boundaries and at both ends."""
    words = text.lower().split()
    if not words:
        raise InvalidInput("empty text")
    ids = [PAU]
    for word in words:
        ids.extend(PHONEME_TO_ID[p] for p in pronounce(word))
        ids.append(PAU)
    return np.asarray(ids, dtype=np.int64)


def validate_phonemes(ids: np.ndarray, vocab_size: int = VOCAB_SIZE) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 1:
        raise InvalidInput(f"phoneme sequence must be 1-D and non-empty, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise InvalidInput(f"phoneme id out of range [0, {vocab_size})")
    return ids
