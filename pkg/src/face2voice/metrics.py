"""Objective evaluation: CER, SECS, SED, consistency, and the loss ablation.

Speaker embeddings and transcription are pluggable interfaces.  The bundled
defaults keep evaluation self-contained: the toolkit's own trained speech
encoder (L2-normalized) embeds speakers, and an oracle transcriber scores
synthesized audio by forced-aligning it against a closed set of known
contents.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np
import torch

from . import g2p
from .audio import MelSpectrogram, Waveform, compute_mel, griffin_lim
from .corpus import CorpusExample, FaceImage
from .errors import DegenerateVector, InvalidInput
from .face import (
    FaceEncoder,
    FaceTrainConfig,
    MappingLossConfig,
    synthesize_from_face,
    train_face_encoder,
)
from .plm import ProsodyLanguageModel, SamplingConfig
from .tts import TtsModel, monotonic_align


# ---------------------------------------------------------------------------
# string and vector metrics
# ---------------------------------------------------------------------------

def _normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(reference: str, hypothesis: str) -> float:
    """Character error rate in percent (edits / reference length * 100)."""
    ref = _normalize_text(reference)
    hyp = _normalize_text(hypothesis)
    if not ref:
        raise InvalidInput("reference must be non-empty")
    return 100.0 * levenshtein(ref, hyp) / len(ref)


class SpeakerEmbedder(Protocol):
    def embed(self, w: Waveform) -> np.ndarray: ...


class Transcriber(Protocol):
    def transcribe(self, w: Waveform) -> str: ...


def _unit(vec: np.ndarray, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise DegenerateVector(f"zero-norm {what} embedding")
    return vec / norm


def secs(a: Waveform, b: Waveform, emb: SpeakerEmbedder) -> float:
    """Speaker-embedding cosine similarity on the x100 scale."""
    return 100.0 * float(np.dot(_unit(emb.embed(a), "speaker"), _unit(emb.embed(b), "speaker")))


def sed(waves: list[Waveform], emb: SpeakerEmbedder) -> float:
    """Mean pairwise SECS across a set of voices (lower = more diverse)."""
    if len(waves) < 2:
        raise InvalidInput("SED needs at least 2 waveforms")
    units = [_unit(emb.embed(w), "speaker") for w in waves]
    total, count = 0.0, 0
    for i in range(len(units)):
        for j in range(i + 1, len(units)):
            total += 100.0 * float(np.dot(units[i], units[j]))
            count += 1
    return total / count


class TtsSpeakerEmbedder:
    """Default embedder: the toolkit's trained speech encoder, L2-normalized."""

    def __init__(self, tts: TtsModel):
        self.tts = tts

    def embed(self, w: Waveform) -> np.ndarray:
        with torch.no_grad():
            s = self.tts.encode_speech(compute_mel(w, self.tts.audio)).numpy()
        return _unit(s, "speaker")


class OracleTranscriber:
    """Transcriber for the synthetic corpus: forced-decodes audio against a
    closed set of stored contents and returns the best-matching rendering.

    CER against it measures whether synthesized audio aligns best to its own
    content rather than to a competing one.
    """

    def __init__(self, texts: list[str], tts: TtsModel):
        seen = dict.fromkeys(_normalize_text(t) for t in texts)
        self.candidates = [(t, g2p.text_to_phonemes(t)) for t in seen]
        if not self.candidates:
            raise InvalidInput("transcriber needs at least one candidate content")
        self.tts = tts

    def transcribe(self, w: Waveform) -> str:
        mel = compute_mel(w, self.tts.audio)
        best_text, best_score = "", -np.inf
        for text, ids in self.candidates:
            if ids.size > mel.n_frames:
                continue
            sim = self.tts.alignment_scores(ids, mel)
            durations = monotonic_align(sim)
            assign = np.repeat(np.arange(ids.size), durations)
            score = float(sim[assign, np.arange(mel.n_frames)].sum())
            if score > best_score:
                best_text, best_score = text, score
        return best_text


# ---------------------------------------------------------------------------
# synthesis-level evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    griffin_lim_iters: int = 64
    words_per_text: int = 2


@dataclass
class IdentityEval:
    speaker_id: str
    text: str
    waveform: Waveform
    reference: Waveform
    secs_to_reference: float
    cer_percent: float


def _pick_text(rng: np.random.Generator, n_words: int) -> str:
    return " ".join(g2p.WORD_LIST[i] for i in rng.integers(0, len(g2p.WORD_LIST), n_words))


def synthesize_waveform(
    image: FaceImage,
    text: str,
    prompt: tuple[MelSpectrogram, np.ndarray],
    tts: TtsModel,
    plm: ProsodyLanguageModel,
    encoder: FaceEncoder,
    cfg: EvalConfig,
) -> Waveform:
    mel = synthesize_from_face(
        image,
        g2p.text_to_phonemes(text),
        prompt,
        tts,
        plm,
        encoder,
        sampling=SamplingConfig(seed=cfg.seed),
        noise_seed=cfg.seed,
    )
    return griffin_lim(mel, tts.audio, n_iters=cfg.griffin_lim_iters, seed=cfg.seed)


def evaluate_identities(
    held_out: dict[str, list[CorpusExample]],
    prompt_pool: list[CorpusExample],
    tts: TtsModel,
    plm: ProsodyLanguageModel,
    encoder: FaceEncoder,
    cfg: EvalConfig,
    emb: SpeakerEmbedder | None = None,
    transcriber: Transcriber | None = None,
) -> tuple[list[IdentityEval], dict]:
    """Synthesize one utterance per held-out identity and score it.

    Per identity: a seeded target text, the identity's first face frame, a
    seeded prompt from the pool, CER via the transcriber, and SECS against one
    seeded held-out reference utterance of the same identity.
    """
    if not held_out:
        raise InvalidInput("no held-out identities to evaluate")
    if not prompt_pool:
        raise InvalidInput("prompt pool is empty")
    rng = np.random.default_rng(cfg.seed)
    emb = emb or TtsSpeakerEmbedder(tts)
    texts = {spk: _pick_text(rng, cfg.words_per_text) for spk in sorted(held_out)}
    transcriber = transcriber or OracleTranscriber(list(texts.values()), tts)
    results: list[IdentityEval] = []
    for spk in sorted(held_out):
        examples = held_out[spk]
        faces = [ex for ex in examples if ex.face is not None]
        if not faces:
            raise InvalidInput(f"identity {spk} has no face frames")
        prompt_ex = prompt_pool[int(rng.integers(0, len(prompt_pool)))]
        prompt = (compute_mel(prompt_ex.waveform, tts.audio), prompt_ex.transcript)
        reference = examples[int(rng.integers(0, len(examples)))].waveform
        wave = synthesize_waveform(faces[0].face, texts[spk], prompt, tts, plm, encoder, cfg)
        results.append(
            IdentityEval(
                speaker_id=spk,
                text=texts[spk],
                waveform=wave,
                reference=reference,
                secs_to_reference=secs(wave, reference, emb),
                cer_percent=cer(texts[spk], transcriber.transcribe(wave)),
            )
        )
    summary = {
        "cer": float(np.mean([r.cer_percent for r in results])),
        "secs": float(np.mean([r.secs_to_reference for r in results])),
        "sed": sed([r.waveform for r in results], emb),
        "n": len(results),
    }
    return results, summary


def retrieval_recall_at_1(
    held_out: dict[str, list[CorpusExample]],
    tts: TtsModel,
    encoder: FaceEncoder,
) -> float:
    """Fraction of held-out identities whose face vector retrieves their own
    mean speech vector under the cosine metric."""
    speakers = sorted(held_out)
    if not speakers:
        raise InvalidInput("no identities for retrieval")
    v_rows, s_rows = [], []
    with torch.no_grad():
        for spk in speakers:
            examples = held_out[spk]
            faces = [ex for ex in examples if ex.face is not None]
            if not faces:
                raise InvalidInput(f"identity {spk} has no face frames")
            v_rows.append(encoder.encode_face(faces[0].face).numpy())
            vectors = [
                tts.encode_speech(compute_mel(ex.waveform, tts.audio)).numpy() for ex in examples
            ]
            s_rows.append(np.mean(vectors, axis=0))
    v = np.stack([_unit(row, "face") for row in v_rows])
    s = np.stack([_unit(row, "speech") for row in s_rows])
    hits = (np.argmax(v @ s.T, axis=1) == np.arange(len(speakers))).sum()
    return float(hits) / len(speakers)


def consistency_test(
    frames: list[FaceImage],
    text: str,
    prompt: tuple[MelSpectrogram, np.ndarray],
    tts: TtsModel,
    plm: ProsodyLanguageModel,
    encoder: FaceEncoder,
    cfg: EvalConfig,
    emb: SpeakerEmbedder | None = None,
) -> tuple[np.ndarray, float]:
    """Pairwise SECS matrix over syntheses from several frames of one identity
    (identical text/prompt/seed), plus its off-diagonal mean."""
    if len(frames) < 2:
        raise InvalidInput("consistency test needs at least 2 frames")
    emb = emb or TtsSpeakerEmbedder(tts)
    waves = [synthesize_waveform(f, text, prompt, tts, plm, encoder, cfg) for f in frames]
    units = np.stack([_unit(emb.embed(w), "speaker") for w in waves])
    matrix = 100.0 * (units @ units.T)
    off = matrix[~np.eye(len(frames), dtype=bool)]
    return matrix, float(off.mean())


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------

def run_ablation(
    train_examples: list[CorpusExample],
    held_out: dict[str, list[CorpusExample]],
    tts: TtsModel,
    plm: ProsodyLanguageModel,
    face_cfg: FaceTrainConfig,
    eval_cfg: EvalConfig,
    variants: tuple[str, ...] = ("mse_cos", "mse_cos_triplet", "mse_cos_contrastive"),
) -> list[dict]:
    """Train one face encoder per loss variant with identical seeds/budgets and
    report CER/SECS/SED plus v->s retrieval recall@1 for each."""
    from .face import speech_vector_table

    paired = [ex for ex in train_examples if ex.face is not None]
    cached = speech_vector_table(paired, tts)
    rows = []
    for variant in variants:
        cfg = replace(face_cfg, loss=replace(face_cfg.loss, variant=variant))
        encoder, _ = train_face_encoder(paired, tts, cfg, cached_vectors=cached)
        _, summary = evaluate_identities(held_out, paired, tts, plm, encoder, eval_cfg)
        rows.append(
            {
                "variant": variant,
                "cer": summary["cer"],
                "secs": summary["secs"],
                "sed": summary["sed"],
                "n": summary["n"],
                "recall1": retrieval_recall_at_1(held_out, tts, encoder),
            }
        )
    return rows


def group_by_speaker(examples: list[CorpusExample]) -> dict[str, list[CorpusExample]]:
    grouped: dict[str, list[CorpusExample]] = {}
    for ex in examples:
        grouped.setdefault(ex.speaker_id, []).append(ex)
    return grouped
