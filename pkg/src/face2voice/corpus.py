"""Corpus containers, manifest I/O, and a deterministic synthetic audiovisual corpus.

Each synthetic speaker is a latent identity pair (f0_base, formant_shift).
Utterances are harmonic-plus-noise renderings of random phoneme strings driven
by those factors; face images are flat-shaded geometric renders whose layout
is a fixed affine function of the same factors plus per-frame jitter.  Voice
and image therefore share identity ground truth, which the evaluation harness
relies on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import g2p
from .audio import AudioConfig, Waveform, read_wav, write_wav
from .errors import InvalidInput, ManifestError

IMAGE_SIZE = 224
LAYOUT_DIM = 10
LAYOUT_JITTER_BOUND = 3.0  # pixels, hard clip on per-frame jitter

F0_RANGE = (90.0, 280.0)
FORMANT_SHIFT_RANGE = (0.8, 1.25)


@dataclass(frozen=True)
class SpeakerIdentity:
    speaker_id: str
    f0_base: float
    formant_shift: float


@dataclass
class FaceImage:
    pixels: np.ndarray  # (3, 224, 224), values in [0, 1]

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise InvalidInput(f"face image must be 3x{IMAGE_SIZE}x{IMAGE_SIZE}, got {self.pixels.shape}")
        self.pixels = np.clip(self.pixels, 0.0, 1.0)


@dataclass
class CorpusExample:
    utt_id: str
    waveform: Waveform
    transcript: np.ndarray  # phoneme ids
    text: str
    speaker_id: str
    face: FaceImage | None = None
    frame_index: int | None = None


@dataclass
class SyntheticCorpus:
    examples: list[CorpusExample]
    speakers: dict[str, SpeakerIdentity]
    faces: dict[tuple[str, int], FaceImage]
    face_layouts: dict[tuple[str, int], np.ndarray]
    audio: AudioConfig = field(default_factory=AudioConfig)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def speaker_ids(self) -> list[str]:
        return sorted(self.speakers)

    def examples_of(self, speaker_id: str) -> list[CorpusExample]:
        return [e for e in self.examples if e.speaker_id == speaker_id]

    def frames_of(self, speaker_id: str) -> list[FaceImage]:
        keys = sorted(k for k in self.faces if k[0] == speaker_id)
        return [self.faces[k] for k in keys]


# ---------------------------------------------------------------------------
# acoustic phoneme models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Phone:
    kind: str  # pause | vowel | nasal | liquid | fricative | plosive
    formants: tuple[float, float, float] = (500.0, 1500.0, 2500.0)
    voiced_amp: float = 0.0
    noise_band: tuple[float, float] = (0.0, 0.0)
    noise_amp: float = 0.0
    base_ms: float = 100.0


_ACOUSTICS = {
    "pau": _Phone("pause", base_ms=60.0),
    "a": _Phone("vowel", (800.0, 1200.0, 2550.0), 0.50, base_ms=125.0),
    "e": _Phone("vowel", (500.0, 1900.0, 2550.0), 0.50, base_ms=125.0),
    "i": _Phone("vowel", (300.0, 2300.0, 3000.0), 0.50, base_ms=125.0),
    "o": _Phone("vowel", (450.0, 800.0, 2500.0), 0.50, base_ms=125.0),
    "u": _Phone("vowel", (325.0, 700.0, 2530.0), 0.50, base_ms=125.0),
    "m": _Phone("nasal", (250.0, 1100.0, 2200.0), 0.28, base_ms=80.0),
    "n": _Phone("nasal", (250.0, 1450.0, 2300.0), 0.28, base_ms=80.0),
    "l": _Phone("liquid", (360.0, 1050.0, 2600.0), 0.38, base_ms=80.0),
    "s": _Phone("fricative", noise_band=(4500.0, 7800.0), noise_amp=0.18, base_ms=95.0),
    "f": _Phone("fricative", noise_band=(1500.0, 7000.0), noise_amp=0.12, base_ms=95.0),
    "x": _Phone("fricative", noise_band=(2000.0, 6000.0), noise_amp=0.16, base_ms=95.0),
    "t": _Phone("plosive", noise_band=(3000.0, 7800.0), noise_amp=0.30, base_ms=65.0),
    "k": _Phone("plosive", noise_band=(1200.0, 4500.0), noise_amp=0.30, base_ms=65.0),
}

_FORMANT_GAINS = (1.0, 0.63, 0.30)
_FORMANT_BANDWIDTHS = (90.0, 130.0, 180.0)


def _formant_envelope(freqs: np.ndarray, formants, shift: float) -> np.ndarray:
    env = np.zeros_like(freqs)
    for gain, center, bw in zip(_FORMANT_GAINS, formants, _FORMANT_BANDWIDTHS):
        env += gain * np.exp(-0.5 * ((freqs - center * shift) / bw) ** 2)
    return env + 0.02 * np.exp(-freqs / 900.0)


def _band_noise(rng: np.random.Generator, n: int, band, sr: int) -> np.ndarray:
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    shaped = np.fft.irfft(spec, n=n)
    peak = np.max(np.abs(shaped))
    return shaped / peak if peak > 0 else shaped


def _edge_ramp(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = fade
        env[n - r :] *= fade[::-1]
    return env


def synth_utterance(
    identity: SpeakerIdentity,
    phoneme_ids: np.ndarray,
    rng: np.random.Generator,
    audio: AudioConfig,
) -> Waveform:
    """Harmonic-plus-noise rendering of a phoneme string in a speaker's voice."""
    sr = audio.sample_rate
    names = [g2p.PHONEMES[i] for i in phoneme_ids]
    phones = [_ACOUSTICS[n] for n in names]
    durations = np.array(
        [max(int(p.base_ms * rng.uniform(0.85, 1.3) / 1000.0 * sr), 3 * audio.hop_length)
         for p in phones]
    )
    total = int(durations.sum())
    bounds = np.concatenate([[0], np.cumsum(durations)])

    # per-phoneme pitch targets: declination plus seeded accents on voiced phones
    targets = np.empty(len(phones))
    for i, p in enumerate(phones):
        decline = 1.05 - 0.13 * (i / max(len(phones) - 1, 1))
        accent = rng.uniform(-0.09, 0.09) if p.voiced_amp > 0 else 0.0
        targets[i] = identity.f0_base * decline * (1.0 + accent)
    centers = (bounds[:-1] + bounds[1:]) / 2.0
    f0 = np.interp(np.arange(total), centers, targets)
    phase = np.cumsum(2.0 * np.pi * f0 / sr)

    out = np.zeros(total)
    ramp = int(0.005 * sr)
    for i, p in enumerate(phones):
        lo, hi = bounds[i], bounds[i + 1]
        n = hi - lo
        seg = np.zeros(n)
        if p.voiced_amp > 0:
            f0_mid = targets[i]
            n_harm = max(int((audio.fmax - 200.0) / f0_mid), 1)
            h = np.arange(1, n_harm + 1)
            amps = _formant_envelope(h * f0_mid, p.formants, identity.formant_shift) / np.sqrt(h)
            seg = (amps[:, None] * np.sin(h[:, None] * phase[lo:hi][None, :])).sum(axis=0)
            seg *= p.voiced_amp / max(np.max(np.abs(seg)), 1e-9)
        if p.kind == "fricative":
            seg = seg + p.noise_amp * _band_noise(rng, n, p.noise_band, sr)
        elif p.kind == "plosive":
            burst_start = int(0.45 * n)
            burst_len = max(int(0.3 * n), 8)
            burst = p.noise_amp * _band_noise(rng, burst_len, p.noise_band, sr)
            seg[burst_start : burst_start + burst_len] += burst[: n - burst_start]
        elif p.kind == "nasal":
            seg = seg + 0.01 * _band_noise(rng, n, (80.0, 500.0), sr)
        out[lo:hi] = seg * _edge_ramp(n, ramp)

    out += 5e-5 * rng.standard_normal(total)
    peak = np.max(np.abs(out))
    if peak > 0.9:
        out *= 0.9 / peak
    return Waveform(samples=out, sample_rate=sr)


# ---------------------------------------------------------------------------
# face rendering
# ---------------------------------------------------------------------------

def base_layout(f0_base: float, formant_shift: float) -> np.ndarray:
    """Geometric layout parameters as a fixed affine function of the identity
    factors.  Units are pixels on the 224x224 canvas."""
    u = (f0_base - F0_RANGE[0]) / (F0_RANGE[1] - F0_RANGE[0])
    w = (formant_shift - FORMANT_SHIFT_RANGE[0]) / (
        FORMANT_SHIFT_RANGE[1] - FORMANT_SHIFT_RANGE[0]
    )
    return np.array(
        [
            55.0 + 38.0 * w,   # head half-width
            70.0 + 28.0 * u,   # head half-height
            20.0 + 22.0 * u,   # eye half-spacing
            92.0 + 18.0 * w,   # eye row
            5.0 + 7.0 * u,     # eye radius
            18.0 + 26.0 * w,   # mouth half-width
            150.0 + 16.0 * u,  # mouth row
            5.0 + 7.0 * w,     # mouth half-height
            14.0 + 16.0 * u,   # nose length
            12.0 + 14.0 * w,   # brow half-width
        ]
    )


_BG = (0.94, 0.94, 0.94)
_SKIN = (0.82, 0.70, 0.58)
_EYE = (0.12, 0.12, 0.14)
_BROW = (0.25, 0.2, 0.16)
_NOSE = (0.55, 0.42, 0.33)
_MOUTH = (0.62, 0.24, 0.26)


def render_face(layout: np.ndarray) -> FaceImage:
    """Flat-shaded face render from a layout parameter vector."""
    if layout.shape != (LAYOUT_DIM,):
        raise InvalidInput(f"layout must have {LAYOUT_DIM} parameters")
    head_rx, head_ry, eye_dx, eye_y, eye_r, mouth_w, mouth_y, mouth_h, nose_h, brow_w = layout
    cx, cy = 112.0, 118.0
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3))
    img[:] = _BG

    def ellipse(x0, y0, rx, ry):
        return ((xx - x0) / max(rx, 1.0)) ** 2 + ((yy - y0) / max(ry, 1.0)) ** 2 <= 1.0

    def box(x0, x1, y0, y1):
        return (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)

    img[ellipse(cx, cy, head_rx, head_ry)] = _SKIN
    for sx in (-1.0, 1.0):
        ex = cx + sx * eye_dx
        img[box(ex - brow_w, ex + brow_w, eye_y - eye_r - 12, eye_y - eye_r - 7)] = _BROW
        img[ellipse(ex, eye_y, eye_r, eye_r)] = _EYE
    img[box(cx - 3, cx + 3, cy, cy + nose_h)] = _NOSE
    img[ellipse(cx, mouth_y, mouth_w, mouth_h)] = _MOUTH
    return FaceImage(pixels=img.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

def generate_synthetic_corpus(
    seed: int,
    n_speakers: int,
    utts_per_speaker: int,
    frames_per_face: int = 1,
    audio: AudioConfig | None = None,
    words_per_utt: tuple[int, int] = (2, 3),
) -> SyntheticCorpus:
    """Deterministic synthetic corpus; same seed yields bit-identical output.

    Per-speaker substreams of the seeded generator keep the result independent
    of generation order, so speakers may be rendered in parallel.
    """
    if min(n_speakers, utts_per_speaker, frames_per_face) < 1:
        raise InvalidInput("all corpus counts must be >= 1")
    audio = audio or AudioConfig()
    root = np.random.SeedSequence(seed)
    examples: list[CorpusExample] = []
    speakers: dict[str, SpeakerIdentity] = {}
    faces: dict[tuple[str, int], FaceImage] = {}
    layouts: dict[tuple[str, int], np.ndarray] = {}

    for spk_index, spk_seed in enumerate(root.spawn(n_speakers)):
        spk_id = f"spk{spk_index:04d}"
        id_rng = np.random.Generator(np.random.PCG64(spk_seed))
        identity = SpeakerIdentity(
            speaker_id=spk_id,
            f0_base=id_rng.uniform(*F0_RANGE),
            formant_shift=id_rng.uniform(*FORMANT_SHIFT_RANGE),
        )
        speakers[spk_id] = identity
        substreams = spk_seed.spawn(utts_per_speaker + 1)

        face_rng = np.random.Generator(np.random.PCG64(substreams[0]))
        base = base_layout(identity.f0_base, identity.formant_shift)
        for frame in range(frames_per_face):
            jitter = np.clip(
                face_rng.normal(0.0, 1.2, size=LAYOUT_DIM),
                -LAYOUT_JITTER_BOUND,
                LAYOUT_JITTER_BOUND,
            )
            layouts[(spk_id, frame)] = base + jitter
            faces[(spk_id, frame)] = render_face(base + jitter)

        for utt in range(utts_per_speaker):
            rng = np.random.Generator(np.random.PCG64(substreams[1 + utt]))
            n_words = int(rng.integers(words_per_utt[0], words_per_utt[1] + 1))
            words = [g2p.WORD_LIST[i] for i in rng.integers(0, len(g2p.WORD_LIST), n_words)]
            text = " ".join(words)
            ids = g2p.text_to_phonemes(text)
            frame = utt % frames_per_face
            examples.append(
                CorpusExample(
                    utt_id=f"{spk_id}_u{utt:03d}",
                    waveform=synth_utterance(identity, ids, rng, audio),
                    transcript=ids,
                    text=text,
                    speaker_id=spk_id,
                    face=faces[(spk_id, frame)],
                    frame_index=frame,
                )
            )

    return SyntheticCorpus(examples, speakers, faces, layouts, audio)


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------

def save_face_png(path, face: FaceImage) -> None:
    arr = np.round(face.pixels.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(str(path), format="PNG")


def load_face_png(path) -> FaceImage:
    with Image.open(str(path)) as im:
        im = im.convert("RGB")
        if im.size != (IMAGE_SIZE, IMAGE_SIZE):
            side = min(im.size)
            left = (im.width - side) // 2
            top = (im.height - side) // 2
            im = im.crop((left, top, left + side, top + side)).resize(
                (IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR
            )
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return FaceImage(pixels=arr.transpose(2, 0, 1))


def write_corpus(corpus: SyntheticCorpus, out_dir) -> Path:
    """Write WAV/PNG files plus a JSON-lines manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "faces").mkdir(parents=True, exist_ok=True)
    face_paths: dict[tuple[str, int], str] = {}
    for (spk, frame), face in sorted(corpus.faces.items()):
        rel = f"faces/{spk}_f{frame}.png"
        save_face_png(out / rel, face)
        face_paths[(spk, frame)] = rel
    manifest = out / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for ex in corpus.examples:
            rel_wav = f"wav/{ex.utt_id}.wav"
            write_wav(out / rel_wav, ex.waveform)
            record = {"audio": rel_wav, "text": ex.text, "speaker": ex.speaker_id}
            if ex.face is not None:
                record["face"] = face_paths[(ex.speaker_id, ex.frame_index)]
                record["frame"] = ex.frame_index
            fh.write(json.dumps(record) + "\n")
    with open(out / "speakers.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                s.speaker_id: {"f0_base": s.f0_base, "formant_shift": s.formant_shift}
                for s in corpus.speakers.values()
            },
            fh,
            indent=2,
            sort_keys=True,
        )
    return manifest


def load_manifest(path) -> list[CorpusExample]:
    """Load a JSON-lines manifest into fully materialized examples."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    examples: list[CorpusExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(record, dict):
                raise ManifestError("record must be a JSON object", line=lineno)
            for key in ("audio", "speaker"):
                if key not in record:
                    raise ManifestError(f"record missing {key!r}", line=lineno)
            audio_path = base / record["audio"]
            if not audio_path.exists():
                raise ManifestError(f"audio file not found: {audio_path}", line=lineno)
            try:
                waveform = read_wav(audio_path)
                if "phonemes" in record:
                    transcript = g2p.validate_phonemes(np.asarray(record["phonemes"]))
                    text = record.get("text", "")
                elif "text" in record:
                    text = record["text"]
                    transcript = g2p.text_to_phonemes(text)
                else:
                    raise ManifestError("record needs 'phonemes' or 'text'", line=lineno)
            except ManifestError:
                raise
            except InvalidInput as exc:
                raise ManifestError(str(exc), line=lineno) from None
            face = None
            frame = record.get("frame")
            if "face" in record and record["face"] is not None:
                face_path = base / record["face"]
                if not face_path.exists():
                    raise ManifestError(f"face image not found: {face_path}", line=lineno)
                face = load_face_png(face_path)
            examples.append(
                CorpusExample(
                    utt_id=Path(record["audio"]).stem,
                    waveform=waveform,
                    transcript=transcript,
                    text=text,
                    speaker_id=str(record["speaker"]),
                    face=face,
                    frame_index=int(frame) if frame is not None else None,
                )
            )
    return examples
