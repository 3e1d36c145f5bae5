"""Waveform containers, mel-spectrogram analysis, and phase-reconstruction synthesis.

Analysis defaults: 16 kHz input, 50 ms Hann window, 12.5 ms hop, 1024-point
spectrum, 80 mel bins spanning 0-8000 Hz, natural-log compression floored at
1e-5.  Frame count is always ceil(n_samples / hop) via reflective padding.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    win_length: int = 800
    hop_length: int = 200
    n_fft: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    mel_floor: float = 1e-5

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise InvalidInput("sample_rate must be positive")
        if not (0 < self.win_length <= self.n_fft):
            raise InvalidInput("need 0 < win_length <= n_fft")
        if self.hop_length <= 0:
            raise InvalidInput("hop_length must be positive")
        if self.fmax > self.sample_rate / 2:
            raise InvalidInput("fmax above Nyquist")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInput(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidInput("sample_rate must be positive")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise InvalidInput("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    hop_length: int = 200

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise InvalidInput(f"mel frames must be (m, b) with m >= 1, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInput("mel frames contain non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: AudioConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = cfg.n_fft // 2 + 1
    fft_hz = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (fft_hz - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_hz) / max(hi - center, 1e-12)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_bin_centers_hz(cfg: AudioConfig) -> np.ndarray:
    """Center frequency of each triangular filter, in Hz."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    return edges[1:-1]


def _hann(n: int) -> np.ndarray:
    # periodic Hann, consistent between analysis and resynthesis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    # numpy reflect caps the pad width at len(x) - 1 per call; iterate for
    # signals shorter than the pad.
    while pad > 0:
        step = min(pad, max(x.size - 1, 1))
        mode = "reflect" if x.size > 1 else "edge"
        x = np.pad(x, step, mode=mode)
        pad -= step
    return x


def _frame_signal(samples: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    n = samples.size
    m = int(np.ceil(n / cfg.hop_length))
    padded = _reflect_pad(samples, cfg.win_length // 2)
    need = (m - 1) * cfg.hop_length + cfg.win_length
    if padded.size < need:
        padded = np.pad(padded, (0, need - padded.size))
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(m)[:, None]
    return padded[idx]


def compute_mel(w: Waveform, cfg: AudioConfig) -> MelSpectrogram:
    """Log mel energies of ``w``, one row per hop; m = ceil(len / hop)."""
    if len(w) == 0:
        raise InvalidInput("cannot compute mel of an empty waveform")
    if w.sample_rate != cfg.sample_rate:
        raise InvalidInput(
            f"sample-rate mismatch: waveform {w.sample_rate} Hz, config {cfg.sample_rate} Hz"
        )
    frames = _frame_signal(w.samples, cfg) * _hann(cfg.win_length)
    spectrum = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    power = np.abs(spectrum) ** 2
    mel = power @ mel_filterbank(cfg).T
    return MelSpectrogram(
        frames=np.log(np.maximum(mel, cfg.mel_floor)),
        sample_rate=cfg.sample_rate,
        hop_length=cfg.hop_length,
    )


def lowpass_mel(Y: MelSpectrogram, n_low: int) -> MelSpectrogram:
    """Keep only the first ``n_low`` mel bins of every frame."""
    if not 1 <= n_low <= Y.n_mels:
        raise InvalidInput(f"n_low must be in [1, {Y.n_mels}], got {n_low}")
    return MelSpectrogram(
        frames=Y.frames[:, :n_low].copy(),
        sample_rate=Y.sample_rate,
        hop_length=Y.hop_length,
    )


def _stft(x: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    return np.fft.rfft(_frame_signal(x, cfg) * _hann(cfg.win_length), n=cfg.n_fft, axis=1)


def _istft(spec: np.ndarray, cfg: AudioConfig, n_samples: int) -> np.ndarray:
    window = _hann(cfg.win_length)
    half = cfg.win_length // 2
    total = (spec.shape[0] - 1) * cfg.hop_length + cfg.win_length
    acc = np.zeros(total)
    norm = np.zeros(total)
    segments = np.fft.irfft(spec, n=cfg.n_fft, axis=1)[:, : cfg.win_length] * window
    for k in range(spec.shape[0]):
        start = k * cfg.hop_length
        acc[start : start + cfg.win_length] += segments[k]
        norm[start : start + cfg.win_length] += window**2
    acc /= np.maximum(norm, 1e-10)
    return acc[half : half + n_samples]


def griffin_lim(
    mel: MelSpectrogram, cfg: AudioConfig, n_iters: int = 64, seed: int = 0
) -> Waveform:
    """Waveform from a log-mel spectrogram via iterative phase reconstruction.

    Linear power is recovered with a clipped pseudo-inverse of the mel
    filterbank; the phase starts from a seeded uniform draw so output is
    deterministic given (mel, cfg, n_iters, seed).
    """
    if mel.n_mels != cfg.n_mels:
        raise InvalidInput(f"mel has {mel.n_mels} bins, config expects {cfg.n_mels}")
    fb = mel_filterbank(cfg)
    power = np.exp(mel.frames)
    linear = np.clip(power @ np.linalg.pinv(fb).T, 0.0, None)
    magnitude = np.sqrt(linear)
    n_samples = mel.n_frames * cfg.hop_length
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    x = _istft(magnitude * phase, cfg, n_samples)
    for _ in range(n_iters):
        spec = _stft(x, cfg)[: magnitude.shape[0]]
        phase = spec / np.maximum(np.abs(spec), 1e-10)
        x = _istft(magnitude * phase, cfg, n_samples)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 0.95:
        x = x * (0.95 / peak)
    return Waveform(samples=x, sample_rate=cfg.sample_rate)


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM mono WAV."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    """Read 16-bit PCM mono WAV into a float64 waveform in [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise InvalidInput(f"{path}: expected mono WAV, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise InvalidInput(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples=samples, sample_rate=rate)
