"""Zero-shot TTS backbone.

Text and speech encoders, monotonic alignment, duration prediction, length
expansion, and a speaker-conditioned decoder.  Training reconstructs ground
truth mels from text, quantized prosody, and the utterance-level speech
vector; inference swaps the speech vector for any conditioning vector of the
same dimension.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import g2p
from .audio import AudioConfig, MelSpectrogram, compute_mel, lowpass_mel
from .checkpoint import load_archive, save_archive
from .errors import AlignmentInfeasible, CheckpointError, InvalidInput, TrainingDiverged
from .nnutil import (
    DTYPE,
    CondLayerNorm,
    TransformerBlock,
    load_module_arrays,
    module_arrays,
    positional_signal,
    seeded_init,
    tensor_from,
)
from .prosody import ProsodyEncoder, VectorQuantizer, pool_by_phoneme


@dataclass(frozen=True)
class TtsConfig:
    vocab_size: int = g2p.VOCAB_SIZE
    n_mels: int = 80
    d_model: int = 128
    d_speech: int = 128
    n_heads: int = 4
    text_blocks: int = 2
    speech_blocks: int = 2
    decoder_blocks: int = 4
    n_codes: int = 128
    n_low: int = 20
    prosody_kernel: int = 3
    commitment_weight: float = 0.25
    ema_decay: float = 0.99
    vq_update: str = "ema"
    decoder_mode: str = "feedforward"  # or "denoise"
    denoise_steps: int = 4


@dataclass(frozen=True)
class TtsTrainConfig:
    steps: int = 600
    batch_size: int = 6
    learning_rate: float = 1e-3
    seed: int = 0


def monotonic_align(similarity: np.ndarray) -> np.ndarray:
    """Durations of the monotonic hard alignment maximizing summed similarity.

    ``similarity[i, j]`` scores assigning frame j to phoneme i.  Every phoneme
    gets at least one frame and frames are covered exactly once, in order.
    """
    sim = np.asarray(similarity, dtype=np.float64)
    if sim.ndim != 2:
        raise InvalidInput("similarity must be a 2-D array")
    n, m = sim.shape
    if m < n:
        raise AlignmentInfeasible(f"{m} frames cannot cover {n} phonemes")
    dp = np.full((n, m), -np.inf)
    switch = np.zeros((n, m), dtype=bool)
    dp[0] = np.cumsum(sim[0])
    for i in range(1, n):
        row = dp[i]
        prev = dp[i - 1]
        for j in range(i, m):
            stay = row[j - 1]
            enter = prev[j - 1]
            if enter >= stay:
                switch[i, j] = True
                row[j] = sim[i, j] + enter
            else:
                row[j] = sim[i, j] + stay
    durations = np.zeros(n, dtype=np.int64)
    i, j, seg_end = n - 1, m - 1, m - 1
    while i > 0:
        if switch[i, j]:
            durations[i] = seg_end - j + 1
            seg_end = j - 1
            i -= 1
        j -= 1
    durations[0] = seg_end + 1
    return durations


def expand(H: torch.Tensor, durations) -> torch.Tensor:
    """Repeat row i of H durations[i] times, concatenated in order."""
    durations = np.asarray(durations, dtype=np.int64)
    if durations.ndim != 1 or durations.size != H.shape[0]:
        raise InvalidInput(
            f"expected {H.shape[0]} durations, got shape {tuple(durations.shape)}"
        )
    if (durations < 1).any():
        raise InvalidInput("durations must all be >= 1")
    return torch.repeat_interleave(H, torch.as_tensor(durations), dim=0)


def fit_durations(durations: np.ndarray, n_frames: int) -> np.ndarray:
    """Rescale integer durations to sum exactly to ``n_frames`` (each >= 1)."""
    d = np.asarray(durations, dtype=np.float64)
    n = d.size
    if n_frames < n:
        raise AlignmentInfeasible(f"{n_frames} frames cannot cover {n} phonemes")
    target = d * n_frames / max(d.sum(), 1e-12)
    out = np.ones(n, dtype=np.int64)
    for _ in range(n_frames - n):
        out[np.argmax(target - out)] += 1
    return out


class _DurationPredictor(nn.Module):
    def __init__(self, d_model: int, d_speech: int):
        super().__init__()
        self.cond = nn.Linear(d_speech, d_model)
        self.conv1 = nn.Conv1d(d_model, d_model, 3, padding=1)
        self.conv2 = nn.Conv1d(d_model, d_model, 3, padding=1)
        self.norm = nn.LayerNorm(d_model)
        self.out = nn.Linear(d_model, 1)
        self.act = nn.GELU()

    def forward(self, H_x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        h = H_x + self.cond(s)
        h = self.act(self.conv1(h.T[None]))
        h = self.act(self.conv2(h))
        return self.out(self.norm(h[0].T)).squeeze(-1)


class TtsModel(nn.Module):
    """Complete TTS stack; all submodule parameters live in one checkpoint."""

    def __init__(self, cfg: TtsConfig, audio: AudioConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.audio = audio or AudioConfig()
        if cfg.n_low > cfg.n_mels:
            raise InvalidInput("n_low cannot exceed the mel bin count")
        d = cfg.d_model
        self.text_embed = nn.Embedding(cfg.vocab_size, d)
        self.text_blocks = nn.ModuleList(
            TransformerBlock(d, cfg.n_heads) for _ in range(cfg.text_blocks)
        )
        self.text_norm = nn.LayerNorm(d)

        self.speech_in = nn.Linear(cfg.n_mels, d)
        self.speech_blocks = nn.ModuleList(
            TransformerBlock(d, cfg.n_heads) for _ in range(cfg.speech_blocks)
        )
        self.speech_norm = nn.LayerNorm(d)
        self.speech_out = nn.Linear(d, cfg.d_speech)

        self.align_proto = nn.Embedding(cfg.vocab_size, cfg.n_mels)
        self.duration = _DurationPredictor(d, cfg.d_speech)

        self.prosody = ProsodyEncoder(cfg.n_low, d, cfg.prosody_kernel)
        self.vq = VectorQuantizer(
            cfg.n_codes,
            d,
            commitment_weight=cfg.commitment_weight,
            ema_decay=cfg.ema_decay,
            update_mode=cfg.vq_update,
            seed=seed + 1,
        )

        self.dec_in_x = nn.Linear(d, d)
        self.dec_in_y = nn.Linear(d, d)
        self.dec_mel_in = nn.Linear(cfg.n_mels, d)
        self.dec_blocks = nn.ModuleList(
            TransformerBlock(d, cfg.n_heads, cond_dim=cfg.d_speech)
            for _ in range(cfg.decoder_blocks)
        )
        self.dec_norm = nn.LayerNorm(d)
        self.dec_out = nn.Linear(d, cfg.n_mels)

        self.to(DTYPE)
        seeded_init(self, seed)

    # -- encoders ----------------------------------------------------------

    def encode_text(self, phoneme_ids) -> torch.Tensor:
        ids = g2p.validate_phonemes(phoneme_ids, self.cfg.vocab_size)
        h = self.text_embed(torch.as_tensor(ids)) + positional_signal(ids.size, self.cfg.d_model)
        for block in self.text_blocks:
            h = block(h)
        return self.text_norm(h)

    def encode_speech(self, mel: MelSpectrogram | torch.Tensor) -> torch.Tensor:
        frames = mel if torch.is_tensor(mel) else tensor_from(mel.frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InvalidInput("mel must be a non-empty (m, b) array")
        h = self.speech_in(frames)
        for block in self.speech_blocks:
            h = block(h)
        return self.speech_out(self.speech_norm(h).mean(dim=0))

    # -- alignment and durations -------------------------------------------

    def alignment_scores(self, phoneme_ids, mel: MelSpectrogram | torch.Tensor) -> np.ndarray:
        """Similarity of each (phoneme, frame) pair via learned mel prototypes."""
        ids = g2p.validate_phonemes(phoneme_ids, self.cfg.vocab_size)
        frames = mel if torch.is_tensor(mel) else tensor_from(mel.frames)
        with torch.no_grad():
            proto = self.align_proto(torch.as_tensor(ids))
            diffs = proto[:, None, :] - frames[None, :, :]
            return (-(diffs**2).mean(dim=-1)).numpy()

    def align(self, phoneme_ids, mel: MelSpectrogram | torch.Tensor) -> np.ndarray:
        """Monotonic hard alignment durations (train-time targets)."""
        return monotonic_align(self.alignment_scores(phoneme_ids, mel))

    def duration_log_predictions(self, H_x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        return self.duration(H_x, s)

    def predict_durations(self, H_x: torch.Tensor, s: torch.Tensor) -> np.ndarray:
        """Integer durations: exp of the log predictions, rounded half-up, min 1."""
        with torch.no_grad():
            raw = torch.exp(self.duration(H_x, s)).numpy()
        return np.maximum(np.floor(raw + 0.5).astype(np.int64), 1)

    # -- prosody -----------------------------------------------------------

    def encode_prosody(self, Y_low: MelSpectrogram | torch.Tensor, durations) -> torch.Tensor:
        frames = Y_low if torch.is_tensor(Y_low) else tensor_from(Y_low.frames)
        if frames.shape[1] != self.cfg.n_low:
            raise InvalidInput(
                f"prosody encoder expects {self.cfg.n_low} low bins, got {frames.shape[1]}"
            )
        return self.prosody(frames, np.asarray(durations, dtype=np.int64))

    def prosody_codes(self, mel: MelSpectrogram, durations) -> np.ndarray:
        """Discrete prosody codes of an utterance given alignment durations."""
        low = lowpass_mel(mel, self.cfg.n_low)
        with torch.no_grad():
            H_y = self.encode_prosody(low, durations)
            indices, _, _ = self.vq.quantize(H_y)
        return indices.numpy()

    # -- decoding ------------------------------------------------------------

    def decode(
        self,
        H_x_exp: torch.Tensor,
        H_y_exp: torch.Tensor | None,
        s: torch.Tensor,
        noise_seed: int = 0,
    ) -> torch.Tensor:
        """Mel frames from expanded text (and optional prosody) plus a speaker
        vector injected through conditional layer norm at every block."""
        if H_y_exp is not None and H_y_exp.shape[0] != H_x_exp.shape[0]:
            raise InvalidInput(
                f"row-count mismatch: text {H_x_exp.shape[0]}, prosody {H_y_exp.shape[0]}"
            )
        m = H_x_exp.shape[0]
        h = self.dec_in_x(H_x_exp) + positional_signal(m, self.cfg.d_model)
        if H_y_exp is not None:
            h = h + self.dec_in_y(H_y_exp)
        if self.cfg.decoder_mode == "feedforward":
            z = h
            for block in self.dec_blocks:
                z = block(z, cond=s)
            return self.dec_out(self.dec_norm(z))
        gen = torch.Generator().manual_seed(noise_seed)
        mel = torch.randn(m, self.cfg.n_mels, generator=gen, dtype=DTYPE)
        for _ in range(self.cfg.denoise_steps):
            z = h + self.dec_mel_in(mel)
            for block in self.dec_blocks:
                z = block(z, cond=s)
            mel = mel + self.dec_out(self.dec_norm(z))
        return mel

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        config = {
            "kind": "tts",
            "model": asdict(self.cfg),
            "audio": asdict(self.audio),
        }
        save_archive(path, config, module_arrays(self))

    @classmethod
    def load(cls, path) -> "TtsModel":
        config, arrays = load_archive(path)
        if config.get("kind") != "tts":
            raise CheckpointError(f"{path}: expected a TTS checkpoint, got {config.get('kind')!r}")
        model = cls(TtsConfig(**config["model"]), AudioConfig(**config["audio"]))
        load_module_arrays(model, arrays)
        return model


def reconstruction_losses(model: TtsModel, phoneme_ids, mel_frames: torch.Tensor):
    """All per-utterance training losses plus the VQ assignment for EMA updates."""
    durations = model.align(phoneme_ids, mel_frames)
    H_x = model.encode_text(phoneme_ids)
    s = model.encode_speech(mel_frames)
    H_y = model.encode_prosody(mel_frames[:, : model.cfg.n_low], durations)
    indices, quantized, vq_losses = model.vq.quantize(H_y)
    predicted = model.decode(expand(H_x, durations), expand(quantized, durations), s)
    log_dur = model.duration_log_predictions(H_x.detach(), s.detach())
    proto = model.align_proto(torch.as_tensor(g2p.validate_phonemes(phoneme_ids)))
    losses = {
        "mel": (predicted - mel_frames).abs().mean(),
        "dur": ((log_dur - torch.log(tensor_from(durations))) ** 2).mean(),
        "vq": vq_losses["codebook"] + vq_losses["commitment"],
        "proto": (expand(proto, durations) - mel_frames).abs().mean(),
    }
    return losses, H_y.detach(), indices


def train_tts(
    examples,
    audio: AudioConfig,
    model_cfg: TtsConfig,
    train_cfg: TtsTrainConfig,
) -> tuple[TtsModel, list[dict]]:
    """Train the full TTS stack; deterministic given the seed.

    Returns the model and one log record per step:
    {"step", "loss_mel", "loss_dur", "loss_vq"}.
    """
    examples = list(examples)
    if not examples:
        raise InvalidInput("training corpus is empty")
    model = TtsModel(model_cfg, audio, seed=train_cfg.seed)
    prepared = [
        (ex.transcript, tensor_from(compute_mel(ex.waveform, audio).frames)) for ex in examples
    ]
    rng = np.random.default_rng(train_cfg.seed)
    optimizer = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad], lr=train_cfg.learning_rate
    )
    log: list[dict] = []
    for step in range(train_cfg.steps):
        picks = rng.integers(0, len(prepared), size=train_cfg.batch_size)
        optimizer.zero_grad()
        sums = {"mel": 0.0, "dur": 0.0, "vq": 0.0}
        total = None
        assigned_vectors, assigned_indices = [], []
        for idx in picks:
            ids, mel = prepared[int(idx)]
            losses, H_y, indices = reconstruction_losses(model, ids, mel)
            utt_total = losses["mel"] + losses["dur"] + losses["vq"] + losses["proto"]
            total = utt_total if total is None else total + utt_total
            for key in sums:
                sums[key] += float(losses[key])
            assigned_vectors.append(H_y)
            assigned_indices.append(indices)
        total = total / len(picks)
        if not math.isfinite(float(total)):
            raise TrainingDiverged("TTS loss is not finite", step=step)
        total.backward()
        optimizer.step()
        model.vq.update_codebook(
            torch.cat(assigned_vectors), torch.cat(assigned_indices), rng
        )
        log.append(
            {
                "step": step,
                "loss_mel": sums["mel"] / len(picks),
                "loss_dur": sums["dur"] / len(picks),
                "loss_vq": sums["vq"] / len(picks),
            }
        )
    return model, log


def infer(
    phoneme_ids,
    reference_mel: MelSpectrogram,
    tts: TtsModel,
    plm=None,
    prompt_phonemes=None,
    sampling=None,
    noise_seed: int = 0,
) -> MelSpectrogram:
    """Synthesize a mel for new text in the reference utterance's voice.

    With a prosody language model (and the reference transcript as prompt
    text), prosody codes are generated and decoded alongside the text; without
    one, the decoder runs in its prosody-free mode.
    """
    s = tts.encode_speech(reference_mel)
    H_x = tts.encode_text(phoneme_ids)
    durations = tts.predict_durations(H_x, s)
    H_y_exp = None
    if plm is not None:
        from .plm import build_context, make_prompt

        if prompt_phonemes is None:
            raise InvalidInput("prosody generation needs the prompt transcript")
        prompt_codes, prompt_text = make_prompt(reference_mel, prompt_phonemes, tts)
        ctx = build_context(prompt_codes, prompt_text, H_x)
        codes = plm.generate(ctx, sampling)
        H_y_exp = expand(tts.vq.dequantize(codes), durations)
    with torch.no_grad():
        mel = tts.decode(expand(H_x, durations), H_y_exp, s, noise_seed=noise_seed)
    return MelSpectrogram(
        frames=mel.numpy(), sample_rate=tts.audio.sample_rate, hop_length=tts.audio.hop_length
    )
