"""Autoregressive prosody-code language model.

A decoder-only transformer over prosody codes.  Prompt codes, prompt text,
and target text form a fully visible prefix; target code positions are
causally masked.  Generation length is fixed to the target phoneme count, so
no stop token is learned (begin/end markers exist in the vocabulary but only
the begin marker is consumed).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .audio import MelSpectrogram
from .checkpoint import load_archive, save_archive
from .errors import CheckpointError, InvalidInput
from .nnutil import DTYPE, TransformerBlock, load_module_arrays, module_arrays, seeded_init
from .tts import TtsModel, fit_durations


@dataclass(frozen=True)
class PlmConfig:
    n_codes: int = 128  # codec codebook size T; vocabulary is T + 2 markers
    d_model: int = 128
    d_text: int = 128
    n_heads: int = 4
    blocks: int = 2
    max_len: int = 192


@dataclass(frozen=True)
class SamplingConfig:
    top_k: int = 8
    temperature: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class PlmTrainConfig:
    steps: int = 800
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0


@dataclass
class PlmContext:
    prompt_codes: np.ndarray
    prompt_text: torch.Tensor
    target_text: torch.Tensor

    def __post_init__(self):
        self.prompt_codes = np.asarray(self.prompt_codes, dtype=np.int64)
        if self.prompt_codes.ndim != 1 or self.prompt_codes.size != self.prompt_text.shape[0]:
            raise InvalidInput("prompt codes must align one-to-one with prompt text rows")
        if self.target_text.ndim != 2 or self.target_text.shape[0] < 1:
            raise InvalidInput("target text must be a non-empty (n, d) array")


def build_context(prompt_codes, prompt_text, target_text) -> PlmContext:
    return PlmContext(prompt_codes, prompt_text, target_text)


class ProsodyLanguageModel(nn.Module):
    # segment ids: 0 prompt codes, 1 prompt text, 2 target text, 3 generation
    def __init__(self, cfg: PlmConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.code_embed = nn.Embedding(cfg.n_codes + 2, d)
        self.text_proj = nn.Linear(cfg.d_text, d)
        self.seg_embed = nn.Embedding(4, d)
        self.pos_embed = nn.Embedding(cfg.max_len, d)
        self.blocks = nn.ModuleList(TransformerBlock(d, cfg.n_heads) for _ in range(cfg.blocks))
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, cfg.n_codes + 2)
        self.to(DTYPE)
        seeded_init(self, seed)

    @property
    def bos_id(self) -> int:
        return self.cfg.n_codes

    def _check_codes(self, codes: np.ndarray, allow_markers: bool = False) -> torch.Tensor:
        codes = np.asarray(codes, dtype=np.int64)
        limit = self.cfg.n_codes + (2 if allow_markers else 0)
        if codes.size and (codes.min() < 0 or codes.max() >= limit):
            raise InvalidInput(f"prosody code out of range [0, {limit})")
        return torch.as_tensor(codes)

    def _positions(self, length: int) -> torch.Tensor:
        if length > self.cfg.max_len:
            raise InvalidInput(f"sequence length {length} exceeds max_len {self.cfg.max_len}")
        return self.pos_embed(torch.arange(length))

    def forward_logits(self, ctx: PlmContext, prev_codes) -> torch.Tensor:
        """Logits at the first k target positions given codes shifted right by one.

        ``prev_codes[0]`` is normally the begin marker; position j sees the
        prompt material, the full target text, and prev_codes[: j + 1] only.
        """
        prev = self._check_codes(prev_codes, allow_markers=True)
        n = ctx.target_text.shape[0]
        k = prev.numel()
        if not 1 <= k <= n:
            raise InvalidInput(f"expected between 1 and {n} shifted codes, got {k}")
        seg = self.seg_embed.weight
        p = ctx.prompt_codes.size
        parts = [
            self.code_embed(self._check_codes(ctx.prompt_codes)) + seg[0] + self._positions(p),
            self.text_proj(ctx.prompt_text) + seg[1] + self._positions(p),
            self.text_proj(ctx.target_text) + seg[2] + self._positions(n),
            self.code_embed(prev) + self.text_proj(ctx.target_text[:k]) + seg[3] + self._positions(k),
        ]
        x = torch.cat(parts)
        prefix = 2 * p + n
        total = prefix + k
        mask = torch.zeros(total, total, dtype=torch.bool)
        mask[:, :prefix] = True  # everything sees the prefix
        gen = torch.arange(k)
        mask[prefix:, prefix:] = gen[:, None] >= gen[None, :]  # causal over targets
        for block in self.blocks:
            x = block(x, mask=mask)
        return self.head(self.norm(x[prefix:]))

    def sequence_loss(self, ctx: PlmContext, target_codes) -> torch.Tensor:
        """Teacher-forced mean cross-entropy of next-code prediction."""
        targets = self._check_codes(target_codes)
        if targets.numel() != ctx.target_text.shape[0]:
            raise InvalidInput("one target code per target phoneme is required")
        prev = torch.cat([torch.tensor([self.bos_id]), targets[:-1]])
        logits = self.forward_logits(ctx, prev)
        return nn.functional.cross_entropy(logits, targets)

    @torch.no_grad()
    def generate(self, ctx: PlmContext, sampling: SamplingConfig | None = None) -> np.ndarray:
        """Exactly one code per target phoneme via seeded top-k sampling."""
        sampling = sampling or SamplingConfig()
        if sampling.top_k < 1 or sampling.temperature <= 0:
            raise InvalidInput("need top_k >= 1 and temperature > 0")
        gen = torch.Generator().manual_seed(sampling.seed)
        n = ctx.target_text.shape[0]
        prev = [self.bos_id]
        out: list[int] = []
        for j in range(n):
            logits = self.forward_logits(ctx, np.asarray(prev, dtype=np.int64))[j]
            logits = logits[: self.cfg.n_codes] / sampling.temperature
            k = min(sampling.top_k, self.cfg.n_codes)
            values, candidates = torch.topk(logits, k)
            pick = torch.multinomial(torch.softmax(values, dim=0), 1, generator=gen)
            code = int(candidates[pick])
            out.append(code)
            if j + 1 < n:
                prev.append(code)
        return np.asarray(out, dtype=np.int64)

    def save(self, path) -> None:
        save_archive(path, {"kind": "plm", "model": asdict(self.cfg)}, module_arrays(self))

    @classmethod
    def load(cls, path) -> "ProsodyLanguageModel":
        config, arrays = load_archive(path)
        if config.get("kind") != "plm":
            raise CheckpointError(f"{path}: expected a PLM checkpoint, got {config.get('kind')!r}")
        model = cls(PlmConfig(**config["model"]))
        load_module_arrays(model, arrays)
        return model


def plm_train_step(model: ProsodyLanguageModel, batch) -> torch.Tensor:
    """Mean teacher-forced loss over a batch of (context, target_codes) pairs."""
    batch = list(batch)
    if not batch:
        raise InvalidInput("batch must contain at least one (context, codes) pair")
    total = None
    for ctx, targets in batch:
        loss = model.sequence_loss(ctx, targets)
        total = loss if total is None else total + loss
    return total / len(batch)


def make_prompt(Y_p: MelSpectrogram, prompt_phonemes, tts: TtsModel):
    """Prompt half of a PLM context from any utterance.

    Codes come from the prosody codec under predicted durations (rescaled to
    cover the prompt's actual frame count); text rows come from the frozen
    text encoder.
    """
    with torch.no_grad():
        H_xp = tts.encode_text(prompt_phonemes)
        s_p = tts.encode_speech(Y_p)
        d_hat = tts.predict_durations(H_xp, s_p)
        d_fit = fit_durations(d_hat, Y_p.n_frames)
        codes = tts.prosody_codes(Y_p, d_fit)
    return codes, H_xp


def export_prosody_codes(examples, tts: TtsModel, audio) -> list[dict]:
    """Ground-truth prosody codes for a corpus (aligner durations), one record
    per utterance in the JSON-lines code-file schema."""
    from .audio import compute_mel

    records = []
    with torch.no_grad():
        for ex in examples:
            mel = compute_mel(ex.waveform, audio)
            durations = tts.align(ex.transcript, mel)
            records.append({"utt": ex.utt_id, "codes": tts.prosody_codes(mel, durations)})
    return records


def train_plm(
    examples,
    code_records: dict[str, np.ndarray],
    tts: TtsModel,
    cfg: PlmTrainConfig,
    model_cfg: PlmConfig | None = None,
) -> tuple[ProsodyLanguageModel, list[dict]]:
    """Teacher-forced PLM training on utterances split at a random phoneme
    boundary into (prompt, target); deterministic given the seed."""
    model_cfg = model_cfg or PlmConfig(
        n_codes=tts.cfg.n_codes, d_text=tts.cfg.d_model, d_model=tts.cfg.d_model
    )
    if model_cfg.n_codes != tts.cfg.n_codes:
        raise InvalidInput(
            f"PLM vocabulary ({model_cfg.n_codes}) inconsistent with codec ({tts.cfg.n_codes})"
        )
    usable = [
        (ex.transcript, code_records[ex.utt_id])
        for ex in examples
        if ex.utt_id in code_records and ex.transcript.size >= 2
    ]
    if not usable:
        raise InvalidInput("no utterances with codes and >= 2 phonemes")
    model = ProsodyLanguageModel(model_cfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    log: list[dict] = []
    for step in range(cfg.steps):
        picks = rng.integers(0, len(usable), size=cfg.batch_size)
        batch = []
        for idx in picks:
            ids, codes = usable[int(idx)]
            split = int(rng.integers(1, ids.size))
            with torch.no_grad():
                ctx = PlmContext(
                    prompt_codes=codes[:split],
                    prompt_text=tts.encode_text(ids[:split]),
                    target_text=tts.encode_text(ids[split:]),
                )
            batch.append((ctx, codes[split:]))
        optimizer.zero_grad()
        loss = plm_train_step(model, batch)
        loss.backward()
        optimizer.step()
        log.append({"step": step, "loss": float(loss)})
    return model, log
