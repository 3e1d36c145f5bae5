"""Speaker-independent prosody codec.

Low-frequency mel frames are encoded by a small convolutional stack, pooled to
one vector per phoneme using the alignment durations, then vector-quantized
against a learned codebook.  The discrete indices are the prosody codes; the
codebook entries are their continuous reconstructions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import InvalidInput

VQ_LOSS_KEYS = ("codebook", "commitment")


def pool_by_phoneme(frames: torch.Tensor, durations: np.ndarray) -> torch.Tensor:
    """Mean of each duration-defined frame segment; (m, d) -> (n, d)."""
    durations = np.asarray(durations, dtype=np.int64)
    if durations.ndim != 1 or durations.size == 0:
        raise InvalidInput("durations must be a non-empty 1-D array")
    if (durations < 1).any():
        raise InvalidInput("every duration must be >= 1")
    if int(durations.sum()) != frames.shape[0]:
        raise InvalidInput(
            f"durations sum to {int(durations.sum())} but there are {frames.shape[0]} frames"
        )
    bounds = np.concatenate([[0], np.cumsum(durations)])
    return torch.stack(
        [frames[bounds[i] : bounds[i + 1]].mean(dim=0) for i in range(durations.size)]
    )


class ProsodyEncoder(nn.Module):
    """Convolutional frame encoder over the low mel bins, pooled per phoneme."""

    def __init__(self, n_low: int, dim: int, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 != 1:
            raise InvalidInput("prosody kernel size must be odd")
        pad = kernel_size // 2
        self.conv1 = nn.Conv1d(n_low, dim, kernel_size, padding=pad)
        self.conv2 = nn.Conv1d(dim, dim, kernel_size, padding=pad)
        self.act = nn.GELU()

    def forward(self, low_mel: torch.Tensor, durations: np.ndarray) -> torch.Tensor:
        if int(np.sum(durations)) != low_mel.shape[0]:
            raise InvalidInput("durations do not cover the mel frames")
        h = low_mel.T[None]  # (1, n_low, m)
        h = self.act(self.conv1(h))
        h = self.act(self.conv2(h))
        return pool_by_phoneme(h[0].T, durations)


class VectorQuantizer(nn.Module):
    """Nearest-neighbor codebook with straight-through gradients and EMA updates.

    ``update_mode`` selects how codebook entries learn: "ema" applies
    exponential-moving-average updates from assigned encoder outputs (the
    codebook loss is still reported); "loss" makes the entries ordinary
    parameters trained by the codebook loss gradient.
    """

    def __init__(
        self,
        n_codes: int,
        dim: int,
        commitment_weight: float = 0.25,
        ema_decay: float = 0.99,
        reseed_threshold: float = 0.01,
        update_mode: str = "ema",
        seed: int = 0,
    ):
        super().__init__()
        if n_codes < 2:
            raise InvalidInput("codebook needs at least 2 entries")
        if update_mode not in ("ema", "loss"):
            raise InvalidInput(f"unknown codebook update mode {update_mode!r}")
        self.commitment_weight = commitment_weight
        self.ema_decay = ema_decay
        self.reseed_threshold = reseed_threshold
        self.update_mode = update_mode
        gen = torch.Generator().manual_seed(seed)
        entries = torch.empty(n_codes, dim, dtype=torch.float64).normal_(0.0, 0.05, generator=gen)
        self.entries = nn.Parameter(entries, requires_grad=(update_mode == "loss"))
        self.register_buffer("ema_counts", torch.ones(n_codes, dtype=torch.float64))
        self.register_buffer("ema_sums", entries.detach().clone())

    @property
    def n_codes(self) -> int:
        return self.entries.shape[0]

    def quantize(self, vectors: torch.Tensor):
        """Map each row to its nearest codebook entry (L2, lowest index on ties).

        Returns (indices, quantized, losses): quantized rows are exact codebook
        entries with an identity gradient path back to the input; losses are
        the codebook term ||sg(x) - q||^2 and the commitment term
        beta * ||x - sg(q)||^2.
        """
        if vectors.ndim != 2 or vectors.shape[1] != self.entries.shape[1]:
            raise InvalidInput(
                f"expected (n, {self.entries.shape[1]}) vectors, got {tuple(vectors.shape)}"
            )
        diffs = vectors[:, None, :] - self.entries[None, :, :]
        distances = (diffs**2).sum(dim=-1)
        indices = torch.argmin(distances, dim=1)
        chosen = self.entries[indices]
        # value is exactly the codebook entry; gradient passes through unchanged
        quantized = chosen.detach() + (vectors - vectors.detach())
        losses = {
            "codebook": ((vectors.detach() - chosen) ** 2).sum(dim=1).mean(),
            "commitment": self.commitment_weight
            * ((vectors - chosen.detach()) ** 2).sum(dim=1).mean(),
        }
        return indices, quantized, losses

    def dequantize(self, indices) -> torch.Tensor:
        indices = torch.as_tensor(np.asarray(indices), dtype=torch.long)
        if indices.numel() and (indices.min() < 0 or indices.max() >= self.n_codes):
            raise InvalidInput(f"code index out of range [0, {self.n_codes})")
        return self.entries[indices].detach().clone()

    @torch.no_grad()
    def update_codebook(self, vectors: torch.Tensor, indices: torch.Tensor, rng) -> None:
        """EMA update of entry means/counts; dead entries reseed from the batch.

        ``rng`` is a numpy Generator used only for reseeding draws, keeping the
        update deterministic under a seeded training loop.
        """
        if self.update_mode != "ema":
            return
        one_hot = torch.zeros(vectors.shape[0], self.n_codes, dtype=torch.float64)
        one_hot[torch.arange(vectors.shape[0]), indices] = 1.0
        counts = one_hot.sum(dim=0)
        sums = one_hot.T @ vectors.detach()
        d = self.ema_decay
        self.ema_counts.mul_(d).add_((1.0 - d) * counts)
        self.ema_sums.mul_(d).add_((1.0 - d) * sums)
        touched = counts > 0
        denom = torch.where(
            self.ema_counts > 1e-12, self.ema_counts, torch.ones_like(self.ema_counts)
        )
        means = self.ema_sums / denom[:, None]
        self.entries.data[touched] = means[touched]
        dead = (self.ema_counts < self.reseed_threshold).nonzero(as_tuple=True)[0]
        for t in dead.tolist():
            pick = int(rng.integers(0, vectors.shape[0]))
            self.entries.data[t] = vectors[pick].detach()
            self.ema_sums[t] = vectors[pick].detach()
            self.ema_counts[t] = 1.0


def write_code_records(path, records: list[dict]) -> None:
    """JSON-lines prosody code file: {"utt": id, "codes": [int, ...]} per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps({"utt": record["utt"], "codes": list(map(int, record["codes"]))}))
            fh.write("\n")


def read_code_records(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"code file not found: {path}")
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                record = json.loads(line)
                out[record["utt"]] = np.asarray(record["codes"], dtype=np.int64)
    return out
