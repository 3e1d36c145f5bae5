"""Face encoder and face-to-speech-vector mapping.

The encoder maps a face image into the speech-vector space of a frozen TTS
checkpoint.  The mapping objective combines negative cosine similarity, MSE,
and (by default) a CLIP-style contrastive term over in-batch negatives;
triplet and contrastive-free variants exist for the ablation study.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .audio import MelSpectrogram, compute_mel
from .checkpoint import load_archive, save_archive
from .corpus import IMAGE_SIZE, FaceImage
from .errors import CheckpointError, DegenerateVector, InvalidInput
from .nnutil import DTYPE, load_module_arrays, module_arrays, seeded_init, tensor_from
from .plm import PlmContext, SamplingConfig, make_prompt
from .tts import TtsModel, expand

LOSS_VARIANTS = ("mse_cos", "mse_cos_triplet", "mse_cos_contrastive")


@dataclass(frozen=True)
class MappingLossConfig:
    variant: str = "mse_cos_contrastive"
    temperature: float = 0.07
    n_negatives: int | None = None  # None: all other in-batch speech vectors
    triplet_margin: float = 0.2

    def __post_init__(self):
        if self.variant not in LOSS_VARIANTS:
            raise InvalidInput(f"unknown loss variant {self.variant!r}")
        if self.temperature <= 0:
            raise InvalidInput("temperature must be positive")
        if self.n_negatives is not None and self.n_negatives < 1:
            raise InvalidInput("n_negatives must be >= 1 when given")


@dataclass(frozen=True)
class FaceTrainConfig:
    steps: int = 600
    batch_size: int = 32
    learning_rate: float = 1e-4
    seed: int = 0
    loss: MappingLossConfig = field(default_factory=MappingLossConfig)


class FaceEncoder(nn.Module):
    """Four strided conv blocks, global average pooling, and a linear head.

    A fixed 4x average pool shrinks the flat-shaded input before the convs;
    the renders carry no detail below that scale and it keeps CPU training
    fast.
    """

    def __init__(self, d_out: int, seed: int = 0):
        super().__init__()
        self.d_out = d_out
        self.pool_in = nn.AvgPool2d(4)
        channels = (3, 16, 32, 64, 64)
        self.convs = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], 4, stride=2, padding=1) for i in range(4)
        )
        self.act = nn.GELU()
        self.head = nn.Linear(channels[-1], d_out)
        self.to(DTYPE)
        seeded_init(self, seed, scale=0.05)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1:] != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise InvalidInput(
                f"expected (batch, 3, {IMAGE_SIZE}, {IMAGE_SIZE}) images, got {tuple(images.shape)}"
            )
        h = self.pool_in(images)
        for conv in self.convs:
            h = self.act(conv(h))
        return self.head(h.mean(dim=(2, 3)))

    def encode_face(self, image: FaceImage) -> torch.Tensor:
        with torch.no_grad():
            return self(tensor_from(image.pixels)[None])[0]

    def save(self, path, meta: dict | None = None) -> None:
        config = {"kind": "face", "d_out": self.d_out}
        if meta:
            config.update(meta)
        save_archive(path, config, module_arrays(self))

    @classmethod
    def load(cls, path) -> "FaceEncoder":
        config, arrays = load_archive(path)
        if config.get("kind") != "face":
            raise CheckpointError(
                f"{path}: expected a face-encoder checkpoint, got {config.get('kind')!r}"
            )
        model = cls(int(config["d_out"]))
        load_module_arrays(model, arrays)
        return model


def _unit_rows(x: torch.Tensor, what: str) -> torch.Tensor:
    norms = torch.linalg.norm(x, dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise DegenerateVector(f"zero-norm {what} vector in cosine computation")
    return x / norms


def map_loss(v_batch: torch.Tensor, s_batch: torch.Tensor, cfg: MappingLossConfig) -> torch.Tensor:
    """Face-to-speech mapping objective, averaged over the batch.

    Every variant includes (1 - cos(v_i, s_i)) + MSE(v_i, s_i).  The
    contrastive variant adds the negative log-softmax of cos(v_i, s_i)/tau
    against the other in-batch speech vectors; the triplet variant instead
    adds a hinge on the hardest in-batch negative.
    """
    if v_batch.shape != s_batch.shape or v_batch.ndim != 2 or v_batch.shape[0] < 1:
        raise InvalidInput(f"batch shapes differ: {tuple(v_batch.shape)} vs {tuple(s_batch.shape)}")
    M = v_batch.shape[0]
    v_unit = _unit_rows(v_batch, "face")
    s_unit = _unit_rows(s_batch, "speech")
    cos_matrix = v_unit @ s_unit.T  # (M, M); diagonal holds the positives
    positives = cos_matrix.diagonal()
    loss = (1.0 - positives).mean() + ((v_batch - s_batch) ** 2).mean()
    if cfg.variant == "mse_cos":
        return loss
    if M < 2:
        raise InvalidInput(f"variant {cfg.variant!r} needs at least 2 examples per batch")
    off_diag = ~torch.eye(M, dtype=torch.bool)
    if cfg.variant == "mse_cos_triplet":
        hardest = cos_matrix.masked_fill(~off_diag, float("-inf")).max(dim=1).values
        hinge = torch.clamp(cfg.triplet_margin - positives + hardest, min=0.0)
        return loss + hinge.mean()
    scaled = cos_matrix / cfg.temperature
    if cfg.n_negatives is not None and cfg.n_negatives < M - 1:
        # keep the positive plus the first K other columns, in batch order
        keep = torch.zeros(M, M, dtype=torch.bool)
        for i in range(M):
            others = [j for j in range(M) if j != i][: cfg.n_negatives]
            keep[i, others] = True
            keep[i, i] = True
        scaled = scaled.masked_fill(~keep, float("-inf"))
    contrastive = -(scaled.diagonal() - torch.logsumexp(scaled, dim=1))
    return loss + contrastive.mean()


def speech_vector_table(examples, tts: TtsModel) -> torch.Tensor:
    """Speech vectors for a list of examples under the frozen speech encoder."""
    with torch.no_grad():
        return torch.stack(
            [tts.encode_speech(compute_mel(ex.waveform, tts.audio)) for ex in examples]
        )


def train_face_encoder(
    examples,
    tts: TtsModel,
    cfg: FaceTrainConfig,
    cached_vectors: torch.Tensor | None = None,
) -> tuple[FaceEncoder, list[dict]]:
    """Optimize the mapping objective against the frozen speech encoder.

    Batches draw at most one example per identity, so every other in-batch
    speech vector is a true negative.  Speech vectors are computed once and
    cached.  Deterministic given the seed.
    """
    paired = [ex for ex in examples if ex.face is not None]
    if not paired:
        raise InvalidInput("face training needs examples with face images")
    identities = sorted({ex.speaker_id for ex in paired})
    if cfg.loss.variant != "mse_cos" and len(identities) < 2:
        raise InvalidInput(f"variant {cfg.loss.variant!r} needs at least 2 identities")
    by_identity = {spk: [i for i, ex in enumerate(paired) if ex.speaker_id == spk]
                   for spk in identities}
    vectors = cached_vectors if cached_vectors is not None else speech_vector_table(paired, tts)
    if vectors.shape != (len(paired), tts.cfg.d_speech):
        raise InvalidInput("cached speech vectors do not match the paired corpus")
    images = torch.stack([tensor_from(ex.face.pixels) for ex in paired])

    encoder = FaceEncoder(tts.cfg.d_speech, seed=cfg.seed)
    optimizer = torch.optim.Adam(encoder.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    batch_size = min(cfg.batch_size, len(identities))
    log: list[dict] = []
    for step in range(cfg.steps):
        spk_picks = rng.choice(len(identities), size=batch_size, replace=False)
        idx = [by_identity[identities[k]][int(rng.integers(0, len(by_identity[identities[k]])))]
               for k in spk_picks]
        optimizer.zero_grad()
        v = encoder(images[idx])
        loss = map_loss(v, vectors[idx], cfg.loss)
        loss.backward()
        optimizer.step()
        log.append({"step": step, "loss": float(loss)})
    return encoder, log


def synthesize_from_face(
    image: FaceImage,
    phoneme_ids,
    prompt: tuple[MelSpectrogram, np.ndarray],
    tts: TtsModel,
    plm,
    encoder: FaceEncoder,
    sampling: SamplingConfig | None = None,
    noise_seed: int = 0,
) -> MelSpectrogram:
    """Speech for new text in the voice implied by a face image.

    The face vector stands in for the speech vector everywhere: duration
    prediction, decoder conditioning.  Prosody codes come from the language
    model primed with the (speaker-irrelevant) prompt utterance.
    """
    if encoder.d_out != tts.cfg.d_speech:
        raise CheckpointError(
            f"face encoder dimension {encoder.d_out} does not match speech vectors "
            f"({tts.cfg.d_speech})"
        )
    if plm.cfg.n_codes != tts.cfg.n_codes:
        raise CheckpointError(
            f"PLM vocabulary ({plm.cfg.n_codes}) inconsistent with codec ({tts.cfg.n_codes})"
        )
    prompt_mel, prompt_ids = prompt
    with torch.no_grad():
        v = encoder.encode_face(image)
        H_x = tts.encode_text(phoneme_ids)
        durations = tts.predict_durations(H_x, v)
        prompt_codes, prompt_text = make_prompt(prompt_mel, prompt_ids, tts)
        codes = plm.generate(PlmContext(prompt_codes, prompt_text, H_x), sampling)
        H_y_exp = expand(tts.vq.dequantize(codes), durations)
        mel = tts.decode(expand(H_x, durations), H_y_exp, v, noise_seed=noise_seed)
    return MelSpectrogram(
        frames=mel.numpy(), sample_rate=tts.audio.sample_rate, hop_length=tts.audio.hop_length
    )
