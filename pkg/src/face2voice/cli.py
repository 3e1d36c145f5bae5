"""Command-line interface.

Subcommands: gen-corpus, train {tts,plm,face}, synthesize, evaluate.
Config precedence is defaults < --config JSON < command-line flags; every
command dumps the resolved configuration next to its outputs.  Exit codes:
0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import g2p, plots
from .audio import AudioConfig, compute_mel, griffin_lim, write_wav
from .checkpoint import load_archive
from .corpus import generate_synthetic_corpus, load_face_png, load_manifest, write_corpus
from .errors import Face2VoiceError, InvalidInput
from .face import (
    FaceEncoder,
    FaceTrainConfig,
    MappingLossConfig,
    speech_vector_table,
    synthesize_from_face,
    train_face_encoder,
)
from .metrics import (
    EvalConfig,
    OracleTranscriber,
    TtsSpeakerEmbedder,
    consistency_test,
    evaluate_identities,
    group_by_speaker,
    retrieval_recall_at_1,
    run_ablation,
    sed as sed_metric,
    secs as secs_metric,
)
from .plm import PlmConfig, PlmTrainConfig, ProsodyLanguageModel, SamplingConfig, train_plm
from .plm import export_prosody_codes
from .prosody import write_code_records
from .report import write_report
from .tts import TtsConfig, TtsModel, TtsTrainConfig, train_tts

logger = logging.getLogger("face2voice")

STAGES = ("tts", "plm", "face")
SUITES = ("metrics", "consistency", "ablation")

_STAGE_DEFAULTS = {
    "tts": {"steps": 600, "batch_size": 6, "learning_rate": 1e-3},
    "plm": {"steps": 800, "batch_size": 8, "learning_rate": 1e-3},
    "face": {"steps": 600, "batch_size": 32, "learning_rate": 1e-4},
}


@dataclass
class RunConfig:
    seed: int | None = None
    out_dir: str = "runs"
    corpus: str | None = None
    # corpus generation
    speakers: int = 4
    utts: int = 5
    frames: int = 1
    # model architecture
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
    decoder_mode: str = "feedforward"
    denoise_steps: int = 4
    # training (None: per-stage defaults)
    steps: int | None = None
    batch_size: int | None = None
    learning_rate: float | None = None
    # face mapping loss
    loss_variant: str = "mse_cos_contrastive"
    temperature: float = 0.07
    n_negatives: int | None = None
    triplet_margin: float = 0.2
    # checkpoints (None: <out_dir>/<stage>.ckpt)
    tts_checkpoint: str | None = None
    plm_checkpoint: str | None = None
    face_checkpoint: str | None = None
    # evaluation
    eval_identities: int = 8
    griffin_lim_iters: int = 64
    consistency_frames: int = 3
    consistency_identities: int = 4


class UsageError(Exception):
    pass


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < command-line flags."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {name: field.default for name, field in fields.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc.msg}")
        unknown = sorted(set(loaded) - set(fields))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        values.update(loaded)
    for name in fields:
        if hasattr(args, name):
            values[name] = getattr(args, name)
    return RunConfig(**values)


def dump_resolved(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True)
    (out_dir / "run_config.resolved.json").write_text(payload + "\n", encoding="utf-8")


def _tts_config(cfg: RunConfig) -> TtsConfig:
    return TtsConfig(
        vocab_size=g2p.VOCAB_SIZE,
        d_model=cfg.d_model,
        d_speech=cfg.d_speech,
        n_heads=cfg.n_heads,
        text_blocks=cfg.text_blocks,
        speech_blocks=cfg.speech_blocks,
        decoder_blocks=cfg.decoder_blocks,
        n_codes=cfg.n_codes,
        n_low=cfg.n_low,
        prosody_kernel=cfg.prosody_kernel,
        commitment_weight=cfg.commitment_weight,
        ema_decay=cfg.ema_decay,
        vq_update=cfg.vq_update,
        decoder_mode=cfg.decoder_mode,
        denoise_steps=cfg.denoise_steps,
    )


def _stage_training(cfg: RunConfig, stage: str) -> dict:
    out = dict(_STAGE_DEFAULTS[stage])
    for key in out:
        override = getattr(cfg, key)
        if override is not None:
            out[key] = override
    return out


def _checkpoint_path(cfg: RunConfig, stage: str) -> Path:
    override = getattr(cfg, f"{stage}_checkpoint")
    return Path(override) if override else Path(cfg.out_dir) / f"{stage}.ckpt"


def _require_checkpoint(cfg: RunConfig, stage: str) -> Path:
    path = _checkpoint_path(cfg, stage)
    if not path.exists():
        raise Face2VoiceError(
            f"missing prerequisite: {stage} checkpoint not found at {path} "
            f"(run `face2voice train {stage}` first)"
        )
    return path


def _require_corpus(cfg: RunConfig):
    if not cfg.corpus:
        raise UsageError("--corpus MANIFEST is required for this command")
    return load_manifest(cfg.corpus)


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise UsageError("--seed is mandatory for training stages")
    return cfg.seed


def _write_loss_log(path: Path, log: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _split_speakers(examples, n_held_out: int):
    """Deterministic train/held-out identity split: the last n sorted speakers
    are held out for evaluation and never seen by the face encoder."""
    grouped = group_by_speaker(examples)
    speakers = sorted(grouped)
    if n_held_out >= len(speakers):
        raise InvalidInput(
            f"eval_identities={n_held_out} leaves no training identities "
            f"(corpus has {len(speakers)})"
        )
    held = speakers[len(speakers) - n_held_out :]
    train_ids = speakers[: len(speakers) - n_held_out]
    train_examples = [ex for spk in train_ids for ex in grouped[spk]]
    return train_examples, {spk: grouped[spk] for spk in held}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(cfg: RunConfig) -> int:
    seed = _require_seed(cfg)
    out_dir = Path(cfg.out_dir)
    corpus = generate_synthetic_corpus(seed, cfg.speakers, cfg.utts, cfg.frames)
    manifest = write_corpus(corpus, out_dir)
    dump_resolved(cfg, out_dir)
    print(
        f"wrote {len(corpus.examples)} utterances from {len(corpus.speakers)} speakers "
        f"({cfg.frames} face frame(s) each) to {manifest}"
    )
    return 0


def _face_vector_cache(cfg: RunConfig, tts_path: Path, paired):
    """(cache_path, vectors-or-None); FACE2VOICE_CACHE overrides the directory."""
    cache_root = os.environ.get("FACE2VOICE_CACHE") or str(Path(cfg.out_dir) / "svcache")
    digest = hashlib.sha256(tts_path.read_bytes())
    for ex in paired:
        digest.update(ex.utt_id.encode())
    cache_file = Path(cache_root) / f"s_{digest.hexdigest()[:24]}.npz"
    if cache_file.exists():
        logger.info("speech-vector cache hit: %s", cache_file)
        return cache_file, torch.as_tensor(np.load(cache_file)["vectors"])
    return cache_file, None


def cmd_train(stage: str, cfg: RunConfig) -> int:
    seed = _require_seed(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    examples = _require_corpus(cfg)
    training = _stage_training(cfg, stage)
    ckpt_path = out_dir / f"{stage}.ckpt"

    if stage == "tts":
        model, log = train_tts(
            examples,
            AudioConfig(),
            _tts_config(cfg),
            TtsTrainConfig(seed=seed, **training),
        )
        model.save(ckpt_path)
    elif stage == "plm":
        tts = TtsModel.load(_require_checkpoint(cfg, "tts"))
        records = export_prosody_codes(examples, tts, tts.audio)
        codes_path = out_dir / "prosody_codes.jsonl"
        write_code_records(codes_path, records)
        logger.info("wrote prosody codes for %d utterances to %s", len(records), codes_path)
        model, log = train_plm(
            examples,
            {r["utt"]: np.asarray(r["codes"]) for r in records},
            tts,
            PlmTrainConfig(seed=seed, **training),
        )
        model.save(ckpt_path)
    else:
        tts_path = _require_checkpoint(cfg, "tts")
        tts = TtsModel.load(tts_path)
        train_examples, _ = _split_speakers(examples, cfg.eval_identities)
        paired = [ex for ex in train_examples if ex.face is not None]
        cache_file, cached = _face_vector_cache(cfg, tts_path, paired)
        fresh = cached is None
        if fresh:
            cached = speech_vector_table(paired, tts)
        loss_cfg = MappingLossConfig(
            variant=cfg.loss_variant,
            temperature=cfg.temperature,
            n_negatives=cfg.n_negatives,
            triplet_margin=cfg.triplet_margin,
        )
        model, log = train_face_encoder(
            paired,
            tts,
            FaceTrainConfig(seed=seed, loss=loss_cfg, **training),
            cached_vectors=cached,
        )
        if fresh:
            cache_file.parent.mkdir(parents=True, exist_ok=True)
            np.savez(cache_file, vectors=cached.numpy())
        model.save(ckpt_path, meta={"variant": cfg.loss_variant})

    _write_loss_log(out_dir / f"{stage}_loss.jsonl", log)
    plots.save_loss_curves(log, out_dir / f"{stage}_loss.png", title=f"{stage} training loss")
    dump_resolved(cfg, out_dir)
    print(f"wrote {ckpt_path} ({len(log)} steps logged)")
    return 0


def cmd_synthesize(cfg: RunConfig, face_path: str, text: str, out_path: str,
                   prompt_utt: str | None) -> int:
    examples = _require_corpus(cfg)
    tts = TtsModel.load(_require_checkpoint(cfg, "tts"))
    plm = ProsodyLanguageModel.load(_require_checkpoint(cfg, "plm"))
    encoder = FaceEncoder.load(_require_checkpoint(cfg, "face"))
    seed = cfg.seed if cfg.seed is not None else 0
    if prompt_utt is None:
        prompt_ex = examples[0]
        logger.info("no --prompt given; using first training utterance %r", prompt_ex.utt_id)
    else:
        matches = [ex for ex in examples if ex.utt_id == prompt_utt]
        if not matches:
            raise Face2VoiceError(f"prompt utterance {prompt_utt!r} not in corpus")
        prompt_ex = matches[0]
    face = load_face_png(face_path)
    mel = synthesize_from_face(
        face,
        g2p.text_to_phonemes(text),
        (compute_mel(prompt_ex.waveform, tts.audio), prompt_ex.transcript),
        tts,
        plm,
        encoder,
        sampling=SamplingConfig(seed=seed),
        noise_seed=seed,
    )
    wave = griffin_lim(mel, tts.audio, n_iters=cfg.griffin_lim_iters, seed=seed)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, wave)
    plots.save_mel_figure(mel.frames, out.with_suffix(".png"), title=f"synthesized: {text}")
    dump_resolved(cfg, Path(cfg.out_dir))
    print(f"wrote {out} ({wave.duration:.2f} s)")
    return 0


def cmd_evaluate(cfg: RunConfig, suite: str) -> int:
    examples = _require_corpus(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tts = TtsModel.load(_require_checkpoint(cfg, "tts"))
    plm = ProsodyLanguageModel.load(_require_checkpoint(cfg, "plm"))
    seed = cfg.seed if cfg.seed is not None else 0
    eval_cfg = EvalConfig(seed=seed, griffin_lim_iters=cfg.griffin_lim_iters)
    train_examples, held_out = _split_speakers(examples, cfg.eval_identities)

    if suite == "metrics":
        face_ckpt = _require_checkpoint(cfg, "face")
        encoder = FaceEncoder.load(face_ckpt)
        variant = load_archive(face_ckpt)[0].get("variant", "default")
        results, summary = evaluate_identities(held_out, train_examples, tts, plm, encoder, eval_cfg)
        row = {"variant": variant, **summary,
               "recall1": retrieval_recall_at_1(held_out, tts, encoder)}
        paths = write_report(out_dir, "metrics_report", [row], title="evaluation on held-out faces")
        plots.save_metric_bars(
            [{"variant": r.speaker_id, "secs": r.secs_to_reference, "cer": r.cer_percent}
             for r in results],
            out_dir / "metrics_per_identity.png",
            metrics=("secs", "cer"),
            title="per-identity scores",
        )
    elif suite == "consistency":
        encoder = FaceEncoder.load(_require_checkpoint(cfg, "face"))
        emb = TtsSpeakerEmbedder(tts)
        rng = np.random.default_rng(seed)
        rows, mats = [], []
        speakers = sorted(held_out)[: cfg.consistency_identities]
        for spk in speakers:
            frames = []
            seen = set()
            for ex in held_out[spk]:
                if ex.face is not None and ex.frame_index not in seen:
                    frames.append(ex.face)
                    seen.add(ex.frame_index)
            frames = frames[: cfg.consistency_frames]
            if len(frames) < 2:
                raise Face2VoiceError(f"identity {spk} has fewer than 2 distinct face frames")
            prompt_ex = train_examples[int(rng.integers(0, len(train_examples)))]
            text = " ".join(g2p.WORD_LIST[i] for i in rng.integers(0, len(g2p.WORD_LIST), 2))
            matrix, off_mean = consistency_test(
                frames, text, (compute_mel(prompt_ex.waveform, tts.audio), prompt_ex.transcript),
                tts, plm, encoder, eval_cfg, emb=emb,
            )
            mats.append((spk, matrix))
            rows.append({"variant": spk, "secs": off_mean, "n": len(frames)})
        paths = write_report(out_dir, "consistency_report", rows,
                             title="same-identity frame consistency (off-diagonal SECS)")
        for spk, matrix in mats:
            plots.save_similarity_heatmap(
                matrix, [f"f{i}" for i in range(matrix.shape[0])],
                out_dir / f"consistency_{spk}.png", title=f"{spk} frame SECS",
            )
    else:  # ablation
        face_training = _stage_training(cfg, "face")
        loss_cfg = MappingLossConfig(
            temperature=cfg.temperature,
            n_negatives=cfg.n_negatives,
            triplet_margin=cfg.triplet_margin,
        )
        rows = run_ablation(
            train_examples, held_out, tts, plm,
            FaceTrainConfig(seed=seed, loss=loss_cfg, **face_training),
            eval_cfg,
        )
        paths = write_report(out_dir, "ablation_report", rows, title="mapping-loss ablation")
        plots.save_metric_bars(rows, out_dir / "ablation_metrics.png")

    dump_resolved(cfg, out_dir)
    print(f"wrote {paths['json']}, {paths['csv']}, {paths['txt']}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps unset flags out of the namespace so they never shadow
    # values from the config file
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="random seed (mandatory for training)")
    parser.add_argument("--config", type=str, default=argparse.SUPPRESS,
                        help="JSON config file")
    parser.add_argument("--out-dir", dest="out_dir", type=str, default=argparse.SUPPRESS,
                        help="output directory")
    parser.add_argument("--corpus", type=str, default=argparse.SUPPRESS,
                        help="corpus manifest (JSON-lines)")


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    skip = {"seed", "out_dir", "corpus"}
    for f in dataclasses.fields(RunConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("int | None", "int"):
            kind = int
        elif f.type in ("float | None", "float"):
            kind = float
        else:
            kind = str
        parser.add_argument(flag, type=kind, default=argparse.SUPPRESS,
                            help=f"override config field {f.name}")


def build_parser() -> _Parser:
    parser = _Parser(prog="face2voice", description=__doc__)
    parser.set_defaults(command=None)
    sub = parser.add_subparsers(dest="command")

    p_gen = sub.add_parser("gen-corpus", help="write a synthetic audiovisual corpus")
    p_train = sub.add_parser("train", help="train a pipeline stage")
    p_train.add_argument("stage", choices=STAGES)
    p_synth = sub.add_parser("synthesize", help="synthesize speech from a face image")
    p_synth.add_argument("--face", required=True, help="face image (PNG)")
    p_synth.add_argument("--text", required=True, help="text in the bundled vocabulary")
    p_synth.add_argument("--prompt", default=None, help="prompt utterance id (default: first in corpus)")
    p_synth.add_argument("--out", required=True, help="output WAV path")
    p_eval = sub.add_parser("evaluate", help="run an evaluation suite")
    p_eval.add_argument("--suite", choices=SUITES, required=True)

    for p in (p_gen, p_train, p_synth, p_eval):
        _add_common(p)
        _add_overrides(p)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (gen-corpus, train, synthesize, evaluate)")
        cfg = resolve_config(args)
        if args.command == "gen-corpus":
            return cmd_gen_corpus(cfg)
        if args.command == "train":
            return cmd_train(args.stage, cfg)
        if args.command == "synthesize":
            return cmd_synthesize(cfg, args.face, args.text, args.out,
                                  getattr(args, "prompt", None))
        return cmd_evaluate(cfg, args.suite)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Face2VoiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
