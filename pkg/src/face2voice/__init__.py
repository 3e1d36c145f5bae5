"""Face-conditioned zero-shot text-to-speech at desk scale.

A TTS core whose speaker conditioning is a latent speech vector, a
vector-quantized prosody codec, an autoregressive prosody-code language
model, a face encoder mapped onto the speech-vector space, and the objective
evaluation metrics, all trainable on a deterministic synthetic audiovisual
corpus.
"""

from .audio import (
    AudioConfig,
    MelSpectrogram,
    Waveform,
    compute_mel,
    griffin_lim,
    lowpass_mel,
    mel_filterbank,
    read_wav,
    write_wav,
)
from .corpus import (
    CorpusExample,
    FaceImage,
    SpeakerIdentity,
    SyntheticCorpus,
    generate_synthetic_corpus,
    load_manifest,
    write_corpus,
)
from .errors import (
    AlignmentInfeasible,
    CheckpointError,
    DegenerateVector,
    Face2VoiceError,
    InvalidInput,
    ManifestError,
    TrainingDiverged,
)
from .face import (
    FaceEncoder,
    FaceTrainConfig,
    MappingLossConfig,
    map_loss,
    synthesize_from_face,
    train_face_encoder,
)
from .metrics import (
    EvalConfig,
    OracleTranscriber,
    TtsSpeakerEmbedder,
    cer,
    consistency_test,
    retrieval_recall_at_1,
    run_ablation,
    secs,
    sed,
)
from .plm import (
    PlmConfig,
    PlmContext,
    PlmTrainConfig,
    ProsodyLanguageModel,
    SamplingConfig,
    make_prompt,
    plm_train_step,
    train_plm,
)
from .prosody import ProsodyEncoder, VectorQuantizer, pool_by_phoneme
from .tts import (
    TtsConfig,
    TtsModel,
    TtsTrainConfig,
    expand,
    fit_durations,
    infer,
    monotonic_align,
    train_tts,
)

__version__ = "0.1.0"
