"""Label-free distillation of speaker embeddings into small TDNN students."""

from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    DistillkitError,
    EmptyAfterVadError,
    FormatError,
    MissingIdError,
    TooShortError,
    UsageError,
)
from .evaluate import compute_eer, cosine_score, length_normalize, run_trials
from .features import FbankConfig, Waveform, compute_fbank, extract_features, read_archive, write_archive
from .losses import aam_softmax_loss, contrastive_loss, cos_loss, mse_loss
from .nnet import NetConfig, StudentNet, measure_params_and_rtf, student_config
from .synth import SynthSpec, generate_corpus
from .teacher import TeacherStore, read_store, write_store
from .trainer import TrainConfig, finetune_supervised, lr_schedule, train_distill

__version__ = "0.1.0"
