"""Position-learned non-autoregressive sequence generation, desk scale.

A numpy library with a small reverse-mode autodiff core. The generator
treats output word order as an explicit latent permutation: a greedy
similarity search supplies reference positions during training, a pointer
head predicts them at inference, and all output tokens decode in one
parallel pass.
"""

from .bleu import corpus_bleu
from .bridge import LengthPredictor, SoftCopyConfig, length_loss, predict_length, soft_copy
from .data import (ParallelCorpus, TaskSpec, Vocab, build_vocab, encode_pairs,
                   gen_synthetic)
from .decoding import DecodeResult, argmax_decode, lpd_decode, remove_repeats
from .errors import DataError, NumericalError, PnatError, UsageError
from .model import (ArTransformer, EncoderOutput, ModelConfig, PnatModel,
                    relative_bucket, relative_buckets)
from .optim import AdamState, LrSchedule, adam_step
from .positions import (hsp, optimal_assignment, permutation_accuracy,
                        relative_accuracy, similarity_matrix)
from .tensor import (Tensor, cosine_similarity, cross_entropy, grad_check, no_grad,
                     set_debug_checks, set_default_dtype, softmax)
from .training import (TrainConfig, TrainState, distill_corpus, evaluate_ar,
                       evaluate_nat, finetune_length_predictor, train_loop, train_step)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ArTransformer", "DataError", "DecodeResult", "EncoderOutput",
    "LengthPredictor", "LrSchedule", "ModelConfig", "NumericalError",
    "ParallelCorpus", "PnatError", "PnatModel", "SoftCopyConfig", "TaskSpec",
    "Tensor", "TrainConfig", "TrainState", "UsageError", "Vocab", "adam_step",
    "argmax_decode", "build_vocab", "corpus_bleu", "cosine_similarity",
    "cross_entropy", "distill_corpus", "encode_pairs", "evaluate_ar",
    "evaluate_nat", "finetune_length_predictor", "gen_synthetic", "grad_check",
    "hsp", "length_loss", "lpd_decode", "no_grad", "optimal_assignment",
    "permutation_accuracy", "predict_length", "relative_accuracy",
    "relative_bucket", "relative_buckets", "remove_repeats", "set_debug_checks",
    "set_default_dtype", "similarity_matrix", "soft_copy", "softmax",
    "train_loop", "train_step",
]
