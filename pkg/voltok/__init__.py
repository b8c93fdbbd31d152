"""Vector-quantized volume tokenizer."""
from .codebook import Codebook, VectorQuantizer, quantize, quantize_many
from .model import VQTokenizer
from .patching import (AXIS_PERMUTATIONS, NonFiniteInputError, PatchSpec, inverse_permutation, patch_array,
                       patch_volume, permute_axes, random_axis_permutation)
from .tokens import TokenCache, TokenGrid, tokenize_and_cache, tokenize_sequence
from .training import TrainedTokenizer, TrainingDivergedError, collect_patches, train_tokenizer

__all__ = [
    'AXIS_PERMUTATIONS', 'Codebook', 'NonFiniteInputError', 'PatchSpec', 'TokenCache', 'TokenGrid',
    'TrainedTokenizer', 'TrainingDivergedError', 'VQTokenizer', 'VectorQuantizer', 'collect_patches',
    'inverse_permutation', 'patch_array', 'patch_volume', 'permute_axes', 'quantize', 'quantize_many',
    'random_axis_permutation', 'tokenize_and_cache', 'tokenize_sequence', 'train_tokenizer',
]
