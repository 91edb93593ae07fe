"""Decode viseme classes from short EEG/EMG windows and reconstruct sentences.

The pipeline: read BrainVision recordings and Praat alignments, filter,
condense phonemes to 15 viseme classes, cut per-phoneme trials, train a
diffusion-regularized classifier, then match predicted viseme sequences
against a closed sentence catalog.
"""

from .errors import (ConfigError, IntegrityError, ParseError, StageMissingError, UnmappedPhonemeError,
                     UnsupportedFormatError, ValidationError, VisemeDecodeError)

__version__ = "0.1.0"

__all__ = [
    "VisemeDecodeError",
    "ValidationError",
    "ParseError",
    "IntegrityError",
    "UnsupportedFormatError",
    "UnmappedPhonemeError",
    "ConfigError",
    "StageMissingError",
]
