"""EEG variational autoencoder with an EEGNet-style convolutional body.

Pure numpy/scipy implementation: a from-scratch reverse-mode autodiff engine
(tensor), signal plumbing for 22-channel motor-imagery epochs (dsp), the
encoder/decoder/classifier model family (model), AdamW training (training),
evaluation metrics (metrics) and a small CLI (cli).
"""

import os as _os

# Single-threaded BLAS before numpy loads: keeps results reproducible and
# avoids thread-pool thrash on the skinny matmuls this package emits.
# setdefault only, so an explicit environment wins.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")
del _os, _var

__version__ = "0.1.0"

from . import errors  # noqa: E402,F401
from .errors import (  # noqa: E402,F401
    ConfigError,
    DataError,
    DegenerateDataError,
    FormatError,
    NumericError,
    OptimizerError,
    ParameterError,
    ShapeError,
    UsageError,
    ValidationError,
)
from .rng import CounterRNG, derive, mix64  # noqa: E402,F401
