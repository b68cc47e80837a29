"""sparsemac: sparsity-aware reduced-precision CNN engine and accelerator model.

Layout mirrors the moving parts of the modeled design:

- `fixedpoint`: Q(IL,FL) arithmetic, widened MACs, stochastic rounding, LFSR.
- `sparse`: binary-mask compression and the operand alignment pipeline.
- `nn`: quantized CNN layers (forward and backward) over compressed tensors.
- `perf`: analytical cycle/energy model of the accelerator organization.
- `mem`: timing/energy model of the stacked NVRAM system.
- `front`: JSON network/config ingestion, reports, CLI.
"""

from . import fixedpoint, mem, nn, perf, sparse  # noqa: F401
from .fixedpoint import FixedPointValue, Lfsr, QFormat, WideAccumulator
from .sparse import AlignedPair, BinaryMask, MaskedTensor, MaskedVector

__version__ = "0.1.0"

__all__ = [
    "QFormat",
    "FixedPointValue",
    "WideAccumulator",
    "Lfsr",
    "BinaryMask",
    "MaskedVector",
    "MaskedTensor",
    "AlignedPair",
    "__version__",
]
