"""sparseinfer: CPU inference engine for INT8 transformer encoders whose
weights carry a 4x1 structured-sparsity pattern."""

__version__ = "0.1.0"

from .sparse import (
    Sparse4x1Weight,
    SparseFormatError,
    decode_sparse,
    encode_sparse,
    generate_pattern_weight,
    sparsity_ratio,
)
from .tensor import (
    DType,
    Granularity,
    QuantParams,
    compute_quant_params,
    dequantize,
    quantize,
    requantize,
)

__all__ = [
    "DType",
    "Granularity",
    "QuantParams",
    "Sparse4x1Weight",
    "SparseFormatError",
    "compute_quant_params",
    "decode_sparse",
    "dequantize",
    "encode_sparse",
    "generate_pattern_weight",
    "quantize",
    "requantize",
    "sparsity_ratio",
    "__version__",
]
