from .dense import DenseGemmPlan, dense_gemm_exec, dense_gemm_s8, plan_dense_gemm
from .eltwise import batch_matmul_f32, gelu_f32, layer_norm_f32, softmax_f32
from .epilogue import EpilogueProgram, build_program, pack_sides, requant_program
from .spmm import (
    DEFAULT_BN,
    ActivationLayout,
    SpmmPlan,
    dot4_accum,
    plan_spmm,
    raw_program,
    relayout_activation,
    relayout_tokens,
    spmm_exec,
    spmm_ref,
)

__all__ = [
    "ActivationLayout",
    "DEFAULT_BN",
    "DenseGemmPlan",
    "EpilogueProgram",
    "SpmmPlan",
    "batch_matmul_f32",
    "build_program",
    "dense_gemm_exec",
    "dense_gemm_s8",
    "dot4_accum",
    "gelu_f32",
    "layer_norm_f32",
    "pack_sides",
    "plan_dense_gemm",
    "plan_spmm",
    "raw_program",
    "relayout_activation",
    "relayout_tokens",
    "requant_program",
    "softmax_f32",
    "spmm_exec",
    "spmm_ref",
]
