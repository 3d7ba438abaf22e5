"""Infinite-width recurrent-network kernels (CK/NTK) with verification and benchmarking tools."""

from .kernels import (
    Arch,
    CompositionError,
    Cov2,
    CrossGram,
    GramPair,
    HyperParams,
    InputOrder,
    PairOutputs,
    ShapeError,
    Variant,
    compose_bidirectional,
    flip,
    gram,
    gram_cross,
    kernel_pair,
    vphi,
    vphi_prime,
)
from .oracle import (
    ForwardTrace,
    KernelEstimate,
    RNNWeights,
    empirical_ck,
    empirical_cross_head,
    empirical_ntk,
    empirical_suite,
    flatten_rnn,
    forward,
    gradient,
    sample_rnn,
    unflatten_rnn,
)

__version__ = "0.1.0"

__all__ = [
    "Arch",
    "CompositionError",
    "Cov2",
    "CrossGram",
    "GramPair",
    "HyperParams",
    "InputOrder",
    "PairOutputs",
    "ShapeError",
    "ForwardTrace",
    "KernelEstimate",
    "RNNWeights",
    "Variant",
    "compose_bidirectional",
    "empirical_ck",
    "empirical_cross_head",
    "empirical_ntk",
    "empirical_suite",
    "flatten_rnn",
    "flip",
    "forward",
    "gradient",
    "gram",
    "gram_cross",
    "kernel_pair",
    "sample_rnn",
    "unflatten_rnn",
    "vphi",
    "vphi_prime",
    "__version__",
]
