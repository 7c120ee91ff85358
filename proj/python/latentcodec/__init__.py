"""Lossless codec for quantized latent tensors with input-adaptive
per-channel encoding distributions.

Models and coded streams are opaque ``bytes``; latent tensors are
``[channels, height, width]`` int32 numpy arrays and pmf banks are
``[channels, bins]`` float64 arrays.
"""

from ._latentcodec import (
    GMM_MAX_COMPONENTS,
    GMM_SIGMA_MIN,
    PMF_FLOOR,
    Q_SUPPORT_MAX,
    Q_SUPPORT_MIN,
    CodecError,
    compress,
    cross_entropy_bits,
    decompress,
    entropy_bits,
    fit_static,
    gap_report_csv,
    generate_corpus,
    gmm_model,
    hard_bank,
    kl_bits,
    lambda_q,
    model_kind,
    potential_savings_bpp,
    stream_info,
    train_model,
)

__all__ = [
    "GMM_MAX_COMPONENTS",
    "GMM_SIGMA_MIN",
    "PMF_FLOOR",
    "Q_SUPPORT_MAX",
    "Q_SUPPORT_MIN",
    "CodecError",
    "compress",
    "cross_entropy_bits",
    "decompress",
    "entropy_bits",
    "fit_static",
    "gap_report_csv",
    "generate_corpus",
    "gmm_model",
    "hard_bank",
    "kl_bits",
    "lambda_q",
    "model_kind",
    "potential_savings_bpp",
    "stream_info",
    "train_model",
]
