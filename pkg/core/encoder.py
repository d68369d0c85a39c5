import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from core import rng
from models import EncoderDims, EncoderParams, NumericError, StructuralError

logger = logging.getLogger(__name__)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def glorot_init(dims: EncoderDims, seed: int) -> EncoderParams:
    """Uniform(±sqrt(6/(fan_in+fan_out))) weights, zero biases."""
    dims.validate()

    def layer(name, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.generator(seed, rng.GLOROT, name).uniform(-bound, bound, size=(fan_in, fan_out))

    return EncoderParams(
        gcn_w1=layer('gcn_w1', dims.n_features, dims.hidden),
        gcn_w2=layer('gcn_w2', dims.hidden, dims.embedding),
        proj_w1=layer('proj_w1', dims.embedding, dims.proj_hidden),
        proj_b1=np.zeros(dims.proj_hidden),
        proj_w2=layer('proj_w2', dims.proj_hidden, dims.proj_out),
        proj_b2=np.zeros(dims.proj_out),
    )


@dataclass(eq=False)
class ForwardCache:
    """Intermediate activations of one forward pass, consumed by ``backward``."""
    a_hat: sp.csr_matrix
    ax: np.ndarray
    pre1: np.ndarray
    a_h1: np.ndarray
    pre2: np.ndarray
    h: np.ndarray
    pre_p: np.ndarray
    hidden_p: np.ndarray
    z: np.ndarray


def _check_inputs(params: EncoderParams, a_hat, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != params.gcn_w1.shape[0]:
        raise StructuralError(f"feature matrix shape {x.shape} does not match encoder input dim {params.gcn_w1.shape[0]}")
    if a_hat.shape != (x.shape[0], x.shape[0]):
        raise StructuralError(f"normalized adjacency shape {a_hat.shape} does not match {x.shape[0]} nodes")
    if not np.all(np.isfinite(x)):
        raise NumericError("encoder input contains non-finite entries")


def gcn_forward(params: EncoderParams, a_hat, x: np.ndarray) -> np.ndarray:
    """H = ReLU(Â · ReLU(Â · X · W1) · W2)."""
    x = np.asarray(x, dtype=np.float64)
    _check_inputs(params, a_hat, x)
    h1 = _relu(a_hat @ x @ params.gcn_w1)
    return _relu(a_hat @ h1 @ params.gcn_w2)


def projection_forward(params: EncoderParams, h: np.ndarray) -> np.ndarray:
    """Z = ReLU(H · Wp1 + b1) · Wp2 + b2."""
    return _relu(h @ params.proj_w1 + params.proj_b1) @ params.proj_w2 + params.proj_b2


def forward(params: EncoderParams, a_hat, x: np.ndarray) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    _check_inputs(params, a_hat, x)
    ax = np.asarray(a_hat @ x)
    pre1 = ax @ params.gcn_w1
    a_h1 = np.asarray(a_hat @ _relu(pre1))
    pre2 = a_h1 @ params.gcn_w2
    h = _relu(pre2)
    pre_p = h @ params.proj_w1 + params.proj_b1
    hidden_p = _relu(pre_p)
    z = hidden_p @ params.proj_w2 + params.proj_b2
    return ForwardCache(a_hat=a_hat, ax=ax, pre1=pre1, a_h1=a_h1, pre2=pre2, h=h,
                        pre_p=pre_p, hidden_p=hidden_p, z=z)


def backward(params: EncoderParams, cache: ForwardCache, dz: np.ndarray) -> EncoderParams:
    """Exact parameter gradients for upstream gradient dLoss/dZ.

    ReLU uses subgradient 0 at 0. Â is symmetric, so Âᵀ = Â.
    """
    if dz.shape != cache.z.shape:
        raise StructuralError(f"upstream gradient shape {dz.shape} does not match Z {cache.z.shape}")
    g_proj_w2 = cache.hidden_p.T @ dz
    g_proj_b2 = dz.sum(axis=0)
    d_pre_p = (dz @ params.proj_w2.T) * (cache.pre_p > 0)
    g_proj_w1 = cache.h.T @ d_pre_p
    g_proj_b1 = d_pre_p.sum(axis=0)

    d_pre2 = (d_pre_p @ params.proj_w1.T) * (cache.pre2 > 0)
    g_gcn_w2 = cache.a_h1.T @ d_pre2
    d_h1 = np.asarray(cache.a_hat @ (d_pre2 @ params.gcn_w2.T))
    d_pre1 = d_h1 * (cache.pre1 > 0)
    g_gcn_w1 = cache.ax.T @ d_pre1

    return EncoderParams(gcn_w1=g_gcn_w1, gcn_w2=g_gcn_w2, proj_w1=g_proj_w1, proj_b1=g_proj_b1,
                         proj_w2=g_proj_w2, proj_b2=g_proj_b2)
