"""Counter-based random streams.

Every random quantity in the package is drawn from a Philox stream whose key is
a blake2b digest of the global seed and a tuple of stream labels (view id,
element kind, epoch, ...). Element ``i`` of a stream is the ``i``-th Philox
output, so a draw depends only on (seed, labels, i) and never on how many other
streams were consumed before it.
"""
import hashlib

import numpy as np

FEATURE_MASK = 'feature_mask'
EDGE_DELETE = 'edge_delete'
GLOROT = 'glorot'
SBM_EDGES = 'sbm_edges'
SBM_FEATURES = 'sbm_features'
SBM_LABELS = 'sbm_labels'
MC_RHO = 'mc_rho'
EPOCH = 'epoch'
SPLIT = 'split'


def _digest(seed: int, parts) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(16, 'little', signed=True))
    for part in parts:
        token = str(part).encode('utf-8')
        h.update(len(token).to_bytes(4, 'little'))
        h.update(token)
    return h.digest()


def stream_key(seed: int, *parts) -> int:
    """128-bit Philox key for the stream labelled by ``parts``."""
    return int.from_bytes(_digest(seed, parts), 'little')


def derive_seed(seed: int, *parts) -> int:
    """Derived 63-bit seed, e.g. for per-epoch or per-split sub-experiments."""
    return int.from_bytes(_digest(seed, parts)[:8], 'little') >> 1


def generator(seed: int, *parts) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *parts)))


def uniforms(seed: int, n: int, *parts) -> np.ndarray:
    """First ``n`` uniforms in [0, 1) of the labelled stream."""
    return generator(seed, *parts).random(int(n))


def bernoulli(probs: np.ndarray, seed: int, *parts) -> np.ndarray:
    """Independent Bernoulli(probs[i]) draws; p=0 never fires and p=1 always does."""
    probs = np.asarray(probs, dtype=np.float64)
    return uniforms(seed, probs.size, *parts).reshape(probs.shape) < probs
