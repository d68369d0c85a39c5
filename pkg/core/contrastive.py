import logging
import time
from typing import Optional, Tuple

import numpy as np
import psutil
from scipy.special import logsumexp

from core import rng
from core.augment import ViewSampler
from core.encoder import backward, forward, glorot_init
from core.graph_core import normalized_adjacency
from models import (EncoderParams, Embeddings, Graph, TrainConfig, TrainReport, TrainingAbortedError,
                    ValidationError)

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


# =============================================================================
# SIMILARITIES & LOSS
# =============================================================================

def _unit_rows(z: np.ndarray):
    norms = np.linalg.norm(z, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    return z / safe[:, None], safe, zero


def pairwise_cosine(z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    """Cosine similarity of every row of z1 with every row of z2; zero rows give 0."""
    u, _, zero1 = _unit_rows(np.asarray(z1, dtype=np.float64))
    v, _, zero2 = _unit_rows(np.asarray(z2, dtype=np.float64))
    degenerate = int(zero1.sum() + zero2.sum())
    if degenerate:
        logger.warning(f"{degenerate} zero-norm embedding rows; their similarities are defined as 0")
    return np.clip(u @ v.T, -1.0, 1.0)


def _check_tau(tau: float):
    if not tau > 0:
        raise ValidationError(f"temperature tau must be positive, got {tau}")


def _anchor_terms(inter: np.ndarray, intra: np.ndarray, tau: float):
    """Per-anchor losses and softmax weights over the inter- and intra-view terms.

    Row i of the logits holds s(i, k)/τ for every k of the other view and for
    k ≠ i of the anchor's own view; the positive pair is inter[i, i].
    """
    n = inter.shape[0]
    intra_logits = intra / tau
    np.fill_diagonal(intra_logits, -np.inf)
    logits = np.concatenate((inter / tau, intra_logits), axis=1)
    lse = logsumexp(logits, axis=1)
    losses = lse - np.diag(inter) / tau
    weights = np.exp(logits - lse[:, None])
    return losses, weights[:, :n], weights[:, n:]


def nt_xent_pair_loss(i: int, z1: np.ndarray, z2: np.ndarray, tau: float) -> float:
    """ℓ(z1_i, z2_i) with z1_i as the anchor."""
    _check_tau(tau)
    u, _, _ = _unit_rows(np.asarray(z1, dtype=np.float64))
    v, _, _ = _unit_rows(np.asarray(z2, dtype=np.float64))
    inter = (u[i] @ v.T) / tau
    intra = np.delete(u[i] @ u.T, i) / tau
    return float(logsumexp(np.concatenate((inter, intra))) - inter[i])


def _similarity_blocks(z1, z2):
    u, norms1, zero1 = _unit_rows(np.asarray(z1, dtype=np.float64))
    v, norms2, zero2 = _unit_rows(np.asarray(z2, dtype=np.float64))
    return u, v, norms1, norms2, zero1, zero2


def total_loss(z1: np.ndarray, z2: np.ndarray, tau: float) -> float:
    """J = (1/2N) Σ_i [ℓ(z1_i, z2_i) + ℓ(z2_i, z1_i)]."""
    _check_tau(tau)
    u, v, _, _, _, _ = _similarity_blocks(z1, z2)
    s12 = u @ v.T
    losses1, _, _ = _anchor_terms(s12, u @ u.T, tau)
    losses2, _, _ = _anchor_terms(s12.T, v @ v.T, tau)
    return float((losses1.sum() + losses2.sum()) / (2 * u.shape[0]))


def loss_and_gradient(z1: np.ndarray, z2: np.ndarray, tau: float) -> Tuple[float, np.ndarray, np.ndarray]:
    _check_tau(tau)
    u, v, norms1, norms2, zero1, zero2 = _similarity_blocks(z1, z2)
    n = u.shape[0]
    s12 = u @ v.T
    losses1, p12, p11 = _anchor_terms(s12, u @ u.T, tau)
    losses2, q21, q22 = _anchor_terms(s12.T, v @ v.T, tau)
    loss = float((losses1.sum() + losses2.sum()) / (2 * n))

    scale = 1.0 / (2 * n * tau)
    eye = np.eye(n)
    g12 = ((p12 - eye) + (q21 - eye).T) * scale
    g11 = p11 * scale
    g22 = q22 * scale
    du = g12 @ v + (g11 + g11.T) @ u
    dv = g12.T @ u + (g22 + g22.T) @ v

    # back through row normalization: d(z/|z|) = (I - uuᵀ)/|z|
    dz1 = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms1[:, None]
    dz2 = (dv - v * np.sum(v * dv, axis=1, keepdims=True)) / norms2[:, None]
    dz1[zero1] = 0.0
    dz2[zero2] = 0.0
    return loss, dz1, dz2


def loss_gradient(z1: np.ndarray, z2: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """dJ/dz1 and dJ/dz2, including the cosine normalization."""
    _, dz1, dz2 = loss_and_gradient(z1, z2, tau)
    return dz1, dz2


# =============================================================================
# OPTIMIZATION
# =============================================================================

class AdamOptimizer:
    """Adam with classic L2 weight decay added to the gradient."""

    def __init__(self, learning_rate: float, weight_decay: float = 0.0,
                 betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m: Optional[EncoderParams] = None
        self._v: Optional[EncoderParams] = None

    def step(self, params: EncoderParams, grads: EncoderParams):
        """Update ``params`` in place."""
        if self._m is None:
            self._m = params.zeros_like()
            self._v = params.zeros_like()
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        m_arrays, v_arrays = self._m.arrays(), self._v.arrays()
        for name, param in params.arrays().items():
            grad = getattr(grads, name) + self.weight_decay * param
            m, v = m_arrays[name], v_arrays[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


# =============================================================================
# TRAINING
# =============================================================================

class ContrastiveTrainer:
    """Owns one parameter set and its optimizer; each epoch draws a fresh view
    pair from an epoch-indexed seed."""

    def __init__(self, g: Graph, cfg: TrainConfig, params: Optional[EncoderParams] = None):
        cfg.validate()
        self.graph = g
        self.cfg = cfg
        self.sampler = ViewSampler(g, cfg.augmentation)
        self.params = params.copy() if params is not None else glorot_init(cfg.encoder_dims(g.n_features), cfg.seed)
        self.params.validate()
        self.optimizer = AdamOptimizer(cfg.learning_rate, cfg.weight_decay)
        self.losses = []
        self.degenerate_rows = 0
        self._process = psutil.Process()
        self._peak_rss = 0

    def epoch_seed(self, epoch: int) -> int:
        return rng.derive_seed(self.cfg.seed, rng.EPOCH, epoch)

    def step(self, epoch: int) -> float:
        view1, view2 = self.sampler.sample_pair(self.epoch_seed(epoch))
        cache1 = forward(self.params, normalized_adjacency(view1), view1.features)
        cache2 = forward(self.params, normalized_adjacency(view2), view2.features)
        self.degenerate_rows += int(np.sum(~cache1.z.any(axis=1)) + np.sum(~cache2.z.any(axis=1)))

        loss, dz1, dz2 = loss_and_gradient(cache1.z, cache2.z, self.cfg.tau)
        if not np.isfinite(loss):
            raise TrainingAbortedError(epoch, self.losses + [loss], "non-finite contrastive loss")
        grads = backward(self.params, cache1, dz1)
        grads2 = backward(self.params, cache2, dz2)
        for name, grad in grads.arrays().items():
            grad += getattr(grads2, name)
        if not grads.is_finite():
            raise TrainingAbortedError(epoch, self.losses + [loss], "non-finite gradient")

        self.optimizer.step(self.params, grads)
        self.losses.append(loss)
        self._peak_rss = max(self._peak_rss, self._process.memory_info().rss)
        return loss

    def fit(self) -> TrainReport:
        start = time.perf_counter()
        for epoch in range(self.cfg.epochs):
            loss = self.step(epoch)
            if self.cfg.log_every and (epoch % self.cfg.log_every == 0 or epoch == self.cfg.epochs - 1):
                logger.info(f"epoch {epoch:4d}/{self.cfg.epochs} loss {loss:.6f}")
        wall = time.perf_counter() - start
        if self.degenerate_rows:
            logger.warning(f"{self.degenerate_rows} zero-norm projection rows seen during training")
        return TrainReport(loss_per_epoch=list(self.losses), wall_time=wall,
                           peak_rss_mb=self._peak_rss / 2 ** 20, degenerate_rows=self.degenerate_rows)

    def save_checkpoint(self, path, report: Optional[TrainReport] = None):
        self.params.save(path)
        if report is not None:
            report.final_params_checkpoint = str(path)


def train(g: Graph, cfg: TrainConfig) -> Tuple[EncoderParams, TrainReport]:
    trainer = ContrastiveTrainer(g, cfg)
    report = trainer.fit()
    return trainer.params, report


def embed(params: EncoderParams, g: Graph) -> Embeddings:
    """Embeddings on the uncorrupted graph; H feeds downstream tasks, Z is kept for inspection."""
    cache = forward(params, normalized_adjacency(g), g.features)
    return Embeddings(h=cache.h, z=cache.z)
