"""Training objectives: pixel BCE, categorical CE, supervised contrastive.

The contrastive term works on cosine similarities between backbone
embeddings of a batch. For an ordered positive pair (i, j) (same label,
i != j) the loss is

    -log( exp(s_ij / tau) / sum_k I(i, k) exp(s_ik / tau) )

where I(i, k) is 1 for a different-class k. In ``"paper"`` mode the
denominator holds only the negatives, so the loss can go below zero; in
``"simclr"`` mode the positive's own term is added to the denominator.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import tensor as T
from .config import ContrastiveConfig
from .tensor import DomainError, ShapeError, Tensor

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
NORM_FLOOR = 1e-12


def _tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype or np.float64))


def seg_bce_loss(predicted, target) -> Tensor:
    """Mean per-pixel binary cross entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = _tensor(predicted)
    y = np.asarray(target, dtype=p.dtype)
    if p.data.size == 0:
        raise ValueError("seg_bce_loss: empty input")
    if y.shape != p.shape:
        raise ShapeError(f"seg_bce_loss: predictions {p.shape} vs targets {y.shape}")
    pc = T.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    terms = T.log(pc) * y + T.log(1.0 - pc) * (1.0 - y)
    return T.mean(terms) * -1.0


def cosine_similarity(p_i, p_j, strict: bool = True) -> float:
    a = np.asarray(p_i, dtype=np.float64)
    b = np.asarray(p_j, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine_similarity: shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        if strict:
            raise DomainError("cosine_similarity: zero-norm embedding")
        na, nb = max(na, NORM_FLOOR), max(nb, NORM_FLOOR)
    return float(a @ b / (na * nb))


def indicator(label_i, label_k) -> int:
    return 0 if label_i == label_k else 1


def contrastive_pair_loss(embeddings, labels, i: int, j: int,
                          cfg: ContrastiveConfig = ContrastiveConfig()) -> float | None:
    """Loss of one ordered positive pair; ``None`` when the denominator is empty."""
    e = np.asarray(embeddings, dtype=np.float64)
    labels = list(labels)
    if i == j:
        raise ValueError("contrastive_pair_loss: i and j must differ")
    if labels[i] != labels[j]:
        raise ValueError(f"contrastive_pair_loss: ({i}, {j}) is not a positive pair")
    num = cosine_similarity(e[i], e[j]) / cfg.tau
    terms = [cosine_similarity(e[i], e[k]) / cfg.tau
             for k in range(len(labels)) if indicator(labels[i], labels[k])]
    if cfg.denominator_mode == "simclr":
        terms.append(num)
    elif not terms:
        log.debug("pair (%d, %d) has no negatives in batch; skipped", i, j)
        return None
    top = max(terms)
    lse = top + math.log(sum(math.exp(t - top) for t in terms))
    return lse - num


def batch_contrastive_loss(embeddings, labels, cfg: ContrastiveConfig = ContrastiveConfig(),
                           eps: float = NORM_FLOOR) -> Tensor:
    """Mean contrastive loss over all ordered positive pairs of a (K, D) batch.

    Pairs whose anchor has no negative in the batch are skipped in ``"paper"``
    mode. Returns a zero scalar when no pair contributes.
    """
    emb = _tensor(embeddings)
    if emb.ndim != 2:
        raise ShapeError(f"batch_contrastive_loss: embeddings must be (K, D), got {emb.shape}")
    lab = np.asarray(labels)
    k = emb.shape[0]
    if lab.shape != (k,):
        raise ShapeError(f"batch_contrastive_loss: {k} embeddings but labels of shape {lab.shape}")

    same = lab[:, None] == lab[None, :]
    pos = same & ~np.eye(k, dtype=bool)
    neg = ~same
    has_neg = neg.any(axis=1)
    paper = cfg.denominator_mode == "paper"
    valid = pos & has_neg[:, None] if paper else pos
    n_pairs = int(valid.sum())
    if n_pairs == 0:
        log.debug("batch of %d has no usable positive pairs", k)
        return Tensor(np.zeros((), dtype=emb.dtype))

    dt = emb.dtype
    z = T.l2_norm(emb, eps=eps)
    s = T.matmul(z, z, transpose_b=True) * (1.0 / cfg.tau)
    # shift by the row max over negatives; exact because the shift cancels
    m = np.where(neg, s.data, -np.inf).max(axis=1, initial=-np.inf)
    m = np.where(has_neg, m, 0.0).astype(dt)[:, None]
    negf = neg.astype(dt)
    nsum = T.sum(T.exp(s - m) * negf, axis=1, keepdims=True)
    if paper:
        lse = T.log(nsum + (~has_neg).astype(dt)[:, None]) + m
        pair = lse - s
    else:
        shift = np.where(has_neg[:, None], np.maximum(s.data, m), s.data).astype(dt)
        scale = (np.exp(m - shift) * has_neg[:, None]).astype(dt)
        denom = T.exp(s - shift) + nsum * scale
        pair = T.log(denom) + shift - s
    return T.sum(pair * valid.astype(dt)) * (1.0 / n_pairs)


def categorical_ce_loss(logits, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch."""
    z = _tensor(logits)
    lab = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ShapeError(f"categorical_ce_loss: logits must be (K, n>=2), got {z.shape}")
    if lab.shape != (z.shape[0],):
        raise ShapeError(f"categorical_ce_loss: {z.shape[0]} rows but labels of shape {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= z.shape[1]):
        raise ValueError("categorical_ce_loss: label out of range")
    onehot = np.zeros(z.shape, dtype=z.dtype)
    onehot[np.arange(lab.size), lab] = 1.0
    return T.mean(T.sum(T.log_softmax(z) * onehot, axis=1)) * -1.0


def combined_loss(ce, ct, lam: float):
    """``ce + lam * ct``; with ``lam == 0`` returns ``ce`` itself."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0:
        return ce
    return ce + ct * lam
