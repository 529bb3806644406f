"""Training losses: MSE, pairwise hinge rank loss, and their weighted sum.

Each function returns (value, gradient w.r.t. the predictions).  The rank
loss accumulates its n^2 ordered pairs in a plain double loop so the batch
value is bit-identical with the defining sum (mini-batches are small, so the
quadratic loop costs nothing); the subgradient at hinge and absolute-value
kinks is 0.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class LossWeights:
    lambda_mse: float = 1.0
    lambda_rank: float = 1.0

    def __post_init__(self):
        if self.lambda_mse < 0 or self.lambda_rank < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_mse == 0 and self.lambda_rank == 0:
            raise ValueError("loss weights cannot both be zero")


def _as_batch(predictions, labels):
    q = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if q.shape != y.shape or q.ndim != 1 or q.size < 1:
        raise ValueError(f"predictions {q.shape} and labels {y.shape} must be "
                         "equal-length 1-D arrays")
    if not np.isfinite(y).all():
        raise ValueError("labels must be finite")
    return q, y


def mse_loss(predictions, labels):
    """(1/n) sum (q - q')^2; gradient 2 (q - q') / n."""
    q, y = _as_batch(predictions, labels)
    n = q.size
    diff = q - y
    return float(np.mean(diff * diff)), 2.0 * diff / n


def rank_loss(predictions, labels):
    """Pairwise hinge over all n^2 ordered pairs, averaged by n^2.

    Per pair: max(0, |q_i - q_j| - e(q_i, q_j) * (y_i - y_j)) with e = +1 when
    q_i >= q_j and -1 otherwise; i = j pairs contribute zero.
    """
    q, y = _as_batch(predictions, labels)
    n = q.size
    total = 0.0
    grad = np.zeros(n, dtype=np.float64)
    for i in range(n):
        for j in range(n):
            d = q[i] - q[j]
            e = 1.0 if d >= 0.0 else -1.0
            val = abs(d) - e * (y[i] - y[j])
            if val > 0.0:
                total += val
                s = np.sign(d)  # 0 at the |.| kink
                grad[i] += s
                grad[j] -= s
    n2 = float(n * n)
    return float(total) / n2, grad / n2


def total_loss(predictions, labels, weights: LossWeights = LossWeights()):
    """lambda_mse * L_MSE + lambda_rank * L_rank; gradients combine linearly."""
    mse_v, mse_g = mse_loss(predictions, labels)
    rank_v, rank_g = rank_loss(predictions, labels)
    value = weights.lambda_mse * mse_v + weights.lambda_rank * rank_v
    grad = weights.lambda_mse * mse_g + weights.lambda_rank * rank_g
    return value, grad
