"""The gradient verification suite: operators, composed network, losses.

Everything runs in float64.  Loss checks sample batches whose pairwise
prediction gaps stay away from the hinge kinks (|q_i - q_j| > 1e-3), matching
the subgradient convention documented in the objective module.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import network, objective


TOY_CONFIG = network.ModelConfig(
    n_s=6, n_p=2, n_i=2, point_hidden=(6, 8), c_p=8,
    image_stages=(4, 6), c_prime=8, heads=2, ffn_dim=12, head_hidden=9)
TOY_PATCH = 8  # pixels


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _toy_inputs(cfg, rng):
    submodels = rng.standard_normal((cfg.n_p, cfg.n_s, 3))
    patches = rng.standard_normal((cfg.n_i, 3, TOY_PATCH, TOY_PATCH))
    return submodels, patches


def network_input_grad_check(cfg=TOY_CONFIG, seed: int = 0, h: float = 1e-5) -> float:
    """Finite differences through the whole model w.r.t. its inputs."""
    store = network.init_model(cfg, seed=seed, dtype=np.float64)

    def fn(sub, img):
        store.begin_tape()
        point_emb = network.encode_pointcloud(sub, store, cfg)
        image_emb = network.encode_projections(img, store, cfg)
        feat = network.fuse_scma(point_emb, image_emb, store, cfg)
        return network.regress_quality(feat, store, cfg)

    shapes = [(cfg.n_p, cfg.n_s, 3), (cfg.n_i, 3, TOY_PATCH, TOY_PATCH)]
    return dc.grad_check(fn, shapes, seed=seed + 1, h=h)


def _mixed_error(a, n):
    # absolute below unit scale, relative above; scalar outputs are O(1) so
    # coordinates with (correct) near-zero gradients are not penalized for
    # roundoff noise in the difference quotient
    return abs(a - n) / max(1.0, abs(a) + abs(n))


def network_weight_grad_check(cfg=TOY_CONFIG, seed: int = 0, h: float = 1e-5) -> float:
    """Finite differences through the whole model w.r.t. every weight."""
    rng = np.random.default_rng(seed)
    store = network.init_model(cfg, seed=seed, dtype=np.float64)
    submodels, patches = _toy_inputs(cfg, rng)

    def forward():
        store.begin_tape()
        out = network.predict(store, cfg, submodels, patches)
        return float(out.data[0, 0])

    store.begin_tape()
    out = network.predict(store, cfg, submodels, patches)
    out.backward(np.ones((1, 1)))
    store.end_tape()
    analytic = {name: store.entry(name).grad.copy() for name in store.names()}
    store.zero_grads()

    worst = 0.0
    for name in store.names():
        value = store.entry(name).value
        flat = value.ravel()
        a_flat = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fplus = forward()
            flat[i] = orig - h
            fminus = forward()
            flat[i] = orig
            numeric = (fplus - fminus) / (2.0 * h)
            worst = max(worst, _mixed_error(a_flat[i], numeric))
    return worst


def _kink_free_batch(rng, n, min_gap=2e-3):
    """Predictions away from both the |.| kinks and the hinge boundaries."""
    while True:
        q = rng.standard_normal(n) * 2.0
        y = rng.standard_normal(n) * 2.0
        d = q[:, None] - q[None, :]
        gaps = np.abs(d)
        hinge = np.abs(gaps - np.where(d >= 0, 1.0, -1.0) * (y[:, None] - y[None, :]))
        np.fill_diagonal(gaps, np.inf)
        np.fill_diagonal(hinge, np.inf)
        if gaps.min() > min_gap and hinge.min() > min_gap:
            return q, y


def loss_grad_check(loss_fn, seed: int = 0, h: float = 1e-6, trials: int = 20) -> float:
    """Central differences on the analytic prediction-gradient of a loss."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        q, y = _kink_free_batch(rng, int(rng.integers(2, 9)))
        _, grad = loss_fn(q, y)
        for i in range(q.size):
            orig = q[i]
            q[i] = orig + h
            fplus = loss_fn(q, y)[0]
            q[i] = orig - h
            fminus = loss_fn(q, y)[0]
            q[i] = orig
            numeric = (fplus - fminus) / (2.0 * h)
            worst = max(worst, _mixed_error(grad[i], numeric))
    return worst


def run_suite(seed: int = 0) -> list[CheckResult]:
    """Operator, composed-network and loss gradient checks with tolerances."""
    results = [CheckResult(name, err, 1e-6)
               for name, err in dc.operator_checks(seed=seed)]
    results.append(CheckResult("network.inputs",
                               network_input_grad_check(seed=seed), 1e-4))
    results.append(CheckResult("network.weights",
                               network_weight_grad_check(seed=seed), 1e-4))
    results.append(CheckResult("loss.mse",
                               loss_grad_check(objective.mse_loss, seed=seed), 1e-7))
    results.append(CheckResult("loss.rank",
                               loss_grad_check(objective.rank_loss, seed=seed), 1e-7))
    return results
