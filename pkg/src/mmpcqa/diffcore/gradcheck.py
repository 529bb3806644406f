"""Finite-difference verification of the analytic gradients."""

import numpy as np

from . import ops
from .tensor import Tensor


def grad_check(fn, shapes, seed: int = 0, h: float = 1e-5, exclude=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps len(shapes) input Tensors to one output Tensor; inputs are
    drawn from N(0, 1) in float64.  Non-scalar outputs are reduced against a
    fixed random projection so the whole Jacobian is exercised.  ``exclude``
    may map the list of input arrays to boolean skip-masks (used to avoid
    kink neighbourhoods of non-smooth operators).

    Error per coordinate: |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    rng = np.random.default_rng(seed)
    xs = [rng.standard_normal(s) for s in shapes]
    inputs = [Tensor(x.copy(), requires_grad=True) for x in xs]
    out = fn(*inputs)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite forward output in grad_check")
    proj = rng.standard_normal(out.data.shape)
    out.backward(proj)

    def value_at(arrays):
        res = fn(*[Tensor(a) for a in arrays]).data
        return float(np.sum(res * proj))

    masks = exclude(xs) if exclude is not None else [None] * len(xs)
    worst = 0.0
    for which, (x, t) in enumerate(zip(xs, inputs)):
        analytic = t.grad if t.grad is not None else np.zeros_like(x)
        analytic = analytic.ravel()
        flat = x.ravel()
        mask = None if masks[which] is None else masks[which].ravel()
        for i in range(flat.size):
            if mask is not None and mask[i]:
                continue
            orig = flat[i]
            flat[i] = orig + h
            fplus = value_at(xs)
            flat[i] = orig - h
            fminus = value_at(xs)
            flat[i] = orig
            numeric = (fplus - fminus) / (2.0 * h)
            a = analytic[i]
            if not (np.isfinite(numeric) and np.isfinite(a)):
                raise FloatingPointError("non-finite gradient in grad_check")
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst


def _away_from_zero(threshold=1e-3):
    def exclude(xs):
        return [np.abs(x) < threshold for x in xs]
    return exclude


def operator_checks(seed: int = 0):
    """Standalone finite-difference checks for every operator.

    Returns a list of (name, max_relative_error) pairs, each taken over at
    least five random shape configurations.
    """
    results = []

    def run(name, cases):
        worst = 0.0
        for i, (fn, shapes, exclude) in enumerate(cases):
            worst = max(worst, grad_check(fn, shapes, seed=seed + i, exclude=exclude))
        results.append((name, worst))

    mm_shapes = [((2, 3), (3, 4)), ((5, 5), (5, 2)), ((1, 7), (7, 1)),
                 ((4, 2), (2, 6)), ((3, 8), (8, 3))]
    run("matmul", [(ops.matmul, s, None) for s in mm_shapes]
        + [(ops.matmul, ((2, 4, 3), (3, 5)), None)])

    run("bmm", [(ops.bmm, ((2, 3, 4), (2, 4, 5)), None),
                (ops.bmm, ((1, 2, 2), (1, 2, 2)), None),
                (ops.bmm, ((4, 1, 6), (4, 6, 2)), None),
                (ops.bmm, ((3, 5, 2), (3, 2, 5)), None),
                (ops.bmm, ((2, 2, 7), (2, 7, 1)), None)])

    add_shapes = [((3, 4), (3, 4)), ((2, 5), (5,)), ((4, 1), (4, 3)),
                  ((2, 3, 4), (4,)), ((6,), (6,))]
    run("add", [(ops.add, s, None) for s in add_shapes])

    relu_shapes = [((7,),), ((3, 4),), ((2, 3, 4),), ((10,),), ((5, 5),)]
    run("relu", [(ops.relu, s, _away_from_zero()) for s in relu_shapes])

    soft_shapes = [((5,),), ((3, 4),), ((2, 3, 4),), ((1, 8),), ((6, 2),)]
    run("softmax", [(ops.softmax, s, None) for s in soft_shapes])

    run("concat", [
        (lambda a, b: ops.concat([a, b], axis=-1), ((2, 3), (2, 4)), None),
        (lambda a, b: ops.concat([a, b], axis=0), ((2, 3), (5, 3)), None),
        (lambda a, b, c: ops.concat([a, b, c], axis=-1), ((4,), (2,), (3,)), None),
        (lambda a, b: ops.concat([a, b], axis=1), ((2, 2, 3), (2, 5, 3)), None),
        (lambda a: ops.concat([a], axis=0), ((3, 2),), None)])

    conv_cases = []
    for i, (n, c, hw, co, stride) in enumerate(
            [(1, 1, 5, 2, 1), (2, 3, 6, 4, 2), (1, 2, 4, 3, 1),
             (1, 4, 7, 2, 2), (2, 2, 5, 5, 1)]):
        conv_cases.append((
            (lambda s: lambda x, w, b: ops.conv2d(x, w, b, stride=s))(stride),
            ((n, c, hw, hw), (co, c, 3, 3), (co,)), None))
    run("conv2d", conv_cases)

    pool_shapes = [((4, 3),), ((7, 2),), ((2, 5, 3),), ((1, 6),), ((3, 3, 4),)]
    run("max_pool_rows", [(ops.max_pool_rows, s, None) for s in pool_shapes])
    run("mean_pool_rows", [(ops.mean_pool_rows, s, None) for s in pool_shapes])

    gap_shapes = [((1, 2, 3, 3),), ((2, 4, 5, 5),), ((1, 1, 4, 6),),
                  ((3, 2, 2, 2),), ((2, 3, 7, 4),)]
    run("global_average_pool_2d", [(ops.global_average_pool_2d, s, None)
                                   for s in gap_shapes])

    ln_shapes = [((5,),), ((3, 6),), ((2, 3, 4),), ((1, 9),), ((4, 4),)]
    run("layer_norm", [(ops.layer_norm, s, None) for s in ln_shapes])

    run("scale_by", [((lambda c: lambda x: ops.scale_by(x, c))(c), ((3, 4),), None)
                     for c in (0.5, 2.0, -1.25, 0.125, 7.0)])

    run("reshape", [(lambda x: ops.reshape(x, (6,)), ((2, 3),), None),
                    (lambda x: ops.reshape(x, (3, 2)), ((6,),), None),
                    (lambda x: ops.reshape(x, (2, 2, 2)), ((4, 2),), None),
                    (lambda x: ops.reshape(x, (1, 8)), ((2, 4),), None),
                    (lambda x: ops.reshape(x, (4, 3)), ((2, 6),), None)])

    run("permute", [(lambda x: ops.permute(x, (1, 0)), ((2, 3),), None),
                    (lambda x: ops.permute(x, (2, 0, 1)), ((2, 3, 4),), None),
                    (lambda x: ops.permute(x, (0, 2, 1)), ((2, 3, 4),), None),
                    (lambda x: ops.transpose_last2(x), ((3, 5),), None),
                    (lambda x: ops.transpose_last2(x), ((2, 3, 4),), None)])

    # composites
    run("softmax.matmul", [
        (lambda a, b: ops.softmax(ops.matmul(a, b)), ((3, 4), (4, 5)), None),
        (lambda a, b: ops.softmax(ops.matmul(a, b)), ((2, 2), (2, 6)), None),
        (lambda a, b: ops.softmax(ops.matmul(a, b)), ((5, 3), (3, 3)), None),
        (lambda a, b: ops.softmax(ops.matmul(a, b)), ((1, 4), (4, 4)), None),
        (lambda a, b: ops.softmax(ops.matmul(a, b)), ((4, 6), (6, 2)), None)])

    return results
