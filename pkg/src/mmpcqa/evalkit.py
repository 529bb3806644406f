"""Evaluation protocol: SRCC/KRCC/PLCC/RMSE, logistic score mapping,
content-disjoint k-fold planning and run reports.

Rank correlations are computed on raw predictions (they are invariant to the
mapping); PLCC and RMSE are computed after the monotone five-parameter
logistic fit absorbs the scale difference between predictions and MOS.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit


@dataclass
class PredictionSet:
    predicted: np.ndarray
    mos: np.ndarray
    content_ids: list = field(default_factory=list)
    distortions: list = field(default_factory=list)

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        self.mos = np.asarray(self.mos, dtype=np.float64)
        if self.predicted.shape != self.mos.shape or self.predicted.ndim != 1:
            raise ValueError("predicted and mos must be equal-length 1-D arrays")

    @property
    def n(self) -> int:
        return self.predicted.size


@dataclass
class LogisticFit:
    beta: np.ndarray       # (5,)
    converged: bool
    rmse: float


@dataclass
class Metrics:
    srcc: float
    krcc: float
    plcc: float
    rmse: float


@dataclass
class FoldPlan:
    """k test-content groups partitioning the content set."""
    folds: list  # list of lists of content ids

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_contents(self, fold: int) -> list:
        test = set(self.folds[fold])
        return [c for group in self.folds for c in group if c not in test]


def _logistic(beta, x):
    b1, b2, b3, b4, b5 = beta
    s = expit(b2 * (x - b3))
    return b1 * (s - 0.5) + b4 * x + b5


def _logistic_jacobian(beta, x):
    b1, b2, b3, _, _ = beta
    s = expit(b2 * (x - b3))
    ds = s * (1.0 - s)
    jac = np.empty((x.size, 5))
    jac[:, 0] = s - 0.5
    jac[:, 1] = b1 * ds * (x - b3)
    jac[:, 2] = -b1 * ds * b2
    jac[:, 3] = x
    jac[:, 4] = 1.0
    return jac


def _solve_linear_part(beta, x, y):
    """Exact least squares for the linearly-entering coefficients b1, b4, b5."""
    s = expit(beta[1] * (x - beta[2]))
    a = np.stack([s - 0.5, x, np.ones_like(x)], axis=1)
    c = np.linalg.lstsq(a, y, rcond=None)[0]
    out = beta.copy()
    out[0], out[3], out[4] = c
    return out


def logistic_fit(pred_set: PredictionSet, max_iter: int = 500,
                 rel_tol: float = 1e-10):
    """Five-parameter logistic mapping fit by damped Gauss-Newton.

    f(x) = b1 * (1/2 - 1/(1 + exp(b2 (x - b3)))) + b4 x + b5, started from
    b1 = range(y), b2 = 1/std(x), b3 = mean(x) and the affine least-squares
    (b4, b5).  Each iteration takes one Levenberg-Marquardt step and then
    re-solves the linearly-entering coefficients (b1, b4, b5) exactly; steps
    are accepted only when they reduce the RMSE, so the fit can never end
    worse than its initialization (nor worse than any affine map, since the
    affine family is inside the linear subproblem).
    """
    x, y = pred_set.predicted, pred_set.mos
    if x.size < 5:
        raise ValueError("logistic fit needs at least 5 points")
    sx = float(np.std(x))
    if sx == 0.0:
        # constant regressor: least squares maps everything to mean(y)
        beta = np.array([0.0, 1.0, float(np.mean(x)), 0.0, float(np.mean(y))])
        mapped = _logistic(beta, x)
        rmse = float(np.sqrt(np.mean((mapped - y) ** 2)))
        return LogisticFit(beta=beta, converged=True, rmse=rmse), mapped

    a = np.stack([x, np.ones_like(x)], axis=1)
    slope, intercept = np.linalg.lstsq(a, y, rcond=None)[0]
    beta = np.array([float(y.max() - y.min()), 1.0 / sx, float(np.mean(x)),
                     float(slope), float(intercept)])

    def rmse_of(b):
        r = _logistic(b, x) - y
        return float(np.sqrt(np.mean(r * r)))

    best = beta.copy()
    best_rmse = rmse_of(best)
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        improved = False
        # exact solve of the linear coefficients at the current (b2, b3)
        cand = _solve_linear_part(best, x, y)
        cand_rmse = rmse_of(cand)
        if np.isfinite(cand_rmse) and cand_rmse < best_rmse:
            improved = (best_rmse - cand_rmse) / max(best_rmse, 1e-300) >= rel_tol
            best, best_rmse = cand, cand_rmse

        # one damped Gauss-Newton step on the full parameter vector
        r = _logistic(best, x) - y
        jac = _logistic_jacobian(best, x)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        for _ in range(20):
            damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(damped, -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = best + delta
            cand_rmse = rmse_of(cand)
            if np.isfinite(cand_rmse) and cand_rmse < best_rmse:
                if (best_rmse - cand_rmse) / max(best_rmse, 1e-300) >= rel_tol:
                    improved = True
                best, best_rmse = cand, cand_rmse
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not improved:
            converged = True
            break
    mapped = _logistic(best, x)
    return LogisticFit(beta=best, converged=converged, rmse=best_rmse), mapped


def correlation_metrics(pred_set: PredictionSet) -> Metrics:
    """SRCC, KRCC (tau-b), PLCC and RMSE for one prediction set.

    The logistic mapping is applied before PLCC/RMSE when there are enough
    points to fit it (n >= 5); below that they fall back to the raw scores.
    """
    x, y = pred_set.predicted, pred_set.mos
    if x.size < 2:
        raise ValueError("need at least 2 points for correlations")
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        raise ValueError("degenerate input: zero variance")
    srcc = float(stats.spearmanr(x, y).statistic)
    krcc = float(stats.kendalltau(x, y).statistic)
    if x.size >= 5:
        _, mapped = logistic_fit(pred_set)
    else:
        mapped = x
    if np.std(mapped) == 0.0:
        plcc = 0.0
    else:
        plcc = float(stats.pearsonr(mapped, y).statistic)
    rmse = float(np.sqrt(np.mean((mapped - y) ** 2)))
    return Metrics(srcc=srcc, krcc=krcc, plcc=plcc, rmse=rmse)


def make_folds(content_ids, k: int, seed: int) -> FoldPlan:
    """Shuffle contents by seed and split as evenly as possible."""
    unique = sorted(set(content_ids))
    if k > len(unique):
        raise ValueError(f"cannot make {k} folds from {len(unique)} contents")
    rng = np.random.default_rng(seed)
    order = [unique[i] for i in rng.permutation(len(unique))]
    folds = [list(part) for part in np.array_split(np.asarray(order, dtype=object), k)]
    return FoldPlan(folds=folds)


@dataclass
class EvalReport:
    fold_metrics: list            # list of Metrics
    fold_fits: list               # list of LogisticFit
    mean: Metrics
    raw: list                     # per fold: {"predicted": [...], "mos": [...]}

    def to_json(self) -> str:
        doc = {
            "folds": [{
                "srcc": m.srcc, "krcc": m.krcc, "plcc": m.plcc, "rmse": m.rmse,
                "beta": f.beta.tolist(), "converged": f.converged,
            } for m, f in zip(self.fold_metrics, self.fold_fits)],
            "mean": {"srcc": self.mean.srcc, "krcc": self.mean.krcc,
                     "plcc": self.mean.plcc, "rmse": self.mean.rmse},
            "raw": self.raw,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        metrics = [Metrics(srcc=f["srcc"], krcc=f["krcc"], plcc=f["plcc"],
                           rmse=f["rmse"]) for f in doc["folds"]]
        fits = [LogisticFit(beta=np.asarray(f["beta"]), converged=f["converged"],
                            rmse=f["rmse"]) for f in doc["folds"]]
        mean = Metrics(**doc["mean"])
        return cls(fold_metrics=metrics, fold_fits=fits, mean=mean, raw=doc["raw"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["fold", "srcc", "krcc", "plcc", "rmse",
                         "beta1", "beta2", "beta3", "beta4", "beta5", "converged"])
        for i, (m, f) in enumerate(zip(self.fold_metrics, self.fold_fits)):
            writer.writerow([i, repr(m.srcc), repr(m.krcc), repr(m.plcc),
                             repr(m.rmse)] + [repr(float(b)) for b in f.beta]
                            + [int(f.converged)])
        writer.writerow(["mean", repr(self.mean.srcc), repr(self.mean.krcc),
                         repr(self.mean.plcc), repr(self.mean.rmse),
                         "", "", "", "", "", ""])
        return buf.getvalue()


def evaluate_run(fold_sets: list[PredictionSet]) -> EvalReport:
    """Per-fold metrics plus their unweighted mean; raw pairs retained."""
    if not fold_sets:
        raise ValueError("need at least one fold")
    metrics = []
    fits = []
    raw = []
    for ps in fold_sets:
        metrics.append(correlation_metrics(ps))
        fits.append(logistic_fit(ps)[0] if ps.n >= 5 else
                    LogisticFit(beta=np.zeros(5), converged=False, rmse=float("nan")))
        raw.append({"predicted": ps.predicted.tolist(), "mos": ps.mos.tolist(),
                    "content_ids": list(ps.content_ids),
                    "distortions": list(ps.distortions)})
    mean = Metrics(
        srcc=float(np.mean([m.srcc for m in metrics])),
        krcc=float(np.mean([m.krcc for m in metrics])),
        plcc=float(np.mean([m.plcc for m in metrics])),
        rmse=float(np.mean([m.rmse for m in metrics])))
    return EvalReport(fold_metrics=metrics, fold_fits=fits, mean=mean, raw=raw)
