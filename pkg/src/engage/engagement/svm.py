"""Binary SVM trained with sequential minimal optimization.

The dual problem

    min 1/2 a^T Q a - e^T a   s.t.  0 <= a_i <= C_i,  y^T a = 0,
    Q_ij = y_i y_j K(x_i, x_j)

is solved two multipliers at a time. The working pair is the maximal
violator ``i`` plus the partner ``j`` giving the largest second-order
decrease of the objective (Fan, Chen & Lin 2005). Per-sample bounds
``C_i`` carry the class penalties.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DimensionMismatch, NoConvergence, SingleClassData
from ..features import DISENGAGED, ENGAGED

TAU = 1e-12


def encode_labels(labels) -> np.ndarray:
    """Map engaged/disengaged (or +1/-1, 1/0 booleans) to +1/-1."""
    out = []
    for lbl in labels:
        if isinstance(lbl, str):
            if lbl == ENGAGED:
                out.append(1.0)
            elif lbl == DISENGAGED:
                out.append(-1.0)
            else:
                raise ValueError(f"unknown label {lbl!r}")
        else:
            out.append(1.0 if lbl > 0 else -1.0)
    return np.asarray(out)


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float | None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (A ** 2).sum(1)[:, None] + (B ** 2).sum(1)[None, :] - 2 * A @ B.T
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")


@dataclass
class SvmModel:
    kernel: str
    gamma: float | None
    support_vectors: np.ndarray      # (n_sv, d)
    dual_coef: np.ndarray            # alpha_i * y_i
    bias: float
    penalties: dict[str, float]
    iterations: int = 0
    # multipliers of every training sample; not persisted
    train_alpha: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def weights(self) -> np.ndarray | None:
        """Primal weight vector (linear kernel only)."""
        if self.kernel != "linear":
            return None
        return self.dual_coef @ self.support_vectors

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.kernel == "linear":
            return X @ self.weights + self.bias
        return kernel_matrix(X, self.support_vectors, self.kernel, self.gamma) @ self.dual_coef + self.bias

    def predict(self, X) -> np.ndarray:
        """+1 (engaged) or -1 (disengaged); a zero decision value counts as engaged."""
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def to_json(self) -> dict:
        obj = {
            "kernel": {"type": self.kernel, **({"gamma": self.gamma} if self.kernel == "rbf" else {})},
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "bias": self.bias,
            "penalties": self.penalties,
        }
        if self.kernel == "linear":
            obj["weights"] = self.weights.tolist()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SvmModel":
        k = obj["kernel"]
        return cls(kernel=k["type"], gamma=k.get("gamma"),
                   support_vectors=np.asarray(obj["support_vectors"], dtype=np.float64).reshape(
                       len(obj["dual_coef"]), -1),
                   dual_coef=np.asarray(obj["dual_coef"], dtype=np.float64),
                   bias=float(obj["bias"]), penalties=dict(obj["penalties"]))


def save_svm(model: SvmModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=1) + "\n")


def load_svm(path: str | Path) -> SvmModel:
    return SvmModel.from_json(json.loads(Path(path).read_text()))


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    iterations: int
    gap: float


def class_penalties(y: np.ndarray, C: float, class_weighting: str | None) -> tuple[float, float]:
    """Penalties ``(C_engaged, C_disengaged)``; ``"balanced"`` scales by ``N / (2 n_k)``."""
    if class_weighting in (None, "none"):
        return C, C
    if class_weighting != "balanced":
        raise ValueError(f"unknown class weighting {class_weighting!r}")
    n = len(y)
    n_pos, n_neg = int((y > 0).sum()), int((y < 0).sum())
    return C * n / (2 * n_pos), C * n / (2 * n_neg)


def smo(K: np.ndarray, y: np.ndarray, Cs: np.ndarray, tol: float = 1e-3,
        max_iter: int = 100_000) -> SmoResult:
    """Solve the SVM dual for kernel matrix ``K``, labels ``y`` in {-1, +1}, bounds ``Cs``."""
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    it = 0
    gap = np.inf
    while True:
        at_upper = alpha >= Cs
        at_lower = alpha <= 0
        up = np.where(pos, ~at_upper, ~at_lower)
        low = np.where(pos, ~at_lower, ~at_upper)
        yG = -y * G
        cand = np.where(up, yG, -np.inf)
        i = int(np.argmax(cand))
        m = cand[i]
        low_vals = np.where(low, yG, np.inf)
        M = low_vals.min()
        gap = m - M
        if gap < tol:
            break
        if it >= max_iter:
            raise NoConvergence(max_iter)
        # second-order choice of j among violating partners
        b = m - yG
        a = diag[i] + diag - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, TAU)
        score = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        Ci, Cj = Cs[i], Cs[j]
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = diag[i] + diag[j] + 2 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            else:
                if aj > Cj:
                    aj, ai = Cj, Cj + diff
        else:
            quad = diag[i] + diag[j] - 2 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > Ci:
                if ai > Ci:
                    ai, aj = Ci, total - Ci
            else:
                if aj < 0:
                    aj, ai = 0.0, total
            if total > Cj:
                if aj > Cj:
                    aj, ai = Cj, total - Cj
            else:
                if ai < 0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * (ai - old_i) + Q[:, j] * (aj - old_j)
        it += 1

    rho = _rho(alpha, y, G, Cs)
    return SmoResult(alpha, rho, it, float(gap))


def _rho(alpha, y, G, Cs) -> float:
    yG = y * G
    free = (alpha > 0) & (alpha < Cs)
    if free.any():
        return float(yG[free].mean())
    ub, lb = np.inf, -np.inf
    for k in range(len(y)):
        if alpha[k] >= Cs[k]:
            if y[k] < 0:
                ub = min(ub, yG[k])
            else:
                lb = max(lb, yG[k])
        elif alpha[k] <= 0:
            if y[k] > 0:
                ub = min(ub, yG[k])
            else:
                lb = max(lb, yG[k])
    return float((ub + lb) / 2)


def train_svm(features, labels, C: float = 1.0, kernel: str = "linear", gamma: float | None = None,
              class_weighting: str | None = "balanced", tol: float = 1e-3,
              max_iter: int = 100_000) -> SvmModel:
    """Fit a binary SVM on ``features`` (n, d) with engaged/disengaged labels.

    ``class_weighting="balanced"`` sets the per-class penalty to
    ``C * N / (2 n_k)``; ``None`` uses ``C`` for both classes.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = encode_labels(labels)
    if len(X) != len(y):
        raise DimensionMismatch("features and labels differ in length")
    if not ((y > 0).any() and (y < 0).any()):
        raise SingleClassData("both classes are required")
    if kernel == "rbf" and gamma is None:
        gamma = 1.0 / X.shape[1]
    c_pos, c_neg = class_penalties(y, C, class_weighting)
    Cs = np.where(y > 0, c_pos, c_neg)
    K = kernel_matrix(X, X, kernel, gamma)
    res = smo(K, y, Cs, tol=tol, max_iter=max_iter)
    sv = res.alpha > 0
    return SvmModel(kernel=kernel, gamma=gamma, support_vectors=X[sv],
                    dual_coef=res.alpha[sv] * y[sv], bias=-res.rho,
                    penalties={ENGAGED: c_pos, DISENGAGED: c_neg}, iterations=res.iterations,
                    train_alpha=res.alpha)


def kkt_residuals(model: SvmModel, features, labels) -> np.ndarray:
    """Per-sample violation of the KKT conditions of the trained dual.

    Requires ``features``/``labels`` to be the training set of a model
    fitted in this process. With margin
    ``g = y f(x) - 1``: non-support vectors need ``g >= 0``, free support
    vectors ``g = 0`` and bounded ones ``g <= 0``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = encode_labels(labels)
    g = y * model.decision_function(X) - 1.0
    if model.train_alpha is None or len(model.train_alpha) != len(X):
        raise DimensionMismatch("model does not carry multipliers for this training set")
    alpha = model.train_alpha
    Cs = np.where(y > 0, model.penalties[ENGAGED], model.penalties[DISENGAGED])
    res = np.where(alpha <= 0, np.maximum(0.0, -g),
                   np.where(alpha >= Cs, np.maximum(0.0, g), np.abs(g)))
    return res


def predict_engagement(model: SvmModel, feature) -> tuple[str, float]:
    """``(label, decision value)``; exactly zero maps to engaged."""
    value = float(model.decision_function(np.asarray(feature, dtype=np.float64)[None])[0])
    return (ENGAGED if value >= 0 else DISENGAGED), value
