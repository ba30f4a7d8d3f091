"""Per-class sigmoid recalibration of probabilistic classifier scores.

Each class gets its own unregularized logistic regression of the one-vs-rest
label indicator on the raw score (slope and intercept, initialized at 1 and 0
and fitted by damped Newton iterations to a fixed tolerance). Applying the
model maps each class score through its sigmoid and renormalizes the result
onto the probability simplex. A class whose indicator never varies in the
fitting data gets an identity map instead; fitting sigmoids to one-class data
diverges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class CalibrationError(ValueError):
    pass


@dataclass
class CalibrationModel:
    """Per-class (slope, intercept) pairs plus identity flags for degenerate classes."""

    slope: np.ndarray
    intercept: np.ndarray
    identity: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.slope)

    def to_json(self) -> dict:
        return {
            "slope": [float(v) for v in self.slope],
            "intercept": [float(v) for v in self.intercept],
            "identity": [bool(v) for v in self.identity],
        }

    @classmethod
    def from_json(cls, obj) -> "CalibrationModel":
        return cls(
            slope=np.asarray(obj["slope"], dtype=np.float64),
            intercept=np.asarray(obj["intercept"], dtype=np.float64),
            identity=np.asarray(obj["identity"], dtype=bool),
        )


def identity_calibration(n_classes: int) -> CalibrationModel:
    return CalibrationModel(
        slope=np.ones(n_classes),
        intercept=np.zeros(n_classes),
        identity=np.ones(n_classes, dtype=bool),
    )


def _fit_sigmoid(x, y, tol, max_iter):
    """Two-parameter logistic MLE by Newton's method with step halving."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    b, a = 1.0, 0.0

    def nll(b_, a_):
        z = b_ * x + a_
        return float(np.sum(np.logaddexp(0.0, z) - y * z))

    current = nll(b, a)
    for _ in range(max_iter):
        z = b * x + a
        p = expit(z)
        r = p - y
        g = np.array([np.dot(r, x), np.sum(r)])
        w = p * (1.0 - p)
        h11 = np.dot(w, x * x)
        h12 = np.dot(w, x)
        h22 = np.sum(w)
        # tiny ridge keeps the solve well-posed on separable or constant scores
        H = np.array([[h11 + 1e-10, h12], [h12, h22 + 1e-10]])
        step = np.linalg.solve(H, g)
        scale = 1.0
        for _ in range(25):
            cand = nll(b - scale * step[0], a - scale * step[1])
            if cand <= current + 1e-12:
                break
            scale *= 0.5
        b -= scale * step[0]
        a -= scale * step[1]
        new = nll(b, a)
        if max(abs(scale * step[0]), abs(scale * step[1])) < tol or current - new < tol * 1e-3:
            current = new
            break
        current = new
    return float(b), float(a)


def fit_calibration(scores, labels, tol: float = 1e-8, max_iter: int = 100) -> CalibrationModel:
    """Fit one sigmoid per class on held-out (score, label) pairs.

    ``scores`` is an (n, C) matrix of raw class probabilities and ``labels``
    the observed class ids. Classes with all-positive or all-negative
    indicators keep the identity map.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2:
        raise CalibrationError(f"scores must be (n, C), got shape {scores.shape}")
    n, C = scores.shape
    if len(labels) != n:
        raise CalibrationError(f"{n} score rows but {len(labels)} labels")
    if n < 2:
        raise CalibrationError("need at least 2 samples to fit calibration")
    if labels.min() < 0 or labels.max() >= C:
        raise CalibrationError(f"label outside [0, {C})")

    slope = np.ones(C)
    intercept = np.zeros(C)
    identity = np.zeros(C, dtype=bool)
    for c in range(C):
        y = (labels == c).astype(np.float64)
        if y.sum() == 0 or y.sum() == n:
            identity[c] = True
            continue
        slope[c], intercept[c] = _fit_sigmoid(scores[:, c], y, tol, max_iter)
    return CalibrationModel(slope=slope, intercept=intercept, identity=identity)


def apply_calibration_batch(cm: CalibrationModel, scores) -> np.ndarray:
    """Sigmoid-map each class column, then renormalize rows onto the simplex."""
    S = np.asarray(scores, dtype=np.float64)
    squeeze = S.ndim == 1
    if squeeze:
        S = S[None, :]
    if S.shape[1] != cm.n_classes:
        raise CalibrationError(f"expected {cm.n_classes} columns, got {S.shape[1]}")
    mapped = expit(S * cm.slope + cm.intercept)
    out = np.where(cm.identity, S, mapped)
    totals = out.sum(axis=1, keepdims=True)
    # an all-zero row can only come from identity maps on a zero vector
    uniform = np.full_like(out, 1.0 / cm.n_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(totals > 0, out / np.where(totals > 0, totals, 1.0), uniform)
    return out[0] if squeeze else out


def apply_calibration(cm: CalibrationModel, scores) -> np.ndarray:
    """Calibrate a single score vector of length C."""
    return apply_calibration_batch(cm, np.asarray(scores, dtype=np.float64))
