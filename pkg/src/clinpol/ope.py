"""Importance-sampling evaluation of a target policy against logged data.

Each trajectory gets one weight, the product over its steps of
p_target(a_t | s_t) / p_behavior(a_t | s_t). Products run in log space; a
zero in the numerator short-circuits the whole trajectory to weight zero,
and a non-positive denominator is a hard error because the logged action was
taken, so the behavior model must give it positive mass.

Estimators:

* ``wis_estimate``: sum(w * G) / sum(w), self-normalized.
* ``is_estimate``: mean(w * G), unbiased under correct behavior
  probabilities but heavy-tailed.

Both report the effective sample size (sum w)^2 / sum(w^2), which equals n
exactly when all weights are one (e.g. evaluating the behavior model against
itself) and collapses toward 1 as the mass concentrates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import StepData


class OPEError(ValueError):
    pass


class SupportViolationError(OPEError):
    """The behavior model assigns zero probability to a logged action."""


class NoOverlapError(OPEError):
    """Every trajectory weight is zero; the estimate is undefined."""


@dataclass(frozen=True)
class TrajectoryWeight:
    traj_id: str
    weight: float
    ret: float
    length: int


@dataclass(frozen=True)
class OPEResult:
    value: float
    ess: float
    n: int
    estimator: str
    normalization: str = "absolute"
    per_trajectory: tuple = field(default=(), repr=False)


def importance_weights(policy, behavior_model, data: StepData) -> list[TrajectoryWeight]:
    """Per-trajectory importance weights of ``policy`` against ``behavior_model``.

    ``data`` must hold complete trajectories: the weight is a product over
    every logged step, so evaluating on a row subset would silently drop
    factors.
    """
    p_pi = policy.probabilities_batch(data.states, data.prev_actions, data.stages)
    p_mu = behavior_model.action_probabilities_batch(
        data.states, data.prev_actions, data.stages
    )
    rows = np.arange(len(data.actions))
    num = p_pi[rows, data.actions]
    den = p_mu[rows, data.actions]

    bad = ~(den > 0.0) | ~np.isfinite(den)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SupportViolationError(
            "behavior support violation: logged action "
            f"{data.actions[i]} at stage {data.stages[i]} of trajectory "
            f"{data.traj_ids[data.traj_index[i]]!r} has behavior probability "
            f"{den[i]!r}"
        )

    n_traj = len(data.traj_ids)
    zero_num = num == 0.0
    with np.errstate(divide="ignore"):
        log_ratio = np.where(zero_num, 0.0, np.log(num) - np.log(den))
    log_w = np.bincount(data.traj_index, weights=log_ratio, minlength=n_traj)
    dead = np.bincount(data.traj_index, weights=zero_num, minlength=n_traj) > 0
    w = np.exp(log_w)
    w[dead] = 0.0

    returns = data.trajectory_returns()
    lengths = data.trajectory_lengths()
    return [
        TrajectoryWeight(data.traj_ids[j], float(w[j]), float(returns[j]), int(lengths[j]))
        for j in range(n_traj)
    ]


def _arrays(weights: list[TrajectoryWeight]) -> tuple[np.ndarray, np.ndarray]:
    if not weights:
        raise OPEError("no trajectories to estimate from")
    w = np.array([t.weight for t in weights], dtype=np.float64)
    g = np.array([t.ret for t in weights], dtype=np.float64)
    if not np.any(w > 0.0):
        raise NoOverlapError(
            "no overlap mass: every trajectory weight is zero under the target policy"
        )
    return w, g


def effective_sample_size(weights) -> float:
    """(sum w)^2 / sum(w^2); equals n for uniform weights, 1 for a point mass."""
    seq = list(weights)
    if seq and isinstance(seq[0], TrajectoryWeight):
        seq = [t.weight for t in seq]
    w = np.asarray(seq, dtype=np.float64)
    if w.size == 0 or not np.any(w > 0.0):
        raise OPEError("effective sample size undefined: no positive weights")
    return float(w.sum() ** 2 / np.sum(w**2))


def wis_estimate(weights: list[TrajectoryWeight]) -> OPEResult:
    w, g = _arrays(weights)
    value = float(np.sum(w * g) / np.sum(w))
    return OPEResult(
        value=value,
        ess=float(w.sum() ** 2 / np.sum(w**2)),
        n=len(weights),
        estimator="wis",
        per_trajectory=tuple(weights),
    )


def is_estimate(weights: list[TrajectoryWeight]) -> OPEResult:
    w, g = _arrays(weights)
    value = float(np.mean(w * g))
    return OPEResult(
        value=value,
        ess=float(w.sum() ** 2 / np.sum(w**2)),
        n=len(weights),
        estimator="is",
        per_trajectory=tuple(weights),
    )


ESTIMATORS = {"wis": wis_estimate, "is": is_estimate}

NORMALIZATION_MODES = ("absolute", "per_stage", "behavior_relative")


def normalize_value(
    result: OPEResult, behavior_value: float | None = None, mode: str = "absolute"
) -> float:
    """Re-express an estimate on an absolute, per-stage, or relative scale.

    per_stage re-runs the estimator with each return divided by trajectory
    length; behavior_relative subtracts the behavior policy's mean return.
    """
    if mode == "absolute":
        return result.value
    if mode == "per_stage":
        if not result.per_trajectory:
            raise OPEError("per_stage normalization needs per-trajectory weights")
        scaled = [
            TrajectoryWeight(t.traj_id, t.weight, t.ret / t.length, t.length)
            for t in result.per_trajectory
        ]
        return ESTIMATORS[result.estimator](scaled).value
    if mode == "behavior_relative":
        if behavior_value is None:
            raise OPEError("behavior_relative normalization needs the behavior value")
        return result.value - behavior_value
    raise OPEError(
        f"unknown normalization mode {mode!r}; valid modes are "
        + ", ".join(NORMALIZATION_MODES)
    )


def median_iqr(values) -> tuple[float, float, float]:
    """Median and quartiles with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise OPEError("median undefined for an empty collection")
    q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
    return float(med), float(q1), float(q3)


@dataclass(frozen=True)
class SplitSummary:
    n_splits: int
    value_median: float
    value_q1: float
    value_q3: float
    ess_median: float
    ess_q1: float
    ess_q3: float


def aggregate_splits(results: list[OPEResult]) -> SplitSummary:
    """Median and IQR of value and ESS across repeated evaluation splits."""
    if not results:
        raise OPEError("no results to aggregate")
    vm, v1, v3 = median_iqr([r.value for r in results])
    em, e1, e3 = median_iqr([r.ess for r in results])
    return SplitSummary(len(results), vm, v1, v3, em, e1, e3)
