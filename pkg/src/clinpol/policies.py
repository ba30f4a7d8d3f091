"""Target policies derived from a fitted behavior model.

All policies map a state (plus previous action and stage) to a distribution
over the K treatments:

* ``BehaviorPolicy`` returns the behavior model's own distribution unchanged.
* ``TopKPolicy`` keeps the k most probable treatments (ties to the lower
  action id), zeroes the rest, and renormalizes. With k=K it short-circuits
  and reproduces the behavior distribution bit for bit.
* ``BestOutcomePolicy`` deterministically picks, among the top-k treatments,
  the one with the best leaf-average outcome; treatments whose leaf never saw
  them are skipped, and if none carries data it falls back to the top-1.
* ``SwitchAdjustedPolicy`` shifts a switch-composed model's probability of
  changing treatment by a constant p1 (clamped to [0, 1], with a clamp-event
  counter), spreading the switch mass over the top-k of the conditional
  switch distribution. At t=1 there is no stay/switch split to adjust and it
  behaves like plain top-k.
* ``RandomPolicy`` is uniform, or a per-state deterministic uniform draw when
  given a seed (replayable: the same state always maps to the same action).
* ``soften`` mixes any policy with the uniform distribution,
  p' = (1 - K*eps) * p + eps, so every action keeps at least eps mass.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .behavior import BaselineSwitchModel, SwitchTreatmentModel, _as_batch
from .data import NONE_ACTION


class PolicyError(ValueError):
    pass


class _PolicyBase:
    """Scalar convenience wrapper over the batch query."""

    n_actions: int

    def probabilities(self, state, prev_action, t: int) -> np.ndarray:
        prev = NONE_ACTION if prev_action is None else int(prev_action)
        return self.probabilities_batch(_as_batch(state), [prev], [t])[0]

    def descriptor(self) -> dict:
        raise NotImplementedError


def _top_k_sets(probs: np.ndarray, k: int) -> np.ndarray:
    """Per-row boolean mask of the k most probable actions.

    A stable sort on descending probability keeps equal entries in action-id
    order, so ties at the k-th rank resolve to the lower id.
    """
    order = np.argsort(-probs, axis=1, kind="stable")
    mask = np.zeros(probs.shape, dtype=bool)
    rows = np.repeat(np.arange(len(probs)), k)
    mask[rows, order[:, :k].ravel()] = True
    return mask


class BehaviorPolicy(_PolicyBase):
    """The cloned behavior itself, used for self-evaluation baselines."""

    def __init__(self, model):
        self.model = model
        self.n_actions = model.n_actions

    def probabilities_batch(self, states, prev_actions, stages) -> np.ndarray:
        return self.model.action_probabilities_batch(states, prev_actions, stages)

    def descriptor(self) -> dict:
        return {"type": "behavior"}


class TopKPolicy(_PolicyBase):
    """Renormalized restriction to the k most probable treatments."""

    def __init__(self, model, k: int):
        self.model = model
        self.n_actions = model.n_actions
        if not (1 <= k <= model.n_actions):
            raise PolicyError(f"k must be an integer in [1, {model.n_actions}], got {k}")
        self.k = int(k)

    def probabilities_batch(self, states, prev_actions, stages) -> np.ndarray:
        p = self.model.action_probabilities_batch(states, prev_actions, stages)
        if self.k == self.n_actions:
            return p
        mask = _top_k_sets(p, self.k)
        restricted = np.where(mask, p, 0.0)
        z = restricted.sum(axis=1, keepdims=True)
        return restricted / z

    def descriptor(self) -> dict:
        return {"type": "mc", "k": self.k}


class BestOutcomePolicy(_PolicyBase):
    """Deterministic argmax of leaf-average outcome over the top-k set."""

    def __init__(self, model, k: int):
        self.model = model
        self.n_actions = model.n_actions
        if not (1 <= k <= model.n_actions):
            raise PolicyError(f"k must be an integer in [1, {model.n_actions}], got {k}")
        self.k = int(k)

    def probabilities_batch(self, states, prev_actions, stages) -> np.ndarray:
        p = self.model.action_probabilities_batch(states, prev_actions, stages)
        mask = _top_k_sets(p, self.k)
        outcomes = self.model.outcome_batch(states, prev_actions, stages)
        candidates = np.where(mask & ~np.isnan(outcomes), outcomes, -np.inf)
        # argmax hits the first maximum, so outcome ties go to the lower id
        best = np.argmax(candidates, axis=1)
        no_data = ~np.isfinite(candidates.max(axis=1))
        if np.any(no_data):
            # no action in the top-k set carries outcome data: take the top-1
            order = np.argsort(-p[no_data], axis=1, kind="stable")
            best[no_data] = order[:, 0]
        out = np.zeros_like(p)
        out[np.arange(len(p)), best] = 1.0
        return out

    def descriptor(self) -> dict:
        return {"type": "mc_o", "k": self.k}


class SwitchAdjustedPolicy(_PolicyBase):
    """Top-k policy over a switch-composed model with a shifted switch rate.

    The adjusted switch probability is clamp(p_switch + p1, 0, 1); staying
    keeps the complement, and the switch mass follows the model's conditional
    switch distribution restricted to its top-k treatments. Clamping events
    are counted in ``clamp_events`` (each one flags a state where the target
    leaves the behavior support, inflating evaluation variance).
    """

    def __init__(self, model, k: int, p1: float):
        if not isinstance(model, (SwitchTreatmentModel, BaselineSwitchModel)):
            raise TypeError(
                "switch adjustment needs a switch-composed model (dts or dtbls); "
                f"got {type(model).__name__}"
            )
        self.model = model
        self.n_actions = model.n_actions
        if not (1 <= k <= model.n_actions):
            raise PolicyError(f"k must be an integer in [1, {model.n_actions}], got {k}")
        if not (-1.0 <= p1 <= 1.0):
            raise PolicyError(f"p1 must lie in [-1, 1], got {p1}")
        self.k = int(k)
        self.p1 = float(p1)
        self.clamp_events = 0
        self.queries = 0

    @property
    def clamp_rate(self) -> float:
        return self.clamp_events / self.queries if self.queries else 0.0

    def probabilities_batch(self, states, prev_actions, stages) -> np.ndarray:
        states = _as_batch(states)
        prev = np.asarray(prev_actions, dtype=np.int64)
        t = np.asarray(stages, dtype=np.int64)
        out = np.empty((len(states), self.n_actions), dtype=np.float64)
        first = t == 1
        if np.any(first):
            # no previous treatment yet, nothing to adjust
            p = self.model.action_probabilities_batch(states[first], prev[first], t[first])
            if self.k == self.n_actions:
                out[first] = p
            else:
                mask = _top_k_sets(p, self.k)
                restricted = np.where(mask, p, 0.0)
                out[first] = restricted / restricted.sum(axis=1, keepdims=True)
        rest = ~first
        if np.any(rest):
            ps = self.model.switch_probability_batch(states[rest])
            q = self.model.conditional_switch_batch(states[rest], prev[rest])
            if self.k < self.n_actions:
                mask = _top_k_sets(q, self.k)
                q = np.where(mask, q, 0.0)
                q = q / q.sum(axis=1, keepdims=True)
            shifted = ps + self.p1
            clamped = np.clip(shifted, 0.0, 1.0)
            self.clamp_events += int(np.sum((shifted < 0.0) | (shifted > 1.0)))
            self.queries += int(len(ps))
            adjusted = clamped[:, None] * q
            adjusted[np.arange(len(ps)), prev[rest]] = 1.0 - clamped
            out[rest] = adjusted
        return out

    def descriptor(self) -> dict:
        return {"type": "mc_switch_adj", "k": self.k, "p1": self.p1}


def adjust_switch(policy, state, prev_action, p1: float) -> np.ndarray:
    """Query a switch-composed top-k policy with its switch rate shifted by p1.

    ``policy`` may be a SwitchAdjustedPolicy (its own p1 is ignored) or a
    TopKPolicy over a dts/dtbls model. With p1=0 this reproduces the
    unadjusted switch-adjusted family member exactly.
    """
    if isinstance(policy, (SwitchAdjustedPolicy, TopKPolicy)):
        shifted = SwitchAdjustedPolicy(policy.model, policy.k, p1)
    else:
        raise TypeError(f"cannot switch-adjust a {type(policy).__name__}")
    t = 1 if prev_action is None else 2
    return shifted.probabilities(state, prev_action, t)


class RandomPolicy(_PolicyBase):
    """Uniform over all K actions; with a seed, a fixed per-state choice."""

    def __init__(self, n_actions: int, deterministic_seed: int | None = None):
        if n_actions < 2:
            raise PolicyError(f"K must be >= 2, got {n_actions}")
        self.n_actions = int(n_actions)
        self.deterministic_seed = deterministic_seed

    def probabilities_batch(self, states, prev_actions, stages) -> np.ndarray:
        states = _as_batch(states)
        n = len(states)
        if self.deterministic_seed is None:
            return np.full((n, self.n_actions), 1.0 / self.n_actions)
        key = struct.pack("<q", int(self.deterministic_seed))
        out = np.zeros((n, self.n_actions))
        for i in range(n):
            h = hashlib.blake2b(states[i].tobytes(), digest_size=8, key=key)
            a = int.from_bytes(h.digest(), "little") % self.n_actions
            out[i, a] = 1.0
        return out

    def descriptor(self) -> dict:
        d = {"type": "random"}
        if self.deterministic_seed is not None:
            d["seed"] = self.deterministic_seed
        return d


class SoftenedPolicy(_PolicyBase):
    """Mixture with the uniform distribution: p' = (1 - K*eps) * p + eps."""

    def __init__(self, inner, epsilon: float):
        self.inner = inner
        self.n_actions = inner.n_actions
        if not (0.0 <= epsilon <= 1.0 / self.n_actions):
            raise PolicyError(
                f"epsilon must lie in [0, 1/K] = [0, {1.0 / self.n_actions:.6g}], "
                f"got {epsilon}"
            )
        self.epsilon = float(epsilon)

    def probabilities_batch(self, states, prev_actions, stages) -> np.ndarray:
        p = self.inner.probabilities_batch(states, prev_actions, stages)
        if self.epsilon == 0.0:
            return p
        return (1.0 - self.n_actions * self.epsilon) * p + self.epsilon

    def descriptor(self) -> dict:
        d = dict(self.inner.descriptor())
        d["epsilon"] = self.epsilon
        return d


def soften(policy, epsilon: float):
    """Wrap a policy so every action keeps at least ``epsilon`` probability."""
    if epsilon == 0.0:
        return policy
    return SoftenedPolicy(policy, epsilon)


POLICY_TYPES = ("behavior", "mc", "mc_o", "mc_switch_adj", "random")


def build_policy(descriptor: dict, model):
    """Construct a policy from a descriptor dict {type, k, p1, epsilon, seed}."""
    if not isinstance(descriptor, dict) or "type" not in descriptor:
        raise PolicyError(f"policy descriptor needs a 'type' key, got {descriptor!r}")
    ptype = descriptor["type"]
    if ptype not in POLICY_TYPES:
        raise PolicyError(
            f"unknown policy type {ptype!r}; valid types are {', '.join(POLICY_TYPES)}"
        )
    K = model.n_actions

    def need_k():
        k = descriptor.get("k")
        if not isinstance(k, int) or isinstance(k, bool) or not (1 <= k <= K):
            raise PolicyError(
                f"policy {ptype!r} needs an integer k in [1, {K}], got {k!r}"
            )
        return k

    if ptype == "behavior":
        policy = BehaviorPolicy(model)
    elif ptype == "mc":
        policy = TopKPolicy(model, need_k())
    elif ptype == "mc_o":
        policy = BestOutcomePolicy(model, need_k())
    elif ptype == "mc_switch_adj":
        p1 = float(descriptor.get("p1", 0.0))
        policy = SwitchAdjustedPolicy(model, need_k(), p1)
    else:
        policy = RandomPolicy(K, descriptor.get("seed"))

    epsilon = float(descriptor.get("epsilon", 0.0))
    return soften(policy, epsilon)
