"""Trajectory datasets for sequential treatment records.

A dataset is a cohort of per-patient trajectories. Each step holds the
covariates observed *before* acting, the treatment chosen from ``K`` discrete
options, and the reward realized after acting. Two interchange formats are
supported:

* JSONL: a header line ``{"schema": [...], "K": ..., "provenance": ...}``
  followed by one trajectory object per line.
* CSV: long format with columns ``id, t, action, reward, <features...>``,
  preceded by a ``# {...}`` comment line carrying K and provenance (plain CSV
  readers can skip it; the mandatory header row follows).

Model-ready matrices are produced in two stages: ``impute_and_encode`` fills
missing values with training-set statistics and one-hot expands categorical
features, then ``build_states`` assembles one state vector per step from the
current covariates, the previous action (with a distinguished "none" slot at
t=1), the previous reward, and optional history aggregates.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

NONE_ACTION = -1

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DatasetError(ValueError):
    """Base class for dataset construction and I/O failures."""


class ParseError(DatasetError):
    """A file could not be parsed; the message names the offending line."""


class SchemaError(DatasetError):
    """Data contradicts the declared schema (bad action id, unknown token, ...)."""


# ---------------------------------------------------------------------------
# schema and dataset containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Feature:
    """One covariate: a name, a kind, and categories if categorical."""

    name: str
    kind: str = NUMERIC
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.categories or len(self.categories) < 2:
                raise SchemaError(
                    f"feature {self.name!r}: categorical features need >= 2 categories"
                )
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"feature {self.name!r}: duplicate categories")
        elif self.categories is not None:
            raise SchemaError(f"feature {self.name!r}: numeric features take no categories")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered covariate declaration shared by every step of a dataset."""

    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names in schema")

    def __iter__(self):
        return iter(self.features)

    def __len__(self):
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def encoded_names(self) -> list[str]:
        """Column names after one-hot expansion, in schema order."""
        cols: list[str] = []
        for f in self.features:
            if f.kind == NUMERIC:
                cols.append(f.name)
            else:
                cols.extend(f"{f.name}={c}" for c in f.categories)
        return cols

    def is_numeric(self) -> bool:
        return all(f.kind == NUMERIC for f in self.features)

    def to_json(self) -> list[dict]:
        return [
            {
                "name": f.name,
                "kind": f.kind,
                "categories": list(f.categories) if f.categories else None,
            }
            for f in self.features
        ]

    @classmethod
    def from_json(cls, obj) -> "FeatureSchema":
        try:
            feats = tuple(
                Feature(
                    name=str(d["name"]),
                    kind=str(d.get("kind", NUMERIC)),
                    categories=tuple(d["categories"]) if d.get("categories") else None,
                )
                for d in obj
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema entry: {exc}") from None
        return cls(feats)


@dataclass
class Step:
    """Covariates seen before acting, the action taken, the reward realized."""

    features: dict
    action: int
    reward: float


@dataclass
class Trajectory:
    """One patient's ordered steps, t = 1..T."""

    id: str
    steps: list

    def __len__(self):
        return len(self.steps)

    @property
    def actions(self) -> list[int]:
        return [s.action for s in self.steps]

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]


@dataclass
class Dataset:
    """A cohort of trajectories under a shared schema and action space."""

    schema: FeatureSchema
    n_actions: int
    trajectories: list
    provenance: str = ""

    def __post_init__(self):
        if self.n_actions < 2:
            raise SchemaError(f"K must be >= 2, got {self.n_actions}")

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_steps(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    def ids(self) -> list[str]:
        return [tr.id for tr in self.trajectories]

    def validate(self) -> None:
        """Check every trajectory against the schema; raise on the first violation."""
        names = set(self.schema.names)
        cats = {f.name: set(f.categories) for f in self.schema if f.kind == CATEGORICAL}
        seen = set()
        for tr in self.trajectories:
            if tr.id in seen:
                raise SchemaError(f"duplicate trajectory id {tr.id!r}")
            seen.add(tr.id)
            if len(tr.steps) == 0:
                raise SchemaError(f"trajectory {tr.id!r}: empty trajectory")
            for t, s in enumerate(tr.steps, start=1):
                if not (0 <= s.action < self.n_actions):
                    raise SchemaError(
                        f"trajectory {tr.id!r} step {t}: action {s.action} "
                        f"outside [0, {self.n_actions})"
                    )
                if not math.isfinite(s.reward):
                    raise SchemaError(f"trajectory {tr.id!r} step {t}: non-finite reward")
                for k, v in s.features.items():
                    if k not in names:
                        raise SchemaError(
                            f"trajectory {tr.id!r} step {t}: unknown feature {k!r}"
                        )
                    if v is None:
                        continue
                    if k in cats:
                        if v not in cats[k]:
                            raise SchemaError(
                                f"trajectory {tr.id!r} step {t}: "
                                f"value {v!r} not a declared category of {k!r}"
                            )
                    elif not isinstance(v, (int, float)) or isinstance(v, bool):
                        raise SchemaError(
                            f"trajectory {tr.id!r} step {t}: "
                            f"numeric feature {k!r} holds {type(v).__name__}"
                        )


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _truncate_missing_rewards(tid, steps):
    """Cut a trajectory at the first step whose reward is missing."""
    for i, s in enumerate(steps):
        r = s.reward
        if r is None or (isinstance(r, float) and not math.isfinite(r)):
            if i == 0:
                log.warning("trajectory %r dropped: reward missing at first step", tid)
                return []
            log.debug("trajectory %r truncated at step %d (missing reward)", tid, i)
            return steps[:i]
    return steps


def save_jsonl(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        header = {"schema": ds.schema.to_json(), "K": ds.n_actions, "provenance": ds.provenance}
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        names = ds.schema.names
        for tr in ds.trajectories:
            obj = {
                "id": tr.id,
                "steps": [
                    {
                        "features": {k: s.features.get(k) for k in names},
                        "action": s.action,
                        "reward": s.reward,
                    }
                    for s in tr.steps
                ],
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_jsonl(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file, expected a header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} line 1: bad header ({exc.msg})") from None
    if not isinstance(header, dict) or "schema" not in header or "K" not in header:
        raise ParseError(f"{path} line 1: header must carry 'schema' and 'K'")
    schema = FeatureSchema.from_json(header["schema"])
    n_actions = int(header["K"])
    trajectories = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path} line {lineno}: {exc.msg}") from None
        try:
            tid = str(obj["id"])
            raw_steps = obj["steps"]
        except (KeyError, TypeError):
            raise ParseError(f"{path} line {lineno}: trajectory needs 'id' and 'steps'") from None
        steps = []
        for s in raw_steps:
            try:
                steps.append(
                    Step(features=dict(s.get("features", {})), action=int(s["action"]),
                         reward=s["reward"] if s["reward"] is None else float(s["reward"]))
                )
            except (KeyError, TypeError, ValueError):
                raise ParseError(f"{path} line {lineno}: malformed step in {tid!r}") from None
        kept = _truncate_missing_rewards(tid, steps)
        if kept or not steps:
            # an explicitly empty step list must fail validation below
            trajectories.append(Trajectory(id=tid, steps=kept))
    ds = Dataset(schema=schema, n_actions=n_actions, trajectories=trajectories,
                 provenance=str(header.get("provenance", "")))
    ds.validate()
    return ds


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        meta = {"K": ds.n_actions, "provenance": ds.provenance}
        fh.write("# " + json.dumps(meta, separators=(",", ":")) + "\n")
        writer = csv.writer(fh)
        names = ds.schema.names
        writer.writerow(["id", "t", "action", "reward"] + names)
        for tr in ds.trajectories:
            for t, s in enumerate(tr.steps, start=1):
                row = [tr.id, t, s.action, repr(float(s.reward))]
                for k in names:
                    v = s.features.get(k)
                    if v is None:
                        row.append("")
                    elif isinstance(v, str):
                        row.append(v)
                    else:
                        row.append(repr(float(v)))
                writer.writerow(row)


def load_csv(path, n_actions: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        raw = fh.read()
    meta = {}
    body_lines = []
    for line in raw.splitlines():
        if line.startswith("#"):
            payload = line.lstrip("#").strip()
            if payload.startswith("{"):
                try:
                    meta = json.loads(payload)
                except json.JSONDecodeError:
                    pass
        else:
            body_lines.append(line)
    reader = csv.reader(io.StringIO("\n".join(body_lines)))
    rows = [r for r in reader if r]
    if not rows:
        raise ParseError(f"{path}: no header row")
    header = rows[0]
    if header[:4] != ["id", "t", "action", "reward"]:
        raise ParseError(f"{path}: header must start with id,t,action,reward")
    feat_names = header[4:]

    # first pass: collect raw tokens per feature to infer kinds
    tokens = {k: [] for k in feat_names}
    parsed = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path} row {lineno}: expected {len(header)} fields, got {len(row)}")
        tid = row[0]
        try:
            t = int(row[1])
            action = int(row[2])
        except ValueError:
            raise ParseError(f"{path} row {lineno}: t and action must be integers") from None
        reward = None if row[3] == "" else _parse_float(path, lineno, "reward", row[3])
        feats = {}
        for k, tok in zip(feat_names, row[4:]):
            feats[k] = None if tok == "" else tok
            if tok != "":
                tokens[k].append(tok)
        parsed.append((tid, t, action, reward, feats))

    kinds = {}
    for k in feat_names:
        kinds[k] = NUMERIC if all(_is_float(tok) for tok in tokens[k]) else CATEGORICAL
    features = []
    for k in feat_names:
        if kinds[k] == NUMERIC:
            features.append(Feature(k, NUMERIC))
        else:
            features.append(Feature(k, CATEGORICAL, tuple(sorted(set(tokens[k])))))
    schema = FeatureSchema(tuple(features))

    by_id: dict[str, list] = {}
    order = []
    for tid, t, action, reward, feats in parsed:
        if tid not in by_id:
            by_id[tid] = []
            order.append(tid)
        conv = {
            k: (None if v is None else (float(v) if kinds[k] == NUMERIC else v))
            for k, v in feats.items()
        }
        by_id[tid].append((t, Step(features=conv, action=action, reward=reward)))

    trajectories = []
    for tid in order:
        entries = by_id[tid]
        ts = [t for t, _ in entries]
        if ts != list(range(1, len(ts) + 1)):
            raise ParseError(f"{path}: trajectory {tid!r} steps are not t=1..T in order")
        steps = _truncate_missing_rewards(tid, [s for _, s in entries])
        if steps:
            trajectories.append(Trajectory(id=tid, steps=steps))

    if n_actions is None:
        n_actions = meta.get("K")
    if n_actions is None:
        n_actions = 1 + max((s.action for tr in trajectories for s in tr.steps), default=1)
    ds = Dataset(schema=schema, n_actions=int(n_actions), trajectories=trajectories,
                 provenance=str(meta.get("provenance", "")))
    ds.validate()
    return ds


def _is_float(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _parse_float(path, lineno, what, tok):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"{path} row {lineno}: {what} {tok!r} is not a number") from None


def save_dataset(ds: Dataset, path) -> None:
    """Write JSONL or CSV depending on the file extension."""
    if str(path).endswith(".csv"):
        save_csv(ds, path)
    else:
        save_jsonl(ds, path)


def load_dataset(path, n_actions: int | None = None) -> Dataset:
    """Read JSONL or CSV depending on the file extension."""
    if str(path).endswith(".csv"):
        return load_csv(path, n_actions=n_actions)
    return load_jsonl(path)


# ---------------------------------------------------------------------------
# imputation and one-hot encoding
# ---------------------------------------------------------------------------

@dataclass
class ImputationStats:
    """Per-feature fill values learned from a training cohort.

    Numeric features carry their observed mean, categorical features their
    modal category (ties break by schema category order).
    """

    schema: FeatureSchema
    values: dict

    def to_json(self) -> dict:
        return {"schema": self.schema.to_json(), "values": dict(self.values)}

    @classmethod
    def from_json(cls, obj) -> "ImputationStats":
        return cls(schema=FeatureSchema.from_json(obj["schema"]), values=dict(obj["values"]))


def fit_imputation(ds: Dataset) -> ImputationStats:
    values = {}
    for f in ds.schema:
        observed = [
            s.features.get(f.name)
            for tr in ds.trajectories
            for s in tr.steps
            if s.features.get(f.name) is not None
        ]
        if not observed:
            raise DatasetError(
                f"feature {f.name!r} entirely missing in statistics source; "
                "no imputation statistic definable"
            )
        if f.kind == NUMERIC:
            values[f.name] = float(np.mean([float(v) for v in observed]))
        else:
            counts = {c: 0 for c in f.categories}
            for v in observed:
                counts[v] += 1
            top = max(counts.values())
            # ties break by schema category order
            values[f.name] = next(c for c in f.categories if counts[c] == top)
    return ImputationStats(schema=ds.schema, values=values)


def apply_imputation(ds: Dataset, stats: ImputationStats) -> Dataset:
    """Fill missing values using ``stats`` and one-hot encode categoricals.

    Returns a new dataset with an all-numeric schema; the input is untouched.
    Applying the function to its own output is a no-op.
    """
    if ds.schema.names != stats.schema.names:
        raise SchemaError("imputation statistics were fitted on a different schema")
    enc_features = tuple(Feature(n, NUMERIC) for n in ds.schema.encoded_names())
    enc_schema = FeatureSchema(enc_features)
    out = []
    for tr in ds.trajectories:
        steps = []
        for s in tr.steps:
            feats = {}
            for f in ds.schema:
                v = s.features.get(f.name)
                if v is None:
                    v = stats.values[f.name]
                if f.kind == NUMERIC:
                    feats[f.name] = float(v)
                else:
                    if v not in f.categories:
                        raise SchemaError(
                            f"trajectory {tr.id!r}: value {v!r} not a category of {f.name!r}"
                        )
                    for c in f.categories:
                        feats[f"{f.name}={c}"] = 1.0 if v == c else 0.0
            steps.append(Step(features=feats, action=s.action, reward=s.reward))
        out.append(Trajectory(id=tr.id, steps=steps))
    return Dataset(schema=enc_schema, n_actions=ds.n_actions, trajectories=out,
                   provenance=ds.provenance)


def impute_and_encode(ds: Dataset, stats_source: Dataset | None = None) -> Dataset:
    """Impute with statistics from ``stats_source`` (default: ``ds`` itself)."""
    stats = fit_imputation(stats_source if stats_source is not None else ds)
    return apply_imputation(ds, stats)


# ---------------------------------------------------------------------------
# state assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateConfig:
    """Which history aggregates the state vector carries."""

    switch_count: bool = True
    mean_reward: bool = True

    def to_json(self) -> dict:
        return {"switch_count": self.switch_count, "mean_reward": self.mean_reward}

    @classmethod
    def from_json(cls, obj) -> "StateConfig":
        return cls(switch_count=bool(obj.get("switch_count", True)),
                   mean_reward=bool(obj.get("mean_reward", True)))


class StateAssembler:
    """Maps (covariates, previous action, history) to flat state vectors.

    The layout is: encoded covariates in schema order, a previous-action
    one-hot block with a trailing "none" slot used at t=1, the previous
    reward (0 at t=1), then the configured aggregates.
    """

    def __init__(self, feature_names, n_actions: int, config: StateConfig = StateConfig()):
        self.feature_names = list(feature_names)
        self.n_actions = int(n_actions)
        self.config = config
        names = list(self.feature_names)
        names += [f"prev_action={a}" for a in range(self.n_actions)]
        names += ["prev_action=none", "prev_reward"]
        if config.switch_count:
            names.append("switch_count")
        if config.mean_reward:
            names.append("mean_prev_reward")
        self.names = names

    @property
    def dim(self) -> int:
        return len(self.names)

    def column(self, name: str) -> int:
        return self.names.index(name)

    def assemble_batch(self, covariates, prev_actions, prev_rewards,
                       switch_counts=None, mean_rewards=None) -> np.ndarray:
        """Stack state vectors for ``n`` steps; prev_action -1 means none."""
        cov = np.asarray(covariates, dtype=np.float64)
        n = cov.shape[0]
        if cov.shape[1] != len(self.feature_names):
            raise DatasetError(
                f"expected {len(self.feature_names)} covariate columns, got {cov.shape[1]}"
            )
        prev = np.asarray(prev_actions, dtype=np.int64)
        onehot = np.zeros((n, self.n_actions + 1), dtype=np.float64)
        slot = np.where(prev == NONE_ACTION, self.n_actions, prev)
        onehot[np.arange(n), slot] = 1.0
        cols = [cov, onehot, np.asarray(prev_rewards, dtype=np.float64).reshape(n, 1)]
        if self.config.switch_count:
            if switch_counts is None:
                raise DatasetError("state config includes switch_count but none given")
            cols.append(np.asarray(switch_counts, dtype=np.float64).reshape(n, 1))
        if self.config.mean_reward:
            if mean_rewards is None:
                raise DatasetError("state config includes mean_prev_reward but none given")
            cols.append(np.asarray(mean_rewards, dtype=np.float64).reshape(n, 1))
        return np.concatenate(cols, axis=1)


@dataclass
class StepData:
    """Flat per-step arrays for a cohort, grouped by trajectory.

    ``traj_index`` maps each step to its trajectory's position in ``traj_ids``
    and is non-decreasing, so per-trajectory reductions can use bincount.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    prev_actions: np.ndarray
    stages: np.ndarray
    traj_index: np.ndarray
    traj_ids: list
    n_actions: int
    feature_names: list

    def __len__(self):
        return len(self.actions)

    @property
    def n_trajectories(self) -> int:
        return len(self.traj_ids)

    def switch_labels(self) -> np.ndarray:
        """1 where the action differs from the previous action (t>1 only)."""
        if np.any(self.prev_actions == NONE_ACTION):
            raise DatasetError("switch labels are undefined at t=1 steps")
        return (self.actions != self.prev_actions).astype(np.int64)

    def subset(self, mask) -> "StepData":
        mask = np.asarray(mask)
        return StepData(
            states=self.states[mask],
            actions=self.actions[mask],
            rewards=self.rewards[mask],
            prev_actions=self.prev_actions[mask],
            stages=self.stages[mask],
            traj_index=self.traj_index[mask],
            traj_ids=self.traj_ids,
            n_actions=self.n_actions,
            feature_names=self.feature_names,
        )

    def trajectory_returns(self) -> np.ndarray:
        """Sum of rewards per trajectory, ordered like ``traj_ids``."""
        return np.bincount(self.traj_index, weights=self.rewards,
                           minlength=len(self.traj_ids))

    def trajectory_lengths(self) -> np.ndarray:
        return np.bincount(self.traj_index, minlength=len(self.traj_ids))


def encode_covariates(ds: Dataset) -> np.ndarray:
    """Stack the (already numeric, fully observed) covariates of every step."""
    if not ds.schema.is_numeric():
        raise DatasetError("dataset still holds categorical features; run impute_and_encode")
    names = ds.schema.names
    n = ds.n_steps
    out = np.empty((n, len(names)), dtype=np.float64)
    i = 0
    for tr in ds.trajectories:
        for s in tr.steps:
            for j, k in enumerate(names):
                v = s.features.get(k)
                if v is None:
                    raise DatasetError(
                        f"trajectory {tr.id!r}: missing value for {k!r}; run impute_and_encode"
                    )
                out[i, j] = v
            i += 1
    return out


def build_states(ds: Dataset, config: StateConfig = StateConfig()) -> StepData:
    """Turn an encoded dataset into one model-ready record per step.

    History aggregates only see steps strictly before t: the switch count is
    the number of treatment changes among a_1..a_{t-1} and the running mean
    reward averages r_1..r_{t-1} (both 0 at t=1), so no state leaks the action
    it is meant to predict.
    """
    cov = encode_covariates(ds)
    assembler = StateAssembler(ds.schema.names, ds.n_actions, config)
    n = ds.n_steps
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n, dtype=np.float64)
    prev_actions = np.empty(n, dtype=np.int64)
    stages = np.empty(n, dtype=np.int64)
    traj_index = np.empty(n, dtype=np.int64)
    prev_rewards = np.zeros(n, dtype=np.float64)
    switch_counts = np.zeros(n, dtype=np.float64)
    mean_rewards = np.zeros(n, dtype=np.float64)

    i = 0
    for ti, tr in enumerate(ds.trajectories):
        n_sw = 0
        r_sum = 0.0
        for t, s in enumerate(tr.steps, start=1):
            actions[i] = s.action
            rewards[i] = s.reward
            stages[i] = t
            traj_index[i] = ti
            if t == 1:
                prev_actions[i] = NONE_ACTION
            else:
                prev = tr.steps[t - 2]
                prev_actions[i] = prev.action
                prev_rewards[i] = prev.reward
                r_sum += prev.reward
                mean_rewards[i] = r_sum / (t - 1)
                if t >= 3 and prev.action != tr.steps[t - 3].action:
                    n_sw += 1
                switch_counts[i] = n_sw
            i += 1

    states = assembler.assemble_batch(cov, prev_actions, prev_rewards,
                                      switch_counts, mean_rewards)
    return StepData(
        states=states,
        actions=actions,
        rewards=rewards,
        prev_actions=prev_actions,
        stages=stages,
        traj_index=traj_index,
        traj_ids=ds.ids(),
        n_actions=ds.n_actions,
        feature_names=assembler.names,
    )


# ---------------------------------------------------------------------------
# trajectory-level splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Trajectory-level split: held-out test, then validation carved from train."""

    train_fraction: float = 0.8
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise DatasetError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise DatasetError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )

    def to_json(self) -> dict:
        return {"train_fraction": self.train_fraction,
                "validation_fraction": self.validation_fraction, "seed": self.seed}

    @classmethod
    def from_json(cls, obj) -> "SplitSpec":
        return cls(train_fraction=float(obj.get("train_fraction", 0.8)),
                   validation_fraction=float(obj.get("validation_fraction", 0.2)),
                   seed=int(obj.get("seed", 0)))


def split_dataset(ds: Dataset, spec: SplitSpec):
    """Shuffle trajectories by seed and cut train/validation/test partitions.

    Splits are by whole trajectory; no patient contributes steps to two
    partitions. Raises if any partition comes out empty.
    """
    n = len(ds.trajectories)
    if n < 10:
        raise DatasetError(f"need >= 10 trajectories to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_train_all = int(round(n * spec.train_fraction))
    n_val = int(round(n_train_all * spec.validation_fraction))
    n_train = n_train_all - n_val
    n_test = n - n_train_all
    if n_train <= 0 or n_val <= 0 or n_test <= 0:
        raise DatasetError(
            f"split fractions yield an empty partition "
            f"(train={n_train}, validation={n_val}, test={n_test})"
        )

    def take(idx):
        return Dataset(schema=ds.schema, n_actions=ds.n_actions,
                       trajectories=[ds.trajectories[i] for i in idx],
                       provenance=ds.provenance)

    train = take(perm[:n_train])
    val = take(perm[n_train:n_train_all])
    test = take(perm[n_train_all:])
    return train, val, test
