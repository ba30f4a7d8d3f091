"""Repeated-split experiment protocol: selection, calibration, policies, OPE.

One repeat is: split the cohort by trajectory, fit candidate behavior models
on the train partition, pick the best by validation AUROC, calibrate the
winner on the validation partition, build every configured target policy
from it, and estimate each policy's value on the test partition. The repeat
loop reruns this under fresh split seeds and aggregates medians and IQRs.

Determinism contract: all randomness of repeat ``r`` derives from
``SeedSequence([master_seed, r])``, so outputs are byte-identical across runs
and repeats could execute in any order (the final tables are merge-sorted by
seed and policy). Report files carry no timestamps.

Partition hygiene: trajectory id sets of train, validation, and test are
asserted pairwise disjoint each repeat; imputation statistics come from the
train partition only; calibration sees only validation; OPE only test.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .behavior import MODEL_KINDS, fit_dt, fit_dtbls, fit_dts
from .data import (
    Dataset,
    SplitSpec,
    StateConfig,
    build_states,
    impute_and_encode,
    load_dataset,
    split_dataset,
)
from .metrics import auroc_macro, sce
from .ope import ESTIMATORS, importance_weights, median_iqr
from .policies import POLICY_TYPES, build_policy
from .sim import ChronicSimConfig, EpisodicSimConfig, simulate
from .tree import TreeHyperparams

log = logging.getLogger(__name__)


class HarnessError(ValueError):
    pass


# ---------------------------------------------------------------------------
# hyperparameter grid
# ---------------------------------------------------------------------------

DEFAULT_MAX_DEPTHS = (2, 3, 4, 5, 6, 7, 8, 9)
DEFAULT_MIN_LEAF_FRACTIONS = (0.01, 0.02, 0.03, 0.04, 0.05)


@dataclass(frozen=True)
class HyperparamGrid:
    """Search space for tree candidates; meta-models reuse one draw for
    every component tree."""

    max_depths: tuple = DEFAULT_MAX_DEPTHS
    min_leaf_fractions: tuple = DEFAULT_MIN_LEAF_FRACTIONS

    def __post_init__(self):
        if not self.max_depths or not self.min_leaf_fractions:
            raise HarnessError("hyperparameter grid must not be empty")
        for d in self.max_depths:
            for f in self.min_leaf_fractions:
                TreeHyperparams(max_depth=d, min_leaf_fraction=f)

    def all(self) -> list:
        """Every cell in fixed (depth-major) order."""
        return [TreeHyperparams(max_depth=d, min_leaf_fraction=f)
                for d in self.max_depths for f in self.min_leaf_fractions]

    def to_json(self) -> dict:
        return {"max_depths": list(self.max_depths),
                "min_leaf_fractions": list(self.min_leaf_fractions)}

    @classmethod
    def from_json(cls, obj) -> "HyperparamGrid":
        return cls(
            max_depths=tuple(obj.get("max_depths", DEFAULT_MAX_DEPTHS)),
            min_leaf_fractions=tuple(
                obj.get("min_leaf_fractions", DEFAULT_MIN_LEAF_FRACTIONS)
            ),
        )


def sample_candidates(grid: HyperparamGrid, n_candidates: int, seed: int) -> list:
    """Uniform independent draws from the grid; reproducible from ``seed``."""
    if n_candidates < 1:
        raise HarnessError(f"n_candidates must be >= 1, got {n_candidates}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    out = []
    for _ in range(n_candidates):
        d = grid.max_depths[rng.integers(len(grid.max_depths))]
        f = grid.min_leaf_fractions[rng.integers(len(grid.min_leaf_fractions))]
        out.append(TreeHyperparams(max_depth=d, min_leaf_fraction=f))
    return out


def fit_model(model_type: str, data, hp: TreeHyperparams):
    """Fit one candidate; meta-models share ``hp`` across component trees."""
    if model_type == "dt":
        return fit_dt(data, hp)
    if model_type == "dts":
        return fit_dts(data, hp, hp)
    if model_type == "dtbls":
        return fit_dtbls(data, hp, hp, hp)
    raise HarnessError(
        f"unknown model type {model_type!r}; valid types are {MODEL_KINDS}"
    )


# ---------------------------------------------------------------------------
# model selection
# ---------------------------------------------------------------------------

def select_model(train, validation, model_type: str, n_candidates: int,
                 seed: int, grid: HyperparamGrid | None = None):
    """Best-of-``n_candidates`` by validation AUROC, then calibrated.

    Ties keep the earliest sampled candidate (strict improvement replaces).
    Candidates that fail to fit are skipped; if every one fails the last
    failure is surfaced.
    """
    if model_type not in MODEL_KINDS:
        raise HarnessError(
            f"unknown model type {model_type!r}; valid types are {MODEL_KINDS}"
        )
    grid = grid or HyperparamGrid()
    best = None
    best_score = -math.inf
    last_error = None
    for hp in sample_candidates(grid, n_candidates, seed):
        try:
            model = fit_model(model_type, train, hp)
            score = auroc_macro(
                model.action_probabilities_batch(
                    validation.states, validation.prev_actions, validation.stages
                ),
                validation.actions,
            )
        except ValueError as e:
            last_error = e
            log.warning("candidate %s failed: %s", hp, e)
            continue
        if math.isnan(score):
            last_error = HarnessError(
                "validation AUROC undefined: no class has both outcomes"
            )
            log.warning("candidate %s failed: %s", hp, last_error)
            continue
        if score > best_score:
            best, best_score = model, score
    if best is None:
        raise HarnessError(
            f"model selection failed: all {n_candidates} candidates failed "
            f"to fit (last error: {last_error})"
        )
    return best.calibrate(validation)


def cross_validate(dataset: Dataset, model_type: str, folds: int,
                   grid: HyperparamGrid | None = None) -> TreeHyperparams:
    """Full-grid search scored by mean validation AUROC across folds.

    Folds are strided over trajectory order (trajectory ``i`` validates in
    fold ``i mod folds``), capped at the number of trajectories. Ties keep
    the earliest grid cell in ``grid.all()`` order.
    """
    grid = grid or HyperparamGrid()
    n = len(dataset.trajectories)
    if n < 2:
        raise HarnessError(f"need >= 2 trajectories to cross-validate, got {n}")
    if folds < 2:
        raise HarnessError(f"folds must be >= 2, got {folds}")
    folds = min(folds, n)
    assignment = np.arange(n) % folds

    def take(mask):
        return Dataset(schema=dataset.schema, n_actions=dataset.n_actions,
                       trajectories=[t for t, m in zip(dataset.trajectories, mask) if m],
                       provenance=dataset.provenance)

    parts = []
    for f in range(folds):
        val_ds = take(assignment == f)
        train_ds = take(assignment != f)
        enc_train = impute_and_encode(train_ds)
        enc_val = impute_and_encode(val_ds, stats_source=train_ds)
        parts.append((build_states(enc_train), build_states(enc_val)))

    best = None
    best_score = -math.inf
    last_error = None
    for hp in grid.all():
        scores = []
        try:
            for train, val in parts:
                m = fit_model(model_type, train, hp)
                scores.append(auroc_macro(
                    m.action_probabilities_batch(val.states, val.prev_actions,
                                                 val.stages),
                    val.actions,
                ))
        except ValueError as e:
            last_error = e
            log.warning("grid cell %s failed: %s", hp, e)
            continue
        # folds whose validation part has no class with both outcomes leave
        # the AUROC undefined; score on the folds where it is defined
        defined = [s for s in scores if not math.isnan(s)]
        if not defined:
            last_error = HarnessError(
                "validation AUROC undefined in every fold"
            )
            log.warning("grid cell %s failed: %s", hp, last_error)
            continue
        score = float(np.mean(defined))
        if score > best_score:
            best, best_score = hp, score
    if best is None:
        raise HarnessError(
            f"cross-validation failed: every grid cell failed "
            f"(last error: {last_error})"
        )
    return best


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

_K_POLICIES = ("mc", "mc_o", "mc_switch_adj")


def _check_descriptor(desc) -> None:
    """Static descriptor checks; bounds that need K wait for the model."""
    if not isinstance(desc, dict) or "type" not in desc:
        raise HarnessError(f"policy descriptor needs a 'type' key, got {desc!r}")
    t = desc["type"]
    if t not in POLICY_TYPES:
        raise HarnessError(
            f"unknown policy type {t!r}; valid types are {POLICY_TYPES}"
        )
    if t in _K_POLICIES:
        k = desc.get("k")
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise HarnessError(
                f"policy {t!r} needs an integer k >= 1, got {desc.get('k')!r}"
            )
    p1 = desc.get("p1", 0.0)
    if not -1.0 <= float(p1) <= 1.0:
        raise HarnessError(f"p1 must lie in [-1, 1], got {p1!r}")
    eps = desc.get("epsilon", 0.0)
    if float(eps) < 0.0:
        raise HarnessError(f"epsilon must be >= 0, got {eps!r}")


DEFAULT_POLICIES = (
    {"type": "behavior"},
    {"type": "mc", "k": 1},
    {"type": "mc", "k": 2},
    {"type": "mc", "k": 3},
)


@dataclass
class ExperimentConfig:
    """Everything one repeated-split run needs; JSON-round-trippable."""

    dataset: str | None = None
    simulator: object | None = None
    n_repeats: int = 50
    split: SplitSpec = field(default_factory=SplitSpec)
    model: str = "dtbls"
    n_candidates: int = 30
    policies: tuple = DEFAULT_POLICIES
    estimator: str = "wis"
    out_dir: str = "results"
    grid: HyperparamGrid = field(default_factory=HyperparamGrid)
    state_config: StateConfig = field(default_factory=StateConfig)
    seed: int = 0
    # accepted for config-file compatibility with registry-style cohorts that
    # mix auxiliary observation pools; simulated cohorts have none, so any
    # value other than None is refused rather than silently ignored
    aux_fractions: tuple | None = None

    def __post_init__(self):
        if (self.dataset is None) == (self.simulator is None):
            raise HarnessError(
                "configure exactly one dataset source: a file path or a simulator"
            )
        if self.n_repeats < 1:
            raise HarnessError(f"n_repeats must be >= 1, got {self.n_repeats}")
        if self.model not in MODEL_KINDS:
            raise HarnessError(
                f"unknown model type {self.model!r}; valid types are {MODEL_KINDS}"
            )
        if self.estimator not in ESTIMATORS:
            raise HarnessError(
                f"unknown estimator {self.estimator!r}; valid estimators are "
                f"{tuple(ESTIMATORS)}"
            )
        if not self.policies:
            raise HarnessError("at least one policy descriptor is required")
        for desc in self.policies:
            _check_descriptor(desc)
        if self.aux_fractions is not None:
            raise HarnessError(
                "aux_fractions has no effect on simulated or complete cohorts; "
                "leave it unset"
            )

    def to_json(self) -> dict:
        out = {
            "n_repeats": self.n_repeats,
            "split": self.split.to_json(),
            "model": self.model,
            "n_candidates": self.n_candidates,
            "policies": [dict(d) for d in self.policies],
            "estimator": self.estimator,
            "out_dir": self.out_dir,
            "grid": self.grid.to_json(),
            "state_config": self.state_config.to_json(),
            "seed": self.seed,
        }
        if self.dataset is not None:
            out["dataset"] = self.dataset
        else:
            kind = "chronic" if isinstance(self.simulator, ChronicSimConfig) else "episodic"
            out["simulator"] = {"kind": kind, "config": self.simulator.to_json()}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        sim = None
        if "simulator" in obj:
            sim = simulator_config_from_json(obj["simulator"])
        return cls(
            dataset=obj.get("dataset"),
            simulator=sim,
            n_repeats=int(obj.get("n_repeats", 50)),
            split=SplitSpec.from_json(obj.get("split", {})),
            model=obj.get("model", "dtbls"),
            n_candidates=int(obj.get("n_candidates", 30)),
            policies=tuple(obj.get("policies", [dict(d) for d in DEFAULT_POLICIES])),
            estimator=obj.get("estimator", "wis"),
            out_dir=obj.get("out_dir", "results"),
            grid=HyperparamGrid.from_json(obj.get("grid", {})),
            state_config=StateConfig.from_json(obj.get("state_config", {})),
            seed=int(obj.get("seed", 0)),
            aux_fractions=(tuple(obj["aux_fractions"])
                           if obj.get("aux_fractions") is not None else None),
        )


def simulator_config_from_json(obj: dict):
    """Parse {"kind": "chronic"|"episodic", "config": {...}}."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise HarnessError(f"simulator spec needs a 'kind' key, got {obj!r}")
    kind = obj["kind"]
    cfg = obj.get("config", {})
    if kind == "chronic":
        return ChronicSimConfig.from_json(cfg)
    if kind == "episodic":
        return EpisodicSimConfig.from_json(cfg)
    raise HarnessError(f"unknown simulator kind {kind!r}")


@dataclass(frozen=True)
class ReportRow:
    """One (seed, policy) result plus the seed's model quality."""

    seed: int
    model: str
    policy: dict
    value: float
    ess: float
    n: int
    auroc: float
    sce: float

    def __post_init__(self):
        for name in ("value", "ess", "auroc", "sce"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise HarnessError(f"report row field {name} is not finite: {v!r}")


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

ROW_COLUMNS = ("seed", "model", "policy", "k", "p1", "epsilon", "estimator",
               "value", "ess", "n", "auroc", "sce")
SUMMARY_COLUMNS = ("policy", "k", "p1", "epsilon", "estimator", "n_splits",
                   "n_missing_seeds", "value_median", "value_q1", "value_q3",
                   "ess_median", "ess_q1", "ess_q3")


def _desc_fields(desc: dict):
    k = desc.get("k")
    p1 = desc.get("p1")
    eps = desc.get("epsilon")
    return (desc["type"],
            "" if k is None else k,
            "" if p1 is None else repr(float(p1)),
            "" if eps is None else repr(float(eps)))


def _desc_sort_key(desc: dict):
    return (desc["type"], desc.get("k") or 0, float(desc.get("p1") or 0.0),
            float(desc.get("epsilon") or 0.0))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every repeat and write the report files; returns their paths.

    A failing repeat is logged to ``failures.csv`` and excluded from every
    table; the summary counts missing seeds. Repeats are independent
    (per-repeat seeds derive from ``SeedSequence([master, repeat])``), so the
    sequential loop here could be parallelized without changing any output.
    """
    if cfg.dataset is not None:
        raw = load_dataset(cfg.dataset)
    else:
        raw = simulate(cfg.simulator)

    rows: list[ReportRow] = []
    failures: list[tuple] = []
    for r in range(cfg.n_repeats):
        ss = np.random.SeedSequence([cfg.seed, r])
        split_seed, select_seed = (int(x) for x in ss.generate_state(2))
        try:
            rows.extend(_run_repeat(cfg, raw, r, split_seed, select_seed))
        except Exception as e:
            log.warning("seed %d failed: %s", r, e)
            failures.append((r, f"{type(e).__name__}: {e}"))

    os.makedirs(cfg.out_dir, exist_ok=True)
    paths = {name: os.path.join(cfg.out_dir, f"{name}.csv")
             for name in ("rows", "summary", "per_k", "per_p1", "failures")}

    rows.sort(key=lambda row: (row.seed, _desc_sort_key(row.policy)))
    _write_csv(paths["rows"], ROW_COLUMNS, [
        (row.seed, row.model, *_desc_fields(row.policy), cfg.estimator,
         row.value, row.ess, row.n, row.auroc, row.sce)
        for row in rows
    ])

    n_missing = cfg.n_repeats - len({row.seed for row in rows})
    groups: dict[tuple, list[ReportRow]] = {}
    for row in rows:
        groups.setdefault(_desc_sort_key(row.policy), []).append(row)
    summary = []
    for key in sorted(groups):
        grp = groups[key]
        vm, v1, v3 = median_iqr([g.value for g in grp])
        em, e1, e3 = median_iqr([g.ess for g in grp])
        summary.append((*_desc_fields(grp[0].policy), cfg.estimator, len(grp),
                        n_missing, vm, v1, v3, em, e1, e3))
    _write_csv(paths["summary"], SUMMARY_COLUMNS, summary)

    _write_csv(paths["per_k"], SUMMARY_COLUMNS,
               [s for s in summary if s[1] != ""])
    _write_csv(paths["per_p1"], SUMMARY_COLUMNS,
               [s for s in summary if s[2] != ""])
    _write_csv(paths["failures"], ("seed", "reason"), failures)
    return paths


def _run_repeat(cfg: ExperimentConfig, raw: Dataset, repeat: int,
                split_seed: int, select_seed: int) -> list:
    spec = replace(cfg.split, seed=split_seed)
    train_ds, val_ds, test_ds = split_dataset(raw, spec)

    ids = [frozenset(t.id for t in d.trajectories)
           for d in (train_ds, val_ds, test_ds)]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not (ids[i] & ids[j]), "trajectory leaked across partitions"

    train = build_states(impute_and_encode(train_ds), cfg.state_config)
    val = build_states(impute_and_encode(val_ds, stats_source=train_ds),
                       cfg.state_config)
    test = build_states(impute_and_encode(test_ds, stats_source=train_ds),
                        cfg.state_config)

    model = select_model(train, val, cfg.model, cfg.n_candidates, select_seed,
                         cfg.grid)
    test_probs = model.action_probabilities_batch(
        test.states, test.prev_actions, test.stages
    )
    test_auroc = auroc_macro(test_probs, test.actions)
    test_sce = sce(test_probs, test.actions)

    out = []
    for desc in cfg.policies:
        policy = build_policy(desc, model)
        weights = importance_weights(policy, model, test)
        result = ESTIMATORS[cfg.estimator](weights)
        out.append(ReportRow(seed=repeat, model=cfg.model, policy=dict(desc),
                             value=result.value, ess=result.ess, n=result.n,
                             auroc=test_auroc, sce=test_sce))
    return out


# ---------------------------------------------------------------------------
# model bundles
# ---------------------------------------------------------------------------

BUNDLE_VERSION = 1


def save_bundle(path, model, stats, state_config: StateConfig) -> None:
    """Persist a fitted model with everything needed to reuse it on raw data."""
    from .behavior import model_to_json

    payload = {
        "bundle_version": BUNDLE_VERSION,
        "model": model_to_json(model),
        "imputation": stats.to_json(),
        "state_config": state_config.to_json(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(path):
    """Returns (model, imputation stats, state config)."""
    from .behavior import model_from_json
    from .data import ImputationStats

    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("bundle_version")
    if version != BUNDLE_VERSION:
        raise HarnessError(
            f"unsupported bundle version {version!r} (this library reads "
            f"version {BUNDLE_VERSION})"
        )
    return (model_from_json(payload["model"]),
            ImputationStats.from_json(payload["imputation"]),
            StateConfig.from_json(payload["state_config"]))
