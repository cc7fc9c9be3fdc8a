"""Ensembling over seed replicas and architecture-ablation variants.

Hard (plurality) voting is the default; vote ties fall back to the summed
softmax probability of the tied classes, and an exact tie there goes to
the lower class index. Soft voting (summed probability) sits behind a
flag. Member probability matrices are accumulated in a canonical byte
order so predictions are invariant to the ordering of the members.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset, EmotionLabel, LABELS, NUM_CLASSES, Sample
from .errors import DuplicateVariant, EmptyInput, InvalidConfig
from .fusion import ModelConfig
from .metrics import MetricsReport, compute_metrics
from .training import TrainConfig, TrainedModel, TrainReport, train_one

ABLATION_FLAGS = ("modal_token", "residual_mlp", "norm")


@dataclass(frozen=True)
class VariantSpec:
    variant_id: str
    model_config: ModelConfig
    train_config: TrainConfig


@dataclass
class TrainedVariant:
    spec: VariantSpec
    trained: TrainedModel
    report: TrainReport


def _flags_off(config: ModelConfig, flags: Sequence[str]) -> ModelConfig:
    for flag in flags:
        if flag not in ABLATION_FLAGS:
            raise InvalidConfig(f"unknown ablation flag {flag!r}; expected one of {ABLATION_FLAGS}")
        config = replace(config, **{f"enable_{flag}": False})
    return config


def _as_flag_set(entry) -> tuple[str, ...]:
    if isinstance(entry, str):
        return (entry,)
    return tuple(entry)


def make_variants(
    model_config: ModelConfig,
    train_config: TrainConfig,
    n_seed_variants: int = 3,
    ablations: Sequence = ABLATION_FLAGS,
    seed: int | None = None,
) -> list[VariantSpec]:
    """Seed replicas of the base config plus one variant per ablation flag-set
    (an entry may be a single flag name or a collection of them), each with its
    own deterministically derived seed."""
    if n_seed_variants < 0:
        raise InvalidConfig("n_seed_variants must be >= 0")
    flag_sets = [_as_flag_set(e) for e in ablations]
    if n_seed_variants == 0 and not flag_sets:
        raise InvalidConfig("an ensemble needs at least one variant")
    root = model_config.seed if seed is None else seed
    children = np.random.SeedSequence(root).spawn(n_seed_variants + len(flag_sets))
    child_seeds = [int(c.generate_state(1)[0]) for c in children]

    variants: list[VariantSpec] = []
    ids: set[str] = set()

    def add(variant_id: str, mc: ModelConfig, sd: int) -> None:
        if variant_id in ids:
            raise DuplicateVariant(variant_id)
        ids.add(variant_id)
        variants.append(
            VariantSpec(variant_id, replace(mc, seed=sd), replace(train_config, seed=sd))
        )

    for i in range(n_seed_variants):
        add(f"seed_{i}", model_config, child_seeds[i])
    for j, flags in enumerate(flag_sets):
        add("no_" + "+".join(flags), _flags_off(model_config, flags), child_seeds[n_seed_variants + j])
    return variants


def random_ablation_subsets(
    n: int, seed: int, flags: Sequence[str] = ABLATION_FLAGS
) -> list[tuple[str, ...]]:
    """Draw n distinct non-empty flag subsets, seed-deterministic — the
    "randomly remove certain modules" reading of variant construction."""
    flags = tuple(flags)
    all_subsets = [
        tuple(f for i, f in enumerate(flags) if mask >> i & 1)
        for mask in range(1, 1 << len(flags))
    ]
    if n > len(all_subsets):
        raise InvalidConfig(f"only {len(all_subsets)} non-empty subsets of {flags} exist")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(all_subsets), size=n, replace=False)
    return [all_subsets[int(i)] for i in picked]


def train_variants(
    variants: Sequence[VariantSpec],
    train_data: Dataset | Sequence[Sample],
    val_data: Dataset | Sequence[Sample] | None,
) -> list[TrainedVariant]:
    out = []
    for spec in variants:
        trained, report = train_one(train_data, val_data, spec.model_config, spec.train_config)
        out.append(TrainedVariant(spec, trained, report))
    return out


def _member_probs(
    members: Sequence[TrainedModel], samples: Sequence[Sample]
) -> list[np.ndarray]:
    if not members:
        raise EmptyInput("ensemble needs at least one member")
    probs = [m.predict_proba(samples) for m in members]
    # Canonical accumulation order: float sums must not depend on member order.
    probs.sort(key=lambda a: a.tobytes())
    return probs


def _vote(probs: list[np.ndarray], voting: str) -> tuple[list[int], np.ndarray]:
    """Per-sample winning class indices plus the (n, 6) vote tally."""
    n = probs[0].shape[0]
    prob_sum = np.zeros((n, NUM_CLASSES))
    counts = np.zeros((n, NUM_CLASSES), dtype=np.int64)
    for p in probs:
        prob_sum += p
        counts[np.arange(n), np.argmax(p, axis=-1)] += 1

    if voting == "soft":
        return [int(i) for i in np.argmax(prob_sum, axis=-1)], counts

    picks: list[int] = []
    for i in range(n):
        row = counts[i]
        tied = np.flatnonzero(row == row.max())
        if len(tied) == 1:
            picks.append(int(tied[0]))
        else:
            picks.append(int(tied[int(np.argmax(prob_sum[i, tied]))]))
    return picks, counts


def ensemble_predict_many(
    members: Sequence[TrainedModel],
    samples: Sequence[Sample],
    voting: str = "hard",
) -> list[EmotionLabel]:
    if voting not in ("hard", "soft"):
        raise InvalidConfig(f"voting must be 'hard' or 'soft', got {voting!r}")
    samples = list(samples)
    if not samples:
        return []
    picks, _ = _vote(_member_probs(members, samples), voting)
    return [LABELS[i] for i in picks]


def ensemble_predict(
    members: Sequence[TrainedModel], sample: Sample
) -> tuple[EmotionLabel, dict[str, int]]:
    """Vote one sample: the plurality label (confidence, then class-index
    tie-broken) plus the tally of votes each label received."""
    picks, counts = _vote(_member_probs(members, [sample]), "hard")
    tally = {
        LABELS[c].value: int(counts[0, c]) for c in range(NUM_CLASSES) if counts[0, c] > 0
    }
    return LABELS[picks[0]], tally


def ensemble_metrics(
    members: Sequence[TrainedModel],
    dataset: Dataset | Sequence[Sample],
    voting: str = "hard",
) -> tuple[MetricsReport, list[float]]:
    """Ensemble metrics on the labeled samples plus each member's own WAF."""
    samples = (
        list(dataset.labeled_samples()) if isinstance(dataset, Dataset)
        else [s for s in dataset if s.labeled]
    )
    if not samples:
        raise EmptyInput("no labeled samples to score the ensemble on")
    golds = [s.gold_label for s in samples]
    report = compute_metrics(golds, ensemble_predict_many(members, samples, voting))
    individual = [
        compute_metrics(golds, m.predict_many(samples)).waf for m in members
    ]
    return report, individual
