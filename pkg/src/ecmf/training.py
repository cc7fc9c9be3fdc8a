"""Training loop, gradient utilities, and k-fold cross-validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import fusion
from .dataset import Dataset, EmotionLabel, LABELS, Sample
from .errors import (
    EmptyDataset,
    InvalidConfig,
    NonFiniteGradient,
    NonFiniteLoss,
)
from .fusion import FusionModel, ModelConfig, init_model, to_feature_arrays
from .metrics import MetricsReport, compute_metrics, weighted_f_score
from .preprocess import NormStats, apply_norm_arrays, fit_norm, make_folds


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    max_epochs: int = 200
    batch_size: int = 32
    grad_clip_norm: float = 1.0     # global L2 cap over all parameters jointly
    patience: int = 30              # consecutive non-improving epochs tolerated;
                                    # 0 stops at the first one
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidConfig(f"learning_rate must be positive, got {self.learning_rate}")
        if self.grad_clip_norm <= 0:
            raise InvalidConfig(f"grad_clip_norm must be positive, got {self.grad_clip_norm}")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("max_epochs and batch_size must be >= 1")
        if self.patience < 0:
            raise InvalidConfig("patience must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidConfig("betas must be in [0, 1)")

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "grad_clip_norm": self.grad_clip_norm,
            "patience": self.patience,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        return TrainConfig(**{k: obj[k] for k in TrainConfig().to_json() if k in obj})


def cross_entropy(logits, gold: EmotionLabel | int) -> float:
    """−log softmax(logits)[gold] for one sample, log-sum-exp stabilized."""
    z = np.asarray(getattr(logits, "data", logits), dtype=np.float64).reshape(-1)
    idx = gold.index if isinstance(gold, EmotionLabel) else int(gold)
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()) - z[idx])


def dataset_to_arrays(
    dataset: Dataset | Sequence[Sample], schema=None
) -> tuple[dict[str, np.ndarray], np.ndarray, list[str]]:
    """Stack a labeled dataset into ({stream: (n, dim)}, gold indices, ids)."""
    if isinstance(dataset, Dataset):
        schema = dataset.schema
        samples = list(dataset.labeled_samples())
    else:
        samples = [s for s in dataset if s.labeled]
        if schema is None:
            raise InvalidConfig("schema required when passing a raw sample sequence")
    if not samples:
        raise EmptyDataset("no labeled samples")
    features = to_feature_arrays(samples, schema)
    gold = np.array([s.gold_label.index for s in samples], dtype=np.int64)
    return features, gold, [s.sample_id for s in samples]


def loss_and_gradients(
    model: FusionModel,
    features: Mapping[str, np.ndarray],
    gold_idx: np.ndarray,
    train_mode: bool = True,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every parameter.

    Parameters the active forward graph never touches (disabled modal tokens or
    residual branches) come back with exactly-zero gradients.
    """
    params = {k: ad.Tensor(v, requires_grad=True) for k, v in model.params.items()}
    logits = fusion.build_logits(params, model.config, features, train_mode, rng)
    loss = ad.cross_entropy_with_logits(logits, gold_idx)
    loss.backward()
    grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in params.items()
    }
    return float(loss.data), grads


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(
    grads: dict[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Jointly rescale all gradients so their global L2 norm is at most max_norm;
    gradients already within the cap pass through untouched (exact identity)."""
    norm = global_grad_norm(grads)
    if not math.isfinite(norm):
        raise NonFiniteGradient("gradient norm is not finite")
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def for_model(model: FusionModel) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p) for k, p in model.params.items()},
            v={k: np.zeros_like(p) for k, p in model.params.items()},
        )


def adam_step(
    model: FusionModel,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for k in sorted(model.params):
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / bias1
        v_hat = state.v[k] / bias2
        model.params[k] = model.params[k] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass(frozen=True)
class TrainReport:
    epochs_run: int
    best_epoch: int
    best_val_waf: float | None
    train_losses: tuple[float, ...]
    val_wafs: tuple[float, ...]
    stopped_early: bool
    val_metrics: MetricsReport | None = None

    def to_json(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_waf": self.best_val_waf,
            "train_losses": list(self.train_losses),
            "val_wafs": list(self.val_wafs),
            "stopped_early": self.stopped_early,
            "val_metrics": self.val_metrics.to_json() if self.val_metrics is not None else None,
        }


@dataclass
class TrainedModel:
    """A fitted model together with the normalization fitted on its train split."""

    model: FusionModel
    norm_stats: NormStats | None

    def _prep(self, samples: Sequence[Sample]) -> dict[str, np.ndarray]:
        feats = to_feature_arrays(samples, self.model.config.schema)
        if self.norm_stats is not None:
            feats = apply_norm_arrays(feats, self.norm_stats)
        return feats

    def predict_proba(self, samples: Sequence[Sample]) -> np.ndarray:
        """(n, 6) softmax probabilities, eval mode."""
        if not samples:
            return np.zeros((0, len(LABELS)))
        logits = fusion.forward_batch(self.model, self._prep(samples))
        return fusion.np_softmax(logits, axis=-1)

    def predict_many(self, samples: Sequence[Sample]) -> list[EmotionLabel]:
        probs = self.predict_proba(samples)
        return [LABELS[int(i)] for i in np.argmax(probs, axis=-1)]

    def predict_sample(self, sample: Sample) -> tuple[EmotionLabel, np.ndarray]:
        probs = self.predict_proba([sample])[0]
        return LABELS[int(np.argmax(probs))], probs

    def predict_labels(self, dataset: Dataset) -> dict[str, EmotionLabel]:
        samples = list(dataset)
        return dict(zip((s.sample_id for s in samples), self.predict_many(samples)))


def evaluate(trained: TrainedModel, dataset: Dataset | Sequence[Sample]) -> MetricsReport:
    """Metrics over the labeled portion of a dataset."""
    samples = (
        list(dataset.labeled_samples()) if isinstance(dataset, Dataset)
        else [s for s in dataset if s.labeled]
    )
    if not samples:
        raise EmptyDataset("nothing labeled to evaluate")
    preds = trained.predict_many(samples)
    return compute_metrics([s.gold_label for s in samples], preds)


def _batch_slices(n: int, batch_size: int) -> Iterable[slice]:
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def _labeled(data: Dataset | Sequence[Sample]) -> list[Sample]:
    if isinstance(data, Dataset):
        return list(data.labeled_samples())
    return [s for s in data if s.labeled]


def train_one(
    train_data: Dataset | Sequence[Sample],
    val_data: Dataset | Sequence[Sample] | None,
    model: FusionModel | ModelConfig,
    train_config: TrainConfig,
) -> tuple[TrainedModel, TrainReport]:
    """Fit one model: standardize on the train split (when the config says so),
    minibatch Adam with global gradient clipping, per-epoch validation WAF in
    eval mode, early stopping after `patience` consecutive non-improving
    epochs, and restoration of the best-validation parameters at the end.

    Accepts either a ready FusionModel (trained in place) or a ModelConfig
    (a fresh model is initialized from its seed).
    """
    if isinstance(model, ModelConfig):
        model = init_model(model)
    config = model.config
    schema = config.schema

    train_samples = _labeled(train_data)
    if not train_samples:
        raise EmptyDataset("no labeled training samples")
    val_samples = _labeled(val_data) if val_data is not None else []

    stats = fit_norm(train_samples, schema) if config.enable_norm else None
    X = to_feature_arrays(train_samples, schema)
    if stats is not None:
        X = apply_norm_arrays(X, stats)
    y = np.array([s.gold_label.index for s in train_samples], dtype=np.int64)
    n = len(train_samples)

    Xv = yv = None
    if val_samples:
        Xv = to_feature_arrays(val_samples, schema)
        if stats is not None:
            Xv = apply_norm_arrays(Xv, stats)
        yv = [s.gold_label for s in val_samples]

    adam = AdamState.for_model(model)
    rng = np.random.default_rng(train_config.seed)

    best_params = model.copy_params()
    best_epoch = 0
    best_val = -1.0
    bad_epochs = 0
    losses: list[float] = []
    val_wafs: list[float] = []
    stopped_early = False

    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for sl in _batch_slices(n, train_config.batch_size):
            idx = order[sl]
            batch = {name: arr[idx] for name, arr in X.items()}
            loss, grads = loss_and_gradients(model, batch, y[idx], train_mode=True, rng=rng)
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch)
            grads, _ = clip_gradients(grads, train_config.grad_clip_norm)
            adam_step(model, grads, adam, train_config)
            epoch_loss += loss * len(idx)
        losses.append(epoch_loss / n)

        if Xv is not None:
            logits = fusion.forward_batch(model, Xv)
            preds = [LABELS[int(i)] for i in np.argmax(logits, axis=-1)]
            waf = weighted_f_score(yv, preds)
            val_wafs.append(waf)
            if waf > best_val:
                best_val = waf
                best_epoch = epoch
                best_params = model.copy_params()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs > train_config.patience:
                    stopped_early = True
                    break
        else:
            best_epoch = epoch

    if Xv is not None:
        model.load_params(best_params)

    trained = TrainedModel(model, stats)
    val_metrics = evaluate(trained, val_samples) if val_samples else None
    report = TrainReport(
        epochs_run=len(losses),
        best_epoch=best_epoch,
        best_val_waf=best_val if Xv is not None else None,
        train_losses=tuple(losses),
        val_wafs=tuple(val_wafs),
        stopped_early=stopped_early,
        val_metrics=val_metrics,
    )
    return trained, report


@dataclass(frozen=True)
class CvReport:
    """k-fold result: the headline number is the mean over folds of each
    fold's best validation WAF."""

    k: int
    fold_wafs: tuple[float, ...]
    mean_waf: float
    std_waf: float
    per_fold: tuple[MetricsReport, ...]
    train_reports: tuple[TrainReport, ...]
    model_config: ModelConfig
    train_config: TrainConfig

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "fold_wafs": list(self.fold_wafs),
            "mean_waf": self.mean_waf,
            "std_waf": self.std_waf,
            "per_fold": [m.to_json() for m in self.per_fold],
            "train": [
                {
                    "epochs_run": r.epochs_run,
                    "best_epoch": r.best_epoch,
                    "best_val_waf": r.best_val_waf,
                    "stopped_early": r.stopped_early,
                }
                for r in self.train_reports
            ],
            "model_config": self.model_config.to_json(),
            "train_config": self.train_config.to_json(),
        }


def run_cv(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    k: int = 5,
) -> CvReport:
    """Stratified k-fold cross-validation: fold i trains on the other folds,
    validates on fold i, and contributes its best validation WAF; the mean of
    those bests is the headline metric. Both seeds are offset by the fold
    index so folds are independent draws, and each fold's normalization is
    fitted on its own training portion only."""
    labeled = dataset.labeled_samples()
    if not labeled:
        raise EmptyDataset("cross-validation needs labeled samples")
    split = make_folds(labeled, k, seed=train_config.seed)
    by_id = {s.sample_id: s for s in labeled}

    fold_reports: list[TrainReport] = []
    for fold in range(k):
        val_ids = split.ids_in_fold(fold)
        train_ids = split.ids_not_in_fold(fold)
        mc = replace(model_config, seed=model_config.seed + fold)
        tc = replace(train_config, seed=train_config.seed + fold)
        _, report = train_one(
            [by_id[i] for i in train_ids], [by_id[i] for i in val_ids], mc, tc
        )
        fold_reports.append(report)

    wafs = tuple(r.best_val_waf for r in fold_reports)
    return CvReport(
        k=k,
        fold_wafs=wafs,
        mean_waf=float(np.mean(wafs)),
        std_waf=float(np.std(wafs)),
        per_fold=tuple(r.val_metrics for r in fold_reports),
        train_reports=tuple(fold_reports),
        model_config=model_config,
        train_config=train_config,
    )
