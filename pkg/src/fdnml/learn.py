"""Contrastive two-branch encoders and a fatigue-level classifier.

Each sample pairs a raw window (channels x samples) with its feature vector.
Two small 1-D CNNs map the pair to embeddings that a symmetric NT-Xent loss
pulls together; a convolutional head over the concatenated embeddings then
predicts the level.  Cross-validation pretrains inside each training fold so
held-out samples never shape the encoders.
"""

from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
from sklearn.model_selection import StratifiedGroupKFold, StratifiedKFold, train_test_split
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, DataError, NumericalError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "fdnml-checkpoint/1"


@dataclass
class EncoderConfig:
    embedding_dim: int = 32
    raw_widths: tuple = (8, 16)
    raw_kernels: tuple = (7, 5)
    feature_widths: tuple = (8, 16)
    feature_kernels: tuple = (5, 3)
    head_widths: tuple = (8, 16)
    head_kernel: int = 3
    dropout: float = 0.3
    batch_norm: bool = True

    def __post_init__(self):
        if self.embedding_dim < 8:
            raise ConfigError(f"embedding_dim must be >= 8, got {self.embedding_dim}")
        if len(self.raw_widths) != len(self.raw_kernels):
            raise ConfigError("raw_widths and raw_kernels differ in length")
        if len(self.feature_widths) != len(self.feature_kernels):
            raise ConfigError("feature_widths and feature_kernels differ in length")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class TrainConfig:
    temperature: float = 0.2
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 32
    pretrain_epochs: int = 100
    epochs: int = 300
    patience: int = 20
    lr_factor: float = 0.5
    lr_patience: int = 10
    val_fraction: float = 0.2
    fine_tune: bool = True
    folds: int = 5
    unit: str = "window"
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.folds < 2:
            raise ConfigError(f"need at least 2 folds, got {self.folds}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.unit not in ("window", "trial"):
            raise ConfigError(f"evaluation unit must be 'window' or 'trial', got {self.unit!r}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")


def _conv_stack(in_ch: int, widths, kernels, batch_norm: bool) -> nn.Sequential:
    layers = []
    for w, k in zip(widths, kernels):
        layers.append(nn.Conv1d(in_ch, w, k, padding=k // 2))
        if batch_norm:
            layers.append(nn.BatchNorm1d(w))
        layers.append(nn.ReLU())
        in_ch = w
    return nn.Sequential(*layers)


class RawEncoder(nn.Module):
    """Conv stack over (channels, samples), global average pool, linear to k."""

    def __init__(self, n_channels: int, cfg: EncoderConfig):
        super().__init__()
        self.n_channels = n_channels
        self.convs = _conv_stack(n_channels, cfg.raw_widths, cfg.raw_kernels, cfg.batch_norm)
        self.final = nn.Linear(cfg.raw_widths[-1], cfg.embedding_dim)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.n_channels:
            raise DataError(f"raw encoder expects (N, {self.n_channels}, L), got {tuple(x.shape)}")
        return self.final(self.convs(x).mean(dim=2))


class FeatureEncoder(nn.Module):
    """Conv stack over the feature vector read as a 1-channel sequence."""

    def __init__(self, n_features: int, cfg: EncoderConfig):
        super().__init__()
        self.n_features = n_features
        self.convs = _conv_stack(1, cfg.feature_widths, cfg.feature_kernels, cfg.batch_norm)
        self.final = nn.Linear(cfg.feature_widths[-1], cfg.embedding_dim)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DataError(f"feature encoder expects (N, {self.n_features}), got {tuple(x.shape)}")
        return self.final(self.convs(x[:, None, :]).mean(dim=2))


class Classifier(nn.Module):
    """Both encoders, then two convolutions over the joint embedding and a dense layer.

    ``forward`` returns logits; :meth:`predict_proba` applies the softmax.
    """

    def __init__(self, raw: RawEncoder, feat: FeatureEncoder, cfg: EncoderConfig,
                 n_classes: int = 3):
        super().__init__()
        self.raw = raw
        self.feat = feat
        k2 = 2 * cfg.embedding_dim
        self.head = _conv_stack(1, cfg.head_widths, (cfg.head_kernel,) * len(cfg.head_widths),
                                cfg.batch_norm)
        self.dropout = nn.Dropout(cfg.dropout)
        self.dense = nn.Linear(cfg.head_widths[-1] * k2, n_classes)

    def forward(self, xr, xf):
        z = torch.cat([self.raw(xr), self.feat(xf)], dim=1)
        h = self.head(z[:, None, :]).flatten(1)
        return self.dense(self.dropout(h))

    @torch.no_grad()
    def predict_proba(self, xr, xf) -> np.ndarray:
        self.eval()
        return torch.softmax(self(_tensor(xr), _tensor(xf)), dim=1).double().numpy()


def count_parameters(*modules: nn.Module) -> int:
    seen, total = set(), 0
    for m in modules:
        for p in m.parameters():
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                total += p.numel()
    return total


def _tensor(x, dtype=torch.float32):
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


@torch.no_grad()
def encode(x, encoder: nn.Module) -> np.ndarray:
    """Embeddings of ``x`` in eval mode (no normalisation)."""
    encoder.eval()
    return encoder(_tensor(x)).double().numpy()


def contrastive_loss(z_r: torch.Tensor, z_f: torch.Tensor, temperature: float = 0.2,
                     eps: float = 1e-12) -> torch.Tensor:
    """Symmetric NT-Xent over in-batch pairs.

    Row ``i`` of ``z_r`` and ``z_f`` form the positive pair; every other row
    of the opposite branch is a negative.  Per anchor the loss is
    ``-log(exp(s_ii / t) / sum_j exp(s_ij / t))`` on cosine similarities, and
    the two directions are averaged.
    """
    if z_r.shape != z_f.shape or z_r.ndim != 2:
        raise DataError(f"embedding shapes differ: {tuple(z_r.shape)} vs {tuple(z_f.shape)}")
    if z_r.shape[0] < 2:
        raise DataError("contrastive loss needs at least 2 pairs")
    if not temperature > 0:
        raise DataError(f"temperature must be positive, got {temperature}")
    nr = z_r.norm(dim=1, keepdim=True)
    nf = z_f.norm(dim=1, keepdim=True)
    if bool((nr < eps).any() or (nf < eps).any()):
        warnings.warn("zero-norm embedding in contrastive batch", RuntimeWarning, stacklevel=2)
    sim = (z_r / nr.clamp_min(eps)) @ (z_f / nf.clamp_min(eps)).T / temperature
    target = torch.arange(sim.shape[0])
    return 0.5 * (F.cross_entropy(sim, target) + F.cross_entropy(sim.T, target))


@dataclass
class Standardizer:
    """Per-channel (raw) and per-feature z-scoring fitted on training data."""

    raw_mean: np.ndarray
    raw_std: np.ndarray
    feat_mean: np.ndarray
    feat_std: np.ndarray

    @classmethod
    def fit(cls, raw: np.ndarray, feats: np.ndarray) -> "Standardizer":
        rs = raw.std(axis=(0, 2))
        fs = feats.std(axis=0)
        return cls(raw.mean(axis=(0, 2)), np.where(rs > 0, rs, 1.0),
                   feats.mean(axis=0), np.where(fs > 0, fs, 1.0))

    def raw(self, x):
        return (x - self.raw_mean[None, :, None]) / self.raw_std[None, :, None]

    def features(self, x):
        return (x - self.feat_mean) / self.feat_std

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


def _generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def _batches(n: int, batch_size: int, gen: torch.Generator, shuffle: bool = True):
    order = torch.randperm(n, generator=gen) if shuffle else torch.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if idx.numel() >= 2:  # batch norm and the contrastive loss need two rows
            yield idx


@dataclass
class PretrainResult:
    raw: RawEncoder
    feat: FeatureEncoder
    train_loss: list
    val_loss: list
    best_epoch: int


def _contrastive_eval(raw, feat, xr, xf, batch_size, temperature) -> float:
    raw.eval()
    feat.eval()
    losses, sizes = [], []
    with torch.no_grad():
        for idx in _batches(len(xr), batch_size, None, shuffle=False):
            losses.append(float(contrastive_loss(raw(xr[idx]), feat(xf[idx]), temperature)))
            sizes.append(len(idx))
    return float(np.average(losses, weights=sizes))


def pretrain(raw_windows, features, cfg: TrainConfig, enc_cfg: EncoderConfig | None = None,
             val=None, epochs: int | None = None) -> PretrainResult:
    """Fit both encoders with the contrastive loss.

    Args:
        raw_windows: Array (N, channels, L), already standardised.
        features: Array (N, F), already standardised.
        cfg: Training options (temperature, optimiser, batch size, seed).
        val: Optional ``(raw, features)`` pair scored after every epoch; the
            encoders with the lowest validation loss are returned.
        epochs: Overrides ``cfg.pretrain_epochs``.
    """
    enc_cfg = enc_cfg or EncoderConfig()
    xr, xf = _tensor(raw_windows), _tensor(features)
    if len(xr) != len(xf):
        raise DataError(f"{len(xr)} raw windows for {len(xf)} feature vectors")
    if len(xr) < 2 * cfg.batch_size:
        raise DataError(f"pretraining needs >= {2 * cfg.batch_size} pairs, got {len(xr)}")
    torch.manual_seed(cfg.seed)
    raw = RawEncoder(xr.shape[1], enc_cfg)
    feat = FeatureEncoder(xf.shape[1], enc_cfg)
    params = list(raw.parameters()) + list(feat.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    gen = _generator(cfg.seed)
    if val is not None:
        vr, vf = _tensor(val[0]), _tensor(val[1])
    train_curve, val_curve = [], []
    best = (np.inf, 0, None)
    for epoch in range(epochs if epochs is not None else cfg.pretrain_epochs):
        raw.train()
        feat.train()
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(xr), cfg.batch_size, gen)):
            loss = contrastive_loss(raw(xr[idx]), feat(xf[idx]), cfg.temperature)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite contrastive loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        train_curve.append(total / count)
        score = train_curve[-1]
        if val is not None:
            score = _contrastive_eval(raw, feat, vr, vf, cfg.batch_size, cfg.temperature)
            val_curve.append(score)
        if score < best[0]:
            best = (score, epoch, (copy.deepcopy(raw.state_dict()), copy.deepcopy(feat.state_dict())))
    raw.load_state_dict(best[2][0])
    feat.load_state_dict(best[2][1])
    return PretrainResult(raw, feat, train_curve, val_curve, best[1])


@dataclass
class ClassifierResult:
    model: Classifier
    train_loss: list
    val_loss: list
    val_accuracy: list
    best_epoch: int


def train_classifier(raw: RawEncoder, feat: FeatureEncoder, raw_windows, features, labels,
                     cfg: TrainConfig, enc_cfg: EncoderConfig | None = None, val=None,
                     n_classes: int = 3) -> ClassifierResult:
    """Cross-entropy training of the head (and, if ``cfg.fine_tune``, the encoders).

    Early stopping watches the validation loss when ``val = (raw, feats,
    labels)`` is given, otherwise the training loss.
    """
    enc_cfg = enc_cfg or EncoderConfig()
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    present = np.unique(y.numpy())
    if present.size < n_classes:
        raise DataError(f"training split holds classes {present.tolist()}; need all {n_classes}")
    xr, xf = _tensor(raw_windows), _tensor(features)
    torch.manual_seed(cfg.seed + 1)
    model = Classifier(raw, feat, enc_cfg, n_classes)
    if not cfg.fine_tune:
        for p in list(raw.parameters()) + list(feat.parameters()):
            p.requires_grad_(False)
    opt = torch.optim.AdamW([p for p in model.parameters() if p.requires_grad],
                            lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, factor=cfg.lr_factor,
                                                       patience=cfg.lr_patience)
    gen = _generator(cfg.seed + 2)
    if val is not None:
        vr, vf = _tensor(val[0]), _tensor(val[1])
        vy = torch.as_tensor(np.asarray(val[2]), dtype=torch.long)
    train_curve, val_curve, val_acc = [], [], []
    best = (np.inf, 0, copy.deepcopy(model.state_dict()))
    for epoch in range(cfg.epochs):
        model.train()
        if not cfg.fine_tune:
            raw.eval()
            feat.eval()
        total, count = 0.0, 0
        for idx in _batches(len(y), cfg.batch_size, gen):
            loss = F.cross_entropy(model(xr[idx], xf[idx]), y[idx])
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite classification loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        train_curve.append(total / count)
        score = train_curve[-1]
        if val is not None:
            model.eval()
            with torch.no_grad():
                logits = model(vr, vf)
                score = float(F.cross_entropy(logits, vy))
                val_acc.append(float((logits.argmax(1) == vy).float().mean()))
            val_curve.append(score)
        sched.step(score)
        if score < best[0]:
            best = (score, epoch, copy.deepcopy(model.state_dict()))
        elif epoch - best[1] >= cfg.patience:
            break
    model.load_state_dict(best[2])
    model.eval()
    return ClassifierResult(model, train_curve, val_curve, val_acc, best[1])


# ---------------------------------------------------------------- metrics


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def binary_auroc(scores, positive) -> float:
    """Area under the ROC curve by trapezoidal integration over score thresholds.

    Tied scores move the curve diagonally, which is what gives ties half
    credit.  Returns NaN when one of the two classes is absent.
    """
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positive[order]
    last_of_tie = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.r_[0, np.cumsum(p)[last_of_tie]] / n_pos
    fp = np.r_[0, np.cumsum(~p)[last_of_tie]] / n_neg
    return float(np.sum(np.diff(fp) * (tp[1:] + tp[:-1]) / 2))


def metrics(confusion, scores=None, labels=None) -> dict:
    """Per-class precision, sensitivity, specificity, F1 and macro averages.

    A ratio with an empty denominator is reported as ``None`` and named in
    ``undefined`` rather than counted as zero; macro averages skip it.
    """
    cm = np.asarray(confusion, dtype=float)
    k = cm.shape[0]
    if cm.shape != (k, k):
        raise DataError(f"confusion matrix must be square, got {cm.shape}")
    total = cm.sum()
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return None
        return float(num / den)

    per_class = {}
    for c in range(k):
        tp = cm[c, c]
        fn = cm[c].sum() - tp
        fp = cm[:, c].sum() - tp
        tn = total - tp - fn - fp
        prec = ratio(tp, tp + fp, f"precision[{c}]")
        sens = ratio(tp, tp + fn, f"sensitivity[{c}]")
        spec = ratio(tn, tn + fp, f"specificity[{c}]")
        if prec is None or sens is None:
            f1 = None
        else:
            f1 = ratio(2 * prec * sens, prec + sens, f"f1[{c}]")
        per_class[c] = {"precision": prec, "sensitivity": sens, "specificity": spec, "f1": f1,
                        "support": int(cm[c].sum())}

    def macro(key):
        vals = [m[key] for m in per_class.values() if m[key] is not None]
        return float(np.mean(vals)) if vals else None

    out = {
        "accuracy": float(np.trace(cm) / total) if total else None,
        "per_class": per_class,
        "macro": {key: macro(key) for key in ("precision", "sensitivity", "specificity", "f1")},
        "confusion": cm.astype(int).tolist(),
        "undefined": undefined,
    }
    if scores is not None and labels is not None:
        scores = np.asarray(scores, dtype=float)
        labels = np.asarray(labels, dtype=int)
        aucs = [binary_auroc(scores[:, c], labels == c) for c in range(k)]
        out["auroc_per_class"] = aucs
        finite = [a for a in aucs if np.isfinite(a)]
        out["auroc"] = float(np.mean(finite)) if finite else None
    return out


# ---------------------------------------------------------- cross-validation


@dataclass
class LearnDataset:
    """Aligned raw windows, feature vectors, labels and trial ids."""

    raw: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.raw) == len(self.features) == len(self.groups) == n):
            raise DataError("raw windows, features, labels and groups differ in length")
        if n == 0:
            raise DataError("empty dataset")
        self.labels = np.asarray(self.labels, dtype=int)
        self.groups = np.asarray(self.groups).astype(str)

    def __len__(self):
        return len(self.labels)

    def unit_labels(self, unit: str) -> np.ndarray:
        if unit == "window":
            return self.labels
        _, first = np.unique(self.groups, return_index=True)
        return self.labels[np.sort(first)]


@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    accuracy: float
    auroc: float | None
    metrics: dict
    curves: dict = field(default_factory=dict)


@dataclass
class FoldReport:
    folds: list
    unit: str
    model: str = "fdnml"
    n_parameters: int | None = None

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.accuracy for f in self.folds])

    @property
    def aurocs(self) -> np.ndarray:
        return np.array([np.nan if f.auroc is None else f.auroc for f in self.folds])

    def confusion(self) -> np.ndarray:
        return np.sum([np.asarray(f.metrics["confusion"]) for f in self.folds], axis=0)

    def summary(self) -> dict:
        acc, auc = self.accuracies, self.aurocs
        pooled = metrics(self.confusion())
        return {
            "accuracy_mean": float(acc.mean()), "accuracy_sd": float(acc.std(ddof=1)) if acc.size > 1 else 0.0,
            "auroc_mean": float(np.nanmean(auc)) if np.isfinite(auc).any() else None,
            "auroc_sd": float(np.nanstd(auc, ddof=1)) if np.isfinite(auc).sum() > 1 else None,
            "pooled": pooled,
        }

    def to_dict(self) -> dict:
        return {
            "model": self.model, "unit": self.unit, "n_parameters": self.n_parameters,
            "summary": self.summary(),
            "folds": [asdict(f) for f in self.folds],
        }


def fold_splits(ds: LearnDataset, cfg: TrainConfig):
    """Stratified ``(train_idx, test_idx)`` window indices per fold.

    Window mode stratifies windows; trial mode keeps each trial's windows
    together and stratifies trials.
    """
    units = ds.unit_labels(cfg.unit)
    counts = np.bincount(units)
    if (counts[counts > 0] < cfg.folds).any():
        raise DataError(f"per-class {cfg.unit} counts {counts.tolist()} below folds={cfg.folds}")
    if cfg.unit == "window":
        splitter = StratifiedKFold(cfg.folds, shuffle=True, random_state=cfg.seed)
        return list(splitter.split(np.zeros(len(ds)), ds.labels))
    splitter = StratifiedGroupKFold(cfg.folds, shuffle=True, random_state=cfg.seed)
    return list(splitter.split(np.zeros(len(ds)), ds.labels, ds.groups))


def _unit_scores(ds: LearnDataset, idx, proba, unit: str):
    """Scores and labels at the evaluation unit (window, or trial-averaged)."""
    if unit == "window":
        return proba, ds.labels[idx]
    groups = ds.groups[idx]
    keys = list(dict.fromkeys(groups))
    scores = np.stack([proba[groups == g].mean(axis=0) for g in keys])
    labels = np.array([ds.labels[idx][groups == g][0] for g in keys])
    return scores, labels


def _fit_fold(ds: LearnDataset, train_idx, cfg: TrainConfig, enc_cfg: EncoderConfig, seed: int):
    strat = ds.labels[train_idx]
    fit_idx, val_idx = train_test_split(train_idx, test_size=cfg.val_fraction,
                                        stratify=strat, random_state=seed)
    fit_idx, val_idx = np.sort(fit_idx), np.sort(val_idx)
    std = Standardizer.fit(ds.raw[fit_idx], ds.features[fit_idx])
    fr, ff = std.raw(ds.raw[fit_idx]), std.features(ds.features[fit_idx])
    vr, vf = std.raw(ds.raw[val_idx]), std.features(ds.features[val_idx])
    fold_cfg = replace(cfg, seed=seed)
    pre = pretrain(fr, ff, fold_cfg, enc_cfg, val=(vr, vf))
    clf = train_classifier(pre.raw, pre.feat, fr, ff, ds.labels[fit_idx], fold_cfg, enc_cfg,
                           val=(vr, vf, ds.labels[val_idx]))
    curves = {"pretrain_train": pre.train_loss, "pretrain_val": pre.val_loss,
              "train_loss": clf.train_loss, "val_loss": clf.val_loss,
              "val_accuracy": clf.val_accuracy}
    return clf.model, std, curves


def crossvalidate(ds: LearnDataset, cfg: TrainConfig | None = None,
                  enc_cfg: EncoderConfig | None = None, n_classes: int = 3) -> FoldReport:
    """Stratified k-fold evaluation with per-fold pretraining and classification."""
    cfg = cfg or TrainConfig()
    enc_cfg = enc_cfg or EncoderConfig()
    splits = fold_splits(ds, cfg)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(len(splits))
    folds, n_params = [], None
    for f, (train_idx, test_idx) in enumerate(splits):
        model, std, curves = _fit_fold(ds, train_idx, cfg, enc_cfg, int(seeds[f]))
        n_params = count_parameters(model)
        proba = model.predict_proba(std.raw(ds.raw[test_idx]), std.features(ds.features[test_idx]))
        scores, labels = _unit_scores(ds, test_idx, proba, cfg.unit)
        m = metrics(confusion_matrix(labels, scores.argmax(1), n_classes), scores, labels)
        folds.append(FoldResult(f, len(train_idx), len(test_idx), m["accuracy"], m.get("auroc"),
                                m, curves))
        logger.info("fold %d: accuracy %.3f auroc %s", f, m["accuracy"], m.get("auroc"))
    return FoldReport(folds, cfg.unit, "fdnml", n_params)


def majority_baseline(ds: LearnDataset, cfg: TrainConfig | None = None,
                      n_classes: int = 3) -> FoldReport:
    """Most frequent training class, scored on the same folds as :func:`crossvalidate`."""
    cfg = cfg or TrainConfig()
    folds = []
    for f, (train_idx, test_idx) in enumerate(fold_splits(ds, cfg)):
        if cfg.unit == "window":
            train_labels = ds.labels[train_idx]
        else:
            _, first = np.unique(ds.groups[train_idx], return_index=True)
            train_labels = ds.labels[train_idx][first]
        counts = np.bincount(train_labels, minlength=n_classes)
        majority = int(np.argmax(counts))
        proba = np.zeros((len(test_idx), n_classes))
        proba[:, majority] = 1.0
        scores, labels = _unit_scores(ds, test_idx, proba, cfg.unit)
        m = metrics(confusion_matrix(labels, scores.argmax(1), n_classes), scores, labels)
        folds.append(FoldResult(f, len(train_idx), len(test_idx), m["accuracy"], m.get("auroc"), m))
    return FoldReport(folds, cfg.unit, "majority", 0)


# --------------------------------------------------------------- checkpoints


@dataclass
class TrainedModel:
    model: Classifier
    standardizer: Standardizer
    enc_cfg: EncoderConfig
    train_cfg: TrainConfig
    feature_names: list
    layout_version: str
    n_channels: int

    def predict_proba(self, raw, feats) -> np.ndarray:
        return self.model.predict_proba(self.standardizer.raw(np.asarray(raw)),
                                        self.standardizer.features(np.asarray(feats)))


def fit_final(ds: LearnDataset, cfg: TrainConfig, enc_cfg: EncoderConfig | None = None,
              layout_version: str = "1") -> TrainedModel:
    """Pretrain and train on all of ``ds`` (a held-out slice drives early stopping)."""
    enc_cfg = enc_cfg or EncoderConfig()
    model, std, _ = _fit_fold(ds, np.arange(len(ds)), cfg, enc_cfg, cfg.seed)
    return TrainedModel(model, std, enc_cfg, cfg, list(ds.feature_names), layout_version,
                        ds.raw.shape[1])


def save_checkpoint(tm: TrainedModel, path) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "layout_version": tm.layout_version,
        "feature_names": tm.feature_names,
        "n_channels": tm.n_channels,
        "encoder_config": asdict(tm.enc_cfg),
        "train_config": asdict(tm.train_cfg),
        "standardizer": tm.standardizer.to_dict(),
        "state_dict": tm.model.state_dict(),
    }, path)


def load_checkpoint(path, expected_layout: str | None = None) -> TrainedModel:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not an fdnml checkpoint")
    if expected_layout is not None and blob["layout_version"] != expected_layout:
        raise DataError(f"checkpoint feature layout {blob['layout_version']!r}, "
                        f"expected {expected_layout!r}")
    enc_cfg = EncoderConfig(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in blob["encoder_config"].items()})
    train_cfg = TrainConfig(**blob["train_config"])
    n_feat = len(blob["feature_names"])
    model = Classifier(RawEncoder(blob["n_channels"], enc_cfg), FeatureEncoder(n_feat, enc_cfg),
                       enc_cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return TrainedModel(model, Standardizer.from_dict(blob["standardizer"]), enc_cfg, train_cfg,
                        blob["feature_names"], blob["layout_version"], blob["n_channels"])
