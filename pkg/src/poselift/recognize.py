"""Movement and genre recognition from 3D pose sequences.

Each of the 16 body parts gets its own single-layer LSTM that maps the
part's root-centered, height-normalized joint trajectories to per-frame
multi-label movement scores (sigmoid heads, binary cross entropy).  A
second LSTM reads the concatenated movement labels of all parts and
names the dance genre from its final time step (softmax, cross
entropy).  The genre model never sees poses, only movement labels.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .exceptions import DivergenceError
from .parts import (
    BodyPartSpec,
    GENRE_NAMES,
    N_GENRES,
    PARTS,
    PART_NAMES,
    SYNTH_LABELS,
    TOTAL_LABELS,
    get_part,
    part_label_slices,
)
from .skeleton import ROOT_JOINT
from .validation import check_pose3d

__all__ = [
    "BodyPartSpec", "PARTS", "PART_NAMES", "TOTAL_LABELS", "N_GENRES",
    "GENRE_NAMES", "SYNTH_LABELS", "get_part", "part_label_slices",
    "movement_features", "expand_part_labels", "MovementClassifier",
    "GenreClassifier",
]

_HEIGHT_JOINTS = (ROOT_JOINT, 2)
_HEIGHT_SCALE = 4.0


def movement_features(pose3d, part: BodyPartSpec) -> np.ndarray:
    """Per-frame features of one part: its joints, root-centered and
    height-normalized, flattened to (T, 3 * len(part.joints))."""
    pose3d = check_pose3d(pose3d)
    centered = pose3d - pose3d[:, ROOT_JOINT : ROOT_JOINT + 1, :]
    spans = np.linalg.norm(
        pose3d[:, _HEIGHT_JOINTS[0]] - pose3d[:, _HEIGHT_JOINTS[1]], axis=1
    )
    height = _HEIGHT_SCALE * spans.mean()
    if height <= 0:
        height = 1.0
    feats = centered[:, list(part.joints), :] / height
    return feats.reshape(pose3d.shape[0], -1)


def expand_part_labels(part_name: str, labels: np.ndarray) -> np.ndarray:
    """Embed one part's label matrix into the full concatenated vector.

    A (T, k) matrix lands in the first k slots of the part's vocabulary
    slice of the (T, 154) layout.
    """
    labels = np.asarray(labels, dtype=float)
    part = get_part(part_name)
    if labels.ndim != 2 or labels.shape[1] > part.vocab_size:
        raise ValueError(
            f"label matrix {labels.shape} does not fit {part_name}'s "
            f"vocabulary of {part.vocab_size}"
        )
    out = np.zeros((labels.shape[0], TOTAL_LABELS))
    sl = part_label_slices()[part_name]
    out[:, sl.start : sl.start + labels.shape[1]] = labels
    return out


class _LSTM:
    """Single-layer LSTM with a linear head, shared by both classifiers."""

    def __init__(self, in_dim, hidden, out_dim, rng):
        k = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0  # open forget gates at the start
        self.params = {
            "wx": ad.Tensor(rng.uniform(-k, k, size=(in_dim, 4 * hidden))),
            "wh": ad.Tensor(rng.uniform(-k, k, size=(hidden, 4 * hidden))),
            "b": ad.Tensor(bias),
            "wo": ad.Tensor(np.zeros((hidden, out_dim))),
            "bo": ad.Tensor(np.zeros(out_dim)),
        }

    def param_list(self):
        return [self.params[k] for k in ("wx", "wh", "b", "wo", "bo")]

    def hidden_sequence(self, feats):
        """feats: (T, B, D) array; returns list of (B, H) hidden tensors."""
        T, B, _ = feats.shape
        x = ad.Tensor(feats)
        h = ad.Tensor(np.zeros((B, self.hidden)))
        c = ad.Tensor(np.zeros((B, self.hidden)))
        hs = []
        for t in range(T):
            h, c = ad.lstm_cell(x[t], h, c, self.params["wx"],
                                self.params["wh"], self.params["b"])
            hs.append(h)
        return hs

    def head(self, h):
        return ad.dense(h, self.params["wo"], self.params["bo"])


def _group_by_length(clips):
    groups: dict = {}
    for feats, target in clips:
        groups.setdefault(feats.shape[0], []).append((feats, target))
    return groups


def _minibatches(items, batch_size, rng):
    """Deterministically shuffled, length-grouped minibatches."""
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    batches = []
    for _, grp in sorted(_group_by_length(shuffled).items()):
        for s in range(0, len(grp), batch_size):
            chunk = grp[s : s + batch_size]
            batches.append(
                (np.stack([f for f, _ in chunk], axis=1),
                 np.stack([t for _, t in chunk], axis=1))
            )
    return batches


class MovementClassifier(BaseEstimator, ClassifierMixin):
    """Per-frame multi-label movement recognition for one body part.

    Features are standardized with training-set statistics; the scaler
    is part of the fitted model.
    """

    def __init__(self, part: str, labels=None, hidden_size: int = 64,
                 lr: float = 2e-2, epochs: int = 150, batch_size: int = 8,
                 seed: int = 0):
        self.part = part
        self.labels = labels
        self.hidden_size = hidden_size
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _label_names(self):
        if self.labels is not None:
            return tuple(self.labels)
        return get_part(self.part).labels

    def fit(self, clips, y=None):
        """clips: list of (pose3d (T, 25, 3), labels (T, V)) pairs."""
        if len(clips) < 2:
            raise ValueError("need at least 2 training clips")
        part = get_part(self.part)
        names = self._label_names()
        V = len(names)
        prepared = []
        for pose3d, labels in clips:
            labels = np.asarray(labels, dtype=float)
            feats = movement_features(pose3d, part)
            if labels.shape != (feats.shape[0], V):
                raise ValueError(
                    f"labels {labels.shape} misaligned with clip of "
                    f"{feats.shape[0]} frames and {V} labels for part "
                    f"{self.part!r}"
                )
            prepared.append((feats, labels))
        all_feats = np.concatenate([f for f, _ in prepared])
        self.feat_mean_ = all_feats.mean(axis=0)
        self.feat_std_ = np.maximum(all_feats.std(axis=0), 1e-6)
        prepared = [
            ((f - self.feat_mean_) / self.feat_std_, t) for f, t in prepared
        ]
        rng = np.random.default_rng(self.seed)
        net = _LSTM(prepared[0][0].shape[1], self.hidden_size, V, rng)
        opt = ad.Adam(net.param_list(), lr=self.lr)
        batches = _minibatches(prepared, self.batch_size, rng)
        log = []
        for epoch in range(self.epochs):
            total = 0.0
            for feats, targets in batches:
                opt.zero_grad()
                hs = net.hidden_sequence(feats)
                preds = ad.stack([ad.sigmoid(net.head(h)) for h in hs], axis=0)
                loss = ad.bce_loss(preds, targets)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                ad.backward(loss)
                opt.step()
                total += value
            log.append(total / len(batches))
        self.net_ = net
        self.label_names_ = names
        self.training_log_ = log
        return self

    def predict_proba(self, pose3d) -> np.ndarray:
        if not hasattr(self, "net_"):
            raise NotFittedError("MovementClassifier is not fitted")
        part = get_part(self.part)
        pose3d = check_pose3d(pose3d)
        if pose3d.shape[0] == 0:
            raise ValueError("empty pose sequence")
        feats = (movement_features(pose3d, part) - self.feat_mean_) / self.feat_std_
        hs = self.net_.hidden_sequence(feats[:, None, :])
        out = np.stack([1.0 / (1.0 + np.exp(-self.net_.head(h).data[0]))
                        for h in hs])
        return out

    def predict(self, pose3d) -> np.ndarray:
        """Per-frame binary label matrix at the 0.5 threshold."""
        return (self.predict_proba(pose3d) >= 0.5).astype(float)


class GenreClassifier(BaseEstimator, ClassifierMixin):
    """Clip-level genre from concatenated movement-label sequences.

    The input type is the (T, 154) label matrix alone; pose data has no
    entry point here.
    """

    def __init__(self, hidden_size: int = 64, lr: float = 1e-3,
                 epochs: int = 100, seed: int = 0):
        self.hidden_size = hidden_size
        self.lr = lr
        self.epochs = epochs
        self.seed = seed

    @staticmethod
    def _check_labels(labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=float)
        if labels.ndim != 2 or labels.shape[1] != TOTAL_LABELS:
            raise ValueError(
                f"expected a (T, {TOTAL_LABELS}) movement-label matrix, "
                f"got {labels.shape}"
            )
        return labels

    def fit(self, label_seqs, genres):
        if len(label_seqs) != len(genres):
            raise ValueError("one genre per clip required")
        if len(label_seqs) < 1:
            raise ValueError("need at least one training clip")
        genres = np.asarray(genres, dtype=int)
        if np.any((genres < 0) | (genres >= N_GENRES)):
            raise ValueError(f"genre indices must be in 0..{N_GENRES - 1}")
        prepared = [
            (self._check_labels(seq), g) for seq, g in zip(label_seqs, genres)
        ]
        rng = np.random.default_rng(self.seed)
        net = _LSTM(TOTAL_LABELS, self.hidden_size, N_GENRES, rng)
        opt = ad.Adam(net.param_list(), lr=self.lr)
        groups = [
            (np.stack([f for f, _ in grp], axis=1),
             np.array([g for _, g in grp], dtype=int))
            for _, grp in sorted(_group_by_length(prepared).items())
        ]
        log = []
        for epoch in range(self.epochs):
            total = 0.0
            for feats, targets in groups:
                opt.zero_grad()
                hs = net.hidden_sequence(feats)
                logits = net.head(hs[-1])
                loss = ad.ce_loss(logits, targets)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                ad.backward(loss)
                opt.step()
                total += value
            log.append(total / len(groups))
        self.net_ = net
        self.training_log_ = log
        return self

    def decision_function(self, labels) -> np.ndarray:
        if not hasattr(self, "net_"):
            raise NotFittedError("GenreClassifier is not fitted")
        labels = self._check_labels(labels)
        if labels.shape[0] == 0:
            raise ValueError("empty label sequence")
        hs = self.net_.hidden_sequence(labels[:, None, :])
        return self.net_.head(hs[-1]).data[0]

    def predict_proba(self, labels) -> np.ndarray:
        logits = self.decision_function(labels)
        e = np.exp(logits - logits.max())
        return e / e.sum()

    def predict(self, labels) -> int:
        return int(np.argmax(self.decision_function(labels)))
