"""Register-neuron identification and test-time register construction."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .attn import ValidationError

SPARSITY_EPS = 1e-8


def as_activation_matrix(values):
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValidationError(f"activation matrix must be 2-d and non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("activation matrix has non-finite entries")
    return a


@dataclass(frozen=True)
class RegisterNeuronSet:
    """Channels whose activations are redirected into the register token.

    Ordered by descending sparsity score, ties by ascending channel index.
    """

    channel_ids: tuple
    sparsity_scores: tuple

    def __post_init__(self):
        ids = tuple(int(c) for c in self.channel_ids)
        scores = tuple(float(s) for s in self.sparsity_scores)
        if len(ids) != len(scores):
            raise ValidationError("channel_ids and sparsity_scores differ in length")
        if len(set(ids)) != len(ids):
            raise ValidationError("register neuron set has duplicate channels")
        if any(c < 0 for c in ids):
            raise ValidationError("channel ids must be non-negative")
        for (c0, s0), (c1, s1) in zip(zip(ids, scores), zip(ids[1:], scores[1:])):
            if s1 > s0 or (s1 == s0 and c1 < c0):
                raise ValidationError("register neurons must be sorted by descending score")
        object.__setattr__(self, "channel_ids", ids)
        object.__setattr__(self, "sparsity_scores", scores)

    @classmethod
    def from_channels(cls, channels):
        """Build a set from bare channel indices (no scores known)."""
        ids = sorted(set(int(c) for c in channels))
        return cls(tuple(ids), (0.0,) * len(ids))

    @classmethod
    def empty(cls):
        return cls((), ())

    def __len__(self):
        return len(self.channel_ids)

    def __iter__(self):
        return iter(self.channel_ids)


def sparsity_scores(calibration):
    """Per-channel peak-to-mean |activation| ratio, averaged over samples."""
    mats = [as_activation_matrix(m) for m in calibration]
    if not mats:
        raise ValidationError("calibration set is empty")
    n_channels = mats[0].shape[1]
    for i, m in enumerate(mats):
        if m.shape[1] != n_channels:
            raise ValidationError(
                f"calibration sample {i} has {m.shape[1]} channels, expected {n_channels}"
            )
    per_sample = np.stack([kernels.peak_to_mean_abs(m, SPARSITY_EPS) for m in mats])
    return np.array([math.fsum(col) / len(mats) for col in per_sample.T])


def identify_register_neurons(calibration, k=10):
    """Top-``k`` channels by averaged peak-to-mean sparsity score."""
    scores = sparsity_scores(calibration)
    n_channels = scores.shape[0]
    if not 1 <= k <= n_channels:
        raise ValidationError(f"k must be in [1, {n_channels}], got {k}")
    order = np.lexsort((np.arange(n_channels), -scores))[:k]
    return RegisterNeuronSet(tuple(order.tolist()), tuple(scores[order].tolist()))


@dataclass(frozen=True, eq=False)
class RegisterAugmentedActivations:
    patch_activations: np.ndarray
    register_row: np.ndarray


def construct_register(acts, neurons):
    """Move each register channel's column max into a new register row.

    Patch values on those channels are zeroed; other channels are untouched
    and the register row is zero there.  The input is not modified.
    """
    a = as_activation_matrix(acts)
    channels = list(neurons.channel_ids if isinstance(neurons, RegisterNeuronSet) else neurons)
    n_channels = a.shape[1]
    bad = [c for c in channels if not 0 <= c < n_channels]
    if bad:
        raise ValidationError(f"register channel ids {bad} out of range for {n_channels} channels")
    patches = a.copy()
    register_row = np.zeros(n_channels)
    if channels:
        register_row[channels] = a[:, channels].max(axis=0)
        patches[:, channels] = 0.0
    return RegisterAugmentedActivations(patches, register_row)
