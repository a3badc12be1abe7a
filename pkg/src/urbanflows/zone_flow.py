"""Stage 1: the zone-level flow p(U | e).

Zone maps are N x N integer grids quantized from a continuous flow over
d = N^2 dimensions.  The stack is K blocks of coupling -> condition
projection -> batch-norm with a half-swap permutation between consecutive
blocks, so both index halves get transformed as depth grows.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DataError, SamplingFault, TrainingFault
from .flow_layers import (
    BatchNormFlow,
    ConditionProjectionLayer,
    CouplingLayer,
    GenerationTrace,
    TraceStep,
    gaussian_logp,
    half_swap_perm,
)
from .numerics import Tensor, no_grad, permute_columns


class ZoneMap:
    """N x N grid of functional-zone labels in [0, M-1]."""

    __slots__ = ("n", "labels")

    def __init__(self, labels):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim != 2 or labels.shape[0] != labels.shape[1]:
            raise DataError("zone map must be a square 2-D grid")
        if labels.shape[0] < 2:
            raise DataError("zone map side must be >= 2")
        if labels.min() < 0:
            raise DataError("zone labels must be nonnegative")
        self.n = labels.shape[0]
        self.labels = labels

    def __eq__(self, other):
        return isinstance(other, ZoneMap) and np.array_equal(self.labels, other.labels)


def dequantize_zone(zone_map, m, rng):
    """Map labels to continuous values in [-0.5, 0.5): (label + u)/M - 0.5."""
    labels = np.asarray(getattr(zone_map, "labels", zone_map), dtype=np.float64)
    u = rng.random(labels.shape)
    return ((labels + u) / m - 0.5).ravel()


def dequantize_zone_batch(labels, m, rng):
    labels = np.asarray(labels, dtype=np.float64)
    u = rng.random(labels.shape)
    return ((labels + u) / m - 0.5).reshape(labels.shape[0], -1)


def quantize_zone(vec, m, n):
    """Exact inverse of dequantization: clamp(floor((v + 0.5) M), 0, M-1)."""
    vec = np.asarray(vec, dtype=np.float64)
    labels = np.clip(np.floor((vec + 0.5) * m), 0, m - 1).astype(np.int64)
    return ZoneMap(labels.reshape(n, n))


def soft_labels(vec, m):
    """Differentiable label surrogate in [0, M-1] for the fine-tune path."""
    from .numerics import clip

    return clip((vec + 0.5) * m - 0.5, 0.0, float(m - 1))


class ZoneFlowModel:
    """K blocks of [coupling, condition projection, batch-norm].

    The model works on any even d; the zone pipeline uses d = N^2 and
    carries (n, m) so samples can be quantized back to maps.  Layouts track
    which canonical coordinate each position holds after the inter-block
    half-swaps, letting traces report states in data coordinates.
    """

    def __init__(self, store, prefix, d, cond_dim, rng, k=6, widths=(64, 64),
                 use_condition_projection=True, n=None, m=None):
        if k < 1:
            raise ConfigurationError("need at least one block")
        if d % 2:
            raise ConfigurationError("zone flow needs even d")
        self.d = d
        self.cond_dim = cond_dim
        self.k = k
        self.n = n
        self.m = m
        self.blocks = []
        for i in range(k):
            block = {
                "coupling": CouplingLayer(store, f"{prefix}.block{i}.coupling",
                                          d, cond_dim, rng, widths),
                "proj": ConditionProjectionLayer(store, f"{prefix}.block{i}.proj",
                                                 d, cond_dim, rng, widths)
                if use_condition_projection else None,
                "bn": BatchNormFlow(store, f"{prefix}.block{i}.bn", d),
            }
            self.blocks.append(block)
        self.swap = half_swap_perm(d)
        layouts = [np.arange(d)]
        for _ in range(1, k):
            layouts.append(layouts[-1][self.swap])
        self.layouts = layouts
        self.inv_layouts = [np.argsort(l) for l in layouts]
        self.final_layout = layouts[-1]
        self.final_inv = np.argsort(self.final_layout)

    def layer_count(self):
        return self.k

    def forward(self, x, e, mode="train", update_stats=True):
        """Data -> latent; returns (z in canonical coords, per-sample logdet)."""
        h = x
        logdet = Tensor(np.zeros(x.shape[0]))
        for i, block in enumerate(self.blocks):
            if i > 0:
                h = permute_columns(h, self.swap)
            h, ld = block["coupling"].forward(h, e, mode)
            logdet = logdet + ld
            if block["proj"] is not None:
                h, ld = block["proj"].forward(h, e, mode)
                logdet = logdet + ld
            h, ld = block["bn"].forward(h, mode, update_stats)
            logdet = logdet + ld
        h = permute_columns(h, self.final_inv)
        return h, logdet

    def inverse(self, z, e, mode="eval", collect=None):
        """Latent -> data.  Differentiable (eval-mode batch-norm only).

        ``collect`` receives (block_index, canonical state ndarray) after
        each inverted block when provided.
        """
        h = permute_columns(z, self.final_layout)
        for i in range(self.k - 1, -1, -1):
            block = self.blocks[i]
            h = block["bn"].inverse(h, mode)
            if block["proj"] is not None:
                h = block["proj"].inverse(h, e, mode)
            h = block["coupling"].inverse(h, e, mode)
            if not np.all(np.isfinite(h.data)):
                raise SamplingFault(f"non-finite state after inverting block {i}",
                                    layer_index=i)
            if collect is not None:
                collect(i, h.data[:, self.inv_layouts[i]])
            if i > 0:
                h = permute_columns(h, self.swap)  # half-swap is an involution
        return h


def nll_tensors(model, x, e, mode="train", update_stats=True):
    """Mean NLL tensor plus the per-sample NLL values as an ndarray."""
    z, logdet = model.forward(x, e, mode, update_stats)
    nll = gaussian_logp(z) * (-1.0) - logdet
    return nll.mean(), nll.data


def zone_nll(model, batch, rng, mode="train", update_stats=True):
    """Mean NLL of a list of (ZoneMap, e-vector) pairs.

    Dequantization noise comes from ``rng``; train mode requires a batch of
    at least 2 for the batch-norm statistics.
    """
    if model.m is None:
        raise ConfigurationError("model has no quantization level count m")
    xs = np.stack([dequantize_zone(zm, model.m, rng) for zm, _ in batch])
    es = np.stack([np.asarray(e, dtype=np.float64).ravel() for _, e in batch])
    mean, per_sample = nll_tensors(model, Tensor(xs), Tensor(es), mode, update_stats)
    if not np.all(np.isfinite(per_sample)):
        bad = int(np.flatnonzero(~np.isfinite(per_sample))[0])
        raise TrainingFault(f"non-finite NLL at sample {bad}", sample_index=bad)
    return float(mean.item())


def log_density(model, x, e):
    """Per-sample eval-mode log p(x | e) for already-continuous vectors."""
    with no_grad():
        z, logdet = model.forward(x, e, mode="eval", update_stats=False)
        logp = gaussian_logp(z) + logdet
    return logp.data


def zone_sample_batch(model, e, rng, collect=None):
    """Draw a batch of continuous zone vectors by inverting the stack.

    e is (B, cond_dim); returns the (B, d) pre-quantization array.  The
    latent draw is returned too so callers can trace or reuse it.
    """
    b = e.shape[0]
    z = rng.standard_normal((b, model.d))
    with no_grad():
        x = model.inverse(Tensor(z), Tensor(np.asarray(e, dtype=np.float64)),
                          mode="eval", collect=collect)
    return x.data, z


def zone_sample(model, e, rng, trace=False):
    """Sample one ZoneMap conditioned on e; optionally trace block states."""
    if model.n is None or model.m is None:
        raise ConfigurationError("sampling needs a model built with (n, m)")
    e = np.asarray(e, dtype=np.float64).reshape(1, -1)
    states = []
    collect = (lambda i, s: states.append((i, s[0].copy()))) if trace else None
    x, z = zone_sample_batch(model, e, rng, collect=collect)
    zm = quantize_zone(x[0], model.m, model.n)
    if not trace:
        return zm, None
    steps = [TraceStep(-1, "latent", z[0], _zone_histogram(z[0], model.m))]
    for i, state in states:
        steps.append(TraceStep(i, "block", state, _zone_histogram(state, model.m)))
    return zm, GenerationTrace(steps)


def _zone_histogram(vec, m):
    labels = np.clip(np.floor((np.asarray(vec) + 0.5) * m), 0, m - 1).astype(np.int64)
    return np.bincount(labels, minlength=m)