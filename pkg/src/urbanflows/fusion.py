"""Information fusion: geographic embedding extraction, zone partitioning,
semantic projection, and the multi-head attention used by stage 2.

Batched entry points take (B, ...) tensors; the single-sample functions at
the bottom mirror the batched ones for one zone map / embedding at a time.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError
from .numerics import (
    Tensor,
    conv2d,
    depthwise_conv2d,
    gelu,
    global_avg_pool,
    layer_norm,
    softmax_rows,
)


class ZonePartition:
    """M binary N x N masks, one per zone label; disjoint and covering."""

    __slots__ = ("masks",)

    def __init__(self, masks):
        self.masks = np.asarray(masks, dtype=np.float64)

    @property
    def m(self):
        return self.masks.shape[0]


class FusedEmbedding:
    """The fused conditioning matrix c plus the zone softmax weights."""

    __slots__ = ("c", "zone_weights")

    def __init__(self, c, zone_weights):
        self.c = np.asarray(c, dtype=np.float64)
        self.zone_weights = np.asarray(zone_weights, dtype=np.float64)


def partition_zones(zone_map, m):
    """Split a zone map into M binary indicator masks."""
    labels = np.asarray(getattr(zone_map, "labels", zone_map))
    if labels.min() < 0 or labels.max() >= m:
        raise DataError(f"zone labels must lie in [0, {m - 1}]")
    masks = np.stack([(labels == k).astype(np.float64) for k in range(m)])
    return ZonePartition(masks)


def partition_zones_batch(labels, m):
    """(B, N, N) integer labels -> (B, M, N, N) indicator masks."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= m:
        raise DataError(f"zone labels must lie in [0, {m - 1}]")
    return np.stack([(labels == k) for k in range(m)], axis=1).astype(np.float64)


class GeoExtractor:
    """ConvNeXt-style feature extractor for zone maps.

    stem (3x3 conv, 1 -> C, + channel layer-norm), then alternating
    ConvNeXt layers and 2x2/stride-2 channel-doubling down-samples, ending
    with one more ConvNeXt layer and a pooled, normalized linear head to D.
    Each ConvNeXt layer is depthwise conv -> layer-norm -> 1x1 expand (4x)
    -> GELU -> 1x1 back -> LayerScale -> drop-path -> residual.
    """

    def __init__(self, store, prefix, out_dim, rng, stem_channels=8, n_cx=3,
                 drop_path=0.0):
        self.out_dim = out_dim
        self.n_cx = n_cx
        self.drop_path = float(drop_path)
        c = stem_channels
        self.stem_w = store.add(
            f"{prefix}.stem.w", rng.normal(0.0, 1.0 / 3.0, size=(c, 1, 3, 3))
        )
        self.stem_b = store.add(f"{prefix}.stem.b", np.zeros(c))
        self.stem_ln = self._add_ln(store, f"{prefix}.stem.ln", c)
        self.blocks = []
        self.downs = []
        for i in range(n_cx):
            self.blocks.append(self._add_convnext(store, f"{prefix}.cx{i}", c, rng))
            if i < n_cx - 1:
                self.downs.append(self._add_down(store, f"{prefix}.down{i}", c, rng))
                c *= 2
        self.head_ln = self._add_ln(store, f"{prefix}.head.ln", c)
        self.head_w = store.add(
            f"{prefix}.head.w", rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, out_dim))
        )
        self.head_b = store.add(f"{prefix}.head.b", np.zeros(out_dim))
        self.final_channels = c

    @staticmethod
    def _add_ln(store, prefix, c):
        return (store.add(f"{prefix}.gamma", np.ones(c)),
                store.add(f"{prefix}.beta", np.zeros(c)))

    @staticmethod
    def _add_convnext(store, prefix, c, rng):
        return {
            "dw_w": store.add(f"{prefix}.dw.w", rng.normal(0.0, 1.0 / 3.0, size=(c, 3, 3))),
            "dw_b": store.add(f"{prefix}.dw.b", np.zeros(c)),
            "ln": GeoExtractor._add_ln(store, f"{prefix}.ln", c),
            "up_w": store.add(f"{prefix}.up.w", rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, 4 * c))),
            "up_b": store.add(f"{prefix}.up.b", np.zeros(4 * c)),
            "down_w": store.add(f"{prefix}.pw.w", rng.normal(0.0, 0.5 / np.sqrt(c), size=(4 * c, c))),
            "down_b": store.add(f"{prefix}.pw.b", np.zeros(c)),
            "ls": store.add(f"{prefix}.ls", np.full(c, 1e-6)),
        }

    @staticmethod
    def _add_down(store, prefix, c, rng):
        return {
            "ln": GeoExtractor._add_ln(store, f"{prefix}.ln", c),
            "w": store.add(f"{prefix}.w", rng.normal(0.0, 0.5 / c, size=(2 * c, c, 2, 2))),
            "b": store.add(f"{prefix}.b", np.zeros(2 * c)),
        }

    @staticmethod
    def _channel_ln(h, ln):
        gamma, beta = ln
        c = gamma.shape[0]
        return layer_norm(h, gamma.reshape(1, c, 1, 1), beta.reshape(1, c, 1, 1), axis=1)

    def _convnext(self, h, p, mode, rng):
        branch = depthwise_conv2d(h, p["dw_w"], p["dw_b"])
        branch = self._channel_ln(branch, p["ln"])
        t = branch.transpose((0, 2, 3, 1))
        t = gelu(t @ p["up_w"] + p["up_b"])
        t = t @ p["down_w"] + p["down_b"]
        branch = t.transpose((0, 3, 1, 2))
        c = p["ls"].shape[0]
        branch = branch * p["ls"].reshape(1, c, 1, 1)
        if mode == "train" and self.drop_path > 0.0:
            if rng is None:
                raise ConfigurationError("train-mode drop-path needs an rng")
            keep = (rng.random(h.shape[0]) >= self.drop_path).astype(np.float64)
            keep = keep / (1.0 - self.drop_path)
            branch = branch * Tensor(keep.reshape(-1, 1, 1, 1))
        return h + branch

    def forward(self, x, mode="eval", rng=None):
        """x is (B, 1, N, N) with values already rescaled to [0, 1]."""
        if x.ndim != 4:
            raise DimensionError("geo extractor expects (B,1,N,N)")
        size = x.shape[2]
        if size >> (self.n_cx - 1) < 1 or size % (1 << (self.n_cx - 1)) != 0:
            raise ConfigurationError(
                f"grid side {size} incompatible with {self.n_cx - 1} down-samples"
            )
        h = conv2d(x, self.stem_w, self.stem_b, stride=1)
        h = self._channel_ln(h, self.stem_ln)
        for i, block in enumerate(self.blocks):
            h = self._convnext(h, block, mode, rng)
            if i < len(self.downs):
                down = self.downs[i]
                h = self._channel_ln(h, down["ln"])
                h = conv2d(h, down["w"], down["b"], stride=2)
        pooled = global_avg_pool(h)
        pooled = layer_norm(pooled, self.head_ln[0], self.head_ln[1], axis=-1)
        return pooled @ self.head_w + self.head_b


def semantic_projection_batch(masks, e, o, w_z, w_s, w_g):
    """Fused embedding for a batch.

    masks: (B, M, N, N) constants; e, o: (B, D) tensors; w_z: (N, 1);
    w_s, w_g: scalars.  Returns (c (B, M, D), zone_weights (B, M)).
    """
    b, m, n, _ = masks.shape
    avg = Tensor(masks.mean(axis=2)) if not isinstance(masks, Tensor) else masks.mean(axis=2)
    logits = (avg @ w_z).reshape(b, m)
    zone_weights = softmax_rows(logits)
    content = (w_s * e + w_g * o).reshape(b, 1, -1)
    c = zone_weights.reshape(b, m, 1) * content
    return c, zone_weights


def multi_head_attention_batch(c, heads, wq, wk, wv, wo):
    """Scaled dot-product attention over the M zone rows of c (B, M, D)."""
    b, m, dim = c.shape
    if dim % heads:
        raise ConfigurationError(f"D={dim} not divisible by heads={heads}")
    dk = dim // heads
    scale = 1.0 / np.sqrt(dk)

    def split(t):
        return t.reshape(b, m, heads, dk).transpose((0, 2, 1, 3))

    q = split(c @ wq)
    k = split(c @ wk)
    v = split(c @ wv)
    scores = (q @ k.transpose((0, 1, 3, 2))) * scale
    weights = softmax_rows(scores)
    ctx = (weights @ v).transpose((0, 2, 1, 3)).reshape(b, m, dim)
    return ctx @ wo


class FusionModule:
    """Bundles the extractor, projection parameters, and attention weights.

    Ablation flags mirror the reduced model variants: with use_geo off the
    geographic embedding is zero; with use_attention off the conditioning
    matrix is the fused embedding itself.
    """

    def __init__(self, store, prefix, n, m, out_dim, heads, rng,
                 stem_channels=8, n_cx=3, drop_path=0.0,
                 use_geo=True, use_attention=True):
        if out_dim % heads:
            raise ConfigurationError(f"D={out_dim} not divisible by heads={heads}")
        self.n = n
        self.m = m
        self.d = out_dim
        self.heads = heads
        self.use_geo = use_geo
        self.use_attention = use_attention
        self.geo = GeoExtractor(store, f"{prefix}.geo", out_dim, rng,
                                stem_channels=stem_channels, n_cx=n_cx,
                                drop_path=drop_path)
        self.w_z = store.add(f"{prefix}.wz",
                             rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, 1)))
        self.w_s = store.add(f"{prefix}.ws", np.array(1.0))
        self.w_g = store.add(f"{prefix}.wg", np.array(1.0))
        scale = 1.0 / np.sqrt(out_dim)
        self.attn = {
            name: store.add(f"{prefix}.attn.{name}",
                            rng.normal(0.0, scale, size=(out_dim, out_dim)))
            for name in ("wq", "wk", "wv", "wo")
        }

    def extract(self, images, mode="eval", rng=None):
        """images: (B, 1, N, N) tensor of [0,1]-rescaled labels."""
        if not self.use_geo:
            b = images.shape[0]
            return Tensor(np.zeros((b, self.d)))
        return self.geo.forward(images, mode=mode, rng=rng)

    def fuse(self, masks, e, o):
        return semantic_projection_batch(masks, e, o, self.w_z, self.w_s, self.w_g)

    def attend(self, c):
        if not self.use_attention:
            return c
        return multi_head_attention_batch(c, self.heads, self.attn["wq"],
                                          self.attn["wk"], self.attn["wv"],
                                          self.attn["wo"])

    def condition(self, hard_labels, soft_images, e, mode="eval", rng=None):
        """Full conditioning path: returns (A_flat (B, M*D), zone_weights).

        hard_labels feed the partition masks (never differentiated);
        soft_images feed the extractor and may carry gradients.
        """
        b = hard_labels.shape[0]
        masks = partition_zones_batch(hard_labels, self.m)
        o = self.extract(soft_images, mode=mode, rng=rng)
        if not isinstance(e, Tensor):
            e = Tensor(e)
        c, zone_weights = self.fuse(masks, e, o)
        a = self.attend(c)
        return a.reshape(b, self.m * self.d), zone_weights


# ---------------------------------------------------------------------------
# Single-sample wrappers
# ---------------------------------------------------------------------------


def extract_geo_embedding(extractor, zone_map, m_labels, mode="eval", rng=None):
    """Embed one zone map; labels are rescaled by 1/(m-1) into [0, 1]."""
    labels = np.asarray(getattr(zone_map, "labels", zone_map), dtype=np.float64)
    n = labels.shape[0]
    img = Tensor(labels.reshape(1, 1, n, n) / max(m_labels - 1, 1))
    out = extractor.forward(img, mode=mode, rng=rng)
    return out.data.reshape(1, -1)


def semantic_projection(part, e, o, w_z, w_s, w_g):
    """Single-sample fused embedding from explicit weight tensors."""
    masks = part.masks[None]
    e_t = Tensor(np.asarray(e, dtype=np.float64).reshape(1, -1))
    o_t = Tensor(np.asarray(o, dtype=np.float64).reshape(1, -1))
    w_z = w_z if isinstance(w_z, Tensor) else Tensor(np.asarray(w_z, dtype=np.float64))
    w_s = w_s if isinstance(w_s, Tensor) else Tensor(np.asarray(w_s, dtype=np.float64))
    w_g = w_g if isinstance(w_g, Tensor) else Tensor(np.asarray(w_g, dtype=np.float64))
    c, zw = semantic_projection_batch(masks, e_t, o_t, w_z, w_s, w_g)
    return FusedEmbedding(c.data[0], zw.data[0])


def multi_head_attention(fused, heads, wq, wk, wv, wo):
    """Single-sample attention over a FusedEmbedding, returning M x D."""
    args = [t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))
            for t in (wq, wk, wv, wo)]
    c = Tensor(fused.c[None]) if isinstance(fused, FusedEmbedding) else Tensor(np.asarray(fused)[None])
    out = multi_head_attention_batch(c, heads, *args)
    return out.data[0]