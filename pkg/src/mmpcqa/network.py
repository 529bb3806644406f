"""The quality model: point encoder, hierarchical image encoder, symmetric
cross-modal attention fusion and the regression head.

Desk-scale stand-ins replace the full-size backbones: a shared pointwise MLP
with max pooling encodes each sub-model, and a 4-stage strided CNN whose
stage-wise global-average-pooled features are concatenated encodes each
projection patch.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


@dataclass
class ModelConfig:
    n_s: int = 2048                 # points per sub-model
    n_p: int = 6                    # sub-models per cloud
    n_i: int = 4                    # projections per cloud
    point_hidden: tuple = (64, 128)
    c_p: int = 256                  # point embedding width
    image_stages: tuple = (16, 32, 64, 128)
    c_prime: int = 256              # shared fusion width
    heads: int = 8
    ffn_dim: int = 2048
    head_hidden: int = 512
    fusion_mode: str = "token"      # token | pooled
    block_norm: str = "post"        # post | pre
    swap_guidance: bool = False     # swap which modality queries in each block
    variant: str = "full"           # full | p | i | p+i

    def __post_init__(self):
        self.point_hidden = tuple(self.point_hidden)
        self.image_stages = tuple(self.image_stages)
        if self.c_prime % self.heads != 0:
            raise ValueError(f"c_prime={self.c_prime} not divisible by "
                             f"heads={self.heads}")
        if self.fusion_mode not in ("token", "pooled"):
            raise ValueError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.block_norm not in ("post", "pre"):
            raise ValueError(f"unknown block_norm {self.block_norm!r}")
        if self.variant not in ("full", "p", "i", "p+i"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def c_i(self) -> int:
        return int(sum(self.image_stages))

    @property
    def head_dim(self) -> int:
        return self.c_prime // self.heads

    @property
    def quality_dim(self) -> int:
        return {"full": 4 * self.c_prime, "p": self.c_prime,
                "i": self.c_prime, "p+i": 2 * self.c_prime}[self.variant]

    @property
    def fusion(self) -> "FusionConfig":
        return FusionConfig(c_prime=self.c_prime, heads=self.heads,
                            ffn_dim=self.ffn_dim, mode=self.fusion_mode)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


@dataclass
class ModalityEmbedding:
    """Per-item embeddings plus their mean, as live autodiff nodes."""
    per_item: Tensor   # (N_items, C)
    pooled: Tensor     # (C,)


@dataclass
class FusionConfig:
    c_prime: int
    heads: int
    ffn_dim: int
    mode: str = "token"

    def __post_init__(self):
        if self.c_prime % self.heads != 0:
            raise ValueError("adjusted width must be divisible by head count")

    @property
    def head_dim(self) -> int:
        return self.c_prime // self.heads


def param_specs(cfg: ModelConfig):
    """(name, shape, fan_in) triples for every learnable weight of a variant."""
    specs = []
    use_p = cfg.variant in ("full", "p", "p+i")
    use_i = cfg.variant in ("full", "i", "p+i")

    if use_p:
        widths = (3,) + cfg.point_hidden + (cfg.c_p,)
        for k in range(len(widths) - 1):
            specs.append((f"point.mlp{k}.w", (widths[k], widths[k + 1]), widths[k]))
            specs.append((f"point.mlp{k}.b", (widths[k + 1],), None))
        specs.append(("point.head.w", (cfg.c_p, cfg.c_p), cfg.c_p))
        specs.append(("point.head.b", (cfg.c_p,), None))
        specs.append(("fuse.proj_p.w", (cfg.c_p, cfg.c_prime), cfg.c_p))

    if use_i:
        chans = (3,) + cfg.image_stages
        for k in range(len(chans) - 1):
            specs.append((f"image.conv{k}.w", (chans[k + 1], chans[k], 3, 3),
                          chans[k] * 9))
            specs.append((f"image.conv{k}.b", (chans[k + 1],), None))
        specs.append(("fuse.proj_i.w", (cfg.c_i, cfg.c_prime), cfg.c_i))

    if cfg.variant == "full":
        for block in ("attn_p", "attn_i"):
            for mat in ("wq", "wk", "wv", "wo"):
                specs.append((f"fuse.{block}.{mat}", (cfg.c_prime, cfg.c_prime),
                              cfg.c_prime))
            specs.append((f"fuse.{block}.ffn0.w", (cfg.c_prime, cfg.ffn_dim),
                          cfg.c_prime))
            specs.append((f"fuse.{block}.ffn0.b", (cfg.ffn_dim,), None))
            specs.append((f"fuse.{block}.ffn1.w", (cfg.ffn_dim, cfg.c_prime),
                          cfg.ffn_dim))
            specs.append((f"fuse.{block}.ffn1.b", (cfg.c_prime,), None))

    specs.append(("head.fc0.w", (cfg.quality_dim, cfg.head_hidden), cfg.quality_dim))
    specs.append(("head.fc0.b", (cfg.head_hidden,), None))
    specs.append(("head.fc1.w", (cfg.head_hidden, 1), cfg.head_hidden))
    specs.append(("head.fc1.b", (1,), None))
    return specs


def init_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> dc.ParameterStore:
    return dc.init_params(param_specs(cfg), seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# Encoders

def encode_submodels(points: Tensor, store, cfg: ModelConfig) -> ModalityEmbedding:
    """Shared pointwise MLP + per-sub-model max pooling + linear head.

    points: (N_p, n_s, 3).  Row order within a sub-model cannot change the
    embedding (max pooling is permutation invariant).
    """
    if points.data.ndim != 3 or points.data.shape[2] != 3:
        raise ValueError(f"expected (N_p, n_s, 3) sub-model array, got {points.shape}")
    if points.data.shape[1] != cfg.n_s:
        raise ValueError(f"sub-model has {points.data.shape[1]} rows, "
                         f"expected n_s={cfg.n_s}")
    h = points
    n_layers = len(cfg.point_hidden) + 1
    for k in range(n_layers):
        h = dc.add(dc.matmul(h, store.leaf(f"point.mlp{k}.w")),
                   store.leaf(f"point.mlp{k}.b"))
        if k < n_layers - 1:
            h = dc.relu(h)
    pooled_pts = dc.max_pool_rows(h)                      # (N_p, c_p)
    rows = dc.add(dc.matmul(pooled_pts, store.leaf("point.head.w")),
                  store.leaf("point.head.b"))
    return ModalityEmbedding(per_item=rows, pooled=dc.mean_pool_rows(rows))


def encode_submodel(points: Tensor, store, cfg: ModelConfig) -> Tensor:
    """Single sub-model -> (1, c_p) embedding."""
    if points.data.ndim != 2:
        raise ValueError(f"expected (n_s, 3) array, got {points.shape}")
    emb = encode_submodels(dc.reshape(points, (1,) + points.data.shape), store, cfg)
    return emb.per_item


def encode_pointcloud(submodels: Tensor, store, cfg: ModelConfig) -> ModalityEmbedding:
    """All selected sub-models -> per-item rows plus their average."""
    return encode_submodels(submodels, store, cfg)


def encode_images(patches: Tensor, store, cfg: ModelConfig) -> ModalityEmbedding:
    """Hierarchical CNN: concat of global-average-pooled stage outputs.

    patches: (N_i, 3, H, W).  Output rows are (N_i, sum(stage_channels)).
    """
    if patches.data.ndim != 4 or patches.data.shape[1] != 3:
        raise ValueError(f"expected (N_i, 3, H, W) patches, got {patches.shape}")
    h = patches
    alphas = []
    for k in range(len(cfg.image_stages)):
        h = dc.relu(dc.conv2d(h, store.leaf(f"image.conv{k}.w"),
                              store.leaf(f"image.conv{k}.b"), stride=2))
        alphas.append(dc.global_average_pool_2d(h))
    rows = dc.concat(alphas, axis=1)
    return ModalityEmbedding(per_item=rows, pooled=dc.mean_pool_rows(rows))


def encode_image(patch: Tensor, store, cfg: ModelConfig) -> Tensor:
    """Single patch -> (1, c_i) embedding."""
    if patch.data.ndim != 3:
        raise ValueError(f"expected (3, H, W) patch, got {patch.shape}")
    emb = encode_images(dc.reshape(patch, (1,) + patch.data.shape), store, cfg)
    return emb.per_item


def encode_projections(patches: Tensor, store, cfg: ModelConfig) -> ModalityEmbedding:
    return encode_images(patches, store, cfg)


# ---------------------------------------------------------------------------
# Fusion

# Test hook: set to a list to capture attention weight arrays.
attention_probe: list | None = None


def _multi_head_attention(q: Tensor, kv: Tensor, store, prefix: str,
                          fusion: FusionConfig) -> Tensor:
    nq = q.data.shape[0]
    nk = kv.data.shape[0]
    n, d = fusion.heads, fusion.head_dim
    qp = dc.matmul(q, store.leaf(f"{prefix}.wq"))
    kp = dc.matmul(kv, store.leaf(f"{prefix}.wk"))
    vp = dc.matmul(kv, store.leaf(f"{prefix}.wv"))
    qh = dc.permute(dc.reshape(qp, (nq, n, d)), (1, 0, 2))   # (n, Nq, d)
    kh = dc.permute(dc.reshape(kp, (nk, n, d)), (1, 0, 2))
    vh = dc.permute(dc.reshape(vp, (nk, n, d)), (1, 0, 2))
    scores = dc.scale_by(dc.bmm(qh, dc.transpose_last2(kh)), 1.0 / np.sqrt(d))
    attn = dc.softmax(scores)                                # rows sum to 1
    if attention_probe is not None:
        attention_probe.append(attn.data)
    ctx = dc.bmm(attn, vh)                                   # (n, Nq, d)
    merged = dc.reshape(dc.permute(ctx, (1, 0, 2)), (nq, n * d))
    return dc.matmul(merged, store.leaf(f"{prefix}.wo"))


def _ffn(x: Tensor, store, prefix: str) -> Tensor:
    h = dc.relu(dc.add(dc.matmul(x, store.leaf(f"{prefix}.ffn0.w")),
                       store.leaf(f"{prefix}.ffn0.b")))
    return dc.add(dc.matmul(h, store.leaf(f"{prefix}.ffn1.w")),
                  store.leaf(f"{prefix}.ffn1.b"))


def _attention_block(q_tokens: Tensor, kv_tokens: Tensor, store, prefix: str,
                     cfg: ModelConfig) -> Tensor:
    """Cross-attention transformer block, mean-pooled to one vector."""
    fusion = cfg.fusion
    if cfg.block_norm == "post":
        attended = _multi_head_attention(q_tokens, kv_tokens, store, prefix,
                                         fusion)
        x = dc.layer_norm(dc.add(q_tokens, attended))
        out = dc.layer_norm(dc.add(x, _ffn(x, store, prefix)))
    else:  # pre-norm
        attended = _multi_head_attention(dc.layer_norm(q_tokens),
                                         dc.layer_norm(kv_tokens), store,
                                         prefix, fusion)
        x = dc.add(q_tokens, attended)
        out = dc.add(x, _ffn(dc.layer_norm(x), store, prefix))
    return dc.mean_pool_rows(out)


def fuse_scma(point: ModalityEmbedding, image: ModalityEmbedding, store,
              cfg: ModelConfig) -> Tensor:
    """Symmetric cross-modal attention; output is (1, 4*c_prime).

    Each modality's projected tokens query the other's (the other modality
    guides the attention); both attended results are pooled and concatenated
    with the projected pooled vectors.
    """
    wp = store.leaf("fuse.proj_p.w")
    wi = store.leaf("fuse.proj_i.w")
    f_hat_p = dc.matmul(dc.reshape(point.pooled, (1, cfg.c_p)), wp)    # (1, C')
    f_hat_i = dc.matmul(dc.reshape(image.pooled, (1, cfg.c_i)), wi)

    if cfg.fusion_mode == "token":
        tokens_p = dc.matmul(point.per_item, wp)
        tokens_i = dc.matmul(image.per_item, wi)
    else:  # pooled: each modality is a single-token sequence
        tokens_p, tokens_i = f_hat_p, f_hat_i

    pair_p, pair_i = (tokens_i, tokens_p) if cfg.swap_guidance \
        else (tokens_p, tokens_i)
    guided_p = _attention_block(pair_p, pair_i, store, "fuse.attn_p", cfg)
    guided_i = _attention_block(pair_i, pair_p, store, "fuse.attn_i", cfg)
    psi = dc.concat([guided_p, guided_i], axis=0)                       # (2C',)

    flat_p = dc.reshape(f_hat_p, (cfg.c_prime,))
    flat_i = dc.reshape(f_hat_i, (cfg.c_prime,))
    return dc.reshape(dc.concat([flat_p, flat_i, psi], axis=0),
                      (1, 4 * cfg.c_prime))


def regress_quality(feature: Tensor, store, cfg: ModelConfig) -> Tensor:
    """Two fully-connected layers -> scalar quality score (shape (1, 1))."""
    if feature.data.shape != (1, cfg.quality_dim):
        raise ValueError(f"expected quality feature of shape (1, {cfg.quality_dim}), "
                         f"got {feature.shape}")
    h = dc.relu(dc.add(dc.matmul(feature, store.leaf("head.fc0.w")),
                       store.leaf("head.fc0.b")))
    return dc.add(dc.matmul(h, store.leaf("head.fc1.w")), store.leaf("head.fc1.b"))


def predict(store, cfg: ModelConfig, submodels: np.ndarray | None,
            patches: np.ndarray | None) -> Tensor:
    """Full forward pass for one cloud; returns the (1, 1) score node.

    submodels: (n_p, n_s, 3); patches: (n_i, 3, H, W).  Either may be None
    when the variant ignores that modality.
    """
    dtype = store.dtype
    point_emb = image_emb = None
    if cfg.variant in ("full", "p", "p+i"):
        pts = dc.tensor(np.asarray(submodels, dtype=dtype))
        point_emb = encode_pointcloud(pts, store, cfg)
    if cfg.variant in ("full", "i", "p+i"):
        img = dc.tensor(np.asarray(patches, dtype=dtype))
        image_emb = encode_projections(img, store, cfg)

    if cfg.variant == "full":
        feature = fuse_scma(point_emb, image_emb, store, cfg)
    elif cfg.variant == "p":
        feature = dc.matmul(dc.reshape(point_emb.pooled, (1, cfg.c_p)),
                            store.leaf("fuse.proj_p.w"))
    elif cfg.variant == "i":
        feature = dc.matmul(dc.reshape(image_emb.pooled, (1, cfg.c_i)),
                            store.leaf("fuse.proj_i.w"))
    else:  # p+i: plain concatenation, no attention
        f_p = dc.matmul(dc.reshape(point_emb.pooled, (1, cfg.c_p)),
                        store.leaf("fuse.proj_p.w"))
        f_i = dc.matmul(dc.reshape(image_emb.pooled, (1, cfg.c_i)),
                        store.leaf("fuse.proj_i.w"))
        feature = dc.concat([f_p, f_i], axis=1)
    return regress_quality(feature, store, cfg)
