"""Vision Transformer backbone with a fully connected classification head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.random import derive_key, truncated_normal, uniform01
from .dataset import LABELS, NUM_CLASSES, Label
from .errors import InvalidConfig, ShapeMismatch


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 64
    patch_size: int = 8
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_dim: int = 128
    num_classes: int = NUM_CLASSES
    head_hidden: tuple[int, ...] = (64,)
    dropout: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "head_hidden", tuple(int(h) for h in self.head_hidden))

    @classmethod
    def desk(cls, **overrides) -> "ViTConfig":
        return cls(**overrides)

    @classmethod
    def b16(cls, image_size: int = 224, **overrides) -> "ViTConfig":
        """ViT-B/16 widths: patch 16, dim 768, depth 12, 12 heads, MLP 3072."""
        kw = dict(image_size=image_size, patch_size=16, dim=768, depth=12, heads=12, mlp_dim=3072,
                  head_hidden=(768,))
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def preset(cls, name: str, **overrides) -> "ViTConfig":
        try:
            return {"desk": cls.desk, "b16": cls.b16}[name](**overrides)
        except KeyError:
            raise InvalidConfig(f"unknown preset {name!r} (choose 'desk' or 'b16')") from None

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self) -> int:
        return 1 + self.num_patches

    def validate(self) -> None:
        if min(self.image_size, self.patch_size, self.dim, self.depth, self.heads, self.mlp_dim) < 1:
            raise InvalidConfig(f"sizes must be positive: {self}")
        if self.image_size % self.patch_size:
            raise InvalidConfig(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.dim % self.heads:
            raise InvalidConfig(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.num_classes != NUM_CLASSES:
            raise InvalidConfig(f"num_classes must be {NUM_CLASSES}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig(f"dropout must lie in [0, 1), got {self.dropout}")
        if any(h < 1 for h in self.head_hidden):
            raise InvalidConfig("head hidden widths must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def parameter_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter, in canonical order."""
    d, p = cfg.dim, cfg.patch_size
    shapes = {
        "patch_embed.weight": (p * p * 3, d),
        "patch_embed.bias": (d,),
        "cls_token": (1, d),
        "pos_embed": (cfg.num_tokens, d),
    }
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        shapes.update({
            b + "ln1.gain": (d,), b + "ln1.bias": (d,),
            b + "attn.qkv.weight": (d, 3 * d), b + "attn.qkv.bias": (3 * d,),
            b + "attn.proj.weight": (d, d), b + "attn.proj.bias": (d,),
            b + "ln2.gain": (d,), b + "ln2.bias": (d,),
            b + "mlp.fc1.weight": (d, cfg.mlp_dim), b + "mlp.fc1.bias": (cfg.mlp_dim,),
            b + "mlp.fc2.weight": (cfg.mlp_dim, d), b + "mlp.fc2.bias": (d,),
        })
    shapes["norm.gain"] = (d,)
    shapes["norm.bias"] = (d,)
    widths = [d, *cfg.head_hidden, cfg.num_classes]
    for k in range(len(widths) - 1):
        shapes[f"head.{k}.weight"] = (widths[k], widths[k + 1])
        shapes[f"head.{k}.bias"] = (widths[k + 1],)
    return shapes


def parameter_count(cfg: ViTConfig) -> int:
    """Closed form: embeddings + depth * per-block + final norm + head."""
    cfg.validate()
    d, m = cfg.dim, cfg.mlp_dim
    embed = (cfg.patch_size ** 2 * 3 + 1) * d + d + cfg.num_tokens * d
    block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * m + m) + (m * d + d)
    widths = [d, *cfg.head_hidden, cfg.num_classes]
    head = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    return embed + cfg.depth * block + 2 * d + head


@dataclass
class ViTModel:
    config: ViTConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def forward(self, batch, train=False, dropout_seed=0):
        return forward(self, batch, train=train, dropout_seed=dropout_seed)

    def predict(self, batch):
        return predict(self, batch)

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        shapes = parameter_shapes(self.config)
        if set(state) != set(shapes):
            raise ShapeMismatch(f"parameter names differ: {sorted(set(state) ^ set(shapes))[:5]}")
        for name, shape in shapes.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {arr.shape}")
            self.params[name] = Tensor(arr.copy(), requires_grad=True, name=name)

    def copy(self) -> "ViTModel":
        m = ViTModel(self.config)
        m.load_state(self.state())
        return m

    def astype(self, dtype) -> "ViTModel":
        """Copy with parameters cast to ``dtype`` (float64 for gradient checks)."""
        return ViTModel(self.config, {k: Tensor(t.data.astype(dtype), requires_grad=True, name=k)
                                      for k, t in self.params.items()})

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


def init_model(cfg: ViTConfig, seed: int = 0) -> ViTModel:
    """Truncated-normal (std 0.02) weights and embeddings, zero biases and class token, unit norm gains."""
    cfg.validate()
    params = {}
    for i, (name, shape) in enumerate(parameter_shapes(cfg).items()):
        if name.endswith(".gain"):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias") or name == "cls_token":
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = truncated_normal(shape, std=0.02, seed=derive_key(seed, i))
        params[name] = Tensor(data, requires_grad=True, name=name)
    return ViTModel(cfg, params)


def patchify(batch: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, H, W, 3) -> (B, N, P*P*3), patches in row-major order."""
    b, h, w, c = batch.shape
    p = patch_size
    x = batch.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // p) * (w // p), p * p * c)


class _Dropout:
    def __init__(self, rate: float, seed: int, active: bool):
        self.rate = rate
        self.seed = seed
        self.active = active and rate > 0
        self.site = 0

    def __call__(self, x: Tensor) -> Tensor:
        if not self.active:
            return x
        key = derive_key(self.seed, self.site)
        self.site += 1
        keep = uniform01(key, np.arange(x.size, dtype=np.uint64)).reshape(x.shape) >= self.rate
        return ops.dropout_mask_apply(x, keep / (1.0 - self.rate))


def _linear(x, params, prefix):
    return ops.add(ops.matmul(x, params[prefix + ".weight"]), params[prefix + ".bias"])


def _attention(x, params, prefix, cfg, attn_out):
    b, t, d = x.shape
    hd = d // cfg.heads
    qkv = _linear(x, params, prefix + ".qkv")
    qkv = ops.transpose(ops.reshape(qkv, (b, t, 3, cfg.heads, hd)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    att = ops.softmax(ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(hd)), axis=-1)
    if attn_out is not None:
        attn_out.append(att.data)
    o = ops.reshape(ops.transpose(ops.matmul(att, v), (0, 2, 1, 3)), (b, t, d))
    return _linear(o, params, prefix + ".proj")


def _check_batch(model: ViTModel, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=model.dtype)
    s = model.config.image_size
    if batch.ndim != 4 or batch.shape[1:] != (s, s, 3):
        raise ShapeMismatch(f"expected a (B, {s}, {s}, 3) batch, got {batch.shape}")
    return batch


def extract_features(model: ViTModel, batch, train: bool = False, dropout_seed: int = 0,
                     attn_out: Optional[list] = None) -> Tensor:
    """Class-token vector after the final layer norm, shape (B, dim)."""
    cfg, p = model.config, model.params
    batch = _check_batch(model, batch)
    drop = _Dropout(cfg.dropout, dropout_seed, train)
    b = batch.shape[0]
    # pixels are mapped from [0, 1] to [-1, 1] before the patch projection
    tokens = _linear(Tensor(patchify(2 * batch - 1, cfg.patch_size)), p, "patch_embed")
    cls = ops.add(Tensor(np.zeros((b, 1, cfg.dim), dtype=batch.dtype)), p["cls_token"])
    x = drop(ops.add(ops.concat([cls, tokens], axis=1), p["pos_embed"]))
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        h = ops.layer_norm(x, p[pre + "ln1.gain"], p[pre + "ln1.bias"])
        x = ops.add(x, drop(_attention(h, p, pre + "attn", cfg, attn_out)))
        h = ops.layer_norm(x, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
        h = ops.gelu(_linear(h, p, pre + "mlp.fc1"))
        x = ops.add(x, drop(_linear(h, p, pre + "mlp.fc2")))
    return ops.layer_norm(x[:, 0, :], p["norm.gain"], p["norm.bias"])


def head(model: ViTModel, features: Tensor, train: bool = False, dropout_seed: int = 0) -> Tensor:
    """FCN classifier: gelu hidden layers, then a linear map to the class logits."""
    n_layers = len(model.config.head_hidden) + 1
    drop = _Dropout(model.config.dropout, derive_key(dropout_seed, 1 << 20), train)
    x = features
    for k in range(n_layers):
        x = _linear(x, model.params, f"head.{k}")
        if k < n_layers - 1:
            x = drop(ops.gelu(x))
    return x


def forward(model: ViTModel, batch, train: bool = False, dropout_seed: int = 0,
            attn_out: Optional[list] = None) -> Tensor:
    """Logits of shape (B, num_classes). Dropout is active only when ``train``."""
    feats = extract_features(model, batch, train=train, dropout_seed=dropout_seed, attn_out=attn_out)
    return head(model, feats, train=train, dropout_seed=dropout_seed)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def labels_from_logits(logits: np.ndarray) -> tuple[list[Label], np.ndarray]:
    probs = softmax_probs(logits)
    # argmax returns the first maximum, i.e. the lowest label index on ties
    return [LABELS[i] for i in np.argmax(logits, axis=-1)], probs


def predict(model: ViTModel, batch, chunk: int = 64) -> tuple[list[Label], np.ndarray]:
    batch = _check_batch(model, batch)
    logits = [forward(model, batch[i:i + chunk]).data for i in range(0, len(batch), chunk)]
    return labels_from_logits(np.concatenate(logits) if logits else np.zeros((0, NUM_CLASSES)))


def features(model: ViTModel, batch, chunk: int = 64) -> np.ndarray:
    batch = _check_batch(model, batch)
    out = [extract_features(model, batch[i:i + chunk]).data for i in range(0, len(batch), chunk)]
    return np.concatenate(out) if out else np.zeros((0, model.config.dim), dtype=np.float32)
