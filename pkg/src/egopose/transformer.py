"""ViT-style sequence classifier over per-frame feature vectors.

Each of the ``seq_len`` frame vectors is projected to a token, a learned CLS
token is prepended, learned positional embeddings are added, and the result
runs through pre-norm encoder blocks. The classifier reads the CLS position
after a final layer norm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .featurize import FEATURE_DIM, SEQ_LEN, SequenceTensor

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    d_mlp: int = 512
    dropout: float = 0.1
    seq_len: int = SEQ_LEN
    input_dim: int = FEATURE_DIM
    num_classes: int = 36
    num_object_classes: int = 8

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "d_mlp", "seq_len", "num_classes", "num_object_classes"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"model.{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.input_dim != FEATURE_DIM:
            raise ConfigError(f"input_dim must be {FEATURE_DIM}, got {self.input_dim}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, m = cfg.d_model, cfg.d_mlp
    shapes = {
        "token_proj.w": (cfg.input_dim, d),
        "token_proj.b": (d,),
        "cls_token": (d,),
        "pos_embed": (cfg.seq_len + 1, d),
    }
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.wk": (d, d), p + "attn.wv": (d, d), p + "attn.wo": (d, d),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.w1": (d, m), p + "mlp.b1": (m,), p + "mlp.w2": (m, d), p + "mlp.b2": (d,),
        })
    shapes.update({"ln_f.g": (d,), "ln_f.b": (d,), "head.w": (d, cfg.num_classes), "head.b": (cfg.num_classes,)})
    return shapes


class Model:
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        expected = param_shapes(cfg)
        if list(params) != list(expected):
            raise ShapeError("parameter names do not match the model config")
        for name, shape in expected.items():
            if tuple(np.shape(params[name])) != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {np.shape(params[name])}")
        self.cfg = cfg
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def copy(self) -> Model:
        return Model(self.cfg, self.state())

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def equals(self, other: Model) -> bool:
        return self.cfg == other.cfg and all(
            np.array_equal(a.data, b.data) for a, b in zip(self.params.values(), other.params.values())
        )


def init_model(cfg: ModelConfig, rng: np.random.Generator | int = 0) -> Model:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif leaf in ("b", "b1", "b2"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape)
    return Model(cfg, params)


def attention(x: Tensor, model: Model, block: int, train: bool = False,
              rng: np.random.Generator | None = None, return_weights: bool = False):
    """Multi-head self-attention over a (batch, tokens, d_model) tensor.

    With ``return_weights`` the (batch, heads, tokens, tokens) attention
    probabilities are returned alongside the output.
    """
    cfg = model.cfg
    if x.ndim != 3 or x.shape[-1] != cfg.d_model:
        raise ShapeError(f"attention expects (batch, tokens, {cfg.d_model}), got {x.shape}")
    B, N, D = x.shape
    H = cfg.n_heads
    dh = D // H
    p = f"blocks.{block}.attn."

    def heads(w):
        return ad.permute(ad.reshape(ad.matmul(x, model[p + w]), (B, N, H, dh)), (0, 2, 1, 3))

    q, k, v = heads("wq"), heads("wk"), heads("wv")
    scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / math.sqrt(dh))
    probs = ad.softmax_lastdim(scores)
    weights = ad.dropout(probs, cfg.dropout, rng, train)
    ctx = ad.reshape(ad.permute(ad.matmul(weights, v), (0, 2, 1, 3)), (B, N, D))
    out = ad.dropout(ad.matmul(ctx, model[p + "wo"]), cfg.dropout, rng, train)
    return (out, probs.data) if return_weights else out


def _mlp(x: Tensor, model: Model, block: int, train: bool, rng) -> Tensor:
    p = f"blocks.{block}.mlp."
    h = ad.gelu(ad.add(ad.matmul(x, model[p + "w1"]), model[p + "b1"]))
    out = ad.add(ad.matmul(h, model[p + "w2"]), model[p + "b2"])
    return ad.dropout(out, model.cfg.dropout, rng, train)


def _as_batch(V) -> np.ndarray:
    if isinstance(V, SequenceTensor):
        V = V.rows
    V = np.asarray(V, dtype=np.float64)
    return V[None] if V.ndim == 2 else V


def forward(model: Model, V, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Logits of shape (num_classes,) for one sequence or (batch, num_classes) for a stack."""
    cfg = model.cfg
    single = isinstance(V, SequenceTensor) or np.ndim(V) == 2
    X = _as_batch(V)
    if X.ndim != 3 or X.shape[1:] != (cfg.seq_len, cfg.input_dim):
        raise ShapeError(f"expected input ({cfg.seq_len}, {cfg.input_dim}) per sequence, got {X.shape}")
    if train and cfg.dropout > 0 and rng is None:
        raise ValueError("training-mode forward with dropout needs an rng")
    B, L, _ = X.shape
    D = cfg.d_model

    tokens = ad.add(ad.matmul(Tensor(X), model["token_proj.w"]), model["token_proj.b"])
    cls = ad.broadcast_to(ad.reshape(model["cls_token"], (1, 1, D)), (B, 1, D))
    x = ad.concat_rows([cls, tokens])
    x = ad.add(x, ad.embedding_select(model["pos_embed"], np.arange(L + 1)))
    x = ad.dropout(x, cfg.dropout, rng, train)
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        h = ad.layer_norm(x, model[p + "ln1.g"], model[p + "ln1.b"], LN_EPS)
        x = ad.add(x, attention(h, model, i, train, rng))
        h = ad.layer_norm(x, model[p + "ln2.g"], model[p + "ln2.b"], LN_EPS)
        x = ad.add(x, _mlp(h, model, i, train, rng))
    cls_out = ad.reshape(ad.slice_rows(x, 0, 1), (B, D))
    cls_out = ad.layer_norm(cls_out, model["ln_f.g"], model["ln_f.b"], LN_EPS)
    logits = ad.add(ad.matmul(cls_out, model["head.w"]), model["head.b"])
    return ad.reshape(logits, (cfg.num_classes,)) if single else logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: Model, V) -> tuple[int, np.ndarray]:
    probs = softmax(forward(model, V).data)
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return int(np.argmax(probs)), probs
