"""SignGT: signed self-attention plus a structure-aware feed-forward network."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError, InvalidParameterError, ShapeError
from .graph import Graph, StructuralBias

VARIANTS = ("signed", "original", "tanh")
TASKS = ("node", "graph")
NORMS = ("pre", "none")


@dataclass
class AttentionConfig:
    num_heads: int = 1
    head_dim: int = 8
    scale_scores: bool = True
    variant: str = "signed"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.num_heads < 1 or self.head_dim < 1:
            raise InvalidParameterError("num_heads and head_dim must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidParameterError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.variant not in VARIANTS:
            raise InvalidParameterError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class ModelConfig:
    in_dim: int
    num_classes: int
    d_model: int = 64
    num_heads: int = 2
    num_layers: int = 1
    k: int = 1
    variant: str = "signed"
    scale_scores: bool = True
    norm: str = "pre"
    dropout: float = 0.0
    task: str = "node"
    zero_init_head: bool = False

    def __post_init__(self):
        if self.num_layers < 1:
            raise InvalidParameterError("num_layers must be >= 1")
        if self.num_classes < 1 or self.in_dim < 1:
            raise InvalidParameterError("in_dim and num_classes must be >= 1")
        if self.num_heads < 1 or self.d_model % self.num_heads:
            raise InvalidParameterError(
                f"d_model ({self.d_model}) must be a positive multiple of num_heads ({self.num_heads})"
            )
        if self.k < 0:
            raise InvalidParameterError("k must be >= 0")
        if self.norm not in NORMS:
            raise InvalidParameterError(f"norm must be one of {NORMS}")
        if self.task not in TASKS:
            raise InvalidParameterError(f"task must be one of {TASKS}")
        self.attention  # validates variant and dropout

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(
            self.num_heads, self.head_dim, self.scale_scores, self.variant, self.dropout
        )


@dataclass(eq=False)
class LayerParams:
    wq: list
    wk: list
    wv: list
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    norm1: Optional[tuple] = None
    norm2: Optional[tuple] = None

    def named(self, prefix: str):
        for name in ("wq", "wk", "wv"):
            for i, t in enumerate(getattr(self, name)):
                yield f"{prefix}.{name}.{i}", t
        for name in ("wo", "w1", "b1", "w2", "b2"):
            yield f"{prefix}.{name}", getattr(self, name)
        for name in ("norm1", "norm2"):
            pair = getattr(self, name)
            if pair is not None:
                yield f"{prefix}.{name}.scale", pair[0]
                yield f"{prefix}.{name}.shift", pair[1]


def _norm_pair(d: int) -> tuple:
    return (
        ad.tensor_new((1, d), "constant", c=1.0, requires_grad=True),
        ad.tensor_new((1, d), "zeros", requires_grad=True),
    )


@dataclass(eq=False)
class SignGTModel:
    """Parameters of a SignGT network; use :func:`model_forward` to run it."""

    config: ModelConfig
    proj_w: Tensor
    proj_b: Tensor
    layers: list
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor
    final_norm: Optional[tuple] = None
    structural_bias: Optional[StructuralBias] = field(default=None, repr=False)

    @classmethod
    def init(cls, config: ModelConfig, seed=0) -> "SignGTModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        d, dk = config.d_model, config.head_dim

        def glorot(*shape):
            return ad.tensor_new(shape, "glorot", seed=rng, requires_grad=True)

        def zeros(*shape):
            return ad.tensor_new(shape, "zeros", requires_grad=True)

        pre = config.norm == "pre"
        layers = []
        for _ in range(config.num_layers):
            layers.append(
                LayerParams(
                    wq=[glorot(d, dk) for _ in range(config.num_heads)],
                    wk=[glorot(d, dk) for _ in range(config.num_heads)],
                    wv=[glorot(d, dk) for _ in range(config.num_heads)],
                    wo=glorot(config.num_heads * dk, d),
                    w1=glorot(d, d),
                    b1=zeros(1, d),
                    w2=glorot(d, d),
                    b2=zeros(1, d),
                    norm1=_norm_pair(d) if pre else None,
                    norm2=_norm_pair(d) if pre else None,
                )
            )
        c = config.num_classes
        return cls(
            config=config,
            proj_w=glorot(config.in_dim, d),
            proj_b=zeros(1, d),
            layers=layers,
            head_w1=glorot(d, d),
            head_b1=zeros(1, d),
            head_w2=zeros(d, c) if config.zero_init_head else glorot(d, c),
            head_b2=zeros(1, c),
            final_norm=_norm_pair(d) if pre else None,
        )

    def named_parameters(self) -> list:
        out = [("proj.w", self.proj_w), ("proj.b", self.proj_b)]
        for i, lp in enumerate(self.layers):
            out.extend(lp.named(f"layer{i}"))
        if self.final_norm is not None:
            out += [("final_norm.scale", self.final_norm[0]), ("final_norm.shift", self.final_norm[1])]
        out += [
            ("head.w1", self.head_w1),
            ("head.b1", self.head_b1),
            ("head.w2", self.head_w2),
            ("head.b2", self.head_b2),
        ]
        return out

    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        for name, t in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"{name}: expected {t.shape}, got {value.shape}")
            t.data[...] = value

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None


def save_model(model: SignGTModel, path) -> None:
    arrays = model.state_dict()
    arrays["__config__"] = np.array(json.dumps(asdict(model.config)))
    np.savez(path, **arrays)


def load_model(path) -> SignGTModel:
    with np.load(path, allow_pickle=False) as z:
        config = ModelConfig(**json.loads(str(z["__config__"])))
        model = SignGTModel.init(config, 0)
        model.load_state_dict({k: z[k] for k in z.files if k != "__config__"})
    return model


# ---------------------------------------------------------------------------
# attention


def attention_scores(H: Tensor, Wq: Tensor, Wk: Tensor, config: AttentionConfig) -> Tensor:
    """Pairwise scores ``(H Wq)(H Wk)^T``, divided by sqrt(head_dim) when configured."""
    if Wq.shape != Wk.shape:
        raise ShapeError(f"query/key projections differ: {Wq.shape} vs {Wk.shape}")
    S = ad.matmul(ad.matmul(H, Wq), ad.transpose(ad.matmul(H, Wk)))
    if config.scale_scores:
        S = ad.scale(S, 1.0 / math.sqrt(config.head_dim))
    return S


def signed_softmax(S: Tensor) -> Tensor:
    """Softmax over score magnitudes with each score's sign reattached.

    Rows have unit L1 norm; a zero score is treated as positive.
    """
    return ad.mul(ad.sign(S), ad.softmax_rows(ad.absolute(S)))


def original_softmax(S: Tensor) -> Tensor:
    return ad.softmax_rows(S)


def tanh_attention(S: Tensor) -> Tensor:
    # deliberately unnormalised
    return ad.tanh(S)


_ATTEND = {"signed": signed_softmax, "original": original_softmax, "tanh": tanh_attention}


def attend(S: Tensor, variant: str) -> Tensor:
    try:
        return _ATTEND[variant](S)
    except KeyError:
        raise InvalidParameterError(f"unknown attention variant {variant!r}") from None


def aggregate(M: Tensor, V: Tensor) -> Tensor:
    return ad.matmul(M, V)


def _dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, Tensor(mask))


def multi_head(
    H: Tensor,
    lp: LayerParams,
    config: AttentionConfig,
    variant: Optional[str] = None,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
    record: Optional[list] = None,
) -> Tensor:
    """Concatenate per-head aggregations and project with the output matrix.

    When ``record`` is a list, each head's attention matrix is appended to it.
    """
    variant = variant or config.variant
    if lp.wo.shape[0] != config.num_heads * config.head_dim:
        raise ShapeError("output projection does not match heads * head_dim")
    heads = []
    for wq, wk, wv in zip(lp.wq, lp.wk, lp.wv):
        M = attend(attention_scores(H, wq, wk, config), variant)
        if record is not None:
            record.append(M.data.copy())
        if train:
            M = _dropout(M, config.dropout_rate, rng)
        heads.append(aggregate(M, ad.matmul(H, wv)))
    cat = heads[0] if len(heads) == 1 else ad.concat_cols(heads)
    return ad.matmul(cat, lp.wo)


# ---------------------------------------------------------------------------
# structure-aware feed-forward


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add_rowvec(ad.matmul(x, w), b)


def sffn_forward(
    H: Tensor,
    bias: StructuralBias,
    lp: LayerParams,
    dropout: float = 0.0,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """``Linear2(ReLU(A_hat^k @ Linear1(H)))``; with k = 0 this is a plain FFN."""
    if bias.n != H.shape[0]:
        raise ShapeError(f"structural bias is {bias.n}x{bias.n} but H has {H.shape[0]} rows")
    z = linear(H, lp.w1, lp.b1)
    if bias.k > 0:
        z = ad.matmul_const(bias.matrix, z)
    z = ad.relu(z)
    if train:
        z = _dropout(z, dropout, rng)
    return linear(z, lp.w2, lp.b2)


def layer_norm(H: Tensor, pair: Optional[tuple]) -> Tensor:
    if pair is None:
        return H
    return ad.add_rowvec(ad.mul_rowvec(ad.standardize_rows(H), pair[0]), pair[1])


def signgt_layer(
    H: Tensor,
    lp: LayerParams,
    bias: StructuralBias,
    config: ModelConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
    record: Optional[list] = None,
) -> Tensor:
    """One pre-norm residual block: attention sub-layer, then SFFN sub-layer."""
    H1 = ad.add(H, multi_head(layer_norm(H, lp.norm1), lp, config.attention, train=train, rng=rng, record=record))
    ff = sffn_forward(layer_norm(H1, lp.norm2), bias, lp, config.dropout, train, rng)
    return ad.add(H1, ff)


# ---------------------------------------------------------------------------
# whole model


def graph_readout(H: Tensor, method: str = "mean") -> Tensor:
    if H.data.ndim != 2 or H.shape[0] < 1:
        raise InvalidInputError("readout of an empty graph")
    if method != "mean":
        raise InvalidParameterError(f"unsupported readout {method!r}")
    return ad.mean_rows(H)


def _check_mode(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise InvalidParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def encode(
    model: SignGTModel,
    g: Graph,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    record: Optional[list] = None,
) -> Tensor:
    """Final node representations (after the last layer and final norm).

    ``record``, if given, receives one list of per-head attention matrices per layer.
    """
    train = _check_mode(mode)
    cfg = model.config
    if g.features.shape[1] != cfg.in_dim:
        raise ShapeError(f"graph has {g.features.shape[1]} features, model expects {cfg.in_dim}")
    bias = g.structural_bias(cfg.k)
    H = linear(Tensor(g.features), model.proj_w, model.proj_b)
    for lp in model.layers:
        heads = None
        if record is not None:
            heads = []
            record.append(heads)
        H = signgt_layer(H, lp, bias, cfg, train, rng, heads)
    return layer_norm(H, model.final_norm)


def _head(model: SignGTModel, H: Tensor) -> Tensor:
    hidden = ad.relu(linear(H, model.head_w1, model.head_b1))
    return linear(hidden, model.head_w2, model.head_b2)


def model_forward(
    model: SignGTModel,
    g: Graph,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    record: Optional[list] = None,
) -> Tensor:
    """Logits: ``n x C`` for the node task, ``1 x C`` for the graph task."""
    H = encode(model, g, mode, rng, record)
    if model.config.task == "graph":
        H = graph_readout(H)
    return _head(model, H)


def attention_rows(model: SignGTModel, g: Graph, node_id: int, layer: int = -1) -> np.ndarray:
    """``(heads, n)`` attention weights of ``node_id`` in eval mode."""
    if not 0 <= node_id < g.n:
        raise InvalidInputError(f"node id {node_id} outside [0, {g.n})")
    record: list = []
    encode(model, g, "eval", record=record)
    return np.stack([M[node_id] for M in record[layer]])
