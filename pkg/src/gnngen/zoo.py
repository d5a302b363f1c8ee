"""Target GNN architectures: forward passes, parameter layouts, and the
flat-vector (de)serialization that turns a trained model into one row of the
diffusion corpus.

Layout convention: layer-major, weights before biases. A layout is a pure
function of (arch, D_f, D_c, config), so every checkpoint collected for one
configuration shares byte-compatible offsets.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .graphs import Graph, NormalizedAdjacency, normalize
from .rng import Rng, glorot_uniform
from .sparse import SparseAdjacency, spmm
from .tensor import Tensor

ARCHS = ("GCN1", "GCN2", "APPNP", "SAGE", "ChebNet", "GIN", "GAT", "H2GCN")

# negative slope of the attention scoring nonlinearity (standard GAT value)
GAT_ATT_SLOPE = 0.2


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class GnnConfig:
    arch: str
    hidden: int = 16
    heads: int = 4
    cheb_terms: int = 2
    alpha: float = 0.1
    appnp_steps: int = 10
    dropout: float = 0.0
    optimizer: str = "adam"
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    momentum: float = 0.9

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("teleport probability alpha must be in (0, 1]")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return f"{zlib.crc32(payload.encode()):08x}"


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class ParamLayout:
    entries: tuple
    total: int

    @classmethod
    def from_shapes(cls, shapes: list[tuple[str, tuple]]) -> "ParamLayout":
        entries = []
        offset = 0
        for name, shape in shapes:
            entries.append(LayoutEntry(name, tuple(shape), offset))
            offset += int(np.prod(shape))
        return cls(tuple(entries), offset)

    def entry(self, name: str) -> LayoutEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise LayoutError(f"no layout entry named {name!r}")


def layout_for(arch: str, d_f: int, d_c: int, config: GnnConfig) -> ParamLayout:
    h = config.hidden
    shapes: list[tuple[str, tuple]] = []
    if arch == "GCN1":
        shapes = [("layer0.weight", (d_f, d_c)), ("layer0.bias", (d_c,))]
    elif arch == "GCN2":
        shapes = [
            ("layer0.weight", (d_f, h)),
            ("layer0.bias", (h,)),
            ("layer1.weight", (h, d_c)),
            ("layer1.bias", (d_c,)),
        ]
    elif arch == "APPNP":
        shapes = [("linear.weight", (d_f, d_c)), ("linear.bias", (d_c,))]
    elif arch == "SAGE":
        dims = [(d_f, h), (h, d_c)]
        for i, (din, dout) in enumerate(dims):
            shapes += [
                (f"layer{i}.weight_self", (din, dout)),
                (f"layer{i}.weight_neigh", (din, dout)),
                (f"layer{i}.bias", (dout,)),
            ]
    elif arch == "ChebNet":
        dims = [(d_f, h), (h, d_c)]
        for i, (din, dout) in enumerate(dims):
            for m in range(config.cheb_terms):
                shapes.append((f"layer{i}.weight_{m}", (din, dout)))
            shapes.append((f"layer{i}.bias", (dout,)))
    elif arch == "GIN":
        dims = [(d_f, h, h), (h, h, d_c)]
        for i, (din, dmid, dout) in enumerate(dims):
            shapes += [
                (f"layer{i}.mlp.weight1", (din, dmid)),
                (f"layer{i}.mlp.bias1", (dmid,)),
                (f"layer{i}.mlp.weight2", (dmid, dout)),
                (f"layer{i}.mlp.bias2", (dout,)),
            ]
    elif arch == "GAT":
        for head in range(config.heads):
            shapes += [
                (f"layer0.head{head}.weight", (d_f, h)),
                (f"layer0.head{head}.att_src", (h,)),
                (f"layer0.head{head}.att_dst", (h,)),
            ]
        shapes.append(("layer0.bias", (config.heads * h,)))
        shapes += [
            ("layer1.weight", (config.heads * h, d_c)),
            ("layer1.att_src", (d_c,)),
            ("layer1.att_dst", (d_c,)),
            ("layer1.bias", (d_c,)),
        ]
    elif arch == "H2GCN":
        shapes = [
            ("embed.weight", (d_f, h)),
            ("embed.bias", (h,)),
            ("out.weight", (3 * h, d_c)),
            ("out.bias", (d_c,)),
        ]
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    return ParamLayout.from_shapes(shapes)


def init_params(layout: ParamLayout, rng: Rng) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for e in layout.entries:
        if "bias" in e.name:
            data = np.zeros(e.shape)
        elif len(e.shape) == 1:
            # attention vectors: treat as (len, 1) maps
            data = glorot_uniform(rng, e.shape, fan_in=e.shape[0], fan_out=1)
        else:
            data = glorot_uniform(rng, e.shape, fan_in=e.shape[0], fan_out=e.shape[-1])
        params[e.name] = Tensor(data, requires_grad=True)
    return params


def vectorize(params: dict[str, Tensor], layout: ParamLayout) -> np.ndarray:
    vec = np.empty(layout.total)
    for e in layout.entries:
        p = params[e.name]
        if tuple(p.data.shape) != e.shape:
            raise LayoutError(
                f"layout mismatch at {e.name!r}: param {p.data.shape}, layout {e.shape}"
            )
        vec[e.offset : e.offset + e.size] = p.data.ravel()
    return vec


def devectorize(vec: np.ndarray, layout: ParamLayout, requires_grad: bool = False) -> dict[str, Tensor]:
    vec = np.asarray(vec, dtype=np.float64).ravel()
    if vec.size != layout.total:
        raise LayoutError(f"flat vector length {vec.size} != layout total {layout.total}")
    return {
        e.name: Tensor(vec[e.offset : e.offset + e.size].reshape(e.shape).copy(), requires_grad)
        for e in layout.entries
    }


def _gin_xi(arch_key: str, n_layers: int) -> np.ndarray:
    """Fixed (not learned) per-layer perturbations, reproducible from dims."""
    rng = Rng(zlib.crc32(arch_key.encode()))
    return rng.uniform((n_layers,), 0.0, 0.01)


class GraphContext:
    """Read-only per-graph cache: normalized adjacency and arch-specific
    derived operators. Safe to share across concurrent forward passes."""

    def __init__(self, graph: Graph):
        self.graph = graph
        self.x = Tensor(graph.features)
        self.ahat: NormalizedAdjacency = normalize(graph.adjacency)
        self._cheb: SparseAdjacency | None = None
        self._hops: tuple | None = None
        self._gat_mask: np.ndarray | None = None

    @property
    def cheb_operator(self) -> SparseAdjacency:
        """Rescaled Laplacian with lambda_max taken as 2: Ahat - I."""
        if self._cheb is None:
            m = self.ahat.base.to_scipy() - sp.identity(self.graph.n, format="csr")
            self._cheb = SparseAdjacency.from_scipy(m)
        return self._cheb

    @property
    def hop_operators(self) -> tuple[SparseAdjacency, SparseAdjacency]:
        """Degree-normalized 1-hop and exact-2-hop neighborhood operators."""
        if self._hops is None:
            a = (self.graph.adjacency.to_scipy() > 0).astype(np.float64)
            a2 = (a @ a > 0).astype(np.float64)
            a2.setdiag(0)
            a2 = ((a2 - a2.multiply(a)) > 0).astype(np.float64)
            a2.eliminate_zeros()
            self._hops = (_sym_normalize(a), _sym_normalize(a2))
        return self._hops

    @property
    def gat_mask(self) -> np.ndarray:
        if self._gat_mask is None:
            mask = self.graph.adjacency.to_dense() > 0
            np.fill_diagonal(mask, True)
            self._gat_mask = mask.astype(np.float64)
        return self._gat_mask


def _sym_normalize(a: sp.spmatrix) -> SparseAdjacency:
    deg = np.asarray(a.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0  # zero-degree guard
    d = sp.diags(1.0 / np.sqrt(deg))
    return SparseAdjacency.from_scipy((d @ a @ d).tocsr())


def _drop(x, rate, training, rng):
    if training and rate > 0.0:
        return T.dropout(x, rate, training, rng)
    return x


def forward(
    config: GnnConfig,
    ctx: GraphContext,
    params: dict[str, Tensor],
    training: bool = False,
    rng: Rng | None = None,
) -> Tensor:
    """Logits (N, D_c) for the configured architecture."""
    arch = config.arch
    ahat = ctx.ahat.base
    x = ctx.x
    rate = config.dropout

    if arch == "GCN1":
        h = _drop(x, rate, training, rng)
        return spmm(ahat, h) @ params["layer0.weight"] + params["layer0.bias"]

    if arch == "GCN2":
        h = _drop(x, rate, training, rng)
        h = T.relu(spmm(ahat, h) @ params["layer0.weight"] + params["layer0.bias"])
        h = _drop(h, rate, training, rng)
        return spmm(ahat, h) @ params["layer1.weight"] + params["layer1.bias"]

    if arch == "APPNP":
        h = x
        for _ in range(config.appnp_steps):
            h = spmm(ahat, h) * Tensor(1.0 - config.alpha) + x * Tensor(config.alpha)
        h = _drop(h, rate, training, rng)
        return h @ params["linear.weight"] + params["linear.bias"]

    if arch == "SAGE":
        h = x
        for i in range(2):
            h = _drop(h, rate, training, rng)
            h = (
                h @ params[f"layer{i}.weight_self"]
                + spmm(ahat, h) @ params[f"layer{i}.weight_neigh"]
                + params[f"layer{i}.bias"]
            )
            if i == 0:
                h = T.relu(h)
        return h

    if arch == "ChebNet":
        lhat = ctx.cheb_operator
        h = x
        for i in range(2):
            h = _drop(h, rate, training, rng)
            terms = [h]
            if config.cheb_terms > 1:
                terms.append(spmm(lhat, h))
            for _ in range(2, config.cheb_terms):
                terms.append(spmm(lhat, terms[-1]) * Tensor(2.0) - terms[-2])
            out = terms[0] @ params[f"layer{i}.weight_0"]
            for m in range(1, config.cheb_terms):
                out = out + terms[m] @ params[f"layer{i}.weight_{m}"]
            h = out + params[f"layer{i}.bias"]
            if i == 0:
                h = T.relu(h)
        return h

    if arch == "GIN":
        xi = _gin_xi(f"GIN:{ctx.graph.d_f}:{ctx.graph.d_c}:{config.hidden}", 2)
        h = x
        for i in range(2):
            h = _drop(h, rate, training, rng)
            agg = spmm(ahat, h) + h * Tensor(1.0 + xi[i])
            z = T.relu(agg @ params[f"layer{i}.mlp.weight1"] + params[f"layer{i}.mlp.bias1"])
            h = z @ params[f"layer{i}.mlp.weight2"] + params[f"layer{i}.mlp.bias2"]
            if i == 0:
                h = T.relu(h)
        return h

    if arch == "GAT":
        mask = Tensor(ctx.gat_mask)
        neg = Tensor((1.0 - ctx.gat_mask) * -1e30)
        h = _drop(x, rate, training, rng)
        heads_out = []
        for head in range(config.heads):
            heads_out.append(
                _gat_head(
                    h,
                    params[f"layer0.head{head}.weight"],
                    params[f"layer0.head{head}.att_src"],
                    params[f"layer0.head{head}.att_dst"],
                    mask,
                    neg,
                    rate,
                    training,
                    rng,
                )
            )
        h = T.relu(T.concat_cols(heads_out) + params["layer0.bias"])
        h = _drop(h, rate, training, rng)
        out = _gat_head(
            h,
            params["layer1.weight"],
            params["layer1.att_src"],
            params["layer1.att_dst"],
            mask,
            neg,
            rate,
            training,
            rng,
        )
        return out + params["layer1.bias"]

    if arch == "H2GCN":
        hop1, hop2 = ctx.hop_operators
        h0 = x @ params["embed.weight"] + params["embed.bias"]
        h1 = spmm(hop1, h0)
        h2 = spmm(hop2, h0)
        h = T.concat_cols([h0, h1, h2])
        h = _drop(h, rate, training, rng)
        return h @ params["out.weight"] + params["out.bias"]

    raise ValueError(f"unknown architecture {arch!r}")


def _gat_head(h, weight, att_src, att_dst, mask, neg, rate, training, rng):
    """Single-layer attention head with masked in-neighborhood softmax."""
    hw = h @ weight
    s_src = hw @ T.reshape(att_src, (-1, 1))  # (N,1)
    s_dst = hw @ T.reshape(att_dst, (-1, 1))
    scores = T.leaky_relu(s_src + T.transpose(s_dst), GAT_ATT_SLOPE)
    attn = T.softmax_rows(scores * mask + neg)
    attn = attn * mask  # zero the vanishing off-edge mass exactly
    attn = _drop(attn, rate, training, rng)
    return attn @ hw


def accuracy(logits, graph: Graph, mask: np.ndarray) -> float:
    """Argmax match rate over the mask; ties break to the lowest class index."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("accuracy: empty mask")
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    pred = data.argmax(axis=1)
    return float((pred[mask] == graph.labels[mask]).mean())
