"""Task-supervised graph autoencoder producing the generation condition.

The full encoder concatenates a two-hop branch, a one-hop branch, and a pure
feature branch, fuses them with one linear map, and is trained against node
labels through a single-layer decoder. The condition vector is the mean over
node rows of the trained representation. Ablation modes keep the decoder and
training protocol but swap the encoder composition; NONE yields a zero vector
(the unconditional baseline).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graphs import Graph
from .optim import AdamW
from .rng import Rng, glorot_uniform
from .sparse import spmm
from .tensor import Tensor, cross_entropy_masked
from .zoo import GraphContext

MODES = ("GAE", "GCN2-only", "GCN1-only", "MLP2-only", "MLP1-only", "NONE")

DROPOUT_RATE = 0.1


class ConditionError(ValueError):
    pass


def branch_widths(d_p: int) -> tuple[int, int, int]:
    """Three branch widths summing to d_p; remainder goes to the first."""
    base = d_p // 3
    return d_p - 2 * base, base, base


@dataclass
class ConditionEncoder:
    mode: str
    d_f: int
    d_p: int
    d_c: int
    params: dict

    @classmethod
    def create(cls, mode: str, d_f: int, d_p: int, d_c: int, rng: Rng) -> "ConditionEncoder":
        if mode not in MODES:
            raise ConditionError(f"unknown condition mode {mode!r}")
        params: dict[str, Tensor] = {}

        def weight(name, din, dout):
            params[name] = Tensor(glorot_uniform(rng, (din, dout), din, dout), requires_grad=True)

        if mode == "GAE":
            d1, d2, d3 = branch_widths(d_p)
            weight("W1", d_f, d1)
            weight("W2", d_f, d2)
            weight("W3", d_f, d3)
            weight("W4", d_p, d_p)
        elif mode in ("GCN2-only", "GCN1-only", "MLP2-only"):
            weight("W_branch", d_f, d_p)
            weight("W4", d_p, d_p)
        elif mode == "MLP1-only":
            weight("W_branch", d_f, d_p)
        if mode != "NONE":
            weight("W5", d_p, d_c)
        return cls(mode, d_f, d_p, d_c, params)

    def encode(self, ctx: GraphContext, training: bool = False, rng: Rng | None = None) -> Tensor:
        """Node representation h (N, d_p) for this mode's encoder."""
        x = ctx.x
        ahat = ctx.ahat.base
        p = self.params
        if self.mode == "NONE":
            return Tensor(np.zeros((ctx.graph.n, self.d_p)))
        if self.mode == "GAE":
            two_hop = spmm(ahat, spmm(ahat, x @ p["W1"]))
            one_hop = spmm(ahat, x @ p["W2"])
            feat = x @ p["W3"]
            h = T.concat_cols([two_hop, one_hop, feat])
        elif self.mode == "GCN2-only":
            h = spmm(ahat, spmm(ahat, x @ p["W_branch"]))
        elif self.mode == "GCN1-only":
            h = spmm(ahat, x @ p["W_branch"])
        elif self.mode == "MLP2-only":
            h = x @ p["W_branch"]
        else:  # MLP1-only: single feature map, no fusion
            return x @ p["W_branch"]
        h = T.dropout(h, DROPOUT_RATE, training, rng)
        return h @ p["W4"]

    def decode(self, h: Tensor, training: bool = False, rng: Rng | None = None) -> Tensor:
        h = T.dropout(h, DROPOUT_RATE, training, rng)
        return h @ self.params["W5"]


def train_condition_encoder(
    graph: Graph,
    d_p: int,
    mode: str = "GAE",
    epochs: int = 200,
    seed: int = 42,
    learning_rate: float = 1e-3,
    weight_decay: float = 2e-3,
    ctx: GraphContext | None = None,
) -> tuple[ConditionEncoder, list]:
    """Train the mode's encoder with cross-entropy on the train mask."""
    if ctx is None:
        ctx = GraphContext(graph)
    rng = Rng(seed)
    enc = ConditionEncoder.create(mode, graph.d_f, d_p, graph.d_c, rng)
    losses: list[float] = []
    if mode == "NONE" or epochs == 0:
        return enc, losses
    opt = AdamW(learning_rate, weight_decay=weight_decay)
    for epoch in range(1, epochs + 1):
        h = enc.encode(ctx, training=True, rng=rng)
        logits = enc.decode(h, training=True, rng=rng)
        loss = cross_entropy_masked(logits, graph.labels, graph.train_mask)
        if not np.isfinite(loss.data):
            raise RuntimeError(f"condition encoder diverged at epoch {epoch}: loss={loss.data}")
        opt.zero_grad(enc.params)
        loss.backward()
        opt.step(enc.params)
        losses.append(float(loss.data))
    return enc, losses


def make_condition(graph: Graph, encoder: ConditionEncoder, ctx: GraphContext | None = None) -> np.ndarray:
    """Mean over node rows of the trained representation; NONE -> zeros."""
    if ctx is None:
        ctx = GraphContext(graph)
    h = encoder.encode(ctx, training=False)
    return h.data.mean(axis=0)


CONDITION_MAGIC = b"GNCOND\x00\x01"


def save_condition(path, condition: np.ndarray, mode: str) -> None:
    tag = mode.encode()
    with open(path, "wb") as f:
        f.write(CONDITION_MAGIC)
        f.write(struct.pack("<QQ", len(tag), condition.size))
        f.write(tag)
        f.write(np.asarray(condition, dtype="<f8").tobytes())


def load_condition(path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as f:
        if f.read(8) != CONDITION_MAGIC:
            raise ConditionError(f"{path}: not a condition file")
        tag_len, size = struct.unpack("<QQ", f.read(16))
        mode = f.read(tag_len).decode()
        vec = np.frombuffer(f.read(size * 8), dtype="<f8").copy()
    return vec, mode
