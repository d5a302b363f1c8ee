"""Parameter autoencoder: strided 1-D conv compression of flat checkpoints.

Encoder: 4 blocks of (valid conv, stride == kernel) -> LeakyReLU -> instance
norm (omitted on the final block so the latent keeps channel mean/scale),
channel path 1->6->6->6->6. The latent is the concatenation of the 6
final channels. Decoder mirrors with transposed convs, channel path
6->512->512->8->1; each transposed conv is cropped / right zero-padded to the
exact encoder-side length, so decode(encode(w)) has length D_w bit-exactly.
The final decoder block is a plain conv (no activation/normalization) so the
output range is unconstrained.

Checkpoints are standardized per dimension over the corpus before encoding
and de-standardized after decoding; raw layer scales differ by orders of
magnitude and would otherwise dominate the reconstruction loss.

When no stride lands the per-channel latent length in the [8, 16] band, the
standardized input is right zero-padded to the next multiple of stride^4 so
the conv tree covers every position (a valid-conv tail outside all receptive
fields is unrecoverable); the decoder output is cropped back to D_w.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .optim import AdamW
from .rng import Rng, glorot_uniform
from .tensor import Tensor

LEAKY_SLOPE = 0.01
ENC_CHANNELS = (6, 6, 6, 6)
DEC_CHANNELS = (512, 512, 8, 1)

# Published stride/kernel choices keyed by flat parameter size. Two published
# rows disagree for size 118710 (strides 9 and 10); 10 is kept because it is
# the only one whose latent length stays within the allowed band.
STRIDE_OVERRIDES = {
    10038: 5, 22224: 7, 4665: 5, 11630: 6,
    23063: 6, 59366: 9, 60037: 9, 37301: 7,
    46103: 8, 118710: 10, 120005: 10, 74581: 9,
    30005: 7, 298309: 13,
    96447: 9, 241648: 12, 15315: 6, 37603: 8,
    93780: 9, 238792: 12, 124920: 11, 150332: 11,
    23264: 7, 59536: 9, 37440: 8, 15152: 6,
}


def conv_lengths(d_w: int, stride: int) -> list[int]:
    """Lengths [D_w, L1, L2, L3, l] of the 4-layer valid-conv recurrence."""
    lengths = [d_w]
    for _ in range(4):
        prev = lengths[-1]
        if prev < stride:
            return []
        lengths.append((prev - stride) // stride + 1)
    return lengths


def choose_stride(d_w: int) -> int:
    """Stride (== kernel size) whose 4-layer recurrence lands the per-channel
    latent length in [8, 16]; published sizes use the published values.

    When several strides land in band, the largest (smallest latent) wins.
    When none does, the input is padded to full conv-tree coverage (see
    PaeConfig.for_size) and the smallest stride whose padded latent length
    stays <= 16 is used.
    """
    if d_w < 16:
        raise ValueError(f"parameter vector too short for the encoder: {d_w}")
    if d_w in STRIDE_OVERRIDES:
        return STRIDE_OVERRIDES[d_w]
    in_band = []
    for s in range(2, d_w):
        lengths = conv_lengths(d_w, s)
        if not lengths or lengths[-1] < 1:
            break
        l = lengths[-1]
        if 8 <= l <= 16:
            in_band.append(s)
    if in_band:
        return in_band[-1]
    s = 2
    while -(-d_w // s**4) > 16:
        s += 1
    return s


@dataclass
class PaeConfig:
    d_w: int
    stride: int
    lengths: list  # [input_len, L1, L2, L3, latent_len]; input_len >= d_w

    @classmethod
    def for_size(cls, d_w: int, stride: int | None = None) -> "PaeConfig":
        if stride is None:
            stride = choose_stride(d_w)
        if stride < 2 or stride > d_w:
            raise ValueError(f"stride {stride} collapses a {d_w}-length input")
        lengths = conv_lengths(d_w, stride)
        if lengths and 8 <= lengths[-1] <= 17:
            return cls(d_w, stride, lengths)
        # Out-of-band latent: the valid-conv tree would leave a tail of input
        # positions outside every receptive field (they could then only be
        # reconstructed as corpus means). Right zero-pad the input to the next
        # multiple of stride^4 so the tree covers every position exactly.
        latent = -(-d_w // stride**4)
        padded = latent * stride**4
        lengths = [padded // stride**i for i in range(5)]
        return cls(d_w, stride, lengths)

    @property
    def input_len(self) -> int:
        return self.lengths[0]

    @property
    def latent_len(self) -> int:
        return self.lengths[-1]

    @property
    def d_p(self) -> int:
        return ENC_CHANNELS[-1] * self.latent_len


@dataclass
class Pae:
    config: PaeConfig
    params: dict
    norm_mean: np.ndarray
    norm_std: np.ndarray

    @classmethod
    def create(cls, config: PaeConfig, rng: Rng) -> "Pae":
        k = config.stride
        params: dict[str, Tensor] = {}
        c_in = 1
        for i, c_out in enumerate(ENC_CHANNELS):
            params[f"enc{i}.kernel"] = Tensor(
                glorot_uniform(rng, (c_out, c_in, k), c_in * k, c_out * k), requires_grad=True
            )
            params[f"enc{i}.bias"] = Tensor(np.zeros((c_out, 1)), requires_grad=True)
            c_in = c_out
        for i, c_out in enumerate(DEC_CHANNELS):
            params[f"dec{i}.kernel"] = Tensor(
                glorot_uniform(rng, (c_in, c_out, k), c_in * k, c_out * k), requires_grad=True
            )
            params[f"dec{i}.bias"] = Tensor(np.zeros((c_out, 1)), requires_grad=True)
            c_in = c_out
        return cls(config, params, np.zeros(config.d_w), np.ones(config.d_w))

    @property
    def d_p(self) -> int:
        return self.config.d_p

    def pad_std(self, w_std: np.ndarray) -> np.ndarray:
        """Right zero-pad standardized (B, D_w) to the conv input length."""
        w_std = np.atleast_2d(w_std)
        extra = self.config.input_len - self.config.d_w
        if extra == 0:
            return w_std
        return np.pad(w_std, ((0, 0), (0, extra)))

    def _encode_graph(self, w_std: Tensor) -> Tensor:
        """Standardized, padded (B, input_len) -> latent (B, d_p)."""
        b = w_std.data.shape[0]
        h = T.reshape(w_std, (b, 1, self.config.input_len))
        for i in range(4):
            h = T.conv1d(h, self.params[f"enc{i}.kernel"], self.config.stride)
            h = h + self.params[f"enc{i}.bias"]
            h = T.leaky_relu(h, LEAKY_SLOPE)
            # No instance norm on the final block: the latent feeds the
            # diffusion stage and must keep per-channel mean/scale (IN would
            # pin every channel onto a normalized shell that Gaussian
            # ancestral sampling cannot stay on).
            if i < 3:
                h = T.instance_norm(h)
        return T.reshape(h, (b, self.d_p))

    def _decode_graph(self, z: Tensor) -> Tensor:
        """Latent (B, d_p) -> standardized, padded reconstruction (B, input_len)."""
        b = z.data.shape[0]
        h = T.reshape(z, (b, 6, self.config.latent_len))
        targets = self.config.lengths[-2::-1]  # L3, L2, L1, input_len
        for i in range(4):
            h = T.conv1d_transposed(
                h, self.params[f"dec{i}.kernel"], self.config.stride, targets[i]
            )
            h = h + self.params[f"dec{i}.bias"]
            if i < 3:
                h = T.instance_norm(T.leaky_relu(h, LEAKY_SLOPE))
        return T.reshape(h, (b, self.config.input_len))

    def standardize(self, w: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(w) - self.norm_mean) / self.norm_std

    def destandardize(self, w_std: np.ndarray) -> np.ndarray:
        return w_std * self.norm_std + self.norm_mean

    def encode(self, w: np.ndarray) -> np.ndarray:
        """Raw checkpoints (B, D_w) or (D_w,) -> latents (B, d_p)."""
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        if w.shape[1] != self.config.d_w:
            raise T.ShapeError(f"expected length {self.config.d_w}, got {w.shape[1]}")
        return self._encode_graph(Tensor(self.pad_std(self.standardize(w)))).data

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Latents (B, d_p) or (d_p,) -> raw reconstructions (B, D_w)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.d_p:
            raise T.ShapeError(f"expected latent length {self.d_p}, got {z.shape[1]}")
        recon = self._decode_graph(Tensor(z)).data[:, : self.config.d_w]
        return self.destandardize(recon)


@dataclass
class LatentCorpus:
    latents: np.ndarray  # (M, d_p)
    norm_mean: np.ndarray
    norm_std: np.ndarray

    @property
    def d_p(self) -> int:
        return self.latents.shape[1]


def fit_normalization(corpus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = corpus.mean(axis=0)
    std = corpus.std(axis=0)
    std = np.maximum(std, 1e-8)  # constant dimensions stay representable
    return mean, std


def train_pae(
    corpus: np.ndarray,
    epochs: int,
    batch: int = 50,
    seed: int = 42,
    learning_rate: float = 1e-3,
    weight_decay: float = 2e-3,
    stride: int | None = None,
) -> tuple[Pae, LatentCorpus, list]:
    """Minimize reconstruction MSE over the checkpoint matrix (M, D_w)."""
    corpus = np.atleast_2d(np.asarray(corpus, dtype=np.float64))
    if corpus.size == 0:
        raise ValueError("empty checkpoint corpus")
    m, d_w = corpus.shape
    config = PaeConfig.for_size(d_w, stride)
    rng = Rng(seed)
    pae = Pae.create(config, rng)
    pae.norm_mean, pae.norm_std = fit_normalization(corpus)
    std_corpus = pae.pad_std(pae.standardize(corpus))
    opt = AdamW(learning_rate, weight_decay=weight_decay)
    losses: list[float] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(m)
        epoch_loss = 0.0
        for start in range(0, m, batch):
            idx = order[start : start + batch]
            target = Tensor(std_corpus[idx])
            recon = pae._decode_graph(pae._encode_graph(target))
            loss = T.mse(recon, target)
            if not np.isfinite(loss.data):
                raise RuntimeError(f"PAE diverged at epoch {epoch}: loss={loss.data}")
            opt.zero_grad(pae.params)
            loss.backward()
            opt.step(pae.params)
            epoch_loss += float(loss.data) * len(idx)
        losses.append(epoch_loss / m)
    latents = encode_corpus(pae, corpus, batch)
    return pae, LatentCorpus(latents, pae.norm_mean, pae.norm_std), losses


def encode_corpus(pae: Pae, corpus: np.ndarray, batch: int = 50) -> np.ndarray:
    outs = [pae.encode(corpus[i : i + batch]) for i in range(0, len(corpus), batch)]
    return np.concatenate(outs, axis=0)
