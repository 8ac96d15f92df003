"""Patch-based time-series encoder numerics.

Streams are z-scored with their statistics kept as prompt metadata, cut into
patches of ``k`` timesteps (each timestep concatenated with a positional code),
and projected by a ReLU MLP into the language model's embedding space. The
multimodal sequence is built by splicing patch embeddings into the positions
marked by ``<ts></ts>`` placeholders.
"""
from __future__ import annotations

import json
import math
import re
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

TS_OPEN = "<ts>"
TS_CLOSE = "</ts>"
_PLACEHOLDER_RE = re.compile(r"<ts>.*?</ts>", re.S)

DEGENERATE_SIGMA = 1e-8


@dataclass(frozen=True)
class NormStats:
    mu: float
    sigma: float
    m_min: float
    m_max: float
    degenerate: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.m_min > self.m_max:
            raise ValueError("m_min exceeds m_max")


@dataclass(frozen=True)
class EncoderConfig:
    k: int = 8
    d_p: int = 16
    layers: int = 5
    hidden: int = 5120
    d: int = 5120
    seed: int = 0
    max_positions: int = 2048
    shared_positions: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("patch width k must be >= 1")
        if self.d_p < 0:
            raise ValueError("d_p must be >= 0")
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.max_positions < 1:
            raise ValueError("max_positions must be >= 1")

    @property
    def patch_dim(self) -> int:
        return self.k * (1 + self.d_p)

    @property
    def layer_dims(self) -> list[int]:
        return [self.patch_dim] + [self.hidden] * (self.layers - 1) + [self.d]


@dataclass
class MlpWeights:
    weights: list[np.ndarray]  # W_l has shape (in, out)
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[0]} breaks the chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def init(cls, dims: Sequence[int], seed: int = 0, dtype=np.float64) -> "MlpWeights":
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(6.0 / n_in)
            ws.append(rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype))
            bs.append(np.zeros(n_out, dtype=dtype))
        return cls(ws, bs)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class PatchSequence:
    patches: np.ndarray  # (N, k * (1 + d_p))
    count: int
    pad_len: int


@dataclass
class TokenBudget:
    text_tokens: int
    patch_tokens: int

    @property
    def total(self) -> int:
        return self.text_tokens + self.patch_tokens

    def to_dict(self) -> dict:
        return {"text_tokens": self.text_tokens, "patch_tokens": self.patch_tokens, "total": self.total}


@dataclass
class MultimodalSequence:
    elements: list[tuple]  # ("text", token_index) | ("patch", stream_id, patch_index)
    text_len: int
    patch_counts: list[int] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.elements)

    def segments(self) -> list[dict]:
        """Run-length summary of the layout, suitable for JSON."""
        out: list[dict] = []
        for el in self.elements:
            if el[0] == "text":
                if out and out[-1]["type"] == "text":
                    out[-1]["count"] += 1
                else:
                    out.append({"type": "text", "count": 1})
            else:
                if out and out[-1]["type"] == "patch" and out[-1]["stream"] == el[1]:
                    out[-1]["count"] += 1
                else:
                    out.append({"type": "patch", "stream": el[1], "count": 1})
        return out


def normalize(series) -> tuple[np.ndarray, NormStats]:
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty series")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    mu = float(x.mean())
    sigma = float(x.std())  # population std
    degenerate = sigma < DEGENERATE_SIGMA
    normed = (x - mu) / (1.0 if degenerate else sigma)
    return normed, NormStats(mu, sigma, float(x.min()), float(x.max()), degenerate)


def denormalize(normed, stats: NormStats) -> np.ndarray:
    z = np.asarray(normed, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("normalized series contains non-finite values")
    if stats.degenerate:
        return z + stats.mu
    return z * stats.sigma + stats.mu


def format_metadata(stats: NormStats, stream_name: str) -> str:
    return (
        f"{stream_name}: mean={stats.mu:.4f} std={stats.sigma:.4f} "
        f"min={stats.m_min:.4f} max={stats.m_max:.4f}"
    )


def positional_table(config: EncoderConfig, stream_id: str | None = None) -> np.ndarray:
    """Positional codes, uniform in [-0.05, 0.05], one row per position.

    With ``shared_positions`` off, each stream gets its own table seeded from
    the stream name.
    """
    seed = config.seed
    if not config.shared_positions and stream_id is not None:
        seed = (seed * 1_000_003 + zlib.crc32(stream_id.encode("utf-8"))) % 2**32
    rng = np.random.default_rng([seed, 0x9E3779B9])
    return rng.uniform(-0.05, 0.05, size=(config.max_positions, config.d_p))


def patchify(normed, config: EncoderConfig, pos_table: np.ndarray | None = None) -> PatchSequence:
    s = np.asarray(normed, dtype=np.float64)
    t = s.size
    if t == 0:
        raise ValueError("cannot patchify an empty series")
    if pos_table is None:
        pos_table = positional_table(config)
    k = config.k
    n = math.ceil(t / k)
    padded = np.zeros(n * k)
    padded[:t] = s
    q = pos_table[np.arange(n * k) % config.max_positions]
    steps = np.concatenate([padded[:, None], q], axis=1)  # (n*k, 1 + d_p)
    return PatchSequence(steps.reshape(n, k * (1 + config.d_p)), n, n * k - t)


def _check_input(u: np.ndarray, weights: MlpWeights) -> np.ndarray:
    u = np.asarray(u, dtype=weights.weights[0].dtype)
    if u.shape[-1] != weights.dims[0]:
        raise ValueError(f"input dim {u.shape[-1]} does not match {weights.dims[0]}")
    return u


def mlp_forward(u, weights: MlpWeights, return_cache: bool = False):
    """Affine layers with ReLU between them and identity on the output.

    ``u`` may be a single patch vector or a (N, in) batch.
    """
    h = _check_input(u, weights)
    cache = [h]
    last = len(weights.weights) - 1
    for i, (w, b) in enumerate(zip(weights.weights, weights.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite activations after layer {i}")
        cache.append(h)
    return (h, cache) if return_cache else h


def mlp_backward(u, weights: MlpWeights, upstream_grad):
    """Gradients of ``sum(upstream_grad * mlp_forward(u))``.

    Returns ``(grad_weights, grad_biases, grad_input)``.
    """
    out, cache = mlp_forward(u, weights, return_cache=True)
    g = np.asarray(upstream_grad, dtype=out.dtype)
    if g.shape != out.shape:
        raise ValueError(f"upstream grad shape {g.shape} does not match output {out.shape}")
    n_layers = len(weights.weights)
    gw: list[np.ndarray] = [None] * n_layers
    gb: list[np.ndarray] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            g = g * (cache[i + 1] > 0)
        a = cache[i]
        a2 = a.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gw[i] = a2.T @ g2
        gb[i] = g2.sum(axis=0)
        g = g @ weights.weights[i].T
    return gw, gb, g


def splice(
    text_embedding_indices: Sequence[int],
    patch_sequences: Sequence[tuple[str, int] | PatchSequence],
    placeholder_layout: Sequence[tuple[int, int]],
) -> MultimodalSequence:
    """Replace each placeholder span ``[start, stop)`` with its stream's patches.

    ``patch_sequences`` entries are ``(stream_id, patch_count)`` pairs or
    PatchSequence objects (named by position).
    """
    if len(patch_sequences) != len(placeholder_layout):
        raise ValueError(
            f"{len(placeholder_layout)} placeholders for {len(patch_sequences)} streams"
        )
    n_tokens = len(text_embedding_indices)
    prev = 0
    for start, stop in placeholder_layout:
        if not prev <= start <= stop <= n_tokens:
            raise ValueError(f"placeholder span ({start}, {stop}) out of order or range")
        prev = stop
    elements: list[tuple] = []
    counts = []
    pos = 0
    for i, ((start, stop), ps) in enumerate(zip(placeholder_layout, patch_sequences)):
        sid, n = (f"stream{i}", ps.count) if isinstance(ps, PatchSequence) else (ps[0], int(ps[1]))
        elements += [("text", int(t)) for t in text_embedding_indices[pos:start]]
        elements += [("patch", sid, j) for j in range(n)]
        counts.append(n)
        pos = stop
    elements += [("text", int(t)) for t in text_embedding_indices[pos:]]
    text_len = n_tokens - sum(stop - start for start, stop in placeholder_layout)
    return MultimodalSequence(elements, text_len, counts)


def whitespace_tokenizer(text: str) -> int:
    return len(text.split())


def strip_placeholders(prompt: str) -> str:
    return _PLACEHOLDER_RE.sub(" ", prompt)


def tokenize_with_placeholders(prompt: str) -> tuple[list[str], list[tuple[int, int]]]:
    """Whitespace tokens with each ``<ts>...</ts>`` span kept as one marker token."""
    tokens: list[str] = []
    layout = []
    pos = 0
    for m in _PLACEHOLDER_RE.finditer(prompt):
        tokens += prompt[pos : m.start()].split()
        layout.append((len(tokens), len(tokens) + 1))
        tokens.append(m.group(0))
        pos = m.end()
    tokens += prompt[pos:].split()
    return tokens, layout


def count_tokens(
    window,
    prompt: str,
    tokenizer: Callable[[str], int] = whitespace_tokenizer,
    k: int = 8,
) -> TokenBudget:
    """Prefill budget: text tokens of the placeholder-free prompt plus one per patch."""
    patch_tokens = 0
    if window is not None:
        for series in _stream_arrays(window).values():
            patch_tokens += math.ceil(len(series) / k)
    text = strip_placeholders(prompt)
    text_tokens = tokenizer(text) if text.strip() else 0
    return TokenBudget(text_tokens, patch_tokens)


def _stream_arrays(window) -> dict[str, np.ndarray]:
    if window is None:
        return {}
    if isinstance(window, Mapping):
        return {k: np.asarray(v) for k, v in window.items()}
    return {k: np.asarray(s.values) for k, s in window.streams.items()}


def nll_loss(target_logprobs) -> float:
    lp = np.asarray(target_logprobs, dtype=np.float64)
    if not np.all(np.isfinite(lp)):
        raise ValueError("log-probabilities must be finite")
    if np.any(lp > 0):
        raise ValueError("log-probabilities must be <= 0")
    return float(-math.fsum(lp.tolist()))


def build_encoder_prompt(streams: Mapping[str, Sequence[float]], instruction: str) -> tuple[str, dict]:
    """One metadata line followed by its ``<ts></ts>`` placeholder per stream, then the instruction."""
    lines = []
    stats = {}
    for name, series in streams.items():
        _, st = normalize(series)
        stats[name] = st
        lines.append(f"{format_metadata(st, name)} {TS_OPEN}{TS_CLOSE}")
    return "\n".join(lines + [instruction]), stats


class PatchEncoder:
    """Holds positional tables and MLP weights; encodes whole windows."""

    def __init__(self, config: EncoderConfig, weights: MlpWeights | None = None):
        self.config = config
        if weights is None:
            weights = MlpWeights.init(config.layer_dims, config.seed)
        if weights.dims != config.layer_dims:
            raise ValueError(f"weights dims {weights.dims} do not match config {config.layer_dims}")
        self.weights = weights
        self._tables: dict[str | None, np.ndarray] = {}

    def _table(self, stream_id: str | None) -> np.ndarray:
        key = None if self.config.shared_positions else stream_id
        if key not in self._tables:
            self._tables[key] = positional_table(self.config, key)
        return self._tables[key]

    def encode_stream(self, series, stream_id: str | None = None):
        normed, stats = normalize(series)
        ps = patchify(normed, self.config, self._table(stream_id))
        return mlp_forward(ps.patches, self.weights), stats, ps

    def encode_window(self, streams: Mapping[str, Sequence[float]], instruction: str) -> dict:
        prompt, _ = build_encoder_prompt(streams, instruction)
        tokens, layout = tokenize_with_placeholders(prompt)
        embeddings = {}
        counts = []
        for name, series in streams.items():
            z, _, ps = self.encode_stream(series, name)
            embeddings[name] = z
            counts.append((name, ps.count))
        seq = splice(list(range(len(tokens))), counts, layout)
        budget = TokenBudget(seq.text_len, sum(n for _, n in counts))
        return {"prompt": prompt, "sequence": seq, "embeddings": embeddings, "budget": budget}


_MAGIC = b"LFW1"


def save_weights(path: str | Path, weights: MlpWeights) -> None:
    """Flat little-endian binary preceded by a JSON header describing shapes."""
    header = {
        "dtype": "<f8",
        "layers": [{"w": list(w.shape), "b": list(b.shape)} for w, b in zip(weights.weights, weights.biases)],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for p in weights.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_weights(path: str | Path) -> MlpWeights:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a weight file")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12 : 12 + hlen])
    buf = np.frombuffer(raw, dtype=header["dtype"], offset=12 + hlen)
    ws, bs = [], []
    pos = 0
    for layer in header["layers"]:
        for shape, out in ((layer["w"], ws), (layer["b"], bs)):
            size = int(np.prod(shape))
            if pos + size > buf.size:
                raise ValueError(f"{path}: truncated weight data")
            out.append(buf[pos : pos + size].reshape(shape).astype(np.float64))
            pos += size
    if pos != buf.size:
        raise ValueError(f"{path}: {buf.size - pos} trailing values")
    return MlpWeights(ws, bs)


def load_or_init_weights(path: str | Path | None, config: EncoderConfig) -> MlpWeights:
    if path is not None and Path(path).exists():
        return load_weights(path)
    weights = MlpWeights.init(config.layer_dims, config.seed)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        save_weights(path, weights)
    return weights
