"""Siamese convolutional encoder emitting learned b-bit hash functions.

The network one-hot encodes a trace's frame sequence, convolves it with
several kernel widths, max-pools each feature map over positions, and
maps the pooled features through a dense layer with a tanh output.  The
``m * b`` outputs live strictly inside (-1, 1) and are sign-thresholded
into an :class:`~stacklsh.lsh.HashCode` at inference time.

Training minimizes a four-term objective: the mean squared gap between
the approximate generalized Hamming similarity of paired codes and the
target similarity, a saturation/orthogonality penalty that drives codes
toward unit-magnitude components, a bit-balance penalty, and quadratic
weight decay.  All gradients are analytic; the Chebyshev block maximum
and the 1-max pooling differentiate through the argmax coordinate with
lowest-index tie-breaking.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

from .errors import EmptyBatch, LengthMismatch, ShapeMismatch
from .lsh import HashCode, pack_bits
from .traces import (
    DEFAULT_MAX_FRAMES,
    CorpusStats,
    StackTrace,
    trace_tokens,
)

MODEL_FORMAT_TAG = "DLSHM1"


@dataclass(frozen=True)
class EncoderConfig:
    """Network shape: vocabulary, code size, kernels, filters, input length.

    ``vocabulary`` binds weight rows to frame tokens, so it is part of the
    model, not of the corpus file; a config is self-contained for
    inference on unseen traces.
    """

    vocabulary: tuple[str, ...]
    m: int = 64
    b: int = 8
    kernel_sizes: tuple[int, ...] = (2, 3, 4)
    filters_per_size: int = 256
    max_len: int = DEFAULT_MAX_FRAMES

    def __post_init__(self) -> None:
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        if len(self.vocabulary) == 0:
            raise ValueError("vocabulary is empty")
        if self.m < 1 or self.b < 1 or self.m * self.b < 1:
            raise ValueError("m and b must be >= 1")
        if self.filters_per_size < 1:
            raise ValueError("filters_per_size must be >= 1")
        if not self.kernel_sizes:
            raise ValueError("at least one kernel size is required")
        for ks in self.kernel_sizes:
            if not 1 <= ks <= self.max_len:
                raise ValueError(f"kernel size {ks} must be in [1, max_len={self.max_len}]")

    @classmethod
    def for_stats(cls, stats: CorpusStats, **kwargs) -> "EncoderConfig":
        return cls(vocabulary=tuple(sorted(stats.vocabulary)), **kwargs)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    @property
    def out_dim(self) -> int:
        return self.m * self.b

    @property
    def feature_dim(self) -> int:
        return self.filters_per_size * len(self.kernel_sizes)

    @cached_property
    def _vocab_index(self) -> dict[str, int]:
        return {token: i for i, token in enumerate(self.vocabulary)}


class EncoderParams:
    """The trainable weights, iterable in a fixed declared order."""

    def __init__(
        self,
        conv_weights: dict[int, np.ndarray],
        conv_biases: dict[int, np.ndarray],
        dense_weight: np.ndarray,
        dense_bias: np.ndarray,
    ) -> None:
        self.conv_weights = conv_weights
        self.conv_biases = conv_biases
        self.dense_weight = dense_weight
        self.dense_bias = dense_bias

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """(name, array) pairs in the declared serialization order."""
        for ks in self.conv_weights:
            yield f"conv_weight_{ks}", self.conv_weights[ks]
            yield f"conv_bias_{ks}", self.conv_biases[ks]
        yield "dense_weight", self.dense_weight
        yield "dense_bias", self.dense_bias

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            {ks: w.copy() for ks, w in self.conv_weights.items()},
            {ks: bb.copy() for ks, bb in self.conv_biases.items()},
            self.dense_weight.copy(),
            self.dense_bias.copy(),
        )

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(
            {ks: np.zeros_like(w) for ks, w in self.conv_weights.items()},
            {ks: np.zeros_like(bb) for ks, bb in self.conv_biases.items()},
            np.zeros_like(self.dense_weight),
            np.zeros_like(self.dense_bias),
        )

    def squared_norm(self) -> float:
        return float(sum(np.sum(a * a) for _, a in self.arrays()))


def init_params(config: EncoderConfig, seed: int = 0) -> EncoderParams:
    """Seeded uniform initialization in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    v, f = config.vocab_size, config.filters_per_size
    conv_w: dict[int, np.ndarray] = {}
    conv_b: dict[int, np.ndarray] = {}
    for ks in config.kernel_sizes:
        limit = np.sqrt(6.0 / (ks * v + f))
        conv_w[ks] = rng.uniform(-limit, limit, size=(ks, v, f))
        conv_b[ks] = np.zeros(f)
    limit = np.sqrt(6.0 / (config.feature_dim + config.out_dim))
    dense_w = rng.uniform(-limit, limit, size=(config.feature_dim, config.out_dim))
    dense_b = np.zeros(config.out_dim)
    return EncoderParams(conv_w, conv_b, dense_w, dense_b)


VocabLike = Union[Mapping[str, int], Sequence[str], CorpusStats]


def _vocab_index(vocab: VocabLike) -> Mapping[str, int]:
    if isinstance(vocab, CorpusStats):
        return vocab.vocabulary
    if isinstance(vocab, Mapping):
        return vocab
    return {token: i for i, token in enumerate(vocab)}


def encode_onehot(trace: StackTrace, vocab: VocabLike, max_len: int) -> np.ndarray:
    """One-hot frame matrix (max_len x vocab size).

    Row i encodes frame i; out-of-vocabulary frames map to the reserved
    all-zero row, and rows past the trace length are zero padding.  Traces
    longer than ``max_len`` are truncated from the bottom.
    """
    index = _vocab_index(vocab)
    matrix = np.zeros((max_len, len(index)))
    for pos, token in enumerate(trace_tokens(trace)[:max_len]):
        col = index.get(token)
        if col is not None:
            matrix[pos, col] = 1.0
    return matrix


def _token_matrix(traces: Sequence[StackTrace], config: EncoderConfig) -> np.ndarray:
    """Token index matrix; the value ``vocab_size`` marks OOV and padding."""
    v = config.vocab_size
    index = config._vocab_index
    tok = np.full((len(traces), config.max_len), v, dtype=np.int64)
    for i, trace in enumerate(traces):
        for pos, token in enumerate(trace_tokens(trace)[: config.max_len]):
            tok[i, pos] = index.get(token, v)
    return tok


def _forward_tokens(
    params: EncoderParams, config: EncoderConfig, tok: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Batched forward pass over token index rows.

    One-hot convolution reduces to gathering weight slices at the window's
    token indexes (OOV and padding gather a zero row), so the feature maps
    are built without materializing the one-hot tensors.
    """
    n = tok.shape[0]
    pooled_list = []
    kernels = []
    for ks in config.kernel_sizes:
        positions = config.max_len - ks + 1
        w_ext = np.concatenate(
            [params.conv_weights[ks], np.zeros((ks, 1, config.filters_per_size))], axis=1
        )
        c = np.broadcast_to(
            params.conv_biases[ks], (n, positions, config.filters_per_size)
        ).copy()
        for r in range(ks):
            c += w_ext[r][tok[:, r : r + positions]]
        r_act = np.maximum(c, 0.0)
        amax = r_act.argmax(axis=1)  # ties resolve to the lowest position
        pooled = np.take_along_axis(r_act, amax[:, None, :], axis=1)[:, 0, :]
        pooled_list.append(pooled)
        kernels.append({"ks": ks, "argmax": amax, "active": pooled > 0.0})
    feat = np.concatenate(pooled_list, axis=1)
    z = feat @ params.dense_weight + params.dense_bias
    u = np.tanh(z)
    cache = {"tok": tok, "feat": feat, "u": u, "kernels": kernels}
    return u, cache


def _backward_tokens(
    params: EncoderParams, config: EncoderConfig, cache: dict, d_u: np.ndarray
) -> EncoderParams:
    """Backpropagate d(loss)/d(outputs) into parameter gradients.

    1-max pooling routes gradient to the recorded argmax position only;
    the rectifier gate is the pooled activation being positive.
    """
    tok, feat, u = cache["tok"], cache["feat"], cache["u"]
    n = tok.shape[0]
    f = config.filters_per_size
    d_z = d_u * (1.0 - u * u)
    grads = EncoderParams(
        {}, {}, feat.T @ d_z, d_z.sum(axis=0)
    )
    d_feat = d_z @ params.dense_weight.T

    rows = np.arange(n)[:, None]
    filter_idx = np.broadcast_to(np.arange(f), (n, f))
    col = 0
    for entry in cache["kernels"]:
        ks, amax, active = entry["ks"], entry["argmax"], entry["active"]
        d_pooled = d_feat[:, col : col + f] * active
        col += f
        grads.conv_biases[ks] = d_pooled.sum(axis=0)
        g_ext = np.zeros((ks, config.vocab_size + 1, f))
        for r in range(ks):
            tokens_at = tok[rows, amax + r]  # (n, f) token feeding each pooled max
            np.add.at(g_ext[r], (tokens_at, filter_idx), d_pooled)
        grads.conv_weights[ks] = np.ascontiguousarray(g_ext[:, : config.vocab_size, :])
    # restore declared parameter order (conv blocks before dense)
    return EncoderParams(
        {ks: grads.conv_weights[ks] for ks in config.kernel_sizes},
        {ks: grads.conv_biases[ks] for ks in config.kernel_sizes},
        grads.dense_weight,
        grads.dense_bias,
    )


def forward(params: EncoderParams, config: EncoderConfig, trace: StackTrace) -> np.ndarray:
    """Continuous code of one trace, strictly inside (-1, 1)^(m*b)."""
    u, _ = _forward_tokens(params, config, _token_matrix([trace], config))
    return u[0]


def forward_batch(
    params: EncoderParams, config: EncoderConfig, traces: Sequence[StackTrace]
) -> np.ndarray:
    """Continuous codes of many traces, one row each."""
    u, _ = _forward_tokens(params, config, _token_matrix(traces, config))
    return u


def approx_generalized_hamming(u, v, m: int, b: int) -> float:
    """Smooth block-Hamming surrogate over continuous codes.

    ``1 - sum_k max_l |u_kl - v_kl| / (2m)``: one Chebyshev distance per
    b-wide block.  Equals :func:`~stacklsh.lsh.exact_block_hamming` of the
    sign-thresholded codes whenever both inputs are saturated at +-1.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (m * b,) or v.shape != (m * b,):
        raise ShapeMismatch(f"expected two vectors of length {m * b}")
    cheb = np.abs(u - v).reshape(m, b).max(axis=1)
    return float((2.0 * m - cheb.sum()) / (2.0 * m))


@dataclass(frozen=True)
class LossConfig:
    """Regularization weights of the training objective.

    ``binarization_weight`` scales the penalty pushing each code's mean
    squared component to 1 (saturation toward -1/+1), ``balance_weight``
    scales the bit-balance penalty, ``weight_decay`` scales the quadratic
    parameter penalty.

    With ``cross_orthogonality`` the saturation penalty becomes the full
    Gram-matrix form ``||(1/(m b)) H^T H - I_N||^2`` over the batch, which
    additionally pushes distinct codes toward orthogonality.  That form
    cannot saturate when the batch holds more traces than code dimensions
    (the Gram matrix of N saturated codes has rank <= m*b < N), so the
    per-sample diagonal form is the default.
    """

    binarization_weight: float = 1e-3
    balance_weight: float = 1e-3
    weight_decay: float = 1e-4
    cross_orthogonality: bool = False

    def __post_init__(self) -> None:
        for name in ("binarization_weight", "balance_weight", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


class PairBatch:
    """Distinct traces plus index pairs with target similarities.

    Construction canonicalizes the batch: traces are deduplicated by their
    token sequence and sorted, and pairs are sorted, so the loss value is
    bit-identical under any reordering of the input pairs.  Self-pairs
    (two traces with the same token sequence) are rejected.
    """

    def __init__(
        self,
        traces: Sequence[StackTrace],
        pair_i: np.ndarray,
        pair_j: np.ndarray,
        targets: np.ndarray,
    ) -> None:
        self.traces = list(traces)
        self.pair_i = pair_i
        self.pair_j = pair_j
        self.targets = targets

    @property
    def n_pairs(self) -> int:
        return int(self.targets.shape[0])

    @classmethod
    def from_pairs(
        cls,
        pairs: Sequence[tuple[StackTrace, StackTrace]],
        targets: Sequence[float],
    ) -> "PairBatch":
        if len(pairs) != len(targets):
            raise LengthMismatch(f"{len(pairs)} pairs but {len(targets)} targets")
        by_tokens: dict[tuple[str, ...], StackTrace] = {}
        for a, b in pairs:
            by_tokens.setdefault(a.functions, a)
            by_tokens.setdefault(b.functions, b)
        ordered = sorted(by_tokens)
        position = {key: i for i, key in enumerate(ordered)}
        triples = []
        for (a, b), target in zip(pairs, targets):
            t = float(target)
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"pair target {t} outside [0, 1]")
            i, j = position[a.functions], position[b.functions]
            if i == j:
                raise ValueError("self-pair: both traces have the same token sequence")
            triples.append((min(i, j), max(i, j), t))
        triples.sort()
        return cls(
            traces=[by_tokens[key] for key in ordered],
            pair_i=np.array([t[0] for t in triples], dtype=np.int64),
            pair_j=np.array([t[1] for t in triples], dtype=np.int64),
            targets=np.array([t[2] for t in triples], dtype=float),
        )


def _loss_and_grads(
    params: EncoderParams,
    config: EncoderConfig,
    loss_config: LossConfig,
    batch: PairBatch,
    want_grads: bool = True,
) -> tuple[float, EncoderParams | None]:
    if batch.n_pairs == 0:
        raise EmptyBatch("batch contains no pairs")
    m, b, mb = config.m, config.b, config.out_dim
    lam1 = loss_config.binarization_weight
    lam2 = loss_config.balance_weight
    lam3 = loss_config.weight_decay

    tok = _token_matrix(batch.traces, config)
    u, cache = _forward_tokens(params, config, tok)
    n = u.shape[0]
    n_pairs = batch.n_pairs

    u_i = u[batch.pair_i].reshape(n_pairs, m, b)
    u_j = u[batch.pair_j].reshape(n_pairs, m, b)
    diff = u_i - u_j
    absdiff = np.abs(diff)
    arg_l = absdiff.argmax(axis=2)  # lowest-index ties
    cheb = np.take_along_axis(absdiff, arg_l[:, :, None], axis=2)[:, :, 0]
    gham = (2.0 * m - cheb.sum(axis=1)) / (2.0 * m)
    err = gham - batch.targets
    fidelity = float(err @ err) / n_pairs

    if loss_config.cross_orthogonality:
        gram_gap = (u @ u.T) / mb - np.eye(n)
        saturation = 0.5 * lam1 * float(np.sum(gram_gap * gram_gap))
    else:
        norm_gap = (u * u).sum(axis=1) / mb - 1.0
        saturation = 0.5 * lam1 * float(norm_gap @ norm_gap)

    mean_bits = u.sum(axis=1) / mb
    balance = lam2 * float(mean_bits @ mean_bits) / n_pairs

    decay = lam3 * params.squared_norm()
    total = fidelity + saturation + balance + decay
    if not want_grads:
        return total, None

    d_u = np.zeros_like(u)
    pair_coef = (2.0 / n_pairs) * err
    sign_at_max = np.sign(np.take_along_axis(diff, arg_l[:, :, None], axis=2)[:, :, 0])
    per_block = (-1.0 / (2.0 * m)) * pair_coef[:, None] * sign_at_max
    d_pairs = np.zeros_like(u_i)
    np.put_along_axis(d_pairs, arg_l[:, :, None], per_block[:, :, None], axis=2)
    d_pairs = d_pairs.reshape(n_pairs, mb)
    np.add.at(d_u, batch.pair_i, d_pairs)
    np.add.at(d_u, batch.pair_j, -d_pairs)
    if lam1 != 0.0:
        if loss_config.cross_orthogonality:
            d_u += (2.0 * lam1 / mb) * (gram_gap @ u)
        else:
            d_u += (2.0 * lam1 / mb) * norm_gap[:, None] * u
    if lam2 != 0.0:
        d_u += (2.0 * lam2 / (n_pairs * mb)) * mean_bits[:, None]

    grads = _backward_tokens(params, config, cache, d_u)
    if lam3 != 0.0:
        for (_, g), (_, p) in zip(grads.arrays(), params.arrays()):
            g += 2.0 * lam3 * p
    return total, grads


def loss(
    params: EncoderParams,
    config: EncoderConfig,
    loss_config: LossConfig,
    batch: PairBatch,
) -> float:
    """Value of the four-term training objective on one batch."""
    value, _ = _loss_and_grads(params, config, loss_config, batch, want_grads=False)
    return value


def gradients(
    params: EncoderParams,
    config: EncoderConfig,
    loss_config: LossConfig,
    batch: PairBatch,
) -> EncoderParams:
    """Analytic gradient of :func:`loss` with respect to every parameter."""
    _, grads = _loss_and_grads(params, config, loss_config, batch, want_grads=True)
    assert grads is not None
    return grads


def binarize(continuous, m: int, b: int) -> HashCode:
    """Sign-threshold a continuous code: value >= 0 becomes bit 1."""
    u = np.asarray(continuous, dtype=float)
    if u.shape != (m * b,):
        raise ShapeMismatch(f"expected a vector of length {m * b}")
    return pack_bits((u >= 0.0).astype(np.int64), m, b)


def serialize_model(
    params: EncoderParams,
    config: EncoderConfig,
    meta: Mapping | None = None,
) -> bytes:
    """Canonical model payload: JSON header line plus flat float64 arrays."""
    arrays = list(params.arrays())
    header = {
        "format": MODEL_FORMAT_TAG,
        "config": {
            "vocabulary": list(config.vocabulary),
            "m": config.m,
            "b": config.b,
            "kernel_sizes": list(config.kernel_sizes),
            "filters_per_size": config.filters_per_size,
            "max_len": config.max_len,
        },
        "meta": dict(meta or {}),
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "dtype": "<f8",
    }
    blob = bytearray(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for _, a in arrays:
        blob += np.ascontiguousarray(a, dtype="<f8").tobytes()
    return bytes(blob)


def save_model(
    params: EncoderParams,
    config: EncoderConfig,
    path: Union[str, Path],
    meta: Mapping | None = None,
) -> str:
    """Write the model file; returns its digest (the family fingerprint)."""
    payload = serialize_model(params, config, meta)
    with open(path, "wb") as fh:
        fh.write(payload)
    return hashlib.sha256(payload).hexdigest()


def load_model(path: Union[str, Path]) -> tuple[EncoderParams, EncoderConfig, dict]:
    with open(path, "rb") as fh:
        payload = fh.read()
    newline = payload.index(b"\n")
    header = json.loads(payload[:newline].decode("utf-8"))
    if header.get("format") != MODEL_FORMAT_TAG:
        raise ValueError(f"not a {MODEL_FORMAT_TAG} model file")
    cfg = header["config"]
    config = EncoderConfig(
        vocabulary=tuple(cfg["vocabulary"]),
        m=cfg["m"],
        b=cfg["b"],
        kernel_sizes=tuple(cfg["kernel_sizes"]),
        filters_per_size=cfg["filters_per_size"],
        max_len=cfg["max_len"],
    )
    offset = newline + 1
    flat: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        flat[spec["name"]] = a.reshape(shape).copy()
    conv_w = {ks: flat[f"conv_weight_{ks}"] for ks in config.kernel_sizes}
    conv_b = {ks: flat[f"conv_bias_{ks}"] for ks in config.kernel_sizes}
    params = EncoderParams(conv_w, conv_b, flat["dense_weight"], flat["dense_bias"])
    return params, config, dict(header.get("meta", {}))


class DeepLshFamily:
    """Hash family backed by a trained encoder.

    ``hash(trace)`` sign-thresholds the forward pass; the fingerprint is
    the digest of the canonical model payload, so it changes whenever any
    weight changes and matches the digest of a saved model file.
    """

    def __init__(
        self,
        params: EncoderParams,
        config: EncoderConfig,
        meta: Mapping | None = None,
    ) -> None:
        self.params = params
        self.config = config
        self.meta = dict(meta or {})
        self._fingerprint = hashlib.sha256(
            serialize_model(params, config, self.meta)
        ).hexdigest()

    @property
    def m(self) -> int:
        return self.config.m

    @property
    def b(self) -> int:
        return self.config.b

    def continuous(self, traces: Sequence[StackTrace]) -> np.ndarray:
        return forward_batch(self.params, self.config, traces)

    def hash(self, trace: StackTrace) -> HashCode:
        return binarize(forward(self.params, self.config, trace), self.m, self.b)

    def transform(self, traces: Sequence[StackTrace]) -> list[HashCode]:
        u = self.continuous(traces)
        return [binarize(row, self.m, self.b) for row in u]

    def fingerprint(self) -> str:
        return self._fingerprint

    def spec(self) -> dict:
        return {
            "type": "deep",
            "m": self.m,
            "b": self.b,
            "model_digest": self._fingerprint,
        }


def as_hash_family(
    params: EncoderParams,
    config: EncoderConfig,
    meta: Mapping | None = None,
) -> DeepLshFamily:
    """Wrap trained parameters as a hash family for indexing and querying."""
    return DeepLshFamily(params, config, meta)
