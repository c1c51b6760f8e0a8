"""Training loop for the learned hash family, plus an estimator wrapper.

Training is deterministic for a fixed seed: pair shuffling is drawn from
a per-(seed, epoch) generator, batches canonicalize their summation
order, and the optimizer updates arrays in the declared parameter order.
Two runs with the same inputs produce byte-identical models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .encoder import (
    DeepLshFamily,
    EncoderConfig,
    EncoderParams,
    LossConfig,
    PairBatch,
    _loss_and_grads,
    init_params,
    save_model,
)
from .errors import InsufficientCorpus
from .lsh import HashCode
from .measures import DEFAULT_MEASURE_PARAMS, MeasureId, MeasureParams, similarity
from .traces import CorpusStats, CrashReport, StackTrace, build_corpus


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule: epochs, batching, step size, determinism seed.

    ``binarization_warmup_epochs`` ramps the saturation penalty linearly
    from 0 to its configured weight over that many epochs; fitting the
    similarity targets first with semi-continuous codes avoids the
    vanishing tanh gradients of early saturation.
    """

    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.0
    plateau_patience: int = 2
    pair_cap: int | None = None
    binarization_warmup_epochs: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.binarization_warmup_epochs < 0:
            raise ValueError("binarization_warmup_epochs must be >= 0")


class Adam:
    """Adaptive-moment optimizer over the encoder's parameter arrays."""

    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: EncoderParams, grads: EncoderParams) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for (name, p), (_, g) in zip(params.arrays(), grads.arrays()):
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


ReportOrTrace = Union[CrashReport, StackTrace]


def _distinct_traces(items: Sequence[ReportOrTrace]) -> list[StackTrace]:
    seen: dict[tuple[str, ...], StackTrace] = {}
    for item in items:
        trace = item.trace if isinstance(item, CrashReport) else item
        seen.setdefault(trace.functions, trace)
    return list(seen.values())


def make_pair_targets(
    traces: Sequence[StackTrace],
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
    pair_cap: int | None = None,
    seed: int = 0,
) -> tuple[list[tuple[StackTrace, StackTrace]], list[float]]:
    """All distinct trace pairs with their exact similarity targets.

    Traces with identical token sequences never pair with each other.
    With ``pair_cap`` set, that many pairs are sampled without
    replacement from the complete pair set.
    """
    n = len(traces)
    pair_index = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if pair_cap is not None and pair_cap < len(pair_index):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(pair_index), size=pair_cap, replace=False)
        pair_index = [pair_index[c] for c in sorted(chosen)]
    pairs = [(traces[i], traces[j]) for i, j in pair_index]
    targets = [
        similarity(measure, a, b, stats, measure_params) for a, b in pairs
    ]
    return pairs, targets


@dataclass
class TrainResult:
    """Final parameters plus one history record per epoch."""

    params: EncoderParams
    history: list[dict]


def train(
    items: Sequence[ReportOrTrace],
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    encoder_config: EncoderConfig,
    loss_config: LossConfig | None = None,
    train_config: TrainConfig | None = None,
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
) -> TrainResult:
    """Fit the encoder to mimic ``measure`` over all distinct trace pairs.

    Runs the epoch/batch loop with Adam on the four-term objective and a
    learning rate halved when the monitored loss plateaus.  With
    ``epochs=0`` the seeded initial parameters are returned unchanged.
    """
    loss_config = loss_config or LossConfig()
    train_config = train_config or TrainConfig()

    traces = _distinct_traces(items)
    if len(traces) < 2:
        raise InsufficientCorpus(f"need at least 2 distinct traces, got {len(traces)}")

    rng = np.random.default_rng(train_config.seed)
    val_traces: list[StackTrace] = []
    if train_config.val_fraction > 0.0:
        order = rng.permutation(len(traces))
        n_val = max(2, int(round(train_config.val_fraction * len(traces))))
        val_traces = [traces[i] for i in order[:n_val]]
        traces = [traces[i] for i in order[n_val:]]
        if len(traces) < 2:
            raise InsufficientCorpus("validation split leaves fewer than 2 traces")

    pairs, targets = make_pair_targets(
        traces, measure, stats, measure_params, train_config.pair_cap, train_config.seed
    )
    if not pairs:
        raise InsufficientCorpus("no distinct trace pairs to train on")

    val_batch = None
    if len(val_traces) >= 2:
        val_pairs, val_targets = make_pair_targets(
            val_traces, measure, stats, measure_params
        )
        if val_pairs:
            val_batch = PairBatch.from_pairs(val_pairs, val_targets)

    params = init_params(encoder_config, train_config.seed)
    optimizer = Adam(train_config.learning_rate)
    history: list[dict] = []
    best = math.inf
    stall = 0
    n_pairs = len(pairs)
    warmup = train_config.binarization_warmup_epochs
    for epoch in range(train_config.epochs):
        if warmup > 0:
            scale = min(1.0, epoch / warmup)
            epoch_loss_config = replace(
                loss_config, binarization_weight=scale * loss_config.binarization_weight
            )
        else:
            epoch_loss_config = loss_config
        order = np.random.default_rng([train_config.seed, epoch]).permutation(n_pairs)
        batch_losses = []
        for start in range(0, n_pairs, train_config.batch_size):
            chosen = order[start : start + train_config.batch_size]
            batch = PairBatch.from_pairs(
                [pairs[c] for c in chosen], [targets[c] for c in chosen]
            )
            value, grads = _loss_and_grads(params, encoder_config, epoch_loss_config, batch)
            optimizer.step(params, grads)
            batch_losses.append(value)
        train_loss = float(np.mean(batch_losses))
        val_loss = None
        if val_batch is not None:
            val_loss, _ = _loss_and_grads(
                params, encoder_config, epoch_loss_config, val_batch, want_grads=False
            )
        monitored = val_loss if val_loss is not None else train_loss
        if monitored < best - 1e-6:
            best = monitored
            stall = 0
        else:
            stall += 1
            if stall >= train_config.plateau_patience:
                optimizer.learning_rate /= 2.0
                stall = 0
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "learning_rate": optimizer.learning_rate,
            }
        )
    return TrainResult(params=params, history=history)


class DeepLshEncoder(BaseEstimator):
    """Estimator facade over the learned hash family.

    ``fit`` trains the encoder on all distinct pairs of the given reports
    (or traces) against the chosen similarity measure; ``transform``
    returns continuous codes for new traces.  The fitted family plugs
    into :func:`stacklsh.lsh.build_index`.
    """

    def __init__(
        self,
        measure: str = "EditSim",
        m: int = 64,
        b: int = 8,
        kernel_sizes: tuple[int, ...] = (2, 3, 4),
        filters_per_size: int = 256,
        max_len: int = 64,
        epochs: int = 20,
        batch_size: int = 256,
        learning_rate: float = 1e-3,
        binarization_weight: float = 1e-3,
        balance_weight: float = 1e-3,
        weight_decay: float = 1e-4,
        val_fraction: float = 0.0,
        pair_cap: int | None = None,
        seed: int = 0,
    ) -> None:
        self.measure = measure
        self.m = m
        self.b = b
        self.kernel_sizes = kernel_sizes
        self.filters_per_size = filters_per_size
        self.max_len = max_len
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.binarization_weight = binarization_weight
        self.balance_weight = balance_weight
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.pair_cap = pair_cap
        self.seed = seed

    def fit(self, X: Sequence[ReportOrTrace], y=None, stats: CorpusStats | None = None):
        stats = stats if stats is not None else build_corpus(list(X))
        config = EncoderConfig.for_stats(
            stats,
            m=self.m,
            b=self.b,
            kernel_sizes=tuple(self.kernel_sizes),
            filters_per_size=self.filters_per_size,
            max_len=self.max_len,
        )
        result = train(
            list(X),
            self.measure,
            stats,
            config,
            LossConfig(
                binarization_weight=self.binarization_weight,
                balance_weight=self.balance_weight,
                weight_decay=self.weight_decay,
            ),
            TrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                learning_rate=self.learning_rate,
                seed=self.seed,
                val_fraction=self.val_fraction,
                pair_cap=self.pair_cap,
            ),
        )
        self.stats_ = stats
        self.config_ = config
        self.params_ = result.params
        self.history_ = result.history
        self.family_ = DeepLshFamily(
            result.params, config, meta={"seed": self.seed, "measure": str(self.measure)}
        )
        return self

    def transform(self, X: Sequence[ReportOrTrace]) -> np.ndarray:
        check_is_fitted(self, "family_")
        traces = [x.trace if isinstance(x, CrashReport) else x for x in X]
        return self.family_.continuous(traces)

    def hash_codes(self, X: Sequence[ReportOrTrace]) -> list[HashCode]:
        check_is_fitted(self, "family_")
        traces = [x.trace if isinstance(x, CrashReport) else x for x in X]
        return self.family_.transform(traces)

    def to_family(self) -> DeepLshFamily:
        check_is_fitted(self, "family_")
        return self.family_

    def save(self, path) -> str:
        """Persist the fitted model; returns the file digest (fingerprint)."""
        check_is_fitted(self, "family_")
        return save_model(self.params_, self.config_, path, meta=self.family_.meta)
