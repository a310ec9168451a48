"""Split-learning training loop between feature parties and the label owner.

Each party embeds its own column slice with a bottom MLP. The label owner
concatenates the embeddings in party order, runs the top model, computes the
loss and returns one gradient per party. The top model always trains on the
true gradients; parties receive whatever the defense stack lets through.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics, nn
from .defenses import DefenseStack
from .errors import ConfigError, DivergenceError, ShapeError, StateError, ValidationError


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class Party:
    """A feature holder. It only ever sees its own columns and its own returned gradient."""

    index: int
    bottom: nn.MlpModel
    columns: list[int]
    features: np.ndarray
    is_adversary: bool = False
    alpha: float = 1.0
    _trace: nn.ForwardTrace | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.alpha < 1:
            raise ValidationError(f"party {self.index}: alpha must be >= 1, got {self.alpha}")
        if self.alpha > 1 and not self.is_adversary:
            raise ValidationError(f"party {self.index}: only the adversary may amplify (alpha={self.alpha})")
        if self.features.shape[1] != self.bottom.in_dim:
            raise ShapeError(
                f"party {self.index}: {self.features.shape[1]} feature columns but bottom model "
                f"expects {self.bottom.in_dim}"
            )

    @property
    def width(self) -> int:
        return self.bottom.out_dim

    def embed(self, rows: np.ndarray) -> np.ndarray:
        out, self._trace = nn.forward(self.bottom, self.features[rows])
        return out

    def embed_external(self, X_own: np.ndarray) -> np.ndarray:
        out, _ = nn.forward(self.bottom, X_own)
        return out

    def local_update(self, grad: np.ndarray) -> list[nn.LayerGrad]:
        """Parameter gradients for the returned embedding gradient, alpha-scaled for the adversary."""
        if self._trace is None:
            raise StateError(f"party {self.index}: gradient arrived before any forward pass")
        grads, _ = nn.backward(self.bottom, self._trace, grad)
        self._trace = None
        if self.alpha != 1.0:
            grads = [g.scaled(self.alpha) for g in grads]
        return grads

    def apply_gradient(self, grad: np.ndarray, lr: float) -> list[nn.LayerGrad]:
        grads = self.local_update(grad)
        nn.sgd_step(self.bottom, grads, lr)
        return grads


@dataclass
class LabelOwner:
    top: nn.MlpModel
    labels: np.ndarray
    num_classes: int
    soft_targets: np.ndarray | None = None
    head: str = "softmax"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.head not in ("softmax", "logistic"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.head == "logistic" and (self.num_classes != 2 or self.top.out_dim != 1):
            raise ConfigError("a logistic head needs C == 2 and a single output unit")
        if self.head == "softmax" and self.top.out_dim != self.num_classes:
            raise ShapeError(f"top model has {self.top.out_dim} outputs for {self.num_classes} classes")
        if self.soft_targets is not None:
            st = nn.as_matrix(self.soft_targets)
            if st.shape != (len(self.labels), self.num_classes):
                raise ShapeError(f"soft targets shape {st.shape} vs ({len(self.labels)}, {self.num_classes})")
            if not np.allclose(st.sum(axis=1), 1.0, atol=1e-6, rtol=0):
                raise ValidationError("soft target rows must sum to 1")
            self.soft_targets = st

    def loss(self, logits: np.ndarray, rows: np.ndarray) -> tuple[float, np.ndarray]:
        if self.soft_targets is not None:
            targets = self.soft_targets[rows]
        else:
            targets = nn.one_hot(self.labels[rows], self.num_classes)
        if self.head == "logistic":
            return nn.binary_cross_entropy_logits(logits, targets[:, 1])
        return nn.cross_entropy_soft(logits, targets)


@dataclass
class BatchExchange:
    rows: np.ndarray
    embeddings: list[np.ndarray]
    logits: np.ndarray
    loss: float
    top_trace: nn.ForwardTrace
    loss_grad: np.ndarray
    true_gradients: list[np.ndarray] = field(default_factory=list)
    returned: list[np.ndarray] = field(default_factory=list)
    geno_flags: list[bool] = field(default_factory=list)
    complete: bool = False


@dataclass
class BatchObservation:
    """What the server-side hooks see after each batch (used by tests and attack observers)."""

    epoch: int
    batch: int
    rows: np.ndarray
    returned: list[np.ndarray]
    geno_flags: list[bool]
    top_input_weight: np.ndarray  # first top layer weight before this batch's update


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_metric: float
    seconds: float


@dataclass
class VflSession:
    parties: list[Party]
    owner: LabelOwner
    defense: DefenseStack
    sgd: SgdConfig
    rng: np.random.Generator
    defense_rng: np.random.Generator
    metric: str = "top1"
    epoch_log: list[EpochRecord] = field(default_factory=list)
    observers: list[Callable[[BatchObservation], None]] = field(default_factory=list)
    flag_log: list[list[bool]] = field(default_factory=list)
    _epoch: int = 0
    _batch: int = 0

    def __post_init__(self):
        total = sum(p.width for p in self.parties)
        if total != self.owner.top.in_dim:
            raise ShapeError(f"embeddings concatenate to width {total}, top model expects {self.owner.top.in_dim}")
        n = {p.features.shape[0] for p in self.parties}
        if n != {len(self.owner.labels)}:
            raise ShapeError(f"parties hold row counts {sorted(n)}, label owner has {len(self.owner.labels)}")

    @property
    def n(self) -> int:
        return len(self.owner.labels)

    @property
    def adversary(self) -> Party:
        advs = [p for p in self.parties if p.is_adversary]
        if len(advs) != 1:
            raise StateError(f"expected exactly one adversarial party, found {len(advs)}")
        return advs[0]

    def widths(self) -> list[int]:
        return [p.width for p in self.parties]

    def offsets(self) -> list[tuple[int, int]]:
        out, start = [], 0
        for w in self.widths():
            out.append((start, start + w))
            start += w
        return out


def build_session(
    X: np.ndarray,
    y: np.ndarray,
    num_classes: int,
    columns: Sequence[Sequence[int]],
    *,
    embed_width: int = 8,
    bottom_hidden: Sequence[int] = (16,),
    top_hidden: Sequence[int] = (16,),
    head: str = "softmax",
    sgd: SgdConfig | None = None,
    defense: DefenseStack | None = None,
    adversary: int | None = 0,
    alpha: float = 1.0,
    soft_targets: np.ndarray | None = None,
    metric: str = "top1",
    init_seed: int = 0,
    shuffle_seed: int = 1,
    defense_seed: int = 2,
) -> VflSession:
    """Wire up parties, label owner and defenses over a training matrix."""
    sgd = sgd or SgdConfig()
    sgd.validate()
    defense = defense or DefenseStack()
    defense.validate()
    X = nn.as_matrix(X)
    init_rng = np.random.default_rng(init_seed)
    parties = []
    for k, cols in enumerate(columns):
        cols = list(map(int, cols))
        bottom = nn.init_mlp([len(cols), *bottom_hidden, embed_width], init_rng)
        is_adv = adversary is not None and k == adversary
        parties.append(Party(k, bottom, cols, X[:, cols], is_adv, alpha if is_adv else 1.0))
    out_dim = 1 if head == "logistic" else num_classes
    top = nn.init_mlp([embed_width * len(parties), *top_hidden, out_dim], init_rng)
    owner = LabelOwner(top, y, num_classes, soft_targets, head)
    return VflSession(
        parties, owner, defense, sgd,
        np.random.default_rng(shuffle_seed), np.random.default_rng(defense_seed), metric,
    )


def forward_round(session: VflSession, rows) -> BatchExchange:
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0 or rows.min() < 0 or rows.max() >= session.n:
        raise ValidationError(f"batch indices must lie in [0, {session.n})")
    embeddings = [p.embed(rows) for p in session.parties]
    for p, o in zip(session.parties, embeddings):
        if o.shape != (rows.size, p.width):
            raise ShapeError(f"party {p.index} produced {o.shape}, expected ({rows.size}, {p.width})")
    joined = np.concatenate(embeddings, axis=1)
    logits, top_trace = nn.forward(session.owner.top, joined)
    loss, grad = session.owner.loss(logits, rows)
    return BatchExchange(rows, embeddings, logits, loss, top_trace, grad)


def backward_round(session: VflSession, ex: BatchExchange) -> BatchExchange:
    if ex.complete:
        raise StateError("this batch has already been back-propagated")
    top = session.owner.top
    top_grads, input_grad = nn.backward(top, ex.top_trace, ex.loss_grad)
    ex.true_gradients = [input_grad[:, a:b].copy() for a, b in session.offsets()]

    if session.defense.is_identity:
        ex.returned = [g.copy() for g in ex.true_gradients]
    else:
        ex.returned = session.defense.process(ex.true_gradients, session.defense_rng)
    for g, r in zip(ex.true_gradients, ex.returned):
        if g.shape != r.shape:
            raise ShapeError(f"defense changed a gradient shape {g.shape} -> {r.shape}")

    updates = [party.local_update(g_hat) for party, g_hat in zip(session.parties, ex.returned)]
    if session.defense.geno is not None:
        ex.geno_flags = session.defense.screen([_flatten(u) for u in updates])
    else:
        ex.geno_flags = [False] * len(session.parties)

    if session.observers:
        obs = BatchObservation(session._epoch, session._batch, ex.rows, ex.returned,
                               ex.geno_flags, top.layers[0].weight.copy())
        for hook in session.observers:
            hook(obs)

    nn.sgd_step(top, top_grads, session.sgd.learning_rate)
    for party, upd, flagged in zip(session.parties, updates, ex.geno_flags):
        if not flagged:
            nn.sgd_step(party.bottom, upd, session.sgd.learning_rate)
    session.flag_log.append(list(ex.geno_flags))
    ex.complete = True
    return ex


def _flatten(grads: Sequence[nn.LayerGrad]) -> np.ndarray:
    return np.concatenate([np.concatenate([g.weight.ravel(), g.bias.ravel()]) for g in grads])


def _batch_scores(session: VflSession, logits: np.ndarray) -> np.ndarray:
    if session.owner.head == "logistic":
        return np.hstack([np.zeros_like(logits), logits])
    return logits


def train(session: VflSession) -> list[EpochRecord]:
    n, b = session.n, session.sgd.batch_size
    for _ in range(session.sgd.epochs):
        epoch = len(session.epoch_log)
        session._epoch = epoch
        start = time.perf_counter()
        perm = session.rng.permutation(n)
        losses, weights = [], []
        correct_scores = []
        for batch, lo in enumerate(range(0, n, b)):
            session._batch = batch
            rows = perm[lo:lo + b]
            try:
                ex = forward_round(session, rows)
            except ValidationError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}, batch {batch}: {exc}") from exc
            if not np.isfinite(ex.loss):
                raise DivergenceError(f"loss became {ex.loss} at epoch {epoch}, batch {batch}")
            backward_round(session, ex)
            losses.append(ex.loss)
            weights.append(rows.size)
            correct_scores.append((_batch_scores(session, ex.logits), session.owner.labels[rows]))
        seconds = time.perf_counter() - start
        scores = np.vstack([s for s, _ in correct_scores])
        truth = np.concatenate([t for _, t in correct_scores])
        session.epoch_log.append(EpochRecord(
            epoch,
            float(np.average(losses, weights=weights)),
            metrics.score(scores, truth, session.metric),
            seconds,
        ))
    return session.epoch_log


def predict_scores(session: VflSession, X) -> np.ndarray:
    """Class scores for full-width feature rows (each party embeds its own columns)."""
    X = nn.as_matrix(X)
    emb = [p.embed_external(X[:, p.columns]) for p in session.parties]
    logits, _ = nn.forward(session.owner.top, np.concatenate(emb, axis=1))
    return _batch_scores(session, logits)


def evaluate(session: VflSession, X_test, y_test, metric: str | None = None) -> float:
    metric = metric or session.metric
    kind, _ = metrics.parse_metric(metric)
    if kind == "f1" and session.owner.num_classes > 2:
        raise ConfigError(f"f1_binary requested on a {session.owner.num_classes}-class task")
    return metrics.score(predict_scores(session, X_test), y_test, metric)
