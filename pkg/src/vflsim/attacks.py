"""Label inference attacks run by the adversarial feature party."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics, nn
from .errors import ConfigError, ShapeError, StateError
from .protocol import BatchObservation, Party, VflSession, train


@dataclass
class AttackReport:
    kind: str
    success_rate: float
    metric: str
    samples: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError(f"success rate {self.success_rate} outside [0, 1]")


def attack_success_rate(predicted, truth, metric: str = "top1", num_classes: int | None = None) -> float:
    if len(predicted) != len(truth):
        raise ShapeError(f"{len(predicted)} predictions for {len(truth)} labels")
    return metrics.score(predicted, truth, metric, num_classes)


# ---------------------------------------------------------------------------
# passive: few-shot head on the adversary's frozen embeddings


@dataclass
class PassiveAttackConfig:
    aux_per_class: int = 5
    head_hidden: tuple[int, ...] = (16,)
    head_epochs: int = 300
    head_lr: float = 0.1
    eval_split: float = 1.0

    def validate(self) -> None:
        if self.aux_per_class < 1:
            raise ConfigError(f"aux_per_class must be >= 1, got {self.aux_per_class}")
        if self.head_epochs < 0 or not self.head_lr > 0:
            raise ConfigError("head_epochs must be >= 0 and head_lr > 0")
        if not 0 < self.eval_split <= 1:
            raise ConfigError(f"eval_split must be in (0, 1], got {self.eval_split}")


def draw_auxiliary(y: np.ndarray, num_classes: int, per_class: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``per_class`` random rows per class, plus at least one row left over per class."""
    picks = []
    for c in range(num_classes):
        members = np.flatnonzero(y == c)
        if len(members) <= per_class:
            raise ConfigError(
                f"class {c} has {len(members)} rows; cannot take {per_class} auxiliary labels and still evaluate"
            )
        picks.append(rng.choice(members, size=per_class, replace=False))
    return np.sort(np.concatenate(picks))


def fit_attack_head(emb: np.ndarray, labels: np.ndarray, num_classes: int,
                    cfg: PassiveAttackConfig, rng: np.random.Generator) -> nn.MlpModel:
    head = nn.init_mlp([emb.shape[1], *cfg.head_hidden, num_classes], rng)
    targets = nn.one_hot(labels, num_classes)
    for _ in range(cfg.head_epochs):
        logits, trace = nn.forward(head, emb)
        _, g = nn.cross_entropy_soft(logits, targets)
        grads, _ = nn.backward(head, trace, g)
        nn.sgd_step(head, grads, cfg.head_lr)
    return head


def passive_infer(party: Party, X_aux_own, y_aux, X_eval_own, num_classes: int,
                  cfg: PassiveAttackConfig, rng: np.random.Generator) -> np.ndarray:
    """The adversary's side: class scores for ``X_eval_own`` from its frozen bottom model.

    Only the adversary's own columns and the auxiliary labels come in.
    """
    emb_aux = party.embed_external(nn.as_matrix(X_aux_own))
    head = fit_attack_head(emb_aux, np.asarray(y_aux, dtype=np.int64), num_classes, cfg, rng)
    scores, _ = nn.forward(head, party.embed_external(nn.as_matrix(X_eval_own)))
    return scores


def passive_attack(session: VflSession, X, y, cfg: PassiveAttackConfig | None = None,
                   seed: int = 0, metric: str | None = None) -> AttackReport:
    """Hand the adversary a few labelled rows per class, then score its guesses on the rest.

    ``X``/``y`` is a held-out pool of full-width rows. Picking the auxiliary rows
    and scoring happen outside the adversary, in this function.
    """
    cfg = cfg or PassiveAttackConfig()
    cfg.validate()
    metric = metric or session.metric
    adv = session.adversary
    X = nn.as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    C = session.owner.num_classes
    rng = np.random.default_rng(seed)

    aux = draw_auxiliary(y, C, cfg.aux_per_class, rng)
    rest = np.setdiff1d(np.arange(len(y)), aux)
    if cfg.eval_split < 1:
        keep = max(1, int(round(cfg.eval_split * rest.size)))
        rest = np.sort(rng.choice(rest, size=keep, replace=False))

    own = X[:, adv.columns]
    scores = passive_infer(adv, own[aux], y[aux], own[rest], C, cfg, rng)
    rate = attack_success_rate(scores, y[rest], metric, C)
    return AttackReport("passive", rate, metric, int(rest.size), asdict(cfg))


# ---------------------------------------------------------------------------
# active: amplified local updates, followed by passive inference


@dataclass
class ActiveAttackConfig:
    alpha: float = 10.0

    def validate(self) -> None:
        if not self.alpha > 1:
            raise ConfigError(f"active attack alpha must be > 1, got {self.alpha}")


def run_active_session(base: VflSession, cfg: ActiveAttackConfig | float) -> VflSession:
    """Copy an untrained session with the adversary scaling its parameter gradients by alpha.

    alpha == 1 is accepted and yields an honest copy.
    """
    alpha = cfg.alpha if isinstance(cfg, ActiveAttackConfig) else float(cfg)
    if alpha < 1:
        raise ConfigError(f"alpha must be >= 1, got {alpha}")
    session = copy.deepcopy(base)
    session.adversary.alpha = alpha
    return session


# ---------------------------------------------------------------------------
# direct: sign of the returned gradient projected on the known top weights


@dataclass
class DirectAttackConfig:
    observation_batches: int | None = None  # None: one full epoch

    def validate(self) -> None:
        if self.observation_batches is not None and self.observation_batches < 1:
            raise ConfigError("observation_batches must be >= 1")


class DirectAttack:
    """Hook that reads the adversary's returned gradients while the session trains.

    With a logistic top layer, the gradient on the adversary's embedding row is
    w_adv * (sigmoid(z) - y) / b, so its projection on w_adv is negative exactly
    when y = 1.
    """

    def __init__(self, session: VflSession, cfg: DirectAttackConfig | None = None):
        self.cfg = cfg or DirectAttackConfig()
        self.cfg.validate()
        owner = session.owner
        if owner.num_classes != 2:
            raise ConfigError(f"the direct attack needs a binary task, got C={owner.num_classes}")
        if owner.head != "logistic" or owner.top.depth != 1:
            raise ConfigError("the direct attack needs a single-layer logistic top model")
        adv = session.adversary
        self.party = adv.index
        self.cols = session.offsets()[adv.index]
        self.limit = self.cfg.observation_batches or math.ceil(session.n / session.sgd.batch_size)
        self.seen = 0
        self.inferred: dict[int, int] = {}

    def __call__(self, obs: BatchObservation) -> None:
        if self.seen >= self.limit:
            return
        self.seen += 1
        g = obs.returned[self.party]
        a, b = self.cols
        w = obs.top_input_weight[0, a:b]
        proj = g @ w
        for row, p in zip(obs.rows, proj):
            self.inferred[int(row)] = int(p < 0)

    def attach(self, session: VflSession) -> "DirectAttack":
        session.observers.append(self)
        return self

    def report(self, true_labels) -> AttackReport:
        if not self.inferred:
            raise StateError("direct attack observed no batches")
        rows = np.array(sorted(self.inferred))
        pred = np.array([self.inferred[r] for r in rows])
        truth = np.asarray(true_labels)[rows]
        rate = attack_success_rate(pred, truth, "top1", 2)
        return AttackReport("direct", rate, "top1", int(rows.size), asdict(self.cfg))


def direct_label_infer(session: VflSession, cfg: DirectAttackConfig | None = None) -> AttackReport:
    """Attach the observer, train the session, score inferred labels against the owner's labels."""
    attack = DirectAttack(session, cfg).attach(session)
    train(session)
    return attack.report(session.owner.labels)
