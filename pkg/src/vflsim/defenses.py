"""Gradient-space and label-space defenses.

Gradient path, applied per batch by the label owner before gradients leave it:
norm screening (Geno), then either similar-gradient substitution (SGSub) or one
of the baselines (GC, NG, MG, PPDL). Label path: teacher soft labels smoothed
over the top-k classes (LADistill), computed once before training.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError, StateError


class DegenerateGradientWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# similarity measures


def cosine_sim(a, b) -> float:
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ShapeError(f"cosine_sim on lengths {a.size} and {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine similarity of a zero vector; using 0", DegenerateGradientWarning, stacklevel=2)
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def mahalanobis(a, b, s_diag) -> float:
    """Distance under a diagonal covariance ``s_diag``."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    s = np.ravel(np.asarray(s_diag, dtype=np.float64))
    if not a.shape == b.shape == s.shape:
        raise ShapeError(f"mahalanobis on lengths {a.size}, {b.size}, {s.size}")
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff / s)))


@dataclass
class CovarianceEstimator:
    """Diagonal, exponentially weighted covariance of one party's embedding gradients.

    Statistics are kept per embedding column and tiled over batch rows, so the
    estimate does not depend on the batch size.
    """

    width: int
    decay: float = 0.9
    floor: float = 1e-6
    mean: np.ndarray = None  # type: ignore[assignment]
    var: np.ndarray = None  # type: ignore[assignment]
    updates: int = 0

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.width)
        if self.var is None:
            self.var = np.ones(self.width)

    def update(self, g: np.ndarray) -> None:
        g = nn.as_matrix(g)
        if g.shape[1] != self.width:
            raise ShapeError(f"gradient width {g.shape[1]} != estimator width {self.width}")
        self.mean = self.decay * self.mean + (1 - self.decay) * g.mean(axis=0)
        batch_var = np.mean((g - self.mean) ** 2, axis=0)
        self.var = np.maximum(self.decay * self.var + (1 - self.decay) * batch_var, self.floor)
        self.updates += 1

    def diag(self, rows: int) -> np.ndarray:
        """Flattened (row-major) diagonal matching a [rows, width] gradient."""
        return np.tile(np.maximum(self.var, self.floor), rows)


# ---------------------------------------------------------------------------
# SGSub


@dataclass
class SgsubConfig:
    tau: float = 0.1
    w_cos: float = 1.0
    w_m: float = 0.0
    max_attempts: int = 50
    polarity: str = "dissimilarity"

    def validate(self) -> None:
        if not self.tau > 0:
            raise ConfigError(f"sgsub tau must be positive, got {self.tau}")
        if self.w_cos < 0 or self.w_m < 0 or self.w_cos + self.w_m <= 0:
            raise ConfigError("sgsub weights must be nonnegative with a positive sum")
        if self.max_attempts < 1:
            raise ConfigError("sgsub max_attempts must be >= 1")
        if self.polarity not in ("dissimilarity", "literal"):
            raise ConfigError(f"unknown sgsub polarity {self.polarity!r}")


@dataclass
class Substitution:
    value: np.ndarray
    score: float
    attempts: int
    fallback: bool = False
    degenerate: bool = False


def sgsub_score(candidate, v, s_diag, cfg: SgsubConfig) -> float:
    cos = cosine_sim(candidate, v) if cfg.w_cos else 0.0
    dist = mahalanobis(candidate, v, s_diag) if cfg.w_m else 0.0
    if cfg.polarity == "literal":
        return cfg.w_cos * cos + cfg.w_m * dist
    return cfg.w_cos * (1.0 - cos) + cfg.w_m * dist


def sgsub_substitute(v, s_diag, cfg: SgsubConfig, rng: np.random.Generator) -> Substitution:
    """Draw a surrogate for the flat vector ``v``.

    Candidates come from Normal(mean(v), std(v)), are clamped to [min v, max v]
    and rank-reordered so the i-th largest candidate value lands where v has its
    i-th largest value. The reordered candidate is the one scored and returned.
    """
    v = np.ravel(np.asarray(v, dtype=np.float64))
    if v.size == 0:
        raise ShapeError("sgsub needs a nonempty vector")
    s_diag = np.ravel(np.asarray(s_diag, dtype=np.float64))
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return Substitution(v.copy(), 0.0, 0, degenerate=True)

    mu, phi = float(v.mean()), float(v.std())
    order = np.argsort(v, kind="stable")
    # score in v's sorted frame; the transplant is a permutation, so dot
    # products and weighted distances are unchanged
    v_sorted, s_sorted = v[order], s_diag[order]
    v_norm = math.sqrt(float(v_sorted @ v_sorted))
    best_sorted, best_score = None, math.inf
    for attempt in range(1, cfg.max_attempts + 1):
        cand = np.sort(np.clip(rng.normal(mu, phi, size=v.size), lo, hi))
        score = _sorted_score(cand, v_sorted, v_norm, s_sorted, cfg)
        if score <= cfg.tau:
            return Substitution(_transplant(cand, order), score, attempt)
        if score < best_score:
            best_sorted, best_score = cand, score
    return Substitution(_transplant(best_sorted, order), best_score, cfg.max_attempts, fallback=True)


def _transplant(sorted_values: np.ndarray, order: np.ndarray) -> np.ndarray:
    out = np.empty_like(sorted_values)
    out[order] = sorted_values
    return out


def _sorted_score(cand, v_sorted, v_norm, s_sorted, cfg: SgsubConfig) -> float:
    cos = dist = 0.0
    if cfg.w_cos:
        c_norm = math.sqrt(float(cand @ cand))
        if c_norm > 0.0 and v_norm > 0.0:
            cos = min(1.0, max(-1.0, float(cand @ v_sorted) / (c_norm * v_norm)))
    if cfg.w_m:
        diff = cand - v_sorted
        dist = math.sqrt(float(np.sum(diff * diff / s_sorted)))
    if cfg.polarity == "literal":
        return cfg.w_cos * cos + cfg.w_m * dist
    return cfg.w_cos * (1.0 - cos) + cfg.w_m * dist


# ---------------------------------------------------------------------------
# LADistill


@dataclass
class LadistillConfig:
    k: int = 3
    epsilon: float = 0.45
    teacher_epochs: int = 30
    teacher_hidden: tuple[int, ...] = (16, 16)
    teacher_lr: float = 0.1
    teacher_batch_size: int = 32
    teacher_feature_scope: str = "owner_slice"

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError(f"ladistill k must be >= 2, got {self.k}")
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"ladistill epsilon must be in (0, 1), got {self.epsilon}")
        if self.teacher_epochs < 0:
            raise ConfigError("teacher_epochs must be >= 0")
        if self.teacher_feature_scope not in ("owner_slice", "full"):
            raise ConfigError(f"unknown teacher_feature_scope {self.teacher_feature_scope!r}")


@dataclass
class Teacher:
    model: nn.MlpModel
    trained: bool = False


def train_teacher(cfg: LadistillConfig, X, y, num_classes: int, rng: np.random.Generator) -> Teacher:
    """Fit a detached teacher on hard labels. It is never touched again afterwards."""
    X = nn.as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    model = nn.init_mlp([X.shape[1], *cfg.teacher_hidden, num_classes], rng)
    if cfg.teacher_epochs == 0:
        warnings.warn("teacher_epochs=0: soft labels come from an untrained teacher", RuntimeWarning, stacklevel=2)
    targets = nn.one_hot(y, num_classes)
    n = X.shape[0]
    for _ in range(cfg.teacher_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.teacher_batch_size):
            idx = perm[start:start + cfg.teacher_batch_size]
            logits, trace = nn.forward(model, X[idx])
            _, g = nn.cross_entropy_soft(logits, targets[idx])
            grads, _ = nn.backward(model, trace, g)
            nn.sgd_step(model, grads, cfg.teacher_lr)
    return Teacher(model, trained=True)


def teacher_soft_labels(teacher: Teacher, X) -> np.ndarray:
    if not teacher.trained:
        raise StateError("teacher has not been through train_teacher")
    logits, _ = nn.forward(teacher.model, X)
    return nn.softmax(logits)


def lad_anonymize(sl_row, k: int, epsilon: float) -> np.ndarray:
    """Keep the k most probable classes: 1-eps on the top one, eps/(k-1) on the rest.

    k larger than the class count is clamped to it. Ties go to the lowest index.
    """
    sl = np.ravel(np.asarray(sl_row, dtype=np.float64))
    c = sl.size
    if k < 2 or c < 2:
        raise ConfigError(f"need k >= 2 and at least 2 classes (k={k}, C={c})")
    if not 0 <= epsilon < 1:
        raise ConfigError(f"epsilon must be in [0, 1), got {epsilon}")
    k = min(k, c)
    top = np.argsort(-sl, kind="stable")[:k]
    out = np.zeros(c)
    out[top[1:]] = epsilon / (k - 1)
    out[top[0]] = 1.0 - epsilon
    return out


def lad_anonymize_matrix(sl, k: int, epsilon: float) -> np.ndarray:
    sl = nn.as_matrix(sl)
    return np.vstack([lad_anonymize(row, k, epsilon) for row in sl])


# ---------------------------------------------------------------------------
# Geno


@dataclass
class GenoConfig:
    mode: str = "auto"
    lam: float | None = None
    c: float = 5.0
    action: str = "zero"

    def validate(self) -> None:
        if self.mode not in ("fixed", "auto"):
            raise ConfigError(f"unknown geno mode {self.mode!r}")
        if self.mode == "fixed" and (self.lam is None or not self.lam > 0):
            raise ConfigError("geno fixed mode needs lam > 0")
        if self.action not in ("zero", "drop"):
            raise ConfigError(f"unknown geno action {self.action!r}")


def geno_threshold(norms: np.ndarray, cfg: GenoConfig) -> float:
    if cfg.mode == "fixed":
        return float(cfg.lam)  # type: ignore[arg-type]
    med = float(np.median(norms))
    mad = float(np.median(np.abs(norms - med)))
    return med + cfg.c * mad


def geno_filter(G: Sequence[np.ndarray], cfg: GenoConfig) -> tuple[list[np.ndarray], list[bool]]:
    """Flag entries whose L2 norm exceeds the threshold; zero or drop them."""
    if len(G) == 0:
        raise ConfigError("geno_filter needs at least one gradient")
    norms = np.array([np.linalg.norm(np.ravel(g)) for g in G])
    lam = geno_threshold(norms, cfg)
    flags = [bool(nrm > lam) for nrm in norms]
    if cfg.action == "drop":
        kept = [np.asarray(g) for g, f in zip(G, flags) if not f]
    else:
        kept = [np.zeros_like(g, dtype=np.float64) if f else np.asarray(g) for g, f in zip(G, flags)]
    return kept, flags


# ---------------------------------------------------------------------------
# baselines


def _check_fraction(p: float, name: str) -> None:
    if not 0 < p <= 1:
        raise ConfigError(f"{name} must be in (0, 1], got {p}")


def gc_clip(v, keep_fraction: float) -> np.ndarray:
    """Keep the ceil(p*len) largest-magnitude entries (lowest index wins ties)."""
    _check_fraction(keep_fraction, "keep_fraction")
    v = np.asarray(v, dtype=np.float64)
    flat = v.ravel()
    keep = math.ceil(keep_fraction * flat.size - 1e-9)
    idx = np.argsort(-np.abs(flat), kind="stable")[:keep]
    out = np.zeros_like(flat)
    out[idx] = flat[idx]
    return out.reshape(v.shape)


def ng_noise(v, scale: float, rng: np.random.Generator) -> np.ndarray:
    if scale < 0:
        raise ConfigError(f"laplace scale must be >= 0, got {scale}")
    v = np.asarray(v, dtype=np.float64)
    if scale == 0:
        return v.copy()
    return v + rng.laplace(0.0, scale, size=v.shape)


def mg_quantize(v, buckets: int) -> np.ndarray:
    """Replace each entry by sign * midpoint of its magnitude bucket over [0, max|v|]."""
    if buckets < 1:
        raise ConfigError(f"mg needs >= 1 bucket, got {buckets}")
    v = np.asarray(v, dtype=np.float64)
    mag = np.abs(v)
    top = float(mag.max()) if v.size else 0.0
    if top == 0.0:
        return np.zeros_like(v)
    width = top / buckets
    b = np.minimum((mag / width).astype(np.int64), buckets - 1)
    return np.sign(v) * (b + 0.5) * width


def ppdl_select(v, share_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Share a uniformly random ceil(theta*len) subset of entries, zero the rest."""
    _check_fraction(share_fraction, "share_fraction")
    v = np.asarray(v, dtype=np.float64)
    flat = v.ravel()
    keep = math.ceil(share_fraction * flat.size - 1e-9)
    idx = rng.choice(flat.size, size=keep, replace=False)
    out = np.zeros_like(flat)
    out[idx] = flat[idx]
    return out.reshape(v.shape)


BASELINE_PARAMS = {"gc": "keep_fraction", "ng": "laplace_scale", "mg": "buckets", "ppdl": "share_fraction"}


@dataclass
class BaselineConfig:
    kind: str
    value: float

    def validate(self) -> None:
        if self.kind not in BASELINE_PARAMS:
            raise ConfigError(f"unknown baseline {self.kind!r}; expected one of {sorted(BASELINE_PARAMS)}")
        if self.kind in ("gc", "ppdl"):
            _check_fraction(self.value, BASELINE_PARAMS[self.kind])
        elif self.kind == "ng" and not self.value > 0:
            raise ConfigError(f"laplace_scale must be > 0, got {self.value}")
        elif self.kind == "mg" and (self.value < 1 or int(self.value) != self.value):
            raise ConfigError(f"buckets must be a positive integer, got {self.value}")

    def apply(self, g: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gc":
            return gc_clip(g, self.value)
        if self.kind == "ng":
            return ng_noise(g, self.value, rng)
        if self.kind == "mg":
            return mg_quantize(g, int(self.value))
        return ppdl_select(g, self.value, rng)


# ---------------------------------------------------------------------------
# the per-session pipeline


@dataclass
class DefenseStats:
    batches: int = 0
    geno_flags: int = 0
    sgsub_calls: int = 0
    sgsub_attempts: int = 0
    sgsub_fallbacks: int = 0
    sgsub_degenerate: int = 0


@dataclass
class DefenseStack:
    geno: GenoConfig | None = None
    sgsub: SgsubConfig | None = None
    baseline: BaselineConfig | None = None
    ladistill: LadistillConfig | None = None
    estimators: dict[int, CovarianceEstimator] = field(default_factory=dict)
    stats: DefenseStats = field(default_factory=DefenseStats)

    def validate(self) -> None:
        if self.sgsub is not None and self.baseline is not None:
            raise ConfigError("choose one gradient defense: sgsub or a baseline, not both")
        for part in (self.geno, self.sgsub, self.baseline, self.ladistill):
            if part is not None:
                part.validate()

    @property
    def is_identity(self) -> bool:
        """True when returned gradients equal the true ones (Geno may still screen updates)."""
        return self.sgsub is None and self.baseline is None

    def fresh(self) -> "DefenseStack":
        """Same configuration, reset runtime state."""
        return DefenseStack(self.geno, self.sgsub, self.baseline, self.ladistill)

    def process(self, grads: Sequence[np.ndarray], rng: np.random.Generator) -> list[np.ndarray]:
        """Turn the true per-party embedding gradients into what each party receives."""
        out = [np.asarray(g, dtype=np.float64) for g in grads]
        self.stats.batches += 1
        if self.sgsub is not None:
            for k, g in enumerate(out):
                if self.sgsub.w_m:
                    est = self.estimators.get(k)
                    if est is None:
                        est = self.estimators[k] = CovarianceEstimator(g.shape[1])
                    s_diag = est.diag(g.shape[0])
                    est.update(g)
                else:
                    # the covariance only feeds the Mahalanobis term
                    s_diag = np.ones(g.size)
                res = sgsub_substitute(g, s_diag, self.sgsub, rng)
                self.stats.sgsub_calls += 1
                self.stats.sgsub_attempts += res.attempts
                self.stats.sgsub_fallbacks += int(res.fallback)
                self.stats.sgsub_degenerate += int(res.degenerate)
                out[k] = res.value.reshape(g.shape)
        elif self.baseline is not None:
            out = [self.baseline.apply(g, rng) for g in out]
        return out

    def screen(self, updates: Sequence[np.ndarray]) -> list[bool]:
        """Geno over the parties' local parameter updates; True marks an update to discard."""
        if self.geno is None:
            return [False] * len(updates)
        _, flags = geno_filter(updates, self.geno)
        self.stats.geno_flags += sum(flags)
        return flags
