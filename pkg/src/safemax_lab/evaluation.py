"""Evaluation protocol: unlearning accuracy, prediction entropy, Frechet
retention distance, the Fano-style error bound, and reference entropy values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .diffusion import LabeledDataset, NoiseSchedule, ancestral_sample
from .errors import (DegenerateSampleError, DimensionError, DomainError,
                     EvaluatorQualityError, NumericError)
from .gradcore import Array, ParamStore, SGD, Tape

log = logging.getLogger(__name__)

LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))


@dataclass(frozen=True)
class ClassifierArch:
    d: int
    K: int
    hidden_width: int


@dataclass
class Classifier:
    params: ParamStore
    arch: ClassifierArch


@dataclass
class EvalReport:
    ua_percent: float
    mean_entropy_nats: float
    frechet_per_class: dict[int, float]
    frechet_mean: float
    rte_seconds: float
    steps_executed: int

    def to_json_dict(self) -> dict:
        return {
            "ua_percent": self.ua_percent,
            "mean_entropy_nats": self.mean_entropy_nats,
            "frechet_per_class": {str(c): v for c, v in sorted(self.frechet_per_class.items())},
            "frechet_mean": self.frechet_mean,
            "rte_seconds": self.rte_seconds,
            "steps_executed": self.steps_executed,
        }


@dataclass(frozen=True)
class FanoDiagnostic:
    h_cond_nats: float
    cardinality: int
    pe_lower_bound: float


def _classifier_logits(tape: Tape, pnodes, arch: ClassifierArch, x: Array):
    h = tape.constant(x)
    for i in range(2):
        h = gc.activation(gc.add(gc.matmul(h, pnodes[f"layer{i}_w"]), pnodes[f"layer{i}_b"]), "relu")
    return gc.add(gc.matmul(h, pnodes["head_w"]), pnodes["head_b"])


def predict_proba(classifier: Classifier, samples: Array) -> Array:
    """Softmax class probabilities, one row per sample."""
    samples = gc.as_array(samples)
    if samples.ndim != 2 or samples.shape[1] != classifier.arch.d:
        raise DimensionError(f"samples must have shape (n, {classifier.arch.d})")
    tape = Tape()
    pnodes = tape.params(classifier.params)
    logits = _classifier_logits(tape, pnodes, classifier.arch, samples).value
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def classify(classifier: Classifier, samples: Array) -> Array:
    """Argmax class per sample; ties resolve to the lowest class id."""
    return np.argmax(predict_proba(classifier, samples), axis=1)


def _accuracy(classifier: Classifier, points: Array, labels: Array) -> float:
    return float(np.mean(classify(classifier, points) == labels))


def init_classifier(d: int, K: int, hidden_width: int, rng: np.random.Generator) -> Classifier:
    """Two hidden relu layers with fan-in scaled normal initialization."""
    arch = ClassifierArch(d=d, K=K, hidden_width=hidden_width)
    params = ParamStore()
    fan_in = d
    for i in range(2):
        params.add(f"layer{i}_w", rng.standard_normal((fan_in, hidden_width)) / np.sqrt(fan_in))
        params.add(f"layer{i}_b", np.zeros(hidden_width))
        fan_in = hidden_width
    params.add("head_w", rng.standard_normal((hidden_width, K)) / np.sqrt(hidden_width))
    params.add("head_b", np.zeros(K))
    return Classifier(params=params, arch=arch)


def train_classifier(dataset: LabeledDataset, hidden_width: int, steps: int,
                     lr: float, seed: int) -> Classifier:
    """Train the evaluation MLP and gate it on held-out accuracy >= 98%.

    A quarter of each class is held out; the gate keeps untrustworthy
    evaluators from ever producing an unlearning-accuracy number.
    """
    rng = np.random.default_rng(seed)
    clf = init_classifier(dataset.d, dataset.K, hidden_width, rng)
    arch = clf.arch

    train_idx, held_idx = [], []
    for c in range(dataset.K):
        idx = dataset.class_indices(c).copy()
        rng.shuffle(idx)
        cut = max(1, idx.size // 4)
        held_idx.append(idx[:cut])
        train_idx.append(idx[cut:])
    train_idx = np.concatenate(train_idx)
    held_idx = np.concatenate(held_idx)

    opt = SGD(lr, momentum=0.9)
    batch = min(128, train_idx.size)
    for _ in range(steps):
        rows = train_idx[rng.integers(0, train_idx.size, size=batch)]
        tape = Tape()
        pnodes = tape.params(clf.params)
        logits = _classifier_logits(tape, pnodes, arch, dataset.points[rows])
        loss = gc.softmax_cross_entropy(logits, dataset.labels[rows])
        if not np.isfinite(loss.value):
            raise NumericError("non-finite classifier loss")
        opt.step(clf.params, gc.backward(loss))

    held_acc = _accuracy(clf, dataset.points[held_idx], dataset.labels[held_idx])
    if held_acc < 0.98:
        raise EvaluatorQualityError(
            f"classifier held-out accuracy {held_acc:.3f} below the 0.98 gate")
    return clf


def classifier_loss_node(tape: Tape, classifier: Classifier, points: Array, labels: Array):
    """Cross-entropy loss node on given data; used for gradient validation."""
    pnodes = tape.params(classifier.params)
    logits = _classifier_logits(tape, pnodes, classifier.arch, points)
    return gc.softmax_cross_entropy(logits, labels)


def unlearning_accuracy(classifier: Classifier, samples: Array, c_f: int) -> float:
    """100 minus the classifier's percent accuracy on forget-conditioned samples."""
    samples = gc.as_array(samples)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise DomainError("need a non-empty rank-2 sample array")
    hits = int(np.count_nonzero(classify(classifier, samples) == c_f))
    return 100.0 * (samples.shape[0] - hits) / samples.shape[0]


def prediction_entropy(classifier: Classifier, samples: Array) -> float:
    """Mean Shannon entropy (nats) of per-sample prediction distributions."""
    samples = gc.as_array(samples)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise DomainError("need a non-empty rank-2 sample array")
    probs = predict_proba(classifier, samples)
    terms = np.zeros_like(probs)
    mask = probs > 0.0
    terms[mask] = probs[mask] * np.log(probs[mask])
    return float(np.mean(-terms.sum(axis=1)))


def _mean_and_cov(samples: Array) -> tuple[Array, Array]:
    mu = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    return mu, cov


def frechet_distance(samples_a: Array, samples_b: Array) -> float:
    """Squared 2-Wasserstein distance between Gaussian fits of two sample sets.

    ``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` with the matrix
    square root taken through the symmetric form ``S_b^(1/2) S_a S_b^(1/2)``.
    Tiny negative eigenvalues from roundoff clamp to zero; anything more
    negative raises.
    """
    a = gc.as_array(samples_a)
    b = gc.as_array(samples_b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"incompatible sample shapes {a.shape} and {b.shape}")
    d = a.shape[1]
    if a.shape[0] < d + 1 or b.shape[0] < d + 1:
        raise DomainError(f"need at least d+1={d + 1} samples per side")
    mu_a, cov_a = _mean_and_cov(a)
    mu_b, cov_b = _mean_and_cov(b)

    eigs_b, vecs_b = np.linalg.eigh(cov_b)
    eigs_b = np.clip(eigs_b, 0.0, None)
    sqrt_b = (vecs_b * np.sqrt(eigs_b)) @ vecs_b.T
    inner = sqrt_b @ cov_a @ sqrt_b
    inner = 0.5 * (inner + inner.T)
    eigs = np.linalg.eigvalsh(inner)
    scale = max(1.0, float(np.abs(eigs).max()))
    if eigs[0] < -1e-8 * scale:
        raise NumericError(f"indefinite product in frechet_distance (min eig {eigs[0]:.3e})")
    eigs = np.clip(eigs, 0.0, None)
    mean_term = float(np.sum((mu_a - mu_b) ** 2))
    trace_term = float(np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sum(np.sqrt(eigs)))
    return mean_term + trace_term


def fano_bound(h_cond_nats: float, cardinality: int) -> FanoDiagnostic:
    """Lower bound on reconstruction-error probability from conditional entropy.

    ``clamp((h_cond - 1) / ln(cardinality), 0, 1)``; entropies in nats.
    """
    if cardinality < 2:
        raise DomainError(f"cardinality must be >= 2, got {cardinality}")
    if h_cond_nats < 0.0:
        raise DomainError(f"conditional entropy must be >= 0, got {h_cond_nats}")
    raw = (h_cond_nats - 1.0) / float(np.log(cardinality))
    return FanoDiagnostic(h_cond_nats=h_cond_nats, cardinality=cardinality,
                          pe_lower_bound=float(np.clip(raw, 0.0, 1.0)))


def differential_entropy_uniform(a: float, b: float) -> float:
    """Differential entropy of Uniform(a, b): ln(b - a) nats."""
    if not b > a:
        raise DomainError(f"need b > a, got ({a}, {b})")
    return float(np.log(b - a))


def differential_entropy_gaussian(sigma: float) -> float:
    """Differential entropy of N(mu, sigma^2): 0.5 ln(2 pi e sigma^2) nats."""
    if sigma <= 0.0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    return 0.5 * float(np.log(2.0 * np.pi * np.e * sigma * sigma))


def entropy_linkage_holds(classifier: Classifier, dataset: LabeledDataset,
                          c_f: int, rng: np.random.Generator, n: int = 2000) -> bool:
    """Check that pure standard-normal inputs confuse the classifier more
    than real forget-class data does. The unlearning-evaluation story rests
    on this gap existing for the dataset at hand."""
    noise_entropy = prediction_entropy(classifier, rng.standard_normal((n, dataset.d)))
    real = dataset.points[dataset.class_indices(c_f)]
    real_entropy = prediction_entropy(classifier, real)
    return noise_entropy > real_entropy


def evaluate(model, classifier: Classifier, dataset: LabeledDataset,
             schedule: NoiseSchedule, c_f: int, n_samples: int,
             rng: np.random.Generator, rte_seconds: float = 0.0,
             steps_executed: int = 0) -> EvalReport:
    """Full protocol: generate per class, score forgetting, score retention.

    ``dataset`` should be held-out data (not what the model trained on) so
    the retention distances measure generalization, not memorization.
    ``rte_seconds`` is supplied by the caller that timed the unlearning loop.
    """
    if not 0 <= c_f < dataset.K:
        raise DomainError(f"forget class {c_f} outside [0, {dataset.K})")
    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}")
    samples = {c: ancestral_sample(model, c, schedule, n_samples, rng)
               for c in range(dataset.K)}
    forget_samples = samples[c_f]
    ua = unlearning_accuracy(classifier, forget_samples, c_f)
    entropy = prediction_entropy(classifier, forget_samples)

    predicted = classify(classifier, forget_samples)
    modal = int(np.bincount(predicted, minlength=dataset.K).argmax())
    modal_share = float(np.mean(predicted == modal))
    if modal_share >= 0.5:
        log.info("forget-conditioned samples concentrate on class %d (share %.2f); "
                 "treat the accuracy number with care", modal, modal_share)

    frechet_per_class: dict[int, float] = {}
    for c in range(dataset.K):
        if c == c_f:
            continue
        held = dataset.points[dataset.class_indices(c)]
        frechet_per_class[c] = frechet_distance(samples[c], held)
    frechet_mean = float(np.mean(list(frechet_per_class.values())))
    return EvalReport(ua_percent=ua, mean_entropy_nats=entropy,
                      frechet_per_class=frechet_per_class, frechet_mean=frechet_mean,
                      rte_seconds=rte_seconds, steps_executed=steps_executed)
