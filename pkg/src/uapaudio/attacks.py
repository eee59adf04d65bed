"""Individual and universal adversarial perturbations.

``deepfool`` walks a single clip to the nearest linearized decision
boundary.  ``uap_hc`` aggregates such steps into one waveform-shaped
perturbation constrained to an lp ball, accepting an update only when it
raises the fraction of prediction flips over the whole working set, so the
accepted-rate sequence is strictly increasing by construction.

Attack routines are generic over the classifier: any object providing
``label_set``, ``logits(x)``, ``logits_and_jacobian(x)`` and
``predict_batch(batch)`` works, which keeps the algorithms testable
against small closed-form models.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform, label_indices, perturbed_samples, save_wav, stack


class DegenerateGradientError(RuntimeError):
    """All candidate boundary gradients vanished; the sample cannot be moved."""


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    """Knobs shared by the individual and universal attacks.

    ``xi`` bounds the universal perturbation under the ``p`` norm,
    ``alpha`` sets the stopping rate (search stops once the flip rate
    exceeds 1 - alpha), and ``max_passes`` caps full sweeps over the
    working set.  ``trials`` controls how many independently seeded
    restarts the experiment driver performs.
    """

    overshoot: float = 0.1
    deepfool_max_iters: int = 100
    xi: float = 0.1
    p: float = 2.0
    alpha: float = 0.1
    max_passes: int = 5
    trials: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.overshoot <= 0.0:
            raise ValueError("overshoot must be positive")
        if self.xi <= 0.0:
            raise ValueError("xi must be positive")
        # alpha = 1 is allowed: it makes the stopping threshold 0, so the
        # search returns the zero perturbation immediately.
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.p not in (2.0, math.inf):
            raise ValueError("p must be 2 or inf")
        if self.deepfool_max_iters < 1:
            raise ValueError("deepfool_max_iters must be at least 1")
        if self.max_passes < 0 or self.trials < 1:
            raise ValueError("max_passes must be >= 0 and trials >= 1")


@dataclass
class Perturbation:
    """Waveform-shaped additive perturbation with its norm budget."""

    values: np.ndarray
    p: float
    xi: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.norm() > self.xi * (1.0 + 1e-9):
            raise ValueError(f"perturbation norm {self.norm()} exceeds budget {self.xi}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.values, ord=self.p))


@dataclass(frozen=True)
class UniversalityLevel:
    """Which classes a universal perturbation is expected to fool.

    Level 1 targets a single class, level 2 a strict subset of at least
    two classes, level 3 every class of the model.
    """

    level: int
    classes: tuple

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.level not in (1, 2, 3):
            raise ValueError("level must be 1, 2 or 3")

    def validate(self, label_set) -> None:
        labels = tuple(label_set)
        unknown = set(self.classes) - set(labels)
        if unknown:
            raise ValueError(f"classes {sorted(unknown)} not in label set {labels}")
        n = len(self.classes)
        if self.level == 1 and n != 1:
            raise ValueError("level 1 takes exactly one class")
        if self.level == 2 and not 1 < n < len(labels):
            raise ValueError("level 2 takes a strict subset of at least two classes")
        if self.level == 3 and set(self.classes) != set(labels):
            raise ValueError("level 3 must cover every class")

    @classmethod
    def for_level(cls, level: int, classes, label_set) -> "UniversalityLevel":
        if level == 3 and not classes:
            classes = tuple(label_set)
        lvl = cls(level, tuple(classes))
        lvl.validate(label_set)
        return lvl


# ---------------------------------------------------------------------------
# Deepfool


@dataclass
class DeepfoolResult:
    delta: np.ndarray
    iterations: int
    success: bool
    source_class: int
    final_class: int


def _as_array(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def deepfool(model, x, cfg: AttackConfig = AttackConfig()) -> DeepfoolResult:
    """Smallest-step boundary crossing for one clip.

    Each iteration linearizes every logit around the current point, picks
    the class whose boundary is nearest in l2 distance and jumps just past
    it (scaled by 1 + overshoot).  Iterates are evaluated raw, without
    re-clipping, so the linear model stays faithful.  If the iteration
    budget runs out the accumulated perturbation is returned with
    ``success=False``; if every boundary gradient vanishes the sample is
    unusable and DegenerateGradientError is raised.
    """
    x0 = _as_array(x)
    source = int(np.argmax(model.logits(x0)))
    delta = np.zeros_like(x0)
    iterations = 0
    current_class = source

    while iterations < cfg.deepfool_max_iters:
        logits, jac = model.logits_and_jacobian(x0 + delta)
        f_diff = logits - logits[source]
        w_diff = jac - jac[source]
        norms = np.linalg.norm(w_diff, axis=1)

        candidates = np.arange(logits.shape[0]) != source
        usable = candidates & (norms >= 1e-12)
        if not np.any(usable):
            raise DegenerateGradientError(
                f"all boundary gradients below 1e-12 after {iterations} iterations"
            )
        ratios = np.where(usable, np.abs(f_diff) / np.where(usable, norms, 1.0), np.inf)
        nearest = int(np.argmin(ratios))

        step = (1.0 + cfg.overshoot) * (np.abs(f_diff[nearest]) / norms[nearest] ** 2)
        delta = delta + step * w_diff[nearest]
        iterations += 1

        current_class = int(np.argmax(model.logits(x0 + delta)))
        if current_class != source:
            return DeepfoolResult(delta, iterations, True, source, current_class)

    return DeepfoolResult(delta, iterations, False, source, current_class)


# ---------------------------------------------------------------------------
# lp-ball projection


def project(values: np.ndarray, p: float, xi: float) -> np.ndarray:
    """Euclidean projection onto the lp ball of radius xi (p in {2, inf}).

    Exactly idempotent: the returned vector's norm never exceeds xi, so
    projecting again returns it unchanged.
    """
    if xi <= 0.0:
        raise ValueError("xi must be positive")
    values = np.asarray(values, dtype=np.float64)
    if p == math.inf:
        return np.clip(values, -xi, xi)
    if p != 2.0:
        raise ValueError("p must be 2 or inf")
    norm = float(np.linalg.norm(values))
    if norm <= xi:
        return values.copy()
    # Rescale from the original vector, shrinking the factor by single ulps
    # if rounding ever lands the norm a hair above the budget.
    scale = xi / norm
    for _ in range(64):
        out = values * scale
        if float(np.linalg.norm(out)) <= xi:
            return out
        scale = np.nextafter(scale, 0.0)
    raise AssertionError("projection failed to settle inside the ball")


def project_perturbation(pert: Perturbation) -> Perturbation:
    return Perturbation(project(pert.values, pert.p, pert.xi), pert.p, pert.xi)


# ---------------------------------------------------------------------------
# fooling metrics


def _clean_batch(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        batch = np.asarray(X, dtype=np.float64)
    else:
        batch = stack(X)
    if batch.shape[0] == 0:
        raise ValueError("sample set is empty")
    return batch


def _pert_values(v) -> np.ndarray:
    return v.values if isinstance(v, Perturbation) else np.asarray(v, dtype=np.float64)


def _rate_from_predictions(clean_pred: np.ndarray, adv_pred: np.ndarray) -> float:
    return float(np.mean(clean_pred != adv_pred))


def raw_fooling_rate(model, X, v) -> float:
    """Fraction of clips whose prediction changes when v is added.

    The perturbed input is clipped to [-1, 1] before evaluation.  Ground
    truth labels play no role here.
    """
    batch = _clean_batch(X)
    clean_pred = model.predict_batch(batch)
    adv_pred = model.predict_batch(perturbed_samples(batch, _pert_values(v)))
    return _rate_from_predictions(clean_pred, adv_pred)


def fooling_ratio(model, X, v) -> float | None:
    """Prediction flips restricted to originally correctly classified clips.

    Returns None when no clip in X is correctly classified to begin with.
    """
    batch = _clean_batch(X)
    truth = label_indices(X, model.label_set)
    clean_pred = model.predict_batch(batch)
    eligible = clean_pred == truth
    if not np.any(eligible):
        return None
    adv_pred = model.predict_batch(perturbed_samples(batch, _pert_values(v)))
    return float(np.mean(adv_pred[eligible] != clean_pred[eligible]))


# ---------------------------------------------------------------------------
# universal perturbation search


@dataclass
class AcceptanceEvent:
    pass_index: int
    sample_index: int
    rate_before: float
    rate_after: float
    accepted: bool


@dataclass
class UapResult:
    perturbation: Perturbation
    rate: float
    events: list = field(default_factory=list)
    passes_run: int = 0
    skipped: int = 0

    @property
    def accepted_rates(self):
        return [e.rate_after for e in self.events if e.accepted]


def uap_hc(model, X, cfg: AttackConfig = AttackConfig()) -> UapResult:
    """Hill-climbing search for a universal perturbation on the set X.

    Sweeps the set repeatedly; for every clip the current perturbation does
    not yet fool, a fresh boundary-crossing step is computed at the
    perturbed clip, projected into the lp budget, and kept only if it
    raises the set-wide flip rate.  Stops once the rate clears 1 - alpha
    (checked between sweeps) or after ``max_passes`` sweeps.  Per-sample
    failures are skipped, logged and retried on the next sweep.  X is
    traversed in the order given; callers shuffle beforehand.
    """
    batch = _clean_batch(X)
    values = np.zeros(batch.shape[1])
    clean_pred = model.predict_batch(batch)
    adv_pred = clean_pred.copy()
    rate = 0.0
    result = UapResult(Perturbation(values, cfg.p, cfg.xi), rate)

    for pass_index in range(cfg.max_passes):
        if not rate < 1.0 - cfg.alpha:
            break
        for i in range(batch.shape[0]):
            if adv_pred[i] != clean_pred[i]:
                continue
            start = perturbed_samples(batch[i], values)
            try:
                local = deepfool(model, start, cfg)
            except DegenerateGradientError:
                result.skipped += 1
                continue
            if not local.success:
                result.skipped += 1
                continue
            candidate = project(values + local.delta, cfg.p, cfg.xi)
            cand_pred = model.predict_batch(perturbed_samples(batch, candidate))
            cand_rate = _rate_from_predictions(clean_pred, cand_pred)
            accepted = cand_rate > rate
            result.events.append(
                AcceptanceEvent(pass_index, i, rate, cand_rate, accepted)
            )
            if accepted:
                values = candidate
                adv_pred = cand_pred
                rate = cand_rate
        result.passes_run = pass_index + 1

    result.perturbation = Perturbation(values, cfg.p, cfg.xi)
    result.rate = rate
    return result


# ---------------------------------------------------------------------------
# leveled experiment driver


@dataclass
class TrialRecord:
    trial: int
    sample_indices: list
    perturbation: Perturbation
    train_raw_rate: float
    train_fr: float | None
    passes_run: int
    accepted: int
    skipped: int


@dataclass
class LevelExperimentResult:
    level: UniversalityLevel
    trials: list
    best_trial: int

    @property
    def best(self) -> Perturbation:
        return self.trials[self.best_trial].perturbation


def run_level_experiment(
    level: UniversalityLevel,
    dataset,
    model,
    cfg: AttackConfig = AttackConfig(),
    train_per_class: int = 200,
    jobs: int = 1,
) -> LevelExperimentResult:
    """Run seeded restarts of the universal search on class-restricted draws.

    Each trial draws ``train_per_class`` clips per targeted class without
    replacement (shuffled with the trial seed), runs the hill-climbing
    search, and scores the result by its fooling ratio on the drawn set.
    The best trial is the one maximizing that training fooling ratio, ties
    broken toward the lower trial index.
    """
    level.validate(model.label_set)
    class_pools = {c: [i for i, w in enumerate(dataset) if w.label == c] for c in level.classes}
    for c, pool in class_pools.items():
        if len(pool) < train_per_class:
            raise InsufficientSamplesError(
                f"class {c!r} has {len(pool)} clips, need {train_per_class}"
            )

    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.trials)

    def run_trial(t: int) -> TrialRecord:
        rng = np.random.default_rng(seeds[t])
        chosen = []
        for c in level.classes:
            chosen.extend(rng.choice(class_pools[c], size=train_per_class, replace=False))
        chosen = [int(chosen[j]) for j in rng.permutation(len(chosen))]
        subset = [dataset[i] for i in chosen]
        out = uap_hc(model, subset, cfg)
        train_fr = fooling_ratio(model, subset, out.perturbation)
        return TrialRecord(
            trial=t,
            sample_indices=chosen,
            perturbation=out.perturbation,
            train_raw_rate=out.rate,
            train_fr=train_fr,
            passes_run=out.passes_run,
            accepted=sum(1 for e in out.events if e.accepted),
            skipped=out.skipped,
        )

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(run_trial, range(cfg.trials)))
    else:
        trials = [run_trial(t) for t in range(cfg.trials)]

    scores = [-math.inf if t.train_fr is None else t.train_fr for t in trials]
    best = int(np.argmax(scores))
    return LevelExperimentResult(level=level, trials=trials, best_trial=best)


# ---------------------------------------------------------------------------
# perturbation files


PERTURBATION_FORMAT_VERSION = 1


def save_perturbation(
    pert: Perturbation,
    path,
    model_checksum: str | None = None,
    config: dict | None = None,
    write_wav: bool = True,
) -> None:
    """Write the lossless sidecar (JSON header + raw float64) plus a WAV copy.

    The sidecar preserves exact sample values; the WAV is a clipped 16-bit
    rendering for listening only.
    """
    raw = np.ascontiguousarray(pert.values, dtype="<f8").tobytes()
    header = {
        "format_version": PERTURBATION_FORMAT_VERSION,
        "p": "inf" if pert.p == math.inf else pert.p,
        "xi": pert.xi,
        "n_samples": int(pert.values.shape[0]),
        "model_checksum": model_checksum,
        "config": config or {},
        "checksum": hashlib.sha256(raw).hexdigest(),
    }
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(raw)
    if write_wav:
        save_wav(os.path.splitext(path)[0] + ".wav", np.clip(pert.values, -1.0, 1.0))


def load_perturbation(path):
    """Read a perturbation sidecar; returns (Perturbation, header dict)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    if header.get("format_version") != PERTURBATION_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported perturbation format")
    if hashlib.sha256(raw).hexdigest() != header["checksum"]:
        raise ValueError(f"{path}: perturbation checksum mismatch")
    values = np.frombuffer(raw, dtype="<f8").copy()
    if values.shape[0] != header["n_samples"]:
        raise ValueError(f"{path}: truncated perturbation data")
    p = math.inf if header["p"] == "inf" else float(header["p"])
    return Perturbation(values, p, float(header["xi"])), header
