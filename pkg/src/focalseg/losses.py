"""Segmentation loss family built around two complementary terms.

A pixel-wise log term (asymmetric focal cross entropy) and a region overlap
term (asymmetric focal Tversky) are mixed with a weight ``lam``; ``delta``
trades false positives against false negatives, ``gamma`` shifts emphasis
between easy and hard examples, and an optional boundary exponent
``epsilon`` pulls in distance-based pixel weights (see focalseg.distance).
Fixing hyperparameters recovers the usual baselines (Dice, cross entropy,
Tversky, focal variants); ``derive_loss`` returns those fixings by name.

All losses accept softmax probabilities (C, H, W) or (B, C, H, W), integer
labels or one-hot targets, and reduce over a batch by the mean of per-image
losses.  Probabilities are clipped to [1e-7, 1 - 1e-7] before any log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import (InvalidEpsilon, InvalidGamma, NonFiniteInput,
                     ShapeMismatch, UnknownLoss)

PROB_CLIP = 1e-7

_COMPONENTS = ("AF", "AFT", "CE", "DICE")


@dataclass(frozen=True)
class LossSpec:
    """Hyperparameter record naming one member of the loss family.

    lam         weight of the pixel log term vs the overlap term, in [0, 1]
    delta       false-positive vs false-negative weighting, in [0, 1]
    gamma       easy/hard example focus exponent
    epsilon     boundary focus exponent; None disables boundary weighting
    rare_class  class index (or indices) exempt from focal down-weighting
    components  which terms make up the loss (subset of AF/AFT/CE/DICE)
    aft_gamma   optional override so the overlap term uses its own gamma
    """

    lam: float = 0.5
    delta: float = 0.6
    gamma: float = 0.2
    epsilon: float | None = None
    rare_class: int | tuple[int, ...] = 1
    components: tuple[str, ...] = ("AF", "AFT")
    aft_gamma: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.epsilon is not None:
            if not np.isfinite(self.epsilon) or self.epsilon < 0:
                raise InvalidEpsilon(
                    f"epsilon must be finite and >= 0, got {self.epsilon!r}")
        if not self.components:
            raise ValueError("components must not be empty")
        for c in self.components:
            if c not in _COMPONENTS:
                raise ValueError(f"unknown loss component {c!r}")

    @property
    def rare_set(self) -> frozenset:
        r = self.rare_class
        return frozenset(r if isinstance(r, tuple) else (r,))

    def to_json_dict(self) -> dict:
        d = {
            "lambda": self.lam,
            "delta": self.delta,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "rare_class": list(self.rare_class) if isinstance(self.rare_class, tuple)
            else self.rare_class,
            "components": list(self.components),
        }
        if self.aft_gamma is not None:
            d["aft_gamma"] = self.aft_gamma
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "LossSpec":
        rare = d.get("rare_class", 1)
        if isinstance(rare, list):
            rare = tuple(rare)
        return cls(
            lam=float(d.get("lambda", 0.5)),
            delta=float(d.get("delta", 0.6)),
            gamma=float(d.get("gamma", 0.2)),
            epsilon=None if d.get("epsilon") is None else float(d["epsilon"]),
            rare_class=rare,
            components=tuple(d.get("components", ("AF", "AFT"))),
            aft_gamma=None if d.get("aft_gamma") is None else float(d["aft_gamma"]),
        )


@dataclass
class LossValue:
    """A differentiable scalar plus the unweighted per-term breakdown."""

    scalar: torch.Tensor
    breakdown: dict[str, float] = field(default_factory=dict)

    def item(self) -> float:
        return float(self.scalar.detach())


def component_weights(spec: LossSpec) -> dict[str, float]:
    """Mixing weight of each component in the spec's weighted sum."""
    w = {"AF": spec.lam, "AFT": 1.0 - spec.lam, "CE": 1.0, "DICE": 1.0}
    return {c: w[c] for c in spec.components}


def _as_batched(pred, truth, weights=None):
    """Normalize inputs to (B, C, H, W) probs, one-hot targets and weights."""
    if not torch.is_tensor(pred):
        pred = torch.as_tensor(pred)
    if pred.dim() == 3:
        pred = pred.unsqueeze(0)
        if torch.is_tensor(truth) and truth.dim() == 3:
            truth = truth.unsqueeze(0)
        elif not torch.is_tensor(truth):
            truth = torch.as_tensor(np.asarray(truth)).unsqueeze(0)
        else:
            truth = truth.unsqueeze(0)
        if weights is not None:
            weights = torch.as_tensor(np.asarray(weights)) \
                if not torch.is_tensor(weights) else weights
            weights = weights.unsqueeze(0)
    elif pred.dim() == 4:
        truth = truth if torch.is_tensor(truth) else torch.as_tensor(np.asarray(truth))
        if weights is not None and not torch.is_tensor(weights):
            weights = torch.as_tensor(np.asarray(weights))
    else:
        raise ShapeMismatch(f"pred must be (C,H,W) or (B,C,H,W), got {tuple(pred.shape)}")

    if not torch.isfinite(pred).all():
        raise NonFiniteInput("prediction contains NaN or inf")

    b, c, h, w = pred.shape
    if truth.dim() == 3:            # integer labels
        if truth.shape != (b, h, w):
            raise ShapeMismatch(
                f"labels shape {tuple(truth.shape)} does not match pred {tuple(pred.shape)}")
        onehot = torch.nn.functional.one_hot(truth.long(), c)
        onehot = onehot.permute(0, 3, 1, 2).to(pred.dtype)
    elif truth.dim() == 4:          # one-hot planes
        if truth.shape != pred.shape:
            raise ShapeMismatch(
                f"one-hot shape {tuple(truth.shape)} does not match pred {tuple(pred.shape)}")
        onehot = truth.to(pred.dtype)
    else:
        raise ShapeMismatch(f"truth must be labels or one-hot, got {tuple(truth.shape)}")

    if weights is not None:
        weights = weights.to(pred.dtype)
        if weights.shape != pred.shape:
            raise ShapeMismatch(
                f"weights shape {tuple(weights.shape)} does not match pred {tuple(pred.shape)}")
        if not torch.isfinite(weights).all():
            raise NonFiniteInput("weight map contains NaN or inf")
    return pred, onehot, weights


def _tversky_per_class(pred, onehot, delta, weights=None):
    """Tversky index per image and class, shape (B, C).

    A class absent from both the target and the prediction support has a
    zero denominator and scores 1 by convention (no gradient).
    """
    w = weights if weights is not None else 1.0
    tp = (w * pred * onehot).sum(dim=(2, 3))
    fp = (w * pred * (1.0 - onehot)).sum(dim=(2, 3))
    fn = (w * (1.0 - pred) * onehot).sum(dim=(2, 3))
    num = tp
    den = tp + delta * fp + (1.0 - delta) * fn
    empty = (den == 0).to(pred.dtype)
    return (num + empty) / (den + empty)


def tversky_index(pred, truth, delta: float, class_index: int, weights=None):
    """Overlap index for one class: TP / (TP + delta*FP + (1-delta)*FN).

    delta = 0.5 reduces to the soft Dice coefficient.  Returns a scalar
    tensor for a single image, a (B,) tensor for a batch.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    single = torch.is_tensor(pred) and pred.dim() == 3 or (
        not torch.is_tensor(pred) and np.asarray(pred).ndim == 3)
    pred, onehot, weights = _as_batched(pred, truth, weights)
    ti = _tversky_per_class(pred, onehot, delta, weights)[:, class_index]
    return ti[0] if single else ti


def asymmetric_focal_tversky_loss(pred, truth, delta: float, gamma: float,
                                  rare_class=1, weights=None) -> LossValue:
    """Overlap loss, mean over classes of (1 - TI); rare classes instead
    contribute (1 - TI)^(1 - gamma) so their hard examples keep gradient.

    gamma must lie in [0, 1) to keep the exponent positive.
    """
    if not (np.isfinite(gamma) and 0.0 <= gamma < 1.0):
        raise InvalidGamma(f"gamma must be in [0, 1) for the overlap term, got {gamma}")
    pred, onehot, weights = _as_batched(pred, truth, weights)
    ti = _tversky_per_class(pred, onehot, delta, weights)
    rare = rare_class if isinstance(rare_class, (tuple, frozenset, set, list)) \
        else (rare_class,)
    one_minus = (1.0 - ti).clamp_min(0.0)
    terms = []
    for c in range(pred.shape[1]):
        if c in rare:
            terms.append(one_minus[:, c] ** (1.0 - gamma))
        else:
            terms.append(one_minus[:, c])
    per_image = torch.stack(terms, dim=1).mean(dim=1)
    scalar = per_image.mean()
    return LossValue(scalar, {"AFT": float(scalar.detach())})


def asymmetric_focal_loss(pred, truth, delta: float, gamma: float,
                          rare_class=1, weights=None) -> LossValue:
    """Pixel log loss with focal down-weighting of easy non-rare pixels.

    Pixels of a rare class contribute -(delta/N) log p with no focal
    factor; other pixels contribute -((1-delta)/N) (1-p)^gamma log p,
    where p is the predicted probability of the pixel's true class.
    Optional per-class weight maps multiply each pixel's term.
    """
    if not (np.isfinite(gamma) and gamma >= 0.0):
        raise InvalidGamma(f"gamma must be finite and >= 0, got {gamma}")
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    pred, onehot, weights = _as_batched(pred, truth, weights)
    b, c, h, w = pred.shape
    n = float(h * w)
    rare = rare_class if isinstance(rare_class, (tuple, frozenset, set, list)) \
        else (rare_class,)

    clipped = pred.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
    p_true = (clipped * onehot).sum(dim=1)              # (B, H, W)
    neg_log = -torch.log(p_true)
    rare_mask = torch.zeros_like(p_true)
    for r in rare:
        rare_mask = rare_mask + onehot[:, r]
    rare_mask = rare_mask.clamp(max=1.0)

    if weights is not None:
        pixel_w = (weights * onehot).sum(dim=1)
        neg_log = pixel_w * neg_log

    rare_term = (rare_mask * neg_log).sum(dim=(1, 2)) / n
    focal = (1.0 - p_true) ** gamma
    other_term = ((1.0 - rare_mask) * focal * neg_log).sum(dim=(1, 2)) / n
    per_image = delta * rare_term + (1.0 - delta) * other_term
    scalar = per_image.mean()
    return LossValue(scalar, {"AF": float(scalar.detach())})


def dice_loss(pred, truth, weights=None) -> LossValue:
    """One minus the mean per-class soft Dice coefficient."""
    pred, onehot, weights = _as_batched(pred, truth, weights)
    w = weights if weights is not None else 1.0
    num = 2.0 * (w * pred * onehot).sum(dim=(2, 3))
    den = (w * pred).sum(dim=(2, 3)) + (w * onehot).sum(dim=(2, 3))
    empty = (den == 0).to(pred.dtype)
    dice = (num + 2.0 * empty) / (den + 2.0 * empty)
    scalar = (1.0 - dice).mean()
    return LossValue(scalar, {"DICE": float(scalar.detach())})


def cross_entropy_loss(pred, truth, weights=None) -> LossValue:
    """Mean negative log probability of each pixel's true class."""
    pred, onehot, weights = _as_batched(pred, truth, weights)
    clipped = pred.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
    p_true = (clipped * onehot).sum(dim=1)
    neg_log = -torch.log(p_true)
    if weights is not None:
        neg_log = (weights * onehot).sum(dim=1) * neg_log
    scalar = neg_log.mean(dim=(1, 2)).mean()
    return LossValue(scalar, {"CE": float(scalar.detach())})


def dice_plus_ce(pred, truth, weights=None) -> LossValue:
    """Unweighted sum of the Dice loss and cross entropy."""
    d = dice_loss(pred, truth, weights)
    c = cross_entropy_loss(pred, truth, weights)
    return LossValue(d.scalar + c.scalar,
                     {"DICE": d.breakdown["DICE"], "CE": c.breakdown["CE"]})


def unified_focal_loss(pred, truth, spec: LossSpec, weights=None) -> LossValue:
    """lam * (pixel log term) + (1 - lam) * (overlap term).

    Endpoint fixings are exact: lam=1 is the pixel term alone, lam=0 the
    overlap term alone (the unused term is skipped, not multiplied by 0).
    """
    return _evaluate_components(pred, truth, spec, ("AF", "AFT"), weights)


def evaluate_spec(pred, truth, spec: LossSpec, weights=None) -> LossValue:
    """Evaluate whichever family member the spec's components name."""
    return _evaluate_components(pred, truth, spec, spec.components, weights)


def _evaluate_components(pred, truth, spec, components, weights) -> LossValue:
    mix = {"AF": spec.lam, "AFT": 1.0 - spec.lam, "CE": 1.0, "DICE": 1.0}
    aft_gamma = spec.gamma if spec.aft_gamma is None else spec.aft_gamma
    scalar = None
    breakdown = {}
    for comp in components:
        if mix[comp] == 0.0:
            continue
        if comp == "AF":
            lv = asymmetric_focal_loss(pred, truth, spec.delta, spec.gamma,
                                       spec.rare_set, weights)
        elif comp == "AFT":
            lv = asymmetric_focal_tversky_loss(pred, truth, spec.delta, aft_gamma,
                                               spec.rare_set, weights)
        elif comp == "CE":
            lv = cross_entropy_loss(pred, truth, weights)
        else:
            lv = dice_loss(pred, truth, weights)
        breakdown[comp] = lv.breakdown[comp]
        term = lv.scalar if mix[comp] == 1.0 else mix[comp] * lv.scalar
        scalar = term if scalar is None else scalar + term
    if scalar is None:
        raise ValueError("loss spec has no active components")
    return LossValue(scalar, breakdown)


# Named hyperparameter fixings that reduce the family to familiar losses.
_LATTICE = {
    "ufl": dict(lam=0.5, delta=0.6, gamma=0.2, epsilon=0.0),
    "ufl+dpt": dict(lam=0.5, delta=0.6, gamma=0.2, epsilon=1.0),
    "ufl+fdpt": dict(lam=0.5, delta=0.6, gamma=0.2, epsilon=0.1),
    "focal": dict(lam=1.0, delta=0.5, gamma=2.0, epsilon=None),
    "tversky": dict(lam=0.0, delta=0.6, gamma=0.0, epsilon=None),
    "focal_tversky": dict(lam=0.0, delta=0.6, gamma=0.2, epsilon=None),
    "dice": dict(lam=0.0, delta=0.5, gamma=0.0, epsilon=None),
    "ce": dict(lam=1.0, delta=0.5, gamma=0.0, epsilon=None,
               components=("CE",)),
    "dice+ce": dict(lam=0.5, delta=0.5, gamma=0.0, epsilon=None,
                    components=("DICE", "CE")),
}


def derive_loss(name: str) -> LossSpec:
    """Hyperparameter fixing that reduces the family to the named loss.

    Known names: ufl, ufl+dpt, ufl+fdpt, focal, tversky, focal_tversky,
    dice, ce, dice+ce.
    """
    key = name.strip().lower()
    if key not in _LATTICE:
        raise UnknownLoss(
            f"unknown loss {name!r}; known: {', '.join(sorted(_LATTICE))}")
    return LossSpec(**_LATTICE[key])
