"""Gaussian likelihood approximations for experimental observations.

Each observation is reduced to a pair (d, v): a Gaussian observation with
mean equal to the transformed parameter it bears on and variance v.
Three designs are supported — normal samples with known variance, normal
samples with unknown variance, and binomial counts — plus precision
pooling of several observations on one parameter and an adapter that
turns natural-scale samples of a log-transformed quantity into the
summary statistics the normal designs need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .specfun import digamma, trigamma
from .transforms import LOG_SCALED, PriorSpec, Transform, forward_point

__all__ = [
    "NORMAL_KNOWN_VAR",
    "NORMAL_UNKNOWN_VAR",
    "BINOMIAL",
    "EVIDENCE_VARIANTS",
    "LikelihoodApprox",
    "EvidenceSpec",
    "normal_known_var",
    "normal_unknown_var",
    "binomial",
    "pool",
    "lognormal_sample_adapter",
    "to_likelihood",
]

NORMAL_KNOWN_VAR = "normal_known_var"
NORMAL_UNKNOWN_VAR = "normal_unknown_var"
BINOMIAL = "binomial"
EVIDENCE_VARIANTS = (NORMAL_KNOWN_VAR, NORMAL_UNKNOWN_VAR, BINOMIAL)

# Reference Beta parameters for binomial evidence when the parent has no
# Beta prior and the model gives none explicitly.
_DEFAULT_REFERENCE = 0.5


@dataclass(frozen=True)
class LikelihoodApprox:
    """A Gaussian observation on the transformed scale: value d, variance v > 0."""

    d: float
    v: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.d) and math.isfinite(self.v) and self.v > 0.0):
            raise ValueError(
                f"likelihood approximation needs finite d and v > 0, got ({self.d}, {self.v})"
            )


@dataclass(frozen=True)
class EvidenceSpec:
    """Declaration of one observation process.

    ``normal_known_var`` takes (count, sample_mean, variance);
    ``normal_unknown_var`` takes (count, sample_mean, sample_var) with the
    divisor-count convention; ``binomial`` takes (count, successes) and
    optional reference (alpha, beta).  Normal variants may instead carry
    raw ``samples`` of a log-transformed parent (``lognormal_samples``),
    in which case the summary statistics are derived at solve time.
    """

    variant: str
    count: int | None = None
    sample_mean: float | None = None
    variance: float | None = None
    sample_var: float | None = None
    successes: int | None = None
    alpha: float | None = None
    beta: float | None = None
    lognormal_samples: bool = False
    samples: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.variant not in EVIDENCE_VARIANTS:
            raise ValueError(
                f"unknown evidence variant {self.variant!r}; expected one of {EVIDENCE_VARIANTS}"
            )
        if self.variant == BINOMIAL:
            self._check_binomial()
        else:
            self._check_normal()

    def _check_binomial(self) -> None:
        if self.lognormal_samples or self.samples is not None:
            raise ValueError("binomial evidence takes counts, not samples")
        if self.sample_mean is not None or self.variance is not None or self.sample_var is not None:
            raise ValueError("binomial evidence takes count/successes, not normal statistics")
        if self.count is None or self.successes is None:
            raise ValueError("binomial evidence requires count and successes")
        if self.count < 1 or not 0 <= self.successes <= self.count:
            raise ValueError(
                f"binomial evidence needs count >= 1 and 0 <= successes <= count, "
                f"got ({self.count}, {self.successes})"
            )
        if (self.alpha is None) != (self.beta is None):
            raise ValueError("binomial reference alpha and beta must be given together")
        if self.alpha is not None and not (self.alpha > 0.0 and self.beta > 0.0):
            raise ValueError(
                f"binomial reference parameters must be positive, got ({self.alpha}, {self.beta})"
            )

    def _check_normal(self) -> None:
        if self.successes is not None or self.alpha is not None or self.beta is not None:
            raise ValueError(f"{self.variant} evidence takes no binomial fields")
        if self.lognormal_samples:
            if self.samples is None or len(self.samples) == 0:
                raise ValueError("lognormal-sample evidence requires a non-empty samples list")
            if self.count is not None or self.sample_mean is not None or self.sample_var is not None:
                raise ValueError(
                    "lognormal-sample evidence derives count/mean/variance from the samples"
                )
        else:
            if self.samples is not None:
                raise ValueError("raw samples require the lognormal_samples flag")
            if self.count is None or self.sample_mean is None:
                raise ValueError(f"{self.variant} evidence requires count and sample_mean")
        if self.variant == NORMAL_KNOWN_VAR:
            if self.sample_var is not None:
                raise ValueError("normal_known_var takes variance, not sample_var")
            if self.variance is None or not self.variance > 0.0:
                raise ValueError(f"known variance must be positive, got {self.variance}")
            if not self.lognormal_samples and self.count < 1:
                raise ValueError(f"count must be >= 1, got {self.count}")
        else:
            if self.variance is not None:
                raise ValueError("normal_unknown_var takes sample_var, not variance")
            if not self.lognormal_samples:
                if self.count < 4:
                    raise ValueError(
                        f"unknown-variance evidence requires count >= 4, got {self.count}"
                    )
                if self.sample_var is None or not self.sample_var > 0.0:
                    raise ValueError(f"sample_var must be positive, got {self.sample_var}")
            elif len(self.samples) < 4:
                raise ValueError(
                    f"unknown-variance evidence requires at least 4 samples, got {len(self.samples)}"
                )


def normal_known_var(count: int, sample_mean: float, variance: float) -> LikelihoodApprox:
    """Mean of ``count`` draws with known per-draw variance: (mean, variance/count)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not variance > 0.0:
        raise ValueError(f"variance must be positive, got {variance}")
    return LikelihoodApprox(sample_mean, variance / count)


def normal_unknown_var(count: int, sample_mean: float, sample_var: float) -> LikelihoodApprox:
    """Mean of ``count`` draws with estimated variance: (mean, sample_var/(count - 3)).

    The divisor ``count - 3`` absorbs the extra spread of the Student
    sampling distribution, and forces ``count >= 4``.
    """
    if count < 4:
        raise ValueError(f"unknown-variance evidence requires count >= 4, got {count}")
    if not sample_var > 0.0:
        raise ValueError(f"sample_var must be positive, got {sample_var}")
    return LikelihoodApprox(sample_mean, sample_var / (count - 3))


def binomial(count: int, successes: int, alpha: float, beta: float) -> LikelihoodApprox:
    """Binomial counts as a Gaussian observation of the log-odds.

    With reference Beta(alpha, beta), the log-odds moments before and
    after observing ``successes`` out of ``count`` are

        x1 = psi(alpha) - psi(beta)            v1 = psi'(alpha) + psi'(beta)
        x2 = psi(alpha+s) - psi(beta+count-s)  v2 = psi'(alpha+s) + psi'(beta+count-s)

    and the equivalent single observation is v = 1/(1/v2 - 1/v1),
    d = v*(x2/v2 - x1/v1).  The construction is exact in the sense that
    pooling (x1, v1) with (d, v) reproduces (x2, v2).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0 <= successes <= count:
        raise ValueError(f"successes must lie in [0, {count}], got {successes}")
    if not (alpha > 0.0 and beta > 0.0):
        raise ValueError(f"reference parameters must be positive, got ({alpha}, {beta})")
    x1 = digamma(alpha) - digamma(beta)
    v1 = trigamma(alpha) + trigamma(beta)
    x2 = digamma(alpha + successes) - digamma(beta + count - successes)
    v2 = trigamma(alpha + successes) + trigamma(beta + count - successes)
    if not v2 < v1:
        raise ValueError(
            f"observation adds no precision (v2 = {v2} >= v1 = {v1}); "
            "this arises only for an empty experiment"
        )
    v = 1.0 / (1.0 / v2 - 1.0 / v1)
    d = v * (x2 / v2 - x1 / v1)
    return LikelihoodApprox(d, v)


def pool(items: list[LikelihoodApprox]) -> LikelihoodApprox:
    """Combine observations on one parameter by precision weighting."""
    if not items:
        raise ValueError("cannot pool an empty list of observations")
    precision = sum(1.0 / it.v for it in items)
    weighted = sum(it.d / it.v for it in items)
    v = 1.0 / precision
    return LikelihoodApprox(v * weighted, v)


def lognormal_sample_adapter(
    samples: list[float] | tuple[float, ...], t: Transform
) -> tuple[int, float, float]:
    """Summary statistics of log-transformed samples: (count, mean, variance).

    Each sample is mapped through the transform; the variance uses the
    divisor-count convention.  Samples outside the transform's support
    raise a ``ValueError`` naming the offending index.
    """
    if t.kind != LOG_SCALED:
        raise ValueError(f"sample adapter requires a log_scaled transform, got {t.kind}")
    if not samples:
        raise ValueError("sample adapter requires at least one sample")
    xs = []
    for i, y in enumerate(samples):
        if not t.contains(y):
            raise ValueError(
                f"sample {i} (value {y}) is outside the transform support {t.support()}"
            )
        xs.append(forward_point(t, y))
    count = len(xs)
    mean = sum(xs) / count
    var = sum((x - mean) ** 2 for x in xs) / count
    return count, mean, var


def to_likelihood(
    spec: EvidenceSpec,
    parent_transform: Transform,
    parent_prior: PriorSpec | None,
) -> LikelihoodApprox:
    """Resolve an evidence declaration against its parent into (d, v).

    Binomial evidence without explicit reference parameters inherits the
    parent's Beta prior when there is one and falls back to 0.5/0.5.
    Raw-sample normal evidence is summarised through
    :func:`lognormal_sample_adapter` with the parent's transform.
    """
    if spec.variant == BINOMIAL:
        if spec.alpha is not None:
            alpha, beta = spec.alpha, spec.beta
        elif parent_prior is not None and parent_prior.family == "beta":
            alpha, beta = parent_prior.alpha, parent_prior.beta
        else:
            alpha = beta = _DEFAULT_REFERENCE
        return binomial(spec.count, spec.successes, alpha, beta)

    if spec.lognormal_samples:
        count, mean, var = lognormal_sample_adapter(spec.samples, parent_transform)
        if spec.variant == NORMAL_KNOWN_VAR:
            return normal_known_var(count, mean, spec.variance)
        if var <= 0.0:
            raise ValueError(
                "transformed samples are all identical; unknown-variance evidence "
                "needs positive spread"
            )
        return normal_unknown_var(count, mean, var)

    if spec.variant == NORMAL_KNOWN_VAR:
        return normal_known_var(spec.count, spec.sample_mean, spec.variance)
    return normal_unknown_var(spec.count, spec.sample_mean, spec.sample_var)
