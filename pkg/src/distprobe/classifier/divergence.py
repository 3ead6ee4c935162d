"""Convert binary-probe performance into distribution-distance estimates.

For balanced classes the Bayes accuracy equals ``(1 + TV) / 2``, so
``2 * acc - 1`` lower-bounds total variation for any classifier. The optimal
discriminator ``C* = p / (p + q)`` attains the two-term cross-entropy
``L(C*) = ln 4 - 2 JSD(p || q)``; any other classifier has larger ``L``, so
``(ln 4 - L) / 2`` is a (classifier-limited) JSD estimate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..errors import ContractError

LN2 = math.log(2.0)
LN4 = math.log(4.0)


@dataclass(frozen=True)
class DivergenceEstimate:
    tv_lower: float
    jsd_estimate: float
    source: str = "accuracy+cross_entropy"
    classifier_limited: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def tv_lower_bound(accuracy: float, k: int = 2) -> float:
    if k != 2:
        raise ContractError("total-variation bound is defined for binary probes only")
    if not 0.0 <= accuracy <= 1.0:
        raise ContractError(f"accuracy {accuracy} outside [0, 1]")
    return min(max(2.0 * accuracy - 1.0, 0.0), 1.0)


def jsd_estimate(two_term_ce: float) -> float:
    """JSD (nats) implied by a two-term binary cross-entropy, clamped to [0, ln 2]."""
    return min(max((LN4 - two_term_ce) / 2.0, 0.0), LN2)


def estimate(accuracy: float, two_term_ce: float) -> DivergenceEstimate:
    return DivergenceEstimate(tv_lower_bound(accuracy), jsd_estimate(two_term_ce))
