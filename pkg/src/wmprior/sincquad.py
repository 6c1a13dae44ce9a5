"""Sinc quadrature rules for negative fractional powers.

The Balakrishnan integral for ``A^{-s}`` with s in (0,1),

    A^{-s} = sin(pi s)/pi * int_0^inf t^{-s} (A + t)^{-1} dt,

is discretized on the log axis (t = e^y) with step ``zeta = 1/log(1/h)``,
giving nodes ``z_j = e^{j zeta}`` and weights
``w_j = zeta sin(pi s)/pi * e^{(1-s) j zeta}``.  The truncation counts are
chosen so the quadrature error balances the O(h^2) spatial discretization
error of the Q1 elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["SincRule", "inverse_rule", "spde_rule", "rescaled_weights"]


@dataclass(frozen=True)
class SincRule:
    """Nodes z_j = e^{j zeta} and positive weights for -m_minus <= j <= m_plus."""

    s: float
    zeta: float
    m_minus: int
    m_plus: int
    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "inverse"

    @property
    def n_sigma(self) -> int:
        return self.m_minus + self.m_plus + 1

    @property
    def j(self) -> np.ndarray:
        return np.arange(-self.m_minus, self.m_plus + 1)


def _zeta(h: float, zeta: float | None) -> float:
    if zeta is not None:
        if zeta <= 0:
            raise ValueError("zeta override must be positive")
        return float(zeta)
    if not 0.0 < h < 1.0:
        raise ValueError(f"mesh parameter h must be in (0,1), got {h}")
    return 1.0 / math.log(1.0 / h)


def inverse_rule(s: float, h: float, zeta: float | None = None) -> SincRule:
    """Rule approximating A^{-s} for s in (0,1).

    M+ = ceil(pi^2 / (4 s zeta^2)), M- = ceil(pi^2 / (4 (1-s) zeta^2));
    exact integer quotients keep the integer (plain ceiling).
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional exponent s must be in (0,1), got {s}")
    z = _zeta(h, zeta)
    m_plus = math.ceil(math.pi**2 / (4.0 * s * z * z))
    m_minus = math.ceil(math.pi**2 / (4.0 * (1.0 - s) * z * z))
    j = np.arange(-m_minus, m_plus + 1)
    nodes = np.exp(j * z)
    weights = (z * math.sin(s * math.pi) / math.pi) * np.exp((1.0 - s) * j * z)
    return SincRule(s=s, zeta=z, m_minus=m_minus, m_plus=m_plus, nodes=nodes, weights=weights)


def spde_rule(alpha: float, h: float, zeta: float | None = None) -> SincRule:
    """Rule for the white-noise sampler exponent alpha/2, alpha in (0,2).

    Same nodes as ``inverse_rule`` with s = alpha/2 but with the sampler's
    truncation counts M+ = ceil(pi^2/(2 alpha zeta^2)),
    M- = ceil(pi^2/(2 (2-alpha) zeta^2)) (identical after substitution).
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"sampler exponent alpha must be in (0,2), got {alpha}")
    z = _zeta(h, zeta)
    m_plus = math.ceil(math.pi**2 / (2.0 * alpha * z * z))
    m_minus = math.ceil(math.pi**2 / (2.0 * (2.0 - alpha) * z * z))
    j = np.arange(-m_minus, m_plus + 1)
    nodes = np.exp(j * z)
    weights = (z * math.sin(math.pi * alpha / 2.0) / math.pi) * np.exp((1.0 - alpha / 2.0) * j * z)
    return SincRule(
        s=alpha / 2.0, zeta=z, m_minus=m_minus, m_plus=m_plus, nodes=nodes, weights=weights, kind="spde"
    )


def rescaled_weights(rule: SincRule):
    """Shifts and weights of the preconditioner-friendly form.

    Factoring z_j out of each summand turns ``w_j (K + z_j M)^{-1}`` into
    ``(w_j/z_j) (M + z_j^{-1} K)^{-1}``; returns (sigma, wtilde) with
    sigma_j = 1/z_j and wtilde_j = w_j/z_j, in the rule's j order.
    """
    return 1.0 / rule.nodes, rule.weights / rule.nodes
