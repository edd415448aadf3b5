"""Stability and frequency-domain analysis of the linearized dual-compartment
system (spike generation and resets ignored).

Substituting the dendritic update into the somatic one turns the coupled
recursion into a first-order vector system v[t] = A v[t-1] + B c[t] with

    A = [[a1,      b1          ],
         [a1 * b2, a2 + b1 * b2]]

whose characteristic polynomial is

    lam^2 - (a1 + a2 + b1*b2) * lam + a1 * a2 = 0.

Both eigenvalues must lie inside the unit circle for the free dynamics to
decay. The forced response is captured by two rational transfer functions in
z^-1 sharing the denominator

    det(M) = 1 - (a1 + a2 + b1*b2) z^-1 + a1*a2 z^-2

with numerators

    H_d: (1 - a1)            + [b1 (1 - a2) - (1 - a1) a2] z^-1
    H_s: b2 (1 - a1) + (1 - a2) - a1 (1 - a2) z^-1

Eigenvalues are computed from the closed-form quadratic. When the discriminant
is negative, the pair is complex conjugate and its modulus equals
sqrt(a1 * a2) exactly (product of the roots), which avoids rounding noise on
the marginal boundary.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SingularityError
from .neuron import NeuronParams

MARGINAL_TOL = 1e-9

Verdict = str  # "stable" | "marginal" | "unstable"


@dataclass(frozen=True)
class SystemMatrix:
    """State matrix of the substituted (dendrite-first) linear recursion."""

    a11: float
    a12: float
    a21: float
    a22: float

    @classmethod
    def from_params(cls, params: NeuronParams) -> "SystemMatrix":
        return cls(
            a11=params.alpha1,
            a12=params.beta1,
            a21=params.alpha1 * params.beta2,
            a22=params.alpha2 + params.beta1 * params.beta2,
        )

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]], dtype=np.float64)


@dataclass(frozen=True)
class StabilityReport:
    lambda1: complex
    lambda2: complex
    spectral_radius: float
    verdict: Verdict


@dataclass(frozen=True)
class RationalTransfer:
    """First-order-over-second-order rational function in z^-1."""

    num: tuple[float, float]
    den: tuple[float, float, float]
    label: str


def system_matrix(params: NeuronParams) -> SystemMatrix:
    return SystemMatrix.from_params(params)


def input_vector(params: NeuronParams) -> np.ndarray:
    """Input gain vector B of the forced system v[t] = A v[t-1] + B c[t]."""
    b_d = 1.0 - params.alpha1
    b_s = params.beta2 * (1.0 - params.alpha1) + (1.0 - params.alpha2)
    return np.array([b_d, b_s], dtype=np.float64)


def _closed_form_eigs(root_sum: float, root_product: float) -> tuple[complex, complex, float]:
    """Roots of lam^2 - root_sum*lam + root_product and their max modulus.

    root_product is a1*a2 >= 0, so the larger-magnitude real root carries the
    sign of root_sum and the smaller one is recovered by division (no
    cancellation). The complex branch has modulus sqrt(root_product) exactly.
    """
    disc = root_sum * root_sum - 4.0 * root_product
    if disc < 0.0:
        re = root_sum / 2.0
        im = math.sqrt(-disc) / 2.0
        rho = math.sqrt(root_product)
        return complex(re, im), complex(re, -im), rho
    sq = math.sqrt(disc)
    r1 = (root_sum + math.copysign(sq, root_sum)) / 2.0
    r2 = root_product / r1 if r1 != 0.0 else 0.0
    if abs(r2) > abs(r1):
        r1, r2 = r2, r1
    return complex(r1), complex(r2), abs(r1)


def classify_radius(rho: float, tol: float = MARGINAL_TOL) -> Verdict:
    if abs(rho - 1.0) <= tol:
        return "marginal"
    return "stable" if rho < 1.0 else "unstable"


def stability(params: NeuronParams) -> StabilityReport:
    """Eigenvalues of the system matrix and the unit-circle verdict."""
    root_sum = params.alpha1 + params.alpha2 + params.beta1 * params.beta2
    root_product = params.alpha1 * params.alpha2
    lam1, lam2, rho = _closed_form_eigs(root_sum, root_product)
    return StabilityReport(lam1, lam2, rho, classify_radius(rho))


def transfer_functions(params: NeuronParams) -> tuple[RationalTransfer, RationalTransfer]:
    """Dendritic and somatic transfer functions H_d(z), H_s(z)."""
    a1, a2 = params.alpha1, params.alpha2
    b1, b2 = params.beta1, params.beta2
    den = (1.0, -(a1 + a2 + b1 * b2), a1 * a2)
    num_d = (1.0 - a1, b1 * (1.0 - a2) - (1.0 - a1) * a2)
    num_s = (b2 * (1.0 - a1) + (1.0 - a2), -a1 * (1.0 - a2))
    return (
        RationalTransfer(num_d, den, label="dendrite"),
        RationalTransfer(num_s, den, label="soma"),
    )


def evaluate_response(h: RationalTransfer, omega: float) -> tuple[float, float]:
    """Magnitude and phase of h at e^{j omega}, omega in [0, pi].

    Raises SingularityError when a pole sits on the unit circle at this
    frequency; elsewhere the response is finite (possibly huge near a
    marginal pole) and is returned as computed.
    """
    if not 0.0 <= omega <= math.pi:
        raise ContractError(f"evaluate_response: omega must lie in [0, pi], got {omega}")
    z = cmath.exp(complex(0.0, omega))
    zinv = 1.0 / z
    pole1, pole2, _ = _closed_form_eigs(-h.den[1], h.den[2])
    for pole in (pole1, pole2):
        if abs(abs(pole) - 1.0) <= MARGINAL_TOL and abs(z - pole) <= 1e-9:
            raise SingularityError(
                f"transfer function {h.label!r} has a pole on the unit circle at omega={omega}"
            )
    num = h.num[0] + h.num[1] * zinv
    den = h.den[0] + (h.den[1] + h.den[2] * zinv) * zinv
    if den == 0:
        raise SingularityError(
            f"transfer function {h.label!r} has a pole on the unit circle at omega={omega}"
        )
    value = num / den
    return abs(value), cmath.phase(value)


def impulse_response(h: RationalTransfer, n_terms: int) -> np.ndarray:
    """Inverse transform by long division of the rational function."""
    if n_terms < 1:
        raise ContractError(f"impulse_response: n_terms must be >= 1, got {n_terms}")
    b0, b1 = h.num
    _, a1, a2 = h.den
    out = np.zeros(n_terms, dtype=np.float64)
    out[0] = b0
    if n_terms > 1:
        out[1] = b1 - a1 * out[0]
    for n in range(2, n_terms):
        out[n] = -a1 * out[n - 1] - a2 * out[n - 2]
    return out


def sweep_stability_region(
    alpha1: float,
    alpha2: float,
    beta_products: np.ndarray,
) -> list[tuple[float, float, Verdict]]:
    """Spectral radius and verdict over a grid of coupling products b1*b2."""
    grid = np.atleast_1d(np.asarray(beta_products, dtype=np.float64))
    if grid.size == 0:
        raise ContractError("sweep_stability_region: empty grid")
    rows: list[tuple[float, float, Verdict]] = []
    for product in grid:
        _, _, rho = _closed_form_eigs(alpha1 + alpha2 + product, alpha1 * alpha2)
        rows.append((float(product), rho, classify_radius(rho)))
    return rows


def bode_table(
    params: NeuronParams,
    n_points: int = 256,
) -> list[dict[str, float]]:
    """Frequency response of both compartments on a uniform [0, pi] grid."""
    h_d, h_s = transfer_functions(params)
    omegas = np.linspace(0.0, math.pi, n_points)
    rows = []
    for omega in omegas:
        mag_d, phase_d = evaluate_response(h_d, float(omega))
        mag_s, phase_s = evaluate_response(h_s, float(omega))
        rows.append({
            "omega": float(omega),
            "mag_d": mag_d, "phase_d": phase_d,
            "mag_s": mag_s, "phase_s": phase_s,
        })
    return rows


__all__ = [
    "MARGINAL_TOL", "SystemMatrix", "StabilityReport", "RationalTransfer",
    "system_matrix", "input_vector", "stability", "classify_radius",
    "transfer_functions", "evaluate_response", "impulse_response",
    "sweep_stability_region", "bode_table",
]
