"""
Single- and two-mode state algebra on truncated photon-number spaces.

The squeezed coherent state S(eta)|alpha> is built by applying the matrix
exponential of the squeezing generator to a truncated coherent state. Its
two-photon amplitude vanishes near alpha**2 == eta, which is what makes the
light anti-bunched with g2 ~ 4|alpha|**2.

Conventions
-----------
S(eta) = exp[(conj(eta) a**2 - eta a_dag**2) / 2], so the leading-order
photon-number amplitudes (with C0 = 1) are

    C1 = alpha
    C2 = (alpha**2 - eta) / sqrt(2)
    C3 = alpha (alpha**2 - 3 eta) / sqrt(6)
"""

import cmath
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from .errors import (
    InvalidDimensionError,
    OptimizationFailureError,
    ParameterError,
    TruncationOverflowError,
    UndefinedStatisticError,
)

DEFAULT_DIM = 20
NORM_EPS = 1e-9
# Largest norm change squeeze_apply accepts from truncation, for every dim.
UNITARY_EPS = 1e-6
COHERENT_TAIL_MAX = 1e-12
MEAN_PHOTON_FLOOR = 1e-15
PERTURBATIVE_LIMIT = 0.3


def _frozen(values, dtype=complex):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FockVector:
    """Photon-number amplitudes C_m, m = 0 .. dim-1, of one mode."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.ndim != 1 or amps.size < 2:
            raise InvalidDimensionError(f"need a 1-d amplitude array with dim >= 2, got shape {amps.shape}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def norm_sq(self) -> float:
        return float(np.sum(self.probabilities))

    def mean_photon_number(self) -> float:
        p = self.probabilities
        return float(np.arange(self.dim) @ p / p.sum())

    @classmethod
    def number_state(cls, n: int, dim: int) -> "FockVector":
        amps = np.zeros(dim, dtype=complex)
        amps[n] = 1.0
        return cls(amps)


@dataclass(frozen=True)
class SqueezedCoherentParams:
    alpha: complex
    eta: complex

    def __post_init__(self):
        for name in ("alpha", "eta"):
            value = complex(getattr(self, name))
            if not cmath.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class TwoModeState:
    """Joint amplitudes over |m_a, n_b>, stored normalized.

    ``reflectivity`` is the power reflectivity R of the two tap beam
    splitters that merge the coherent states into the signal and idler
    paths (T = 1 - R). Only the R -> 0 limit is modelled.
    """

    amplitudes: np.ndarray
    reflectivity: float = 0.0

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.ndim != 2 or amps.shape[0] != amps.shape[1]:
            raise InvalidDimensionError(f"two-mode amplitudes must be square, got shape {amps.shape}")
        norm = np.sqrt(np.sum(np.abs(amps) ** 2))
        if norm == 0:
            raise ParameterError("two-mode state has zero norm")
        object.__setattr__(self, "amplitudes", _frozen(amps / norm))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def transmissivity(self) -> float:
        return 1.0 - self.reflectivity

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def coefficient(self, m: int, n: int) -> complex:
        """Amplitude of |m, n> relative to the vacuum amplitude (C00 = 1)."""
        return complex(self.amplitudes[m, n] / self.amplitudes[0, 0])


@dataclass(frozen=True)
class RateParams:
    pair_rate: float
    coherence_time: float

    def __post_init__(self):
        if not (self.pair_rate > 0 and self.coherence_time > 0):
            raise ParameterError(
                f"pair_rate and coherence_time must be > 0, got {self.pair_rate}, {self.coherence_time}"
            )


class RateLaw(NamedTuple):
    single_rate: float
    alpha_sq: float
    g2_floor: float


def annihilation(dim: int) -> np.ndarray:
    """Truncated annihilation matrix with A|m> = sqrt(m)|m-1>."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1)


def _check_dim(dim, minimum=2):
    if int(dim) != dim or dim < minimum:
        raise InvalidDimensionError(f"dim must be an integer >= {minimum}, got {dim}")
    return int(dim)


def _inv_sqrt_factorials(n: int) -> np.ndarray:
    # running product keeps every entry finite for any n
    out = np.ones(n)
    for m in range(1, n):
        out[m] = out[m - 1] / math.sqrt(m)
    return out


def coherent_state(alpha: complex, dim: int = DEFAULT_DIM) -> FockVector:
    """Truncated coherent state with C_m = exp(-|a|^2/2) a^m / sqrt(m!).

    Raises
    ------
    InvalidDimensionError
        If ``dim < 2``.
    TruncationOverflowError
        If the Poisson mass beyond ``dim - 1`` exceeds 1e-12.
    """
    dim = _check_dim(dim)
    alpha = complex(alpha)
    amps = np.empty(dim, dtype=complex)
    amps[0] = math.exp(-abs(alpha) ** 2 / 2)
    for m in range(1, dim):
        amps[m] = amps[m - 1] * alpha / math.sqrt(m)
    tail = max(0.0, 1.0 - float(np.sum(np.abs(amps) ** 2)))
    if tail > COHERENT_TAIL_MAX:
        raise TruncationOverflowError(
            f"coherent state |alpha|={abs(alpha):.3g} loses {tail:.3g} beyond dim={dim}", tail
        )
    return FockVector(amps)


def squeeze_generator(eta: complex, dim: int) -> np.ndarray:
    a = annihilation(dim)
    a2 = a @ a
    return (np.conj(eta) * a2 - eta * a2.T) / 2


def _squeeze_matrix(eta, dim):
    # computed in a doubled space so the rows we keep are free of edge effects
    work = 2 * dim
    return expm(squeeze_generator(complex(eta), work))[:dim, :dim]


def squeeze_apply(eta: complex, state: FockVector) -> FockVector:
    """Apply S(eta) to ``state``.

    The operator exponential is evaluated on a space twice the size of the
    state and then projected back onto its first ``dim`` levels, so the
    returned norm deficit is the physical mass pushed past the truncation.
    That deficit must stay below ``UNITARY_EPS``.
    """
    eta = complex(eta)
    if abs(eta) > 0.5:
        raise ParameterError(f"|eta| must be <= 0.5, got {abs(eta):.3g}")
    if eta == 0:
        return state
    dim = state.dim
    padded = np.zeros(2 * dim, dtype=complex)
    padded[:dim] = state.amplitudes
    full = expm(squeeze_generator(eta, 2 * dim)) @ padded
    out = full[:dim]
    loss = state.norm_sq - float(np.sum(np.abs(out) ** 2))
    if loss > UNITARY_EPS:
        raise TruncationOverflowError(
            f"squeezing with |eta|={abs(eta):.3g} loses norm {loss:.3g} at dim={dim}; use a larger dim", loss
        )
    return FockVector(out)


def squeezed_coherent_state(alpha: complex, eta: complex, dim: int = DEFAULT_DIM) -> FockVector:
    return squeeze_apply(eta, coherent_state(alpha, dim))


def perturbative_coeffs(params: SqueezedCoherentParams):
    """Leading-order amplitudes (C0, C1, C2, C3), unnormalized with C0 = 1."""
    alpha, eta = params.alpha, params.eta
    if abs(alpha) > PERTURBATIVE_LIMIT or math.sqrt(abs(eta)) > PERTURBATIVE_LIMIT:
        warnings.warn(
            f"alpha={alpha:.3g}, eta={eta:.3g} outside the small-parameter regime; expansion is inaccurate",
            RuntimeWarning,
            stacklevel=2,
        )
    c0 = 1 + 0j
    c1 = alpha
    c2 = (alpha**2 - eta) / math.sqrt(2)
    c3 = alpha * (alpha**2 - 3 * eta) / math.sqrt(6)
    return c0, c1, c2, c3


def g2_of_state(state: FockVector) -> float:
    """Single-mode <:N^2:> / <N>^2 of the renormalized state."""
    p = state.probabilities
    total = p.sum()
    m = np.arange(state.dim)
    mean = float(m @ p) / total
    if mean < MEAN_PHOTON_FLOOR:
        raise UndefinedStatisticError(f"mean photon number {mean:.3g} too small for g2")
    return float((m * (m - 1)) @ p) / total / mean**2


def _c2_polynomial(eta, dim):
    """Coefficients c_k of the two-photon amplitude as a series in z = alpha**2.

    <2|S|alpha> exp(|alpha|^2/2) = sum_m S[2, m] alpha^m / sqrt(m!), and S
    only couples levels of equal parity, so the zeros of C2 are the zeros of
    this polynomial in alpha**2.
    """
    s = _squeeze_matrix(eta, dim)
    inv_fact = _inv_sqrt_factorials(dim)
    return s[2, 0::2] * inv_fact[0::2]


def match_alpha(eta: complex, dim: int = DEFAULT_DIM, tol: float = 1e-15, max_iter: int = 60) -> complex:
    """Coherent amplitude that cancels the two-photon term of S(eta)|alpha>.

    Solves the exact truncated-space condition C2(alpha) = 0 by Newton
    iteration in z = alpha**2, seeded at z = eta, and returns the principal
    square root. eta = 0 returns 0.

    Raises
    ------
    OptimizationFailureError
        If Newton does not converge; ``best`` holds the last iterate.
    """
    eta = complex(eta)
    if abs(eta) > 0.25:
        raise ParameterError(f"|eta| must be <= 0.25, got {abs(eta):.3g}")
    if eta == 0:
        return 0j
    dim = _check_dim(dim, 3)
    coeffs = _c2_polynomial(eta, dim)
    poly = np.polynomial.Polynomial(coeffs)
    deriv = poly.deriv()
    z = eta
    for _ in range(max_iter):
        step = poly(z) / deriv(z)
        z = z - step
        if abs(step) <= tol * abs(z):
            return complex(np.sqrt(z))
    raise OptimizationFailureError(
        f"two-photon cancellation did not converge for eta={eta:.3g}", complex(np.sqrt(z))
    )


def rate_law(rates: RateParams) -> RateLaw:
    """Single-photon rate and g2 floor implied by matching |alpha|^2 = |eta|.

    With |eta|^2 = R2 T_c pairs per mode and |alpha|^2 photons per mode of
    length T_c: R1 = sqrt(R2 / T_c) and |alpha|^2 = sqrt(R2 T_c), which is
    also the higher-order g2 floor.
    """
    r2, tc = rates.pair_rate, rates.coherence_time
    alpha_sq = math.sqrt(r2 * tc)
    return RateLaw(single_rate=math.sqrt(r2 / tc), alpha_sq=alpha_sq, g2_floor=alpha_sq)


def path_entangled_state(
    alpha: complex, beta: complex, eta: complex, dim: int = 3, reflectivity: float = 0.0
) -> TwoModeState:
    """Pair source mixed with coherent states in paths a and b, to two photons.

    Unnormalized expansion coefficients: |0,0> 1, |1,0> alpha, |0,1> beta,
    |1,1> eta + alpha*beta, |2,0> alpha**2/sqrt2, |0,2> beta**2/sqrt2. The
    returned state is normalized; ``coefficient`` recovers these values.
    """
    dim = _check_dim(dim, 3)
    if reflectivity != 0.0:
        raise NotImplementedError("only the unit-transmissivity limit (reflectivity=0) is modelled")
    for name, value in (("alpha", alpha), ("beta", beta), ("eta", eta)):
        if abs(value) > PERTURBATIVE_LIMIT:
            raise ParameterError(f"|{name}| must be <= {PERTURBATIVE_LIMIT}, got {abs(value):.3g}")
    alpha, beta, eta = complex(alpha), complex(beta), complex(eta)
    amps = np.zeros((dim, dim), dtype=complex)
    amps[0, 0] = 1.0
    amps[1, 0] = alpha
    amps[0, 1] = beta
    amps[1, 1] = eta + alpha * beta
    amps[2, 0] = alpha * alpha / math.sqrt(2)
    amps[0, 2] = beta * beta / math.sqrt(2)
    return TwoModeState(amps, reflectivity=reflectivity)


def two_mode_coincidence_prob(state: TwoModeState) -> float:
    """Probability that both modes hold at least one photon."""
    return math.fsum(state.probabilities[1:, 1:].ravel())
