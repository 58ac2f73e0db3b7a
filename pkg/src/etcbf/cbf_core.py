"""Class-K functions, the psi recursion, and HOCBF/CLF constraint rows.

Barrier time-derivatives are supplied by the caller through a *Lie oracle*
rather than derived symbolically. The psi recursion is carried out on
truncated Taylor series, which handles nonlinear class-K functions without
any extra derivative information.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassK:
    """Extended class-K function ``alpha`` (odd extension for negative arguments).

    ``kind`` is one of ``identity``, ``linear`` (``gain * r``) or ``power``
    (``sign(r) |r|**exponent``).
    """

    kind: str = "identity"
    gain: float = 1.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "linear", "power"):
            raise ValueError(f"unknown class-K kind {self.kind!r}")
        if self.gain <= 0 or self.exponent <= 0:
            raise ValueError("class-K gain and exponent must be positive")

    @classmethod
    def identity(cls) -> "ClassK":
        return cls("identity")

    @classmethod
    def linear(cls, k: float) -> "ClassK":
        return cls("linear", gain=k)

    @classmethod
    def power(cls, exponent: float, gain: float = 1.0) -> "ClassK":
        return cls("power", gain=gain, exponent=exponent)

    @property
    def smoothness(self) -> float:
        """Number of continuous derivatives at the origin (inf for polynomials)."""
        if self.kind != "power" or float(self.exponent).is_integer():
            return math.inf
        return math.floor(self.exponent)

    def __call__(self, r):
        if self.kind == "identity":
            return r
        if self.kind == "linear":
            return self.gain * r
        return self.gain * np.sign(r) * np.abs(r) ** self.exponent

    def series(self, coeffs: np.ndarray) -> np.ndarray:
        """Compose with a truncated Taylor series (normalized coefficients)."""
        if self.kind == "identity":
            return coeffs.copy()
        if self.kind == "linear":
            return self.gain * coeffs
        p0 = coeffs[0]
        if float(self.exponent).is_integer():
            out = np.zeros_like(coeffs)
            out[0] = 1.0
            for _ in range(int(self.exponent)):
                out = _series_mul(out, coeffs)
            if p0 < 0 and int(self.exponent) % 2 == 0:
                out = -out
            return self.gain * out
        if p0 == 0.0:
            if coeffs.size > 1:
                raise ValueError("non-integer power class-K is not differentiable at 0")
            return np.zeros(1)
        sgn = np.sign(p0)
        a = sgn * coeffs
        r = self.exponent
        out = np.zeros_like(coeffs)
        out[0] = a[0] ** r
        for k in range(1, coeffs.size):
            acc = sum(((r + 1) * j - k) * a[j] * out[k - j] for j in range(1, k + 1))
            out[k] = acc / (k * a[0])
        return self.gain * sgn * out


def _series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)[: a.size]


def _series_diff(a: np.ndarray) -> np.ndarray:
    k = np.arange(1, a.size)
    return a[1:] * k


@dataclass(frozen=True)
class LieTerms:
    """Barrier derivatives along an affine system at one state.

    ``derivs`` holds ``b, b', ..., b^(m-1)`` (control-free by relative degree),
    ``drift`` is ``L_f^m b`` and ``control`` is ``L_g L_f^(m-1) b``.
    """

    derivs: np.ndarray
    drift: float
    control: np.ndarray


@dataclass(frozen=True)
class AffineDynamics:
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x, u, t=0.0):
        x = np.asarray(x, dtype=float)
        return self.f(x) + self.g(x) @ np.atleast_1d(u)


LieOracle = Callable[[np.ndarray, AffineDynamics], LieTerms]


@dataclass(frozen=True)
class HocbfSpec:
    barrier: Callable[[np.ndarray], float]
    relative_degree: int
    lie_oracle: LieOracle
    alphas: tuple[ClassK, ...] = None

    def __post_init__(self):
        if self.relative_degree < 1:
            raise ValueError("relative degree must be a positive integer")
        alphas = self.alphas
        if alphas is None:
            alphas = (ClassK.identity(),) * self.relative_degree
        alphas = tuple(alphas)
        if len(alphas) != self.relative_degree:
            raise ValueError("need exactly one class-K function per relative-degree order")
        object.__setattr__(self, "alphas", alphas)


def gradient_oracle(grad: Callable[[np.ndarray], np.ndarray], barrier) -> LieOracle:
    """Lie oracle for relative-degree-one barriers with a known gradient."""

    def oracle(x, dyn):
        gb = np.asarray(grad(x), dtype=float)
        return LieTerms(
            np.array([barrier(x)], dtype=float),
            float(gb @ dyn.f(x)),
            np.atleast_1d(gb @ dyn.g(x)),
        )

    return oracle


@dataclass(frozen=True)
class ClfSpec:
    """Weighted quadratic CLF ``V = sum_i w_i (x_i - K_i)^2``."""

    target: np.ndarray
    epsilon: float
    relax_weight: float = 1.0
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        target = np.atleast_1d(np.asarray(self.target, dtype=float))
        w = np.ones_like(target) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != target.shape or np.any(w < 0):
            raise ValueError("CLF weights must be nonnegative and match the target")
        if self.epsilon <= 0 or self.relax_weight <= 0:
            raise ValueError("CLF rate and relaxation weight must be positive")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "weights", w)

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.target
        return float(np.sum(self.weights * d * d))

    def gradient(self, x) -> np.ndarray:
        return 2.0 * self.weights * (np.asarray(x, dtype=float) - self.target)


@dataclass(frozen=True)
class ControlBounds:
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.u_min, dtype=float))
        hi = np.atleast_1d(np.asarray(self.u_max, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("control bounds must satisfy u_min <= u_max componentwise")
        object.__setattr__(self, "u_min", lo)
        object.__setattr__(self, "u_max", hi)

    @property
    def dimension(self) -> int:
        return self.u_min.size


@dataclass(frozen=True)
class LinearRow:
    """Constraint ``u_coeffs . u + delta_coeff * delta + offset >= 0``."""

    u_coeffs: np.ndarray
    offset: float
    delta_coeff: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "u_coeffs", np.atleast_1d(np.asarray(self.u_coeffs, dtype=float)))
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "delta_coeff", float(self.delta_coeff))

    def value(self, u, delta: float = 0.0) -> float:
        return float(self.u_coeffs @ np.atleast_1d(u) + self.delta_coeff * delta + self.offset)

    def scaled(self, k: float) -> "LinearRow":
        return LinearRow(k * self.u_coeffs, k * self.offset, k * self.delta_coeff)


def _psi_series(spec: HocbfSpec, derivs: Sequence[float], top: Optional[float] = None):
    """Taylor series of psi_0..psi_{m-1}; ``top`` fills in b^(m) when given."""
    m = spec.relative_degree
    d = np.zeros(m + 1)
    d[:m] = derivs
    if top is not None:
        d[m] = top
    series = d / np.array([math.factorial(k) for k in range(m + 1)])
    out = [series]
    for i in range(1, m):
        prev = out[-1]
        out.append(_series_diff(prev) + spec.alphas[i - 1].series(prev[:-1]))
    return out


def psi_values(spec: HocbfSpec, x, dynamics: AffineDynamics) -> np.ndarray:
    """psi_0(x), ..., psi_{m-1}(x) along ``dynamics``."""
    terms = spec.lie_oracle(np.asarray(x, dtype=float), dynamics)
    return np.array([s[0] for s in _psi_series(spec, terms.derivs)])


def hocbf_row_known(spec: HocbfSpec, dynamics: AffineDynamics, x) -> LinearRow:
    """HOCBF condition at ``x`` as ``a_u . u + c >= 0`` for known affine dynamics."""
    x = np.asarray(x, dtype=float)
    terms = spec.lie_oracle(x, dynamics)
    series = _psi_series(spec, terms.derivs, top=0.0)
    psi_top = series[-1]
    # d/dt psi_{m-1} with b^(m) zeroed is exactly the remainder R(b)
    remainder = float(psi_top[1]) if psi_top.size > 1 else 0.0
    psi_prev = float(psi_top[0])
    if any(s[0] < 0 for s in series):
        log.debug("state outside C_1 ∩ ... ∩ C_m at x=%s", x)
    a_u = np.atleast_1d(terms.control).astype(float)
    if np.all(a_u == 0):
        log.warning("degenerate HOCBF row: L_g L_f^(m-1) b vanishes at x=%s", x)
    c = terms.drift + remainder + float(spec.alphas[-1](psi_prev))
    return LinearRow(a_u, c)


def clf_row(spec: ClfSpec, dynamics: AffineDynamics, x) -> LinearRow:
    """Relaxed CLF ``L_fV + L_gV u + eps V <= delta`` stored as ``>= 0``."""
    x = np.asarray(x, dtype=float)
    grad = spec.gradient(x)
    lf = float(grad @ dynamics.f(x))
    lg = np.atleast_1d(grad @ dynamics.g(x))
    return LinearRow(-lg, -(lf + spec.epsilon * spec.value(x)), delta_coeff=1.0)
