"""Compactly supported second-order kernels on [-1, 1]."""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate


class KernelFamily(str, Enum):
    EPANECHNIKOV = "epanechnikov"
    TRIANGULAR = "triangular"
    UNIFORM = "uniform"


def _epanechnikov(u):
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _triangular(u):
    a = np.abs(u)
    return np.where(a <= 1.0, 1.0 - a, 0.0)


def _uniform(u):
    return np.where(np.abs(u) <= 1.0, 0.5, 0.0)


_FUNCS = {
    KernelFamily.EPANECHNIKOV: _epanechnikov,
    KernelFamily.TRIANGULAR: _triangular,
    KernelFamily.UNIFORM: _uniform,
}

# (mu2, nu0) in closed form
_MOMENTS = {
    KernelFamily.EPANECHNIKOV: (1.0 / 5.0, 3.0 / 5.0),
    KernelFamily.TRIANGULAR: (1.0 / 6.0, 2.0 / 3.0),
    KernelFamily.UNIFORM: (1.0 / 3.0, 1.0 / 2.0),
}


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric probability density supported on [-1, 1].

    Only the second moment ``mu2`` and the squared-kernel integral ``nu0``
    are stored; other moments are computed on demand by :func:`moment`.
    """

    family: KernelFamily
    mu2: float
    nu0: float
    support_radius: float = 1.0

    def __call__(self, u):
        return eval_kernel(self, u)


def make_kernel(name="epanechnikov") -> KernelSpec:
    """Build a :class:`KernelSpec` from a family name (case-insensitive)."""
    try:
        family = KernelFamily(str(name).lower())
    except ValueError:
        choices = ", ".join(f.value for f in KernelFamily)
        raise ValueError(f"unknown kernel {name!r}; choose one of {choices}") from None
    mu2, nu0 = _MOMENTS[family]
    return KernelSpec(family=family, mu2=mu2, nu0=nu0)


EPANECHNIKOV = make_kernel("epanechnikov")


def eval_kernel(spec: KernelSpec, u):
    """Evaluate K(u). Accepts scalars or arrays; scalars return a float."""
    out = _FUNCS[spec.family](np.asarray(u, dtype=float))
    return float(out) if out.ndim == 0 else out


def moment(spec: KernelSpec, l: int, squared: bool = False) -> float:
    """Return ``int u**l K(u) du``, or ``int u**l K(u)**2 du`` if `squared`.

    Stored moments are returned in closed form, odd moments are exactly zero
    by symmetry, and anything else is integrated adaptively.
    """
    if l < 0:
        raise ValueError("moment order must be nonnegative")
    if l % 2 == 1:
        return 0.0
    if not squared and l == 0:
        return 1.0
    if not squared and l == 2:
        return spec.mu2
    if squared and l == 0:
        return spec.nu0
    power = 2 if squared else 1
    f = lambda u: u**l * eval_kernel(spec, u) ** power
    # split at 0 for the triangular kink
    left, _ = integrate.quad(f, -1.0, 0.0, epsabs=1e-12, epsrel=1e-12)
    right, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)
    return left + right
