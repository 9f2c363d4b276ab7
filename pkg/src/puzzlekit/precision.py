"""
Working precision for real arithmetic.

Every tolerance in the package is derived from the unit roundoff of the active
Precision, so switching to an extended mode tightens them uniformly.
"""

import math
import os
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Union

import mpmath
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize

from .errors import ConfigurationError, RootNotBracketed

Real = Union[float, mpmath.mpf]

BINARY64_BITS = 53
PRECISION_ENV_VAR = "PUZZLEKIT_PRECISION"


class Precision(BaseModel):
    """Binary precision in bits; 53 is IEEE binary64"""

    model_config = ConfigDict(frozen=True)

    bits: int = Field(BINARY64_BITS, ge=BINARY64_BITS, le=4096)

    @property
    def extended(self) -> bool:
        return self.bits > BINARY64_BITS

    @property
    def unit_roundoff(self) -> float:
        return 2.0 ** (-self.bits)

    @property
    def depth_cap(self) -> int:
        """Deepest puzzle level worth computing; piece widths reach roundoff beyond it"""
        if self.bits >= 256:
            return 200
        fraction = (self.bits - BINARY64_BITS) / (256 - BINARY64_BITS)
        return int(round(60 + fraction * 140))

    def endpoint_tolerance(self, scale: float = 1.0) -> float:
        """Two endpoints closer than this are the same point"""
        return 16.0 * self.unit_roundoff * max(abs(float(scale)), 1e-300)

    def scaled(self, base: float) -> float:
        """Rescale a tolerance calibrated at binary64 to this precision"""
        return base * math.sqrt(self.unit_roundoff / 2.0 ** (-BINARY64_BITS))

    @contextmanager
    def activate(self) -> Iterator["Precision"]:
        with mpmath.workprec(self.bits):
            yield self

    def real(self, value: Union[Real, int, str]) -> Real:
        if self.extended:
            return mpmath.mpf(value)
        return float(value)

    @property
    def bisection_steps(self) -> int:
        return self.bits + 8


def default_precision() -> Precision:
    """Precision from PUZZLEKIT_PRECISION, binary64 when unset"""
    raw = os.environ.get(PRECISION_ENV_VAR)
    if not raw:
        return Precision()
    try:
        return Precision(bits=int(raw))
    except ValueError as exc:
        raise ConfigurationError(
            f"{PRECISION_ENV_VAR} must be an integer number of bits >= {BINARY64_BITS}",
            value=raw,
        ) from exc


def resolve_precision(precision: Optional[Precision]) -> Precision:
    return precision if precision is not None else default_precision()


def bracketed_root(
    fn: Callable[[Real], Real],
    lo: Real,
    hi: Real,
    precision: Optional[Precision] = None,
) -> Real:
    """
    Root of fn on [lo, hi] by bracketing.

    Args:
        fn: Function with a sign change on the bracket
        lo: Left end of the bracket
        hi: Right end of the bracket
        precision: Working precision; extended modes bisect in mpmath

    Returns:
        A root accurate to a few units of roundoff
    """
    prec = resolve_precision(precision)
    f_lo = fn(lo)
    f_hi = fn(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise RootNotBracketed("no sign change on bracket", lo=float(lo), hi=float(hi))

    if not prec.extended:
        return float(
            optimize.brentq(
                lambda t: float(fn(t)),
                float(lo),
                float(hi),
                xtol=4.0 * prec.unit_roundoff * max(abs(float(lo)), abs(float(hi)), 1e-300),
                rtol=4.0 * np.finfo(float).eps,
                maxiter=400,
            )
        )

    a, b = mpmath.mpf(lo), mpmath.mpf(hi)
    negative_at_a = f_lo < 0
    for _ in range(prec.bisection_steps):
        m = (a + b) / 2
        if m == a or m == b:
            break
        f_m = fn(m)
        if f_m == 0:
            return m
        if (f_m < 0) == negative_at_a:
            a = m
        else:
            b = m
    return (a + b) / 2


def vectorized_bisect(
    fn: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    steps: int = 64,
) -> np.ndarray:
    """Elementwise bisection of fn(x) = 0 on [lo, hi]; every bracket must change sign"""
    a = np.array(lo, dtype=float, copy=True)
    b = np.array(hi, dtype=float, copy=True)
    f_a, f_b = fn(a), fn(b)
    # orientation from the far end so that a root sitting on an end is kept
    negative_at_a = np.where(f_b != 0, f_b > 0, f_a < 0)
    for _ in range(steps):
        m = 0.5 * (a + b)
        f_m = fn(m)
        left = np.where(f_m == 0, False, (f_m < 0) == negative_at_a)
        a = np.where(left, m, a)
        b = np.where(left, b, m)
    return 0.5 * (a + b)
