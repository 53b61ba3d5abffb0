"""Mixed uniform-logarithmic quantizer (MULQ).

``Q(x) = round(S(x) x) / S(x)`` with ``S(x) = 10**(sigma - floor(log10|x|) - 1)``
keeps ``sigma`` significant decimal digits of ``x``.  ``round`` is half away
from zero.  The digit integer ``round(S(x) x)`` is what gets encrypted, and
the exponent ``log10 S(x)`` travels alongside it.

Everything here is exact: a float is split into ``numerator/denominator``
with :meth:`float.as_integer_ratio` and all comparisons stay in integers, so
no binary rounding can move a digit or a decade index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

_POW10 = [10**i for i in range(700)]


def _pow10(k: int) -> int:
    return _POW10[k] if k < 700 else 10**k


@dataclass(frozen=True)
class MulqConfig:
    sigma: int = 4

    def __post_init__(self):
        if int(self.sigma) != self.sigma or self.sigma < 1:
            raise ValueError("sigma must be an integer >= 1")

    @property
    def eps(self) -> Fraction:
        """Sector half-width ``0.5 / 10**(sigma-1)``."""
        return Fraction(5, _pow10(self.sigma))


@dataclass(frozen=True)
class QuantizedValue:
    digits: int
    scale_exp: int
    sigma: int

    @property
    def exact(self) -> Fraction:
        return Fraction(self.digits) / Fraction(10) ** self.scale_exp

    def __float__(self):
        return rescale(self.digits, self.scale_exp)


def rescale(digits: int, exp: int) -> float:
    """Correctly rounded float of ``digits * 10**(-exp)``."""
    if digits == 0:
        return 0.0
    # magnitudes far outside the float range would otherwise build huge ints
    ndig = len(str(abs(digits)))
    if exp - ndig > 330:
        return math.copysign(0.0, digits)
    if ndig - exp > 310:
        return math.copysign(math.inf, digits)
    if exp >= 0:
        return digits / _pow10(exp)
    try:
        return float(digits * _pow10(-exp))
    except OverflowError:
        return math.copysign(math.inf, digits)


def _ratio(x: float) -> tuple[int, int]:
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    return float(x).as_integer_ratio()


def _ge_pow10(n: int, d: int, k: int) -> bool:
    # n/d >= 10**k for n, d > 0
    return n >= d * _pow10(k) if k >= 0 else n * _pow10(-k) >= d


def floor_log10(x: float) -> int:
    """Exact ``floor(log10(|x|))`` for finite nonzero ``x``."""
    n, d = _ratio(x)
    n = abs(n)
    if n == 0:
        raise ValueError("floor_log10 of zero")
    k = math.floor(math.log10(abs(x)))
    while not _ge_pow10(n, d, k):
        k -= 1
    while _ge_pow10(n, d, k + 1):
        k += 1
    return k


def scale_exponent(x: float, cfg: MulqConfig) -> int:
    """``log10 S(x) = sigma - floor(log10|x|) - 1``; 0 for ``x == 0`` by convention."""
    if x == 0:
        return 0
    return cfg.sigma - floor_log10(x) - 1


def _round_half_away(n: int, d: int) -> int:
    mag = (2 * abs(n) + d) // (2 * d)
    return -mag if n < 0 else mag


def to_plaintext(x: float, cfg: MulqConfig) -> QuantizedValue:
    if x == 0:
        return QuantizedValue(0, 0, cfg.sigma)
    s = scale_exponent(x, cfg)
    n, d = _ratio(x)
    if s >= 0:
        digits = _round_half_away(n * _pow10(s), d)
    else:
        digits = _round_half_away(n, d * _pow10(-s))
    return QuantizedValue(digits, s, cfg.sigma)


def quantize(x: float, cfg: MulqConfig) -> float:
    """``Q(x)`` rounded to the nearest float."""
    return float(to_plaintext(x, cfg))


def quantize_exact(x: float, cfg: MulqConfig) -> Fraction:
    return to_plaintext(x, cfg).exact


def _sector_terms(x: float, cfg: MulqConfig):
    # x = n/d, Q = qn/qd, E = 10**sigma so that eps = 5/E
    n, d = _ratio(x)
    qv = to_plaintext(x, cfg)
    if qv.scale_exp >= 0:
        qn, qd = qv.digits, _pow10(qv.scale_exp)
    else:
        qn, qd = qv.digits * _pow10(-qv.scale_exp), 1
    return n, d, qn, qd, _pow10(cfg.sigma)


def sector_check_A1(x: float, cfg: MulqConfig) -> bool:
    """``(1-eps) x^2 <= x Q(x) <= (1+eps) x^2``."""
    n, d, qn, qd, E = _sector_terms(x, cfg)
    lhs = (E - 5) * n * n * qd
    mid = E * n * qn * d
    rhs = (E + 5) * n * n * qd
    return lhs <= mid <= rhs


def sector_check_A2(x: float, cfg: MulqConfig) -> bool:
    """``|x - Q(x)| <= eps |x|``."""
    n, d, qn, qd, E = _sector_terms(x, cfg)
    return E * abs(n * qd - qn * d) <= 5 * abs(n) * qd


def sector_check_A3(x: float, cfg: MulqConfig) -> bool:
    """``|Q(x)| <= (1+eps) |x|``."""
    n, d, qn, qd, E = _sector_terms(x, cfg)
    return E * d * abs(qn) <= (E + 5) * abs(n) * qd


def sector_checks(x: float, cfg: MulqConfig) -> tuple[bool, bool, bool]:
    """All three sector inequalities from a single quantization."""
    n, d, qn, qd, E = _sector_terms(x, cfg)
    nn_qd = n * n * qd
    mid = E * n * qn * d
    a1 = (E - 5) * nn_qd <= mid <= (E + 5) * nn_qd
    a2 = E * abs(n * qd - qn * d) <= 5 * abs(n) * qd
    a3 = E * d * abs(qn) <= (E + 5) * abs(n) * qd
    return a1, a2, a3
