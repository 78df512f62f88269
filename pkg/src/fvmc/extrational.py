"""Exact numbers a + b*sqrt(2) with rational a, b."""

from __future__ import annotations

import math
from fractions import Fraction
from functools import total_ordering

_Rational = (int, Fraction)


@total_ordering
class ExtendedRational:
    """Element of Q(sqrt 2). Immutable; arithmetic and ordering are exact.

    The value is rational iff ``b == 0``.
    """

    __slots__ = ("_a", "_b")

    def __init__(self, a=0, b=0):
        if not isinstance(a, _Rational) or not isinstance(b, _Rational):
            raise TypeError("coefficients must be int or Fraction")
        self._a = Fraction(a)
        self._b = Fraction(b)

    @property
    def a(self):
        return self._a

    @property
    def b(self):
        return self._b

    @classmethod
    def parse(cls, text):
        """Parse ``"a"`` or ``"a+b*sqrt2"`` (``a``, ``b`` as ``p/q``)."""
        text = text.replace(" ", "")
        if "sqrt2" not in text:
            return cls(Fraction(text))
        body = text.replace("*sqrt2", "").replace("sqrt2", "1")
        # split at the last sign that is not an exponent or leading sign
        for i in range(len(body) - 1, 0, -1):
            if body[i] in "+-" and body[i - 1] not in "/":
                return cls(Fraction(body[:i]), Fraction(body[i:]))
        return cls(0, Fraction(body))

    def is_rational(self):
        return self._b == 0

    def sign(self):
        a, b = self._a, self._b
        if b == 0:
            return (a > 0) - (a < 0)
        if a == 0:
            return (b > 0) - (b < 0)
        if (a > 0) == (b > 0):
            return 1 if a > 0 else -1
        # opposite signs: |a| versus |b| sqrt 2
        if a * a > 2 * b * b:
            return 1 if a > 0 else -1
        return 1 if b > 0 else -1

    def _coerce(self, other):
        if isinstance(other, ExtendedRational):
            return other
        if isinstance(other, _Rational):
            return ExtendedRational(other)
        return None

    def __add__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return ExtendedRational(self._a + other._a, self._b + other._b)

    __radd__ = __add__

    def __neg__(self):
        return ExtendedRational(-self._a, -self._b)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return ExtendedRational(self._a - other._a, self._b - other._b)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return other - self

    def __mul__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        a, b, c, d = self._a, self._b, other._a, other._b
        return ExtendedRational(a * c + 2 * b * d, a * d + b * c)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, _Rational):
            if other == 0:
                raise ZeroDivisionError("division by zero")
            return ExtendedRational(self._a / other, self._b / other)
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        # multiply by the conjugate
        norm = other._a * other._a - 2 * other._b * other._b
        if norm == 0:
            raise ZeroDivisionError("division by zero")
        conj = ExtendedRational(other._a, -other._b)
        num = self * conj
        return ExtendedRational(num._a / norm, num._b / norm)

    def __eq__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return self._a == other._a and self._b == other._b

    def __lt__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return (self - other).sign() < 0

    def __hash__(self):
        return hash((self._a, self._b))

    def __float__(self):
        return float(self._a) + float(self._b) * math.sqrt(2)

    def __repr__(self):
        return f"ExtendedRational({self._a!r}, {self._b!r})"

    def __str__(self):
        if self._b == 0:
            return str(self._a)
        sign = "+" if self._b > 0 else "-"
        return f"{self._a}{sign}{abs(self._b)}*sqrt2"

    def bit_size(self):
        """Bits in the largest numerator or denominator."""
        return max(
            self._a.numerator.bit_length(),
            self._a.denominator.bit_length(),
            self._b.numerator.bit_length(),
            self._b.denominator.bit_length(),
        )
