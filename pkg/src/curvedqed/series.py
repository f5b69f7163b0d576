"""Truncated bivariate Taylor polynomials.

A polynomial in (d0, d1) is stored as a square array ``c`` with ``c[i, j]``
the coefficient of d0**i * d1**j; entries with i + j > degree are kept at
zero.
"""
from __future__ import annotations

from math import factorial

import numpy as np


class Taylor2:
    __slots__ = ("c", "degree")

    def __init__(self, coeffs, degree: int):
        c = np.zeros((degree + 1, degree + 1))
        src = np.asarray(coeffs, dtype=float)
        k = min(src.shape[0], degree + 1), min(src.shape[1], degree + 1)
        c[: k[0], : k[1]] = src[: k[0], : k[1]]
        c[_total(degree) > degree] = 0.0
        self.c = c
        self.degree = degree

    @classmethod
    def constant(cls, value, degree):
        c = np.zeros((1, 1))
        c[0, 0] = value
        return cls(c, degree)

    @classmethod
    def coordinate(cls, axis, degree):
        c = np.zeros((2, 2))
        c[(1, 0) if axis == 0 else (0, 1)] = 1.0
        return cls(c, degree)

    def _wrap(self, c):
        return Taylor2(c, self.degree)

    def __add__(self, other):
        if isinstance(other, Taylor2):
            return self._wrap(self.c + other.c)
        out = self.c.copy()
        out[0, 0] += other
        return self._wrap(out)

    __radd__ = __add__

    def __neg__(self):
        return self._wrap(-self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Taylor2):
            return self._wrap(_truncated_product(self.c, other.c))
        return self._wrap(self.c * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Taylor2):
            return self * other.reciprocal()
        return self._wrap(self.c / other)

    @property
    def value0(self):
        return self.c[0, 0]

    def d0(self):
        out = np.zeros_like(self.c)
        i = np.arange(1, self.degree + 1)
        out[:-1, :] = self.c[1:, :] * i[:, None]
        return self._wrap(out)

    def d1(self):
        out = np.zeros_like(self.c)
        j = np.arange(1, self.degree + 1)
        out[:, :-1] = self.c[:, 1:] * j[None, :]
        return self._wrap(out)

    def homogeneous(self, d):
        """Degree-d part."""
        return self._wrap(np.where(_total(self.degree) == d, self.c, 0.0))

    def below(self, d):
        """Part of degree strictly less than d."""
        return self._wrap(np.where(_total(self.degree) < d, self.c, 0.0))

    def _nilpotent_series(self, coeffs):
        """sum_k coeffs[k] * (self - self(0))**k."""
        b = self - self.value0
        out = Taylor2.constant(coeffs[0], self.degree)
        power = Taylor2.constant(1.0, self.degree)
        for k in range(1, self.degree + 1):
            power = power * b
            if not np.any(power.c):
                break
            out = out + coeffs[k] * power
        return out

    def exp(self):
        a0 = self.value0
        coeffs = [np.exp(a0) / factorial(k) for k in range(self.degree + 1)]
        return self._nilpotent_series(coeffs)

    def reciprocal(self):
        a0 = self.value0
        if a0 == 0:
            raise ZeroDivisionError("reciprocal of a polynomial vanishing at the origin")
        coeffs = [(-1.0) ** k / a0 ** (k + 1) for k in range(self.degree + 1)]
        return self._nilpotent_series(coeffs)

    def __call__(self, d0, d1):
        d0 = np.asarray(d0, dtype=float)
        d1 = np.asarray(d1, dtype=float)
        shape = np.broadcast(d0, d1).shape
        d0 = np.broadcast_to(d0, shape).ravel()
        d1 = np.broadcast_to(d1, shape).ravel()
        # Horner in d1 then in d0
        acc = np.zeros((self.degree + 1, d1.size))
        for j in range(self.degree, -1, -1):
            acc = acc * d1[None, :] + self.c[:, j][:, None]
        out = np.zeros(d0.size)
        for i in range(self.degree, -1, -1):
            out = out * d0 + acc[i]
        return out.reshape(shape)[()]


_TOTALS = {}
_SHIFTS = {}


def _shift_index(n):
    # S[i, p] = i - p where non-negative, else n (points at a zero pad)
    s = _SHIFTS.get(n)
    if s is None:
        i = np.arange(n)
        s = i[:, None] - i[None, :]
        s = np.where(s >= 0, s, n)
        _SHIFTS[n] = s
    return s


def _truncated_product(a, b):
    """Coefficients of a * b up to the common array size (Cauchy product)."""
    n = a.shape[0]
    S = _shift_index(n)
    ap = np.vstack([a.T, np.zeros((1, n))]).T  # pad last axis
    bp = np.vstack([b, np.zeros((1, n))])  # pad first axis
    TA = ap[:, S]  # TA[p, j, q] = a[p, j - q]
    Bs = bp[S]  # Bs[i, p, q] = b[i - p, q]
    return np.tensordot(Bs, TA, axes=([1, 2], [0, 2]))


def _total(degree):
    t = _TOTALS.get(degree)
    if t is None:
        i = np.arange(degree + 1)
        t = i[:, None] + i[None, :]
        _TOTALS[degree] = t
    return t


def taylor_from_derivatives(derivs, degree):
    """Build a polynomial from a dict {(i, j): d^i d^j f(0)}."""
    c = np.zeros((degree + 1, degree + 1))
    for (i, j), v in derivs.items():
        if i + j <= degree:
            c[i, j] = v / (factorial(i) * factorial(j))
    return Taylor2(c, degree)


def taylor_by_cauchy(fn, center, degree, radius=1.0, samples=64):
    """Taylor coefficients of an analytic ``fn(x0, x1)`` by a polydisc FFT.

    ``fn`` must accept complex numpy arrays.
    """
    theta = 2 * np.pi * np.arange(samples) / samples
    z0 = center[0] + radius * np.exp(1j * theta)
    z1 = center[1] + radius * np.exp(1j * theta)
    vals = np.asarray(fn(z0[:, None], z1[None, :]), dtype=complex)
    vals = np.broadcast_to(vals, (samples, samples))
    coef = np.fft.fft2(vals) / samples**2
    k = np.arange(degree + 1)
    scale = radius ** -(k[:, None] + k[None, :])
    return Taylor2(coef[: degree + 1, : degree + 1].real * scale, degree)
