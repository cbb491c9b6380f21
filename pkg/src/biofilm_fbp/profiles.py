"""Piecewise-polynomial initial/boundary data (degree <= 3).

All initial profiles and boundary signals are piecewise polynomials with
explicit breakpoints, so derivative sup-norms needed by the certificate are
exactly computable and the potential-theory quadratures can integrate the
data in closed form.
"""
from __future__ import annotations

import numpy as np

from .errors import ParseError

MAX_DEGREE = 3


class PiecewisePoly:
    """Polynomial pieces on [breaks[m], breaks[m+1]], local coordinate x - breaks[m].

    coeffs[m, q] multiplies (x - breaks[m])**q.  Evaluation outside the
    breakpoint range extrapolates with the edge pieces.
    """

    def __init__(self, breaks, coeffs):
        breaks = np.asarray(breaks, dtype=float)
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if breaks.ndim != 1 or breaks.size < 2:
            raise ValueError("need at least two breakpoints")
        if np.any(np.diff(breaks) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if coeffs.shape[0] != breaks.size - 1:
            raise ValueError("one coefficient row per piece required")
        if coeffs.shape[1] > MAX_DEGREE + 1:
            raise ValueError(f"degree above {MAX_DEGREE} not supported")
        pad = np.zeros((coeffs.shape[0], MAX_DEGREE + 1 - coeffs.shape[1]))
        self.breaks = breaks
        self.coeffs = np.hstack([coeffs, pad])

    @classmethod
    def constant(cls, value, lo=0.0, hi=1.0):
        return cls([lo, hi], [[float(value)]])

    @classmethod
    def hermite(cls, breaks, values, slopes):
        """Cubic Hermite interpolant matching values and slopes at breakpoints."""
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float)
        slopes = np.asarray(slopes, dtype=float)
        h = np.diff(breaks)
        v0, v1 = values[:-1], values[1:]
        m0, m1 = slopes[:-1], slopes[1:]
        c0 = v0
        c1 = m0
        c2 = (3 * (v1 - v0) / h - 2 * m0 - m1) / h
        c3 = (m0 + m1 - 2 * (v1 - v0) / h) / (h * h)
        return cls(breaks, np.column_stack([c0, c1, c2, c3]))

    @classmethod
    def interpolate(cls, fn, dfn, breaks):
        """Hermite interpolant of a smooth callable with known derivative."""
        breaks = np.asarray(breaks, dtype=float)
        return cls.hermite(breaks, fn(breaks), dfn(breaks))

    @property
    def lo(self):
        return self.breaks[0]

    @property
    def hi(self):
        return self.breaks[-1]

    def piece_index(self, x):
        idx = np.searchsorted(self.breaks, x, side="right") - 1
        return np.clip(idx, 0, self.breaks.size - 2)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = self.piece_index(x)
        u = x - self.breaks[idx]
        c = self.coeffs[idx]
        out = c[..., 3]
        for q in (2, 1, 0):
            out = out * u + c[..., q]
        return out if out.ndim else float(out)

    def derivative(self):
        c = self.coeffs
        dc = np.column_stack([c[:, 1], 2 * c[:, 2], 3 * c[:, 3]])
        return PiecewisePoly(self.breaks, dc)

    def sup_abs(self, lo=None, hi=None):
        """Exact sup of |p| on [lo, hi] via critical points of each piece."""
        lo = self.lo if lo is None else float(lo)
        hi = self.hi if hi is None else float(hi)
        if hi < lo:
            raise ValueError("empty interval")
        best = max(abs(self(lo)), abs(self(hi)))
        for m in range(self.breaks.size - 1):
            a = max(self.breaks[m], lo)
            b = min(self.breaks[m + 1], hi)
            if m == self.breaks.size - 2:
                b = min(max(b, a), hi)  # allow extrapolated tail on last piece
            if b <= a and not (m == self.breaks.size - 2 and hi > self.breaks[-1]):
                continue
            b = max(b, a)
            if m == self.breaks.size - 2 and hi > self.breaks[-1]:
                b = hi
            c0, c1, c2, c3 = self.coeffs[m]
            best = max(best, abs(self(a)), abs(self(b)))
            # stationary points of the cubic piece
            roots = []
            if c3 != 0.0:
                disc = 4 * c2 * c2 - 12 * c3 * c1
                if disc >= 0:
                    r = np.sqrt(disc)
                    roots = [(-2 * c2 + r) / (6 * c3), (-2 * c2 - r) / (6 * c3)]
            elif c2 != 0.0:
                roots = [-c1 / (2 * c2)]
            base = self.breaks[m]
            for u in roots:
                x = base + u
                if a <= x <= b:
                    best = max(best, abs(self(x)))
        return best

    # -- config-format round trip ------------------------------------------

    def serialize(self):
        rows = []
        for row in self.coeffs:
            deg = 3
            while deg > 0 and row[deg] == 0.0:
                deg -= 1
            rows.append(" ".join(repr(float(v)) for v in row[: deg + 1]))
        bpts = " ".join(repr(float(b)) for b in self.breaks)
        return f"pp {bpts} : " + " ; ".join(rows)

    @classmethod
    def parse(cls, text, line=None):
        tokens = text.strip().split()
        if not tokens:
            raise ParseError("empty profile spec", line=line)
        if tokens[0] == "const":
            if len(tokens) != 2:
                raise ParseError("const takes exactly one value", line=line)
            return cls.constant(_float(tokens[1], line))
        if tokens[0] != "pp":
            raise ParseError(f"unknown profile form {tokens[0]!r}", line=line)
        body = text.strip()[2:]
        if ":" not in body:
            raise ParseError("pp spec needs ':' between breakpoints and coefficients", line=line)
        bpart, cpart = body.split(":", 1)
        breaks = [_float(t, line) for t in bpart.split()]
        pieces = [p for p in cpart.split(";")]
        coeff_rows = []
        for p in pieces:
            row = [_float(t, line) for t in p.split()]
            if not row or len(row) > MAX_DEGREE + 1:
                raise ParseError("each pp piece takes 1..4 coefficients", line=line)
            row += [0.0] * (MAX_DEGREE + 1 - len(row))
            coeff_rows.append(row)
        if len(coeff_rows) != len(breaks) - 1:
            raise ParseError("pp needs one coefficient group per interval", line=line)
        try:
            return cls(breaks, coeff_rows)
        except ValueError as exc:
            raise ParseError(str(exc), line=line) from exc

    def __eq__(self, other):
        return (
            isinstance(other, PiecewisePoly)
            and self.breaks.shape == other.breaks.shape
            and np.array_equal(self.breaks, other.breaks)
            and np.array_equal(self.coeffs, other.coeffs)
        )


def _float(token, line):
    try:
        return float(token)
    except ValueError as exc:
        raise ParseError(f"bad number {token!r}", line=line) from exc
