"""Exact rational polynomials in (q, t) and probability generating functions.

A ``Poly`` is a sparse map ``(i, j) -> Fraction`` for the monomial ``q**i * t**j``.
When the success probability is substituted by a rational number every
exponent of ``q`` is zero and the polynomial is univariate in ``t``; in that
mode common factors of numerator and denominator are cancelled with a
Euclidean GCD.

A ``SymbolicPGF`` is a quotient of two such polynomials.  Floating point only
appears at the evaluation boundary (``evaluate``, ``mean``, ...), where the
exact rational result is converted.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from functools import reduce
from numbers import Rational
from typing import Iterable, Mapping

Number = int | Fraction


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    raise TypeError(f"cannot convert {type(x).__name__} to an exact rational")


class Poly:
    """Immutable sparse polynomial in q and t with rational coefficients."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[tuple[int, int], Number] | None = None):
        clean = {}
        for key, c in (terms or {}).items():
            c = _frac(c)
            if c:
                i, j = key
                if i < 0 or j < 0:
                    raise ValueError("negative exponent in polynomial")
                clean[(i, j)] = c
        self._terms = clean
        self._hash = None

    # construction helpers
    @classmethod
    def const(cls, c: Number) -> Poly:
        return cls({(0, 0): c})

    @classmethod
    def q(cls) -> Poly:
        return cls({(1, 0): 1})

    @classmethod
    def t(cls) -> Poly:
        return cls({(0, 1): 1})

    @classmethod
    def monomial(cls, c: Number, qexp: int, texp: int) -> Poly:
        return cls({(qexp, texp): c})

    @classmethod
    def from_t_coeffs(cls, coeffs: Iterable[Number]) -> Poly:
        return cls({(0, k): c for k, c in enumerate(coeffs)})

    @property
    def terms(self) -> dict[tuple[int, int], Fraction]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def is_zero(self) -> bool:
        return not self._terms

    def is_univariate(self) -> bool:
        return all(i == 0 for i, _ in self._terms)

    def degree_t(self) -> int:
        return max((j for _, j in self._terms), default=-1)

    def degree_q(self) -> int:
        return max((i for i, _ in self._terms), default=-1)

    def low_degree_t(self) -> int:
        return min((j for _, j in self._terms), default=0)

    def t_coeffs(self) -> list[Fraction]:
        """Dense coefficient list in t (univariate polynomials only)."""
        if not self.is_univariate():
            raise ValueError("polynomial still depends on q")
        out = [Fraction(0)] * (self.degree_t() + 1)
        for (_, j), c in self._terms.items():
            out[j] = c
        return out

    # arithmetic
    def _coerce(self, other) -> Poly | None:
        if isinstance(other, Poly):
            return other
        if isinstance(other, (int, Fraction)):
            return Poly.const(other)
        return None

    def __add__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        out = dict(self._terms)
        for k, c in other._terms.items():
            out[k] = out.get(k, 0) + c
        return Poly(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return other + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        out: dict[tuple[int, int], Fraction] = {}
        for (i1, j1), c1 in self._terms.items():
            for (i2, j2), c2 in other._terms.items():
                key = (i1 + i2, j1 + j2)
                out[key] = out.get(key, 0) + c1 * c2
        return Poly(out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power of a polynomial")
        result, base = Poly.const(1), self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __truediv__(self, other):
        if isinstance(other, (Poly, SymbolicPGF)):
            return SymbolicPGF(self, 1, cancel=False) / other
        return self * (1 / _frac(other))

    def __rtruediv__(self, other):
        return SymbolicPGF(other, self)

    def __eq__(self, other):
        other = self._coerce(other)
        if other is None:
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __repr__(self):
        if not self._terms:
            return "Poly(0)"
        parts = []
        for (i, j), c in sorted(self._terms.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            mono = "*".join(x for x in (f"q^{i}" if i else "", f"t^{j}" if j else "") if x)
            parts.append(f"{c}" + (f"*{mono}" if mono else ""))
        return "Poly(" + " + ".join(parts) + ")"

    # substitution and calculus
    def subs_q(self, qval: Number) -> Poly:
        qval = _frac(qval)
        out: dict[tuple[int, int], Fraction] = {}
        for (i, j), c in self._terms.items():
            out[(0, j)] = out.get((0, j), 0) + c * qval**i
        return Poly(out)

    def subs_t(self, tval: Number) -> Poly:
        """Substitute a rational value for t, leaving a polynomial in q."""
        tval = _frac(tval)
        out: dict[tuple[int, int], Fraction] = {}
        for (i, j), c in self._terms.items():
            out[(i, 0)] = out.get((i, 0), 0) + c * tval**j
        return Poly(out)

    def stretch_t(self, k: int) -> Poly:
        """Return P(q, t**k)."""
        return Poly({(i, j * k): c for (i, j), c in self._terms.items()})

    def deriv_t(self) -> Poly:
        return Poly({(i, j - 1): c * j for (i, j), c in self._terms.items() if j})

    def evaluate(self, qval, tval):
        """Evaluate at numbers; exact when both arguments are rational."""
        return sum((c * qval**i * tval**j for (i, j), c in self._terms.items()), 0)

    def eval_t(self, tval: Number) -> Fraction:
        """Horner evaluation of a univariate polynomial at rational t."""
        acc = Fraction(0)
        for c in reversed(self.t_coeffs()):
            acc = acc * tval + c
        return acc

    def content(self) -> Fraction:
        """Positive rational content, so that ``self / content`` is primitive."""
        if not self._terms:
            return Fraction(1)
        nums = [c.numerator for c in self._terms.values()]
        dens = [c.denominator for c in self._terms.values()]
        g = reduce(math.gcd, nums)
        lcm = reduce(lambda a, b: a * b // math.gcd(a, b), dens)
        return Fraction(abs(g), lcm)


# univariate helpers -----------------------------------------------------

def _trim(c: list[Fraction]) -> list[Fraction]:
    while c and c[-1] == 0:
        c.pop()
    return c


def poly_divmod(a: list[Fraction], b: list[Fraction]) -> tuple[list[Fraction], list[Fraction]]:
    a, b = _trim(list(a)), _trim(list(b))
    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    if len(a) < len(b):
        return [], a
    quo = [Fraction(0)] * (len(a) - len(b) + 1)
    lead = b[-1]
    for k in range(len(a) - len(b), -1, -1):
        f = a[k + len(b) - 1] / lead
        quo[k] = f
        if f:
            for i, bc in enumerate(b):
                a[k + i] -= f * bc
    return _trim(quo), _trim(a[: len(b) - 1])


def poly_gcd(a: list[Fraction], b: list[Fraction]) -> list[Fraction]:
    """Monic GCD of two univariate polynomials over the rationals."""
    a, b = _trim(list(a)), _trim(list(b))
    while b:
        _, r = poly_divmod(a, b)
        a, b = b, r
        if b:
            # keep the intermediate sizes in check
            lead = b[-1]
            b = [c / lead for c in b]
    if not a:
        return [Fraction(1)]
    lead = a[-1]
    return [c / lead for c in a]


class SymbolicPGF:
    """Rational function numerator/denominator in t (and optionally q).

    Construction cancels common factors whenever both polynomials are
    univariate.  The object is immutable; arithmetic returns new instances.
    """

    __slots__ = ("num", "den")

    def __init__(self, num, den=1, *, cancel: bool = True):
        num = num if isinstance(num, Poly) else Poly.const(_frac(num))
        den = den if isinstance(den, Poly) else Poly.const(_frac(den))
        if den.is_zero():
            raise ZeroDivisionError("zero denominator")
        if cancel and num.is_univariate() and den.is_univariate():
            num, den = _cancel(num, den)
        self.num = num
        self.den = den

    # arithmetic on rational functions, used to transcribe closed forms
    @staticmethod
    def _lift(x) -> SymbolicPGF | None:
        if isinstance(x, SymbolicPGF):
            return x
        if isinstance(x, (Poly, int, Fraction)):
            return SymbolicPGF(x, 1, cancel=False)
        return None

    def __add__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        if self.den == other.den:
            return SymbolicPGF(self.num + other.num, self.den)
        return SymbolicPGF(self.num * other.den + other.num * self.den, self.den * other.den)

    __radd__ = __add__

    def __neg__(self):
        return SymbolicPGF(-self.num, self.den, cancel=False)

    def __sub__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return SymbolicPGF(self.num * other.num, self.den * other.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return SymbolicPGF(self.num * other.den, self.den * other.num)

    def __rtruediv__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return other / self

    def __pow__(self, k: int):
        if k < 0:
            return SymbolicPGF(1) / (self ** (-k))
        return SymbolicPGF(self.num**k, self.den**k)

    def __repr__(self):
        return f"SymbolicPGF(num={self.num!r}, den={self.den!r})"

    # structure
    def is_univariate(self) -> bool:
        return self.num.is_univariate() and self.den.is_univariate()

    def stretch_t(self, k: int) -> SymbolicPGF:
        """PGF of k*X from the PGF of X, i.e. G(t**k)."""
        return SymbolicPGF(self.num.stretch_t(k), self.den.stretch_t(k))

    def at_q(self, qval: Number) -> SymbolicPGF:
        """Substitute a rational q; the result is univariate and reduced."""
        return SymbolicPGF(self.num.subs_q(qval), self.den.subs_q(qval))

    def at_p(self, pval: Number) -> SymbolicPGF:
        return self.at_q(1 - _frac(pval))

    def normalized(self) -> SymbolicPGF:
        """Divide by the total mass G(1); works in bivariate mode too."""
        n1, d1 = self.num.subs_t(1), self.den.subs_t(1)
        return SymbolicPGF(self.num * d1, self.den * n1)

    def _require_univariate(self):
        if not self.is_univariate():
            raise ValueError("substitute a numeric p before evaluating")

    # queries
    def evaluate(self, t, exact: bool = False):
        """G(t).  Exact rational evaluation when ``exact`` is set."""
        self._require_univariate()
        tv = _frac(t)
        d = self.den.eval_t(tv)
        if d == 0:
            raise ZeroDivisionError(f"denominator vanishes at t={t}")
        val = self.num.eval_t(tv) / d
        return val if exact else float(val)

    def _derivs_at_one(self) -> tuple[Fraction, Fraction, Fraction]:
        self._require_univariate()
        n0, d0 = self.num, self.den
        n1, d1 = n0.deriv_t(), d0.deriv_t()
        n2, d2 = n1.deriv_t(), d1.deriv_t()
        N0, N1, N2 = (x.eval_t(Fraction(1)) for x in (n0, n1, n2))
        D0, D1, D2 = (x.eval_t(Fraction(1)) for x in (d0, d1, d2))
        if D0 == 0:
            raise ZeroDivisionError("denominator vanishes at t=1 (uncancelled singularity)")
        g0 = N0 / D0
        g1 = (N1 - g0 * D1) / D0
        g2 = (N2 - 2 * g1 * D1 - g0 * D2) / D0
        return g0, g1, g2

    def mean(self, exact: bool = False):
        _, g1, _ = self._derivs_at_one()
        return g1 if exact else float(g1)

    def variance(self, exact: bool = False):
        _, g1, g2 = self._derivs_at_one()
        v = g2 + g1 - g1 * g1
        return v if exact else float(v)

    def total_mass(self, exact: bool = False):
        g0, _, _ = self._derivs_at_one()
        return g0 if exact else float(g0)

    def exp_moment(self, alpha: float, k: int = 1, exact: bool = False):
        """E[exp(-k*alpha*X)] = G(exp(-k*alpha))."""
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        if k < 1:
            raise ValueError("k must be a positive integer")
        return self.evaluate(math.exp(-k * alpha), exact=exact)

    def series(self, order: int) -> list[Fraction]:
        """Power-series coefficients P(X=0..order) by long division."""
        self._require_univariate()
        num, den = self.num.t_coeffs(), self.den.t_coeffs()
        shift = self.den.low_degree_t()
        if shift:
            # denominator divisible by t**shift: numerator must be as well
            if any(num[:shift]):
                raise ValueError("PGF has a pole at t=0")
            num, den = num[shift:], den[shift:]
        d0 = den[0]
        out: list[Fraction] = []
        for k in range(order + 1):
            acc = num[k] if k < len(num) else Fraction(0)
            for i in range(1, min(k, len(den) - 1) + 1):
                acc -= den[i] * out[k - i]
            out.append(acc / d0)
        return out

    # serialization
    def to_text(self) -> str:
        return f"num_coeffs=[{_format_terms(self.num)}];den_coeffs=[{_format_terms(self.den)}]"

    @classmethod
    def from_text(cls, text: str) -> SymbolicPGF:
        m = re.fullmatch(r"\s*num_coeffs=\[(.*)\];den_coeffs=\[(.*)\]\s*", text, re.S)
        if not m:
            raise ValueError("malformed PGF text")
        return cls(_parse_terms(m.group(1)), _parse_terms(m.group(2)), cancel=False)


def _cancel(num: Poly, den: Poly) -> tuple[Poly, Poly]:
    a, b = num.t_coeffs(), den.t_coeffs()
    if not _trim(list(a)):
        return Poly(), Poly.const(1)
    g = poly_gcd(a, b)
    if len(g) > 1:
        a, _ = poly_divmod(a, g)
        b, _ = poly_divmod(b, g)
    # canonical scaling: lowest nonzero denominator coefficient equals one
    lowest = next(c for c in b if c != 0)
    a = [c / lowest for c in a]
    b = [c / lowest for c in b]
    return Poly.from_t_coeffs(a), Poly.from_t_coeffs(b)


def _format_terms(p: Poly) -> str:
    items = sorted(p.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    if p.is_univariate():
        return ",".join(f"({j},{c})" for (_, j), c in items)
    return ",".join(f"({i},{j},{c})" for (i, j), c in items)


def _parse_terms(body: str) -> Poly:
    terms = {}
    for tup in re.findall(r"\(([^()]*)\)", body):
        fields = [f.strip() for f in tup.split(",")]
        if len(fields) == 2:
            i, j, c = 0, int(fields[0]), Fraction(fields[1])
        elif len(fields) == 3:
            i, j, c = int(fields[0]), int(fields[1]), Fraction(fields[2])
        else:
            raise ValueError(f"bad term {tup!r}")
        terms[(i, j)] = terms.get((i, j), 0) + c
    return Poly(terms)


def symbolic_equal(a: SymbolicPGF, b: SymbolicPGF) -> bool:
    """Exact identity of rational functions by cross multiplication."""
    if a.is_univariate() != b.is_univariate():
        raise ValueError("compare PGFs in the same variable mode")
    return a.num * b.den == b.num * a.den


def geometric_factor(qexp: int, texp: int) -> Poly:
    """The polynomial 1 - q**qexp * t**texp."""
    if (qexp, texp) == (0, 0):
        raise ValueError("degenerate geometric factor")
    return Poly({(0, 0): 1, (qexp, texp): -1})


# symbols used when transcribing closed forms
q = Poly.q()
t = Poly.t()
p = 1 - q
