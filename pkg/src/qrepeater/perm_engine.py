"""Dephasing statistics over ordering domains of the segment attempt counts.

Each segment needs ``N_i`` attempts (i.i.d. geometric).  The outcome space is
cut into ``n!`` ordering domains: for a permutation ``perm`` listing segment
indices by increasing ``N``, consecutive comparisons are strict where the
permutation has a descent and non-strict otherwise.  Inside a domain every
``N`` is an affine function of non-negative gap variables,

    N[perm[0]] = 1 + g_0,   N[perm[k]] = N[perm[k-1]] + s_k + g_k,

and a piecewise-linear rule (dephasing policy, waiting time, ...) evaluated on
these affine forms collapses to a single affine form.  When a comparison is
not settled by the ordering, the domain is split on the sign of the deciding
form.  Summing ``p^n q^(sum N - n) t^D`` over a domain is a product of
geometric series, so the PGF is a finite sum of terms
``c * q^a0 * t^b0 / prod(1 - q^a t^b)``.
"""

from __future__ import annotations

import itertools
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .pgf_core import Poly, SymbolicPGF, _frac


# ---------------------------------------------------------------------------
# affine forms over gap variables

class Form(tuple):
    """Integer affine form ``c0 + c1*g1 + ... + cn*gn`` stored as a tuple."""

    __slots__ = ()

    @classmethod
    def constant(cls, c: int, nvars: int) -> Form:
        return cls((c,) + (0,) * nvars)

    @classmethod
    def unit(cls, j: int, nvars: int) -> Form:
        return cls(tuple(1 if k == j + 1 else 0 for k in range(nvars + 1)))

    def _other(self, other) -> Form:
        if isinstance(other, Form):
            return other
        if isinstance(other, int):
            return Form((other,) + (0,) * (len(self) - 1))
        raise TypeError(f"cannot combine Form with {type(other).__name__}")

    def __add__(self, other):
        other = self._other(other)
        return Form(a + b for a, b in zip(self, other))

    __radd__ = __add__

    def __neg__(self):
        return Form(-a for a in self)

    def __sub__(self, other):
        return self + (-self._other(other))

    def __rsub__(self, other):
        return self._other(other) - self

    def __mul__(self, k):
        if not isinstance(k, int):
            return NotImplemented
        return Form(k * a for a in self)

    __rmul__ = __mul__

    @property
    def const(self) -> int:
        return self[0]

    @property
    def coeffs(self) -> tuple[int, ...]:
        return tuple(self[1:])

    def trivially_nonneg(self) -> bool:
        return self[0] >= 0 and all(c >= 0 for c in self[1:])

    def with_coeff(self, j: int, value: int) -> Form:
        out = list(self)
        out[j + 1] = value
        return Form(out)

    def substitute(self, j: int, expr: Form) -> Form:
        """Replace gap j by ``expr`` (which must not contain gap j)."""
        c = self[j + 1]
        if not c:
            return self
        return self.with_coeff(j, 0) + expr * c

    def at(self, gaps: Sequence[int]) -> int:
        return self[0] + sum(c * g for c, g in zip(self[1:], gaps))


class Undecided(Exception):
    """Raised when a comparison depends on the sign of ``form``."""

    def __init__(self, form: Form):
        super().__init__(form)
        self.form = form


# ---------------------------------------------------------------------------
# arithmetic back-ends for policy rules

class IntegerOps:
    """Plain integer evaluation."""

    @staticmethod
    def le(a, b):
        return a <= b

    @staticmethod
    def lt(a, b):
        return a < b

    @staticmethod
    def max(a, b):
        return a if a >= b else b

    @staticmethod
    def min(a, b):
        return a if a <= b else b

    @staticmethod
    def abs(a):
        return a if a >= 0 else -a

    @staticmethod
    def where(cond, a, b):
        return a if cond else b


class ArrayOps:
    """Element-wise evaluation on numpy integer arrays."""

    le = staticmethod(np.less_equal)
    lt = staticmethod(np.less)
    max = staticmethod(np.maximum)
    min = staticmethod(np.minimum)
    abs = staticmethod(np.abs)
    where = staticmethod(np.where)


class DomainOps:
    """Evaluation on affine forms inside a (possibly refined) domain."""

    def __init__(self, constraints: Sequence[Form]):
        self.constraints = tuple(constraints)

    def nonneg(self, f: Form) -> bool:
        if f.trivially_nonneg():
            return True
        return any((f - c).trivially_nonneg() for c in self.constraints)

    def le(self, a, b):
        if self.nonneg(b - a):
            return True
        if self.nonneg(a - b - 1):
            return False
        raise Undecided(b - a)

    def lt(self, a, b):
        return self.le(a + 1, b)

    def max(self, a, b):
        if self.nonneg(a - b):
            return a
        if self.nonneg(b - a):
            return b
        raise Undecided(a - b)

    def min(self, a, b):
        if self.nonneg(b - a):
            return a
        if self.nonneg(a - b):
            return b
        raise Undecided(a - b)

    def abs(self, a):
        if self.nonneg(a):
            return a
        if self.nonneg(-a):
            return -a
        raise Undecided(a)

    @staticmethod
    def where(cond, a, b):
        return a if cond else b


# ---------------------------------------------------------------------------
# policies

Rule = Callable[[Sequence, object], object]


@dataclass(frozen=True)
class DephasingPolicy:
    """A named piecewise-linear rule mapping attempt counts to a statistic."""

    name: str
    rule: Rule = field(compare=False, repr=False)
    arity: int | None = None

    def check_arity(self, n: int) -> None:
        if self.arity is not None and n != self.arity:
            raise ValueError(f"policy {self.name} needs n={self.arity}, got n={n}")
        if self.name == "doubling" and n & (n - 1):
            raise ValueError("doubling needs a power-of-two segment count")

    def __call__(self, values: Sequence, ops=IntegerOps):
        return self.rule(values, ops)


def _sum(values, start=0):
    total = start
    for v in values:
        total = total + v
    return total


def optimal_greedy(ns: Sequence, ops=IntegerOps):
    """Swap the adjacent pair that is ready first; ties go to the lowest index."""
    ns = list(ns)
    total = 0
    while len(ns) > 1:
        best, best_time = 0, ops.max(ns[0], ns[1])
        for i in range(1, len(ns) - 1):
            ready = ops.max(ns[i], ns[i + 1])
            if ops.lt(ready, best_time):
                best, best_time = i, ready
        total = total + ops.abs(ns[best] - ns[best + 1])
        ns[best : best + 2] = [best_time]
    return total


def optimal_global(ns: Sequence, ops=IntegerOps):
    """Minimum over every swapping order (memoised on the merged ready times)."""
    memo: dict[tuple, object] = {}

    def best(state: tuple):
        if len(state) == 1:
            return 0
        if state in memo:
            return memo[state]
        result = None
        for i in range(len(state) - 1):
            merged = state[:i] + (ops.max(state[i], state[i + 1]),) + state[i + 2 :]
            value = ops.abs(state[i] - state[i + 1]) + best(merged)
            result = value if result is None else ops.min(result, value)
        memo[state] = result
        return result

    return best(tuple(ns))


@lru_cache(maxsize=1 << 20)
def _global_int(state: tuple[int, ...]) -> int:
    if len(state) == 1:
        return 0
    return min(
        abs(state[i] - state[i + 1])
        + _global_int(state[:i] + (max(state[i], state[i + 1]),) + state[i + 2 :])
        for i in range(len(state) - 1)
    )


def doubling(ns: Sequence, ops=IntegerOps):
    """Nested pairwise swapping: halves first, then the two halves."""
    n = len(ns)
    if n == 1:
        return 0
    half = n // 2
    left, right = ns[:half], ns[half:]
    return doubling(left, ops) + doubling(right, ops) + ops.abs(_max_all(left, ops) - _max_all(right, ops))


def iterative(ns: Sequence, ops=IntegerOps):
    """Extend the connection from the left one segment at a time."""
    total, front = 0, ns[0]
    for v in ns[1:]:
        total = total + ops.abs(front - v)
        front = ops.max(front, v)
    return total


def sequential(ns: Sequence, ops=IntegerOps):
    return _sum(ns[1:])


def _max_all(values: Sequence, ops):
    out = values[0]
    for v in values[1:]:
        out = ops.max(out, v)
    return out


def mixed31(ns, ops=IntegerOps):
    return optimal_greedy(ns[:3], ops) + ops.abs(_max_all(ns[:3], ops) - ns[3])


def mixed44(ns, ops=IntegerOps):
    left, right = ns[:4], ns[4:]
    return (optimal_greedy(left, ops) + optimal_greedy(right, ops)
            + ops.abs(_max_all(left, ops) - _max_all(right, ops)))


def mixed2222(ns, ops=IntegerOps):
    pairs = [ns[i : i + 2] for i in range(0, 8, 2)]
    inner = _sum(ops.abs(a - b) for a, b in pairs)
    return inner + optimal_greedy([ops.max(a, b) for a, b in pairs], ops)


def mixed242(ns, ops=IntegerOps):
    outer = ops.abs(ns[0] - ns[1]) + ops.abs(ns[6] - ns[7])
    middle = optimal_greedy(ns[2:6], ops)
    blocks = [ops.max(ns[0], ns[1]), _max_all(ns[2:6], ops), ops.max(ns[6], ns[7])]
    return outer + middle + optimal_greedy(blocks, ops)


def optimal_immediate(ns: Sequence, ops=IntegerOps):
    """Swap-asap dephasing counted per stored qubit when the end users measure at once.

    A waiting link stores two memory qubits, minus one for each end that sits
    at Alice or Bob.
    """
    n = len(ns)
    links = [(v, i, i + 1) for i, v in enumerate(ns)]  # (ready, left node, right node)
    total = 0
    while len(links) > 1:
        best, best_time = 0, ops.max(links[0][0], links[1][0])
        for i in range(1, len(links) - 1):
            ready = ops.max(links[i][0], links[i + 1][0])
            if ops.lt(ready, best_time):
                best, best_time = i, ready
        (ta, la, ra), (tb, lb, rb) = links[best], links[best + 1]
        wa = 2 - (la == 0) - (ra == n)
        wb = 2 - (lb == 0) - (rb == n)
        # only the earlier link waits; write the two cases without branching
        total = total + wa * (best_time - ta) + wb * (best_time - tb)
        links[best : best + 2] = [(best_time, la, rb)]
    return total


POLICIES: dict[str, DephasingPolicy] = {
    p.name: p
    for p in (
        DephasingPolicy("optimal_greedy", optimal_greedy),
        DephasingPolicy("optimal_global", optimal_global),
        DephasingPolicy("optimal_immediate", optimal_immediate),
        DephasingPolicy("doubling", doubling),
        DephasingPolicy("iterative", iterative),
        DephasingPolicy("sequential", sequential),
        DephasingPolicy("mixed31", mixed31, 4),
        DephasingPolicy("mixed44", mixed44, 8),
        DephasingPolicy("mixed2222", mixed2222, 8),
        DephasingPolicy("mixed242", mixed242, 8),
    )
}


def get_policy(policy: str | DephasingPolicy) -> DephasingPolicy:
    if isinstance(policy, DephasingPolicy):
        return policy
    try:
        return POLICIES[policy]
    except KeyError:
        raise ValueError(f"unknown dephasing policy {policy!r}") from None


def dephasing_value(policy: str | DephasingPolicy, samples: Sequence[int]) -> int:
    """Exact integer statistic for one outcome (N_1..N_n)."""
    pol = get_policy(policy)
    pol.check_arity(len(samples))
    if any(int(v) != v or v < 1 for v in samples):
        raise ValueError("attempt counts must be positive integers")
    if pol.name == "optimal_global":
        return _global_int(tuple(int(v) for v in samples))
    return int(pol(list(samples), IntegerOps))


def verify_greedy_equals_global(n: int, bound: int, random_samples: int = 100_000,
                                max_value: int = 10_000, seed: int = 0):
    """Compare the greedy and global recursions; returns (ok, counterexample)."""
    if not 2 <= n <= 8:
        raise ValueError("n must lie in 2..8")
    for ns in itertools.product(range(1, bound + 1), repeat=n):
        if optimal_greedy(ns) != _global_int(ns):
            return False, ns
    _global_int.cache_clear()
    rng = random.Random(seed)
    for _ in range(random_samples):
        ns = tuple(rng.randint(1, max_value) for _ in range(n))
        if optimal_greedy(ns) != _global_int(ns):
            return False, ns
    _global_int.cache_clear()
    return True, None


# ---------------------------------------------------------------------------
# domains and linear forms

@dataclass(frozen=True)
class OrderingDomain:
    """Ordering of the attempt counts plus optional refining half-spaces."""

    perm: tuple[int, ...]
    constraints: tuple[Form, ...] = ()

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def strict(self) -> tuple[bool, ...]:
        return (False,) + tuple(self.perm[k - 1] > self.perm[k] for k in range(1, self.n))

    def attempt_forms(self) -> list[Form]:
        """Affine forms of N_1..N_n in the gap variables of this domain."""
        n = self.n
        forms: list[Form | None] = [None] * n
        running = Form.constant(1, n)
        for k, seg in enumerate(self.perm):
            running = running + Form.unit(k, n) + (1 if self.strict[k] else 0)
            forms[seg] = running
        return forms

    def gaps_of(self, values: Sequence[int]) -> list[int] | None:
        """Gap coordinates of a sample if it lies in the base ordering domain."""
        gaps, prev = [], 1
        for k, seg in enumerate(self.perm):
            g = values[seg] - prev - (1 if self.strict[k] else 0)
            if g < 0:
                return None
            gaps.append(g)
            prev = values[seg]
        return gaps

    def contains(self, values: Sequence[int]) -> bool:
        gaps = self.gaps_of(values)
        return gaps is not None and all(c.at(gaps) >= 0 for c in self.constraints)

    def describe(self) -> str:
        names = [f"N{i + 1}" for i in self.perm]
        out = names[0]
        for k in range(1, self.n):
            out += (" < " if self.strict[k] else " <= ") + names[k]
        for c in self.constraints:
            out += f", {self.form_in_attempts(c)} >= 0"
        return out

    def form_in_attempts(self, form: Form) -> str:
        """Rewrite a gap form as an affine expression in N_1..N_n."""
        coeffs = [0] * self.n
        const = form.const
        strict = self.strict
        for k, seg in enumerate(self.perm):
            c = form[k + 1]
            if not c:
                continue
            # g_k = N[perm[k]] - N[perm[k-1]] - s_k, and g_0 = N[perm[0]] - 1
            coeffs[seg] += c
            if k == 0:
                const -= c
            else:
                coeffs[self.perm[k - 1]] -= c
                const -= c * (1 if strict[k] else 0)
        return _format_affine(coeffs, const)


def _format_affine(coeffs: Sequence[int], const: int) -> str:
    """Positive terms first, e.g. ``2N4 - N1 - N3``."""
    order = [i for i, c in enumerate(coeffs) if c > 0] + [i for i, c in enumerate(coeffs) if c < 0]
    parts = []
    for i in order:
        c = coeffs[i]
        mag = "" if abs(c) == 1 else str(abs(c))
        parts.append(("- " if c < 0 else "+ ") + f"{mag}N{i + 1}")
    if const or not parts:
        parts.append(("- " if const < 0 else "+ ") + str(abs(const)))
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else "-" + text[2:]


@dataclass(frozen=True)
class DomainForm:
    domain: OrderingDomain
    form: Form

    def describe(self) -> str:
        return f"{self.domain.describe()} | {self.domain.form_in_attempts(self.form)}"


def _lift(value, n: int) -> Form:
    return value if isinstance(value, Form) else Form.constant(int(value), n)


def _evaluate_on_domain(rule: Rule, perm: tuple[int, ...], max_splits: int = 64):
    """Evaluate a rule symbolically, splitting the domain where needed.

    Returns (refined domain, raw rule output) pairs.
    """
    out = []
    stack: list[tuple[Form, ...]] = [()]
    splits = 0
    base = OrderingDomain(perm)
    forms = base.attempt_forms()
    while stack:
        constraints = stack.pop()
        try:
            value = rule(forms, DomainOps(constraints))
        except Undecided as exc:
            splits += 1
            if splits > max_splits:
                raise RuntimeError(f"too many refinements on {base.describe()}") from exc
            f = exc.form
            stack.append(constraints + (-f - 1,))
            stack.append(constraints + (f,))
            continue
        out.append((OrderingDomain(perm, constraints), value))
    return out


def derive_linear_forms(policy: str | DephasingPolicy | Rule, n: int) -> list[DomainForm]:
    """Affine dephasing form on every (refined) ordering domain."""
    rule = _as_rule(policy, n)
    out = []
    for perm in itertools.permutations(range(n)):
        out.extend(DomainForm(dom, _lift(v, n)) for dom, v in _evaluate_on_domain(rule, perm))
    return out


def refined_domains(table: Sequence[DomainForm]) -> list[DomainForm]:
    """Entries whose domain needed refinement beyond the ordering."""
    return [entry for entry in table if entry.domain.constraints]


def format_table(table: Sequence[DomainForm]) -> str:
    return "\n".join(entry.describe() for entry in table)


def lookup(table: Sequence[DomainForm], values: Sequence[int]) -> list[int]:
    """Values of every table entry whose domain contains the sample."""
    hits = []
    for entry in table:
        gaps = entry.domain.gaps_of(values)
        if gaps is not None and all(c.at(gaps) >= 0 for c in entry.domain.constraints):
            hits.append(entry.form.at(gaps))
    return hits


def _as_rule(policy, n: int) -> Rule:
    if isinstance(policy, (str, DephasingPolicy)):
        pol = get_policy(policy)
        pol.check_arity(n)
        return pol.rule
    return policy


# ---------------------------------------------------------------------------
# summing geometric series over a region

Term = tuple[int, int, int, tuple[tuple[int, int], ...]]  # coef, a0, b0, factors


class DivergentSum(ArithmeticError):
    pass


def _simplify(constraints: Sequence[Form]) -> list[Form] | None:
    kept = []
    for c in constraints:
        if c.trivially_nonneg():
            continue
        if c.const < 0 and all(x <= 0 for x in c.coeffs):
            return None
        kept.append(c)
    return kept


def _region_sum(eq: Form, et: Form, constraints: Sequence[Form], active: frozenset,
                depth: int = 0) -> list[Term]:
    """Sum q^eq t^et over the non-negative gap lattice cut by constraints >= 0."""
    if depth > 200:
        raise RuntimeError("constraint elimination did not terminate")
    cons = _simplify(constraints)
    if cons is None:
        return []
    if not cons:
        factors = []
        for j in sorted(active):
            a, b = eq[j + 1], et[j + 1]
            if a <= 0:
                raise DivergentSum(f"gap {j} has q-exponent {a}")
            factors.append((a, b))
        return [(1, eq.const, et.const, tuple(sorted(factors)))]

    # a constraint 0 + (non-positive combination) >= 0 pins its variables to zero
    for idx, c in enumerate(cons):
        if c.const == 0 and all(x <= 0 for x in c.coeffs):
            zero = [j for j in active if c[j + 1] < 0]
            rest = cons[:idx] + cons[idx + 1 :]
            zeros = Form.constant(0, len(eq) - 1)
            eq2, et2 = eq, et
            for j in zero:
                eq2, et2 = eq2.substitute(j, zeros), et2.substitute(j, zeros)
                rest = [o.substitute(j, zeros) for o in rest]
            return _region_sum(eq2, et2, rest, active - set(zero), depth + 1)

    # g_j <= h with g_j private to this constraint: finite geometric sum
    for idx, c in enumerate(cons):
        others = cons[:idx] + cons[idx + 1 :]
        for j in sorted(active):
            if c[j + 1] != -1 or any(o[j + 1] for o in others):
                continue
            a, b = eq[j + 1], et[j + 1]
            if (a, b) == (0, 0):
                continue
            h = c.with_coeff(j, 0)
            eq_a, et_a = eq.with_coeff(j, 0), et.with_coeff(j, 0)
            eq_b, et_b = eq_a + (h + 1) * a, et_a + (h + 1) * b
            sub = active - {j}
            head = _region_sum(eq_a, et_a, others + [h], sub, depth + 1)
            tail = _region_sum(eq_b, et_b, others + [h], sub, depth + 1)
            return ([(k, a0, b0, tuple(sorted(f + ((a, b),)))) for k, a0, b0, f in head]
                    + [(-k, a0, b0, tuple(sorted(f + ((a, b),)))) for k, a0, b0, f in tail])

    # g_j >= h: split on the sign of h, then shift g_j by h
    for idx, c in enumerate(cons):
        others = cons[:idx] + cons[idx + 1 :]
        for j in sorted(active):
            if c[j + 1] != 1:
                continue
            h = -c.with_coeff(j, 0)
            low = _region_sum(eq, et, others + [-h], active, depth + 1)
            high = _region_sum(eq.substitute(j, h + Form.unit(j, len(eq) - 1)),
                               et.substitute(j, h + Form.unit(j, len(eq) - 1)),
                               [o.substitute(j, h + Form.unit(j, len(eq) - 1)) for o in others] + [h - 1],
                               active, depth + 1)
            return low + high

    # bounded box: enumerate the finitely many values
    for idx, c in enumerate(cons):
        if all(x <= 0 for x in c.coeffs):
            bounded = [j for j in active if c[j + 1] < 0]
            rest = cons[:idx] + cons[idx + 1 :]
            out: list[Term] = []
            ranges = [range(c.const // -c[j + 1] + 1) for j in bounded]
            for point in itertools.product(*ranges):
                if c.const + sum(c[j + 1] * v for j, v in zip(bounded, point)) < 0:
                    continue
                eq2, et2, rest2 = eq, et, list(rest)
                for j, v in zip(bounded, point):
                    val = Form.constant(v, len(eq) - 1)
                    eq2, et2 = eq2.substitute(j, val), et2.substitute(j, val)
                    rest2 = [o.substitute(j, val) for o in rest2]
                out.extend(_region_sum(eq2, et2, rest2, active - set(bounded), depth + 1))
            return out

    raise RuntimeError(f"cannot eliminate constraints {cons}")


def _domain_terms(domain: OrderingDomain, exponent: Form, extra: Sequence[Form] = ()) -> list[Term]:
    n = domain.n
    eq = _sum(domain.attempt_forms()) - n
    return _region_sum(eq, exponent, list(domain.constraints) + list(extra),
                       frozenset(range(n)))


@dataclass(frozen=True)
class PartitionSum:
    """PGF kept as a sum of geometric-product terms, times p^n.

    The term list does not depend on p, so one derivation serves every p.
    Float evaluation sums positive terms (for unrefined domains), which keeps
    it accurate even when q is close to one.
    """

    n: int
    terms: tuple[Term, ...]
    normalize: bool = False

    def _logs(self, p: float, t: float):
        p = float(p)
        if not 0 < p <= 1:
            raise ValueError("p must lie in (0, 1]")
        lnq = math.log1p(-p) if p < 1 else -math.inf
        lnt = math.log(t) if t > 0 else -math.inf
        return p, lnq, lnt

    @staticmethod
    def _power(a: int, b: int, lnq: float, lnt: float) -> float:
        x = (a * lnq if a else 0.0) + (b * lnt if b else 0.0)
        return x

    def _raw(self, p: float, t: float, order: int):
        """Sum of terms and of their first/second t-derivatives.

        Factors with negative t-exponents come from finite geometric sums;
        there ``1 - x`` may be negative, so signs are tracked separately.
        """
        p, lnq, lnt = self._logs(p, t)
        s0 = s1 = s2 = 0.0
        for coef, a0, b0, factors in self.terms:
            logv = self._power(a0, b0, lnq, lnt)
            sign = 1.0 if coef > 0 else -1.0
            l1 = b0 / t
            l1p = -b0 / (t * t)
            for a, b in factors:
                e = self._power(a, b, lnq, lnt)
                one_minus = -math.expm1(e)
                if one_minus == 0:
                    raise ZeroDivisionError("geometric factor is singular at this point")
                if one_minus < 0:
                    sign = -sign
                logv -= math.log(abs(one_minus))
                if order:
                    r = math.exp(e) / one_minus
                    l1 += b * r / t
                    l1p += (b * (b - 1) * r + (b * r) ** 2) / (t * t)
            v = sign * abs(coef) * math.exp(logv)
            s0 += v
            if order:
                s1 += v * l1
                s2 += v * (l1 * l1 + l1p)
        scale = p**self.n
        return s0 * scale, s1 * scale, s2 * scale

    def evaluate(self, p: float, t: float) -> float:
        s0, _, _ = self._raw(p, t, 0)
        if self.normalize:
            m0, _, _ = self._raw(p, 1.0, 0)
            return s0 / m0
        return s0

    def mean(self, p: float) -> float:
        s0, s1, _ = self._raw(p, 1.0, 1)
        return s1 / s0 if self.normalize else s1

    def variance(self, p: float) -> float:
        s0, s1, s2 = self._raw(p, 1.0, 2)
        if self.normalize:
            s1, s2 = s1 / s0, s2 / s0
        return s2 + s1 - s1 * s1

    def exp_moment(self, p: float, alpha: float, k: int = 1) -> float:
        return self.evaluate(p, math.exp(-k * alpha))

    def to_pgf(self, p=None) -> SymbolicPGF:
        """Exact PGF; bivariate in (q, t) when ``p`` is None."""
        if p is None:
            qv = None
            pfac = (1 - Poly.q()) ** self.n
        else:
            pv = _frac(p)
            qv = 1 - pv
            pfac = Poly.const(pv**self.n)

        def mono(a: int, b: int) -> Poly:
            return Poly.monomial(1, a, b) if qv is None else Poly.monomial(qv**a, 0, b)

        def factor(a: int, b: int) -> Poly:
            # 1/(1 - q^a t^b) with b < 0 is rewritten as t^-b / (t^-b - q^a)
            return 1 - mono(a, b) if b >= 0 else mono(0, -b) - mono(a, 0)

        need: Counter = Counter()
        for _, _, _, factors in self.terms:
            for f, k in Counter(factors).items():
                need[f] = max(need[f], k)
        den = Poly.const(1)
        for f in sorted(need):
            den = den * factor(*f) ** need[f]
        grouped: Counter = Counter()
        for coef, a0, b0, factors in self.terms:
            grouped[(a0, b0, factors)] += coef
        grouped = {k: c for k, c in grouped.items() if c}
        lifts = {k: k[1] + sum(-b for _, b in k[2] if b < 0) for k in grouped}
        shift = max([0] + [-v for v in lifts.values()])
        cache: dict[tuple, Poly] = {}
        num = Poly()
        for key, coef in sorted(grouped.items()):
            a0, _, factors = key
            missing = tuple(sorted((need - Counter(factors)).items()))
            if missing not in cache:
                co = Poly.const(1)
                for f, k in missing:
                    co = co * factor(*f) ** k
                cache[missing] = co
            num = num + cache[missing] * mono(a0, lifts[key] + shift) * coef
        if shift:
            den = den * mono(0, shift)
        pgf = SymbolicPGF(num * pfac, den)
        return pgf.normalized() if self.normalize else pgf


def _collect(terms: Sequence[Term]) -> tuple[Term, ...]:
    acc: Counter = Counter()
    for coef, a0, b0, factors in terms:
        acc[(a0, b0, factors)] += coef
    return tuple((c, a0, b0, f) for (a0, b0, f), c in sorted(acc.items()) if c)


def _perm_chunk_terms(args) -> list[Term]:
    rule, region, perms = args
    n = len(perms[0]) if perms else 0
    out: list[Term] = []
    for perm in perms:
        if region is None:
            pieces = [(dom, v, None) for dom, v in _evaluate_on_domain(rule, perm)]
        else:
            both = lambda ns, ops: (rule(ns, ops), region(ns, ops))
            pieces = [(dom, v[0], v[1]) for dom, v in _evaluate_on_domain(both, perm)]
        for dom, value, cond in pieces:
            extra = [] if cond is None else [_lift(cond, n)]
            out.extend(_domain_terms(dom, _lift(value, n), extra))
    return out


def partition_sum_for_rule(rule: Rule, n: int, region: Rule | None = None,
                           normalize: bool = False, workers: int = 1) -> PartitionSum:
    """Terms of E[t^rule(N) ; region(N) >= 0] for i.i.d. geometric N_1..N_n.

    With ``normalize`` the result is conditioned on the region.
    """
    perms = list(itertools.permutations(range(n)))
    if workers > 1 and len(perms) > 1000:
        from concurrent.futures import ProcessPoolExecutor

        size = math.ceil(len(perms) / (4 * workers))
        chunks = [(rule, region, perms[i : i + size]) for i in range(0, len(perms), size)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_perm_chunk_terms, chunks))
        terms = [t for part in parts for t in part]  # fixed chunk order
    else:
        terms = _perm_chunk_terms((rule, region, perms))
    return PartitionSum(n, _collect(terms), normalize=normalize)


class _CutoffRegion:
    """Picklable region rule ``m - rule(N) >= 0``."""

    def __init__(self, rule: Rule, m: int):
        self.rule, self.m = rule, m

    def __call__(self, ns, ops):
        return self.m - self.rule(ns, ops)


_CACHE: dict[tuple, PartitionSum] = {}


def partition_sum(policy: str | DephasingPolicy, n: int, cutoff: int | None = None,
                  workers: int = 1) -> PartitionSum:
    """Cached partition sum of a named policy (independent of p)."""
    pol = get_policy(policy)
    pol.check_arity(n)
    key = (pol.name, n, cutoff)
    if key not in _CACHE:
        region = None if cutoff is None else _CutoffRegion(pol.rule, cutoff)
        _CACHE[key] = partition_sum_for_rule(pol.rule, n, region, cutoff is not None, workers)
    return _CACHE[key]


def pgf_from_policy(policy: str | DephasingPolicy, n: int, p=None, cutoff: int | None = None,
                    workers: int = 1) -> SymbolicPGF:
    """Exact dephasing PGF; bivariate in (q, t) when p is None."""
    return partition_sum(policy, n, cutoff, workers).to_pgf(p)


def ratio_diagnostics(policy_a, policy_b, n: int, p: float, alphas: Sequence[float]):
    """Rows (alpha, E[D_a]/E[D_b], E[exp(-alpha D_a)]/E[exp(-alpha D_b)])."""
    sa, sb = partition_sum(policy_a, n), partition_sum(policy_b, n)
    mean_ratio = sa.mean(p) / sb.mean(p)
    return [(a, mean_ratio, sa.exp_moment(p, a) / sb.exp_moment(p, a)) for a in alphas]


def exact_mean_ratio(policy_a, policy_b, n: int, p) -> Fraction:
    """E[D_a]/E[D_b] in exact rational arithmetic at rational p."""
    return (pgf_from_policy(policy_a, n, p).mean(exact=True)
            / pgf_from_policy(policy_b, n, p).mean(exact=True))
