"""Continued fractions, torus distance, the Liouville exponent and resonance bookkeeping."""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np

from .errors import ScaleOutOfRange, ValidationError

DEFAULT_PRECISION = 256
THETA_BRANCH_TOL = 1e-12


@dataclass(frozen=True)
class QuadraticSurd:
    """The real number (p + sqrt(d)) / r, with d > 0 not a perfect square."""

    p: int
    d: int
    r: int

    def __post_init__(self):
        if self.r == 0 or self.d <= 0:
            raise ValidationError("surd needs r != 0 and d > 0")
        s = math.isqrt(self.d)
        if s * s == self.d:
            raise ValidationError("d is a perfect square; pass a Fraction instead")

    def to_mpf(self, prec: int) -> mpmath.mpf:
        with mpmath.workprec(prec + 32):
            return (mpmath.mpf(self.p) + mpmath.sqrt(self.d)) / self.r

    def __float__(self):
        return float(self.to_mpf(64))


GOLDEN = QuadraticSurd(-1, 5, 2)  # (sqrt(5) - 1) / 2


@dataclass(frozen=True)
class ContinuedFractionExpansion:
    """Convergents p_n/q_n of x together with the signed errors q_n x - p_n.

    ``partial_quotients`` holds a_1, a_2, ...; the integer part a_0 lives in
    ``integer_part`` so that every listed quotient is positive.
    ``kind`` is "rational" (terminated exactly), "irrational" or "surrogate"
    (a finite expansion standing in for an irrational built from quotients).
    """

    input_value: object
    integer_part: int
    partial_quotients: tuple
    convergents: tuple
    signed_errors: tuple
    precision_bits: int
    kind: str
    exhausted: bool = False
    terminated: bool = False
    value: object = field(default=None, compare=False, repr=False)

    @property
    def errors(self):
        return tuple(abs(e) for e in self.signed_errors)

    @property
    def qs(self) -> list[int]:
        return [q for _, q in self.convergents]

    @property
    def alpha(self) -> float:
        return float(self.value)

    def __len__(self):
        return len(self.convergents)

    def to_json(self) -> dict:
        return {
            "partial_quotients": [int(a) for a in self.partial_quotients],
            "convergents": [[int(p), int(q)] for p, q in self.convergents],
            "precision_bits": int(self.precision_bits),
        }


# ── exact expression parsing ────────────────────────────────────────

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"sqrt": mpmath.sqrt, "exp": mpmath.exp, "log": mpmath.log,
          "sin": mpmath.sin, "cos": mpmath.cos}
_CONSTS = {"pi": lambda: +mpmath.pi, "e": lambda: +mpmath.e,
           "golden": lambda: (mpmath.sqrt(5) - 1) / 2}


def _eval_expr(node):
    if isinstance(node, ast.Expression):
        return _eval_expr(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return mpmath.mpf(str(node.value)) if isinstance(node.value, float) else mpmath.mpf(node.value)
    if isinstance(node, ast.Name) and node.id in _CONSTS:
        return _CONSTS[node.id]()
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_expr(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_expr(node.left), _eval_expr(node.right))
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS and len(node.args) == 1):
        return _FUNCS[node.func.id](_eval_expr(node.args[0]))
    raise ValidationError(f"unsupported expression element: {ast.dump(node)}")


def parse_real(text: str):
    """Turn a user string into an exact Fraction or a high-precision expression.

    Decimal literals and ``p/q`` become Fractions. Anything mentioning
    pi, e, golden or a function call is kept as source text and evaluated later
    at the requested precision.
    """
    text = text.strip()
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        pass
    tree = ast.parse(text, mode="eval")
    has_transcendental = any(
        isinstance(n, (ast.Name, ast.Call)) for n in ast.walk(tree))
    if not has_transcendental:
        with mpmath.workprec(64):
            _eval_expr(tree)  # validate
        return _exact_from_ast(tree.body)
    with mpmath.workprec(64):
        _eval_expr(tree)
    return text


def _exact_from_ast(node):
    if isinstance(node, ast.Constant):
        return Fraction(str(node.value))
    if isinstance(node, ast.UnaryOp):
        v = _exact_from_ast(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        left, right = _exact_from_ast(node.left), _exact_from_ast(node.right)
        if isinstance(node.op, ast.Pow):
            if right.denominator != 1:
                raise ValidationError("non-integer power of a rational")
            return left ** int(right)
        return _BINOPS[type(node.op)](left, right)
    raise ValidationError("not a rational expression")


def _to_mpf(x, prec: int):
    with mpmath.workprec(prec + 32):
        if isinstance(x, QuadraticSurd):
            return x.to_mpf(prec)
        if isinstance(x, Fraction):
            return mpmath.mpf(x.numerator) / x.denominator
        if isinstance(x, str):
            return _eval_expr(ast.parse(x, mode="eval"))
        return mpmath.mpf(x)


# ── expansion algorithms ────────────────────────────────────────────

def _surd_ge(p: int, d: int, r: int, a: int) -> bool:
    """Exact test of (p + sqrt(d)) / r >= a."""
    t = a * r - p  # compare sqrt(d) with t, direction flipped when r < 0
    if r > 0:
        return t <= 0 or d >= t * t
    return t >= 0 and d <= t * t


def _surd_floor(p: int, d: int, r: int) -> int:
    guess = math.floor((p + math.isqrt(d)) / r) if abs(r) < 2**52 else (p + math.isqrt(d)) // r
    a = int(guess)
    while not _surd_ge(p, d, r, a):
        a -= 1
    while _surd_ge(p, d, r, a + 1):
        a += 1
    return a


def _quotients_surd(s: QuadraticSurd, max_terms: int) -> list[int]:
    p, d, r = s.p, s.d, s.r
    if (d - p * p) % r:
        p, d, r = p * abs(r), d * r * r, r * abs(r)
    out = []
    for _ in range(max_terms):
        a = _surd_floor(p, d, r)
        out.append(a)
        p = a * r - p
        r = (d - p * p) // r
    return out


def _quotients_rational(x: Fraction, max_terms: int) -> tuple[list[int], bool]:
    out = []
    num, den = x.numerator, x.denominator
    while len(out) < max_terms:
        a = num // den
        out.append(a)
        num, den = den, num - a * den
        if den == 0:
            return out, True
    return out, False


def _quotients_interval(x, max_terms: int, prec: int) -> tuple[list[int], bool]:
    """Partial quotients of a real known only through an enclosure.

    The enclosure starts one relative ulp wide at ``prec`` bits and is pushed
    through x -> 1/(x - a) with outward rounding; a quotient is emitted only
    when both ends agree on the floor.
    """
    with mpmath.workprec(prec + 32):
        v = _to_mpf(x, prec)
        slack = abs(v) * mpmath.ldexp(1, -prec) + mpmath.ldexp(1, -prec - 16)
        lo, hi = v - slack, v + slack
    out = []
    for _ in range(max_terms):
        a_lo, a_hi = int(mpmath.floor(lo)), int(mpmath.floor(hi))
        if a_lo != a_hi:
            return out, True
        a = a_lo
        out.append(a)
        if len(out) == max_terms:
            break
        f_lo = mpmath.fsub(lo, a, prec=prec + 32, rounding="f")
        f_hi = mpmath.fsub(hi, a, prec=prec + 32, rounding="c")
        if f_lo <= 0:
            return out, True
        lo = mpmath.fdiv(1, f_hi, prec=prec + 32, rounding="f")
        hi = mpmath.fdiv(1, f_lo, prec=prec + 32, rounding="c")
    return out, False


def _convergents(quotients: Sequence[int]) -> list[tuple[int, int]]:
    p_prev, q_prev = 1, 0
    p, q = quotients[0], 1
    out = [(p, q)]
    for a in quotients[1:]:
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        out.append((p, q))
    return out


def _build(input_value, value, quotients, prec, kind, exhausted, terminated=False):
    conv = _convergents(quotients)
    if isinstance(value, Fraction):
        errs = tuple(q * value - p for p, q in conv)
    else:
        with mpmath.workprec(prec):
            errs = tuple(q * value - p for p, q in conv)
    return ContinuedFractionExpansion(
        input_value=input_value, integer_part=int(quotients[0]),
        partial_quotients=tuple(int(a) for a in quotients[1:]),
        convergents=tuple(conv), signed_errors=errs, precision_bits=prec,
        kind=kind, exhausted=exhausted, terminated=terminated, value=value)


def expand(x, max_terms: int, precision: int = DEFAULT_PRECISION) -> ContinuedFractionExpansion:
    """Continued-fraction expansion with ``max_terms`` convergents p_0/q_0, ...

    Accepted inputs: int, Fraction or float (exact binary value), a
    ``QuadraticSurd`` (exact integer recurrence), an ``mpmath.mpf`` or an
    expression string such as ``"pi"`` or ``"(sqrt(5)-1)/2"`` (certified by
    outward-rounded interval arithmetic at ``precision`` bits).
    If certification runs out the certified prefix comes back with
    ``exhausted=True``.
    """
    if max_terms < 1:
        raise ValidationError("max_terms must be >= 1")
    if isinstance(x, str):
        x = parse_real(x)
    if isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool):
        if isinstance(x, (float, np.floating)) and not math.isfinite(x):
            raise ValidationError("non-finite input")
        x = Fraction(x) if not isinstance(x, (float, np.floating)) else Fraction(float(x))
    if isinstance(x, Fraction):
        qs, done = _quotients_rational(x, max_terms)
        return _build(x, x, qs, precision, "rational", False, terminated=done)
    if isinstance(x, QuadraticSurd):
        qs = _quotients_surd(x, max_terms)
        return _build(x, x.to_mpf(precision), qs, precision, "irrational", False)
    qs, exhausted = _quotients_interval(x, max_terms, precision)
    if not qs:
        raise ValidationError("could not certify even the integer part")
    return _build(x, _to_mpf(x, precision), qs, precision, "irrational", exhausted)


def from_partial_quotients(quotients: Sequence[int], integer_part: int = 0,
                           precision: int = DEFAULT_PRECISION) -> ContinuedFractionExpansion:
    """Expansion of the finite continued fraction [integer_part; quotients...].

    Used to build irrational surrogates with prescribed growth; the value is
    the exact rational, so the final error is zero.
    """
    if any(int(a) < 1 for a in quotients):
        raise ValidationError("partial quotients must be positive")
    qs = [int(integer_part)] + [int(a) for a in quotients]
    value = Fraction(qs[-1])
    for a in reversed(qs[:-1]):
        value = a + 1 / value
    if len(qs) == 1:
        value = Fraction(qs[0])
    return _build(("quotients", tuple(qs)), value, qs, precision, "surrogate", False)


def grow_quotients(rule, n_terms: int, precision: int = DEFAULT_PRECISION) -> ContinuedFractionExpansion:
    """Surrogate in (0, 1) with a_{n+1} = rule(q_n) for n = 0, 1, ..."""
    quotients = []
    q_prev, q = 0, 1
    for _ in range(n_terms - 1):
        a = int(rule(q))
        quotients.append(a)
        q, q_prev = a * q + q_prev, q
    return from_partial_quotients(quotients, 0, precision)


# ── β(α) ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BetaEstimate:
    ratios: tuple
    running_tail_sup: tuple
    defined: bool = True

    @property
    def estimate(self) -> float:
        return self.running_tail_sup[-1]


def beta_estimate(cf: ContinuedFractionExpansion) -> BetaEstimate:
    """Ratios ln(q_{n+1})/q_n with their running tail suprema.

    For a terminated (rational) expansion β is undefined and ``defined`` is
    False; the finite ratios are still returned.
    """
    qs = cf.qs
    if len(qs) < 2:
        raise ValidationError("need at least two convergents")
    with mpmath.workprec(cf.precision_bits):
        ratios = [float(mpmath.log(qs[n + 1]) / qs[n]) for n in range(len(qs) - 1)]
    tail = list(ratios)
    for n in range(len(tail) - 2, -1, -1):
        tail[n] = max(tail[n], tail[n + 1])
    return BetaEstimate(tuple(ratios), tuple(tail), defined=cf.kind != "rational")


# ── torus distance ──────────────────────────────────────────────────

def torus_norm(x):
    """Distance from x to the nearest integer; works on floats, arrays, mpf and Fractions."""
    if isinstance(x, np.ndarray):
        return np.abs(x - np.round(x))
    if isinstance(x, Fraction):
        return abs(x - round(x))
    if isinstance(x, mpmath.mpf):
        return abs(x - mpmath.nint(x))
    return abs(x - round(x))


# ── resonances ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class ResonanceReport:
    k: int
    n: int
    q_n: int
    b_n: float
    nearest_multiple_distance: int
    classification: str  # "Resonant" or "NonResonant"


def scale_b(cf: ContinuedFractionExpansion, n: int) -> float:
    """b_n = max(q_n^{8/9}, q_{n-1}/20) with the power rounded toward -inf."""
    qs = cf.qs
    q = qs[n]
    q_prev = qs[n - 1] if n >= 1 else 0
    with mpmath.workprec(80):
        power = float(mpmath.power(q, mpmath.mpf(8) / 9))
    power = math.nextafter(power, -math.inf) if power > 0 else 0.0
    return max(power, q_prev / 20)


def resonance_at_scale(k: int, cf: ContinuedFractionExpansion, n: int) -> ResonanceReport:
    """Classify k against the multiples of q_n for an explicitly chosen n."""
    q = cf.qs[n]
    b = scale_b(cf, n)
    ell = max(1, round(k / q))
    d = min(abs(k - l * q) for l in (ell - 1, ell, ell + 1) if l >= 1)
    return ResonanceReport(k, n, q, b, d, "Resonant" if d <= b else "NonResonant")


def classify_resonance(k: int, cf: ContinuedFractionExpansion) -> ResonanceReport:
    """Find the scale n with b_n < k <= b_{n+1}, then classify k at that scale."""
    if k <= 0:
        raise ValidationError("k must be positive")
    bs = [scale_b(cf, n) for n in range(len(cf))]
    candidates = [n for n in range(len(bs) - 1) if bs[n] < k <= bs[n + 1]]
    if not candidates:
        raise ScaleOutOfRange(f"k={k} not bracketed by computed scales")
    return resonance_at_scale(k, cf, candidates[-1])


# ── phase census ────────────────────────────────────────────────────

@dataclass(frozen=True)
class ThetaScan:
    witnesses: tuple
    half_multiple_s: tuple  # s with theta = s*alpha/2 mod 1
    pi_half_multiple_s: tuple  # s with theta = s*pi*alpha/2 mod 1
    k_max: int
    tolerance: float

    @property
    def second_branch(self) -> bool:
        return bool(self.half_multiple_s)


def _multiples_mod(ks: np.ndarray, cf: ContinuedFractionExpansion, modulus: int) -> np.ndarray:
    """k*alpha mod ``modulus`` as floats, exact integer part plus a tiny correction.

    Uses the deepest convergent: k*alpha = k*p/q + k*(alpha - p/q).
    """
    p, q = cf.convergents[-1]
    with mpmath.workprec(cf.precision_bits):
        eps = float(cf.value - mpmath.mpf(p) / q) if not isinstance(cf.value, Fraction) \
            else float(cf.value - Fraction(p, q))
    num = (ks.astype(object) * p) % (modulus * q)
    base = np.array([int(v) / q for v in num], dtype=np.float64)  # int/int rounds correctly
    return np.mod(base + ks * eps, modulus)


def theta_membership_scan(theta: float, alpha, k_max: int, s_max: int = 1000,
                          tol: float = THETA_BRANCH_TOL) -> ThetaScan:
    """All k <= k_max with |sin 2π(θ + kα/2)| < k^{-2}, plus the special-phase flags.

    ``alpha`` may be a float or an expansion; expansions keep the census
    accurate when k*alpha needs more than double precision.
    """
    if k_max < 1:
        raise ValidationError("k_max must be >= 1")
    cf = alpha if isinstance(alpha, ContinuedFractionExpansion) else expand(float(alpha), 200)
    ks = np.arange(1, k_max + 1, dtype=np.int64)
    y = _multiples_mod(ks, cf, 1) + 2.0 * theta
    dist = torus_norm(y)
    hits = ks[np.sin(np.pi * dist) < 1.0 / ks.astype(np.float64) ** 2]
    ss = np.arange(-s_max, s_max + 1, dtype=np.int64)
    half = _multiples_mod(ss, cf, 2) / 2.0
    half_hits = ss[torus_norm(half - theta) <= tol]
    with mpmath.workprec(cf.precision_bits):
        a = mpmath.mpf(cf.value.numerator) / cf.value.denominator \
            if isinstance(cf.value, Fraction) else cf.value
        t = mpmath.mpf(theta)
        pi_hits = [int(s) for s in ss
                   if torus_norm(int(s) * mpmath.pi * a / 2 - t) <= tol]
    return ThetaScan(tuple(int(k) for k in hits), tuple(int(s) for s in half_hits),
                     tuple(pi_hits), k_max, tol)
