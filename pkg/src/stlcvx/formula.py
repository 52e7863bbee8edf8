"""STL formula AST, a small text DSL, and desugaring to the core operators.

Grammar (lowest to highest precedence)::

    expr    := or_expr [("implies" | "iff") expr]
    or_expr := xor_expr {"or" xor_expr}
    xor_expr:= and_expr {"xor" and_expr}
    and_expr:= until   {"and" until}
    until   := unary ["until" until]
    unary   := "not" unary | TEMPORAL [window] unary | atom
    atom    := "(" expr ")" | "norm" "(" SIG ")" CMP NUM | SIG "[" INT "]" CMP NUM
    window  := "[" NUM ["%"] "," NUM ["%"] "]"

``TEMPORAL`` is ``always`` or ``eventually``, optionally suffixed with
``_before`` or ``_after`` to set the temporal interest (default before).
Windows are fractions of the horizon; a missing window means ``[0, 1]``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Union

# Signal name -> (start, stop) inside the per-step vector [x y z vx vy vz Fx Fy Fz].
SIGNALS = {"r": (0, 3), "v": (3, 6), "F": (6, 9)}
SIGNAL_WIDTH = 9


class FormulaError(ValueError):
    pass


class FormulaSyntaxError(FormulaError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class TopNodeNotFlow(FormulaError):
    """The outermost operator is not Always/Eventually."""

    def __init__(self, kind):
        super().__init__(
            f"top node is {kind!r}; the outermost operator must be a temporal "
            "(flow) operator such as always/eventually, e.g. wrap it as "
            f"'always ({kind} ...)'")
        self.kind = kind


class Interest(str, Enum):
    BEFORE = "before"
    AFTER = "after"


@dataclass(frozen=True)
class PredicateSpec:
    """``kind`` is 'affine', 'norm-geq' or 'norm-leq'.

    Affine predicates read one component ``signal[index]`` and compare it with
    ``threshold`` in direction ``sense`` (+1 for >=, -1 for <=).
    """

    kind: str
    signal: str
    threshold: float
    index: int | None = None
    sense: int = 1

    def __post_init__(self):
        if self.kind not in ("affine", "norm-geq", "norm-leq"):
            raise FormulaError(f"unknown predicate kind {self.kind!r}")
        if self.signal not in SIGNALS:
            raise FormulaError(f"unknown signal {self.signal!r}")
        if not math.isfinite(self.threshold):
            raise FormulaError("predicate threshold must be finite")
        if self.kind == "affine":
            lo, hi = SIGNALS[self.signal]
            if self.index is None or not 0 <= self.index < hi - lo:
                raise FormulaError(
                    f"index {self.index!r} out of range for signal {self.signal!r}")
            if self.sense not in (1, -1):
                raise FormulaError("affine sense must be +1 or -1")

    @property
    def columns(self):
        lo, hi = SIGNALS[self.signal]
        if self.kind == "affine":
            return slice(lo + self.index, lo + self.index + 1)
        return slice(lo, hi)

    @property
    def name(self):
        return to_text(Predicate(self))


@dataclass(frozen=True)
class Interval:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.a <= self.b <= 1.0):
            raise FormulaError(f"malformed interval [{self.a}, {self.b}]")

    def resolve(self, n_steps):
        """0-based inclusive step indices ``(ka, kb)`` on an ``n_steps`` grid."""
        ka = int(math.floor(self.a * (n_steps - 1) + 0.5))
        kb = int(math.floor(self.b * (n_steps - 1) + 0.5))
        if not 0 <= ka <= kb <= n_steps - 1:
            raise FormulaError(f"window {self} is empty on a {n_steps}-step grid")
        return ka, kb

    @property
    def is_full(self):
        return self.a == 0.0 and self.b == 1.0


FULL = Interval()


@dataclass(frozen=True)
class Predicate:
    spec: PredicateSpec


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Eventually:
    child: "Formula"
    interval: Interval = FULL
    interest: Interest = Interest.BEFORE


@dataclass(frozen=True)
class Always:
    child: "Formula"
    interval: Interval = FULL
    interest: Interest = Interest.BEFORE


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Xor:
    left: "Formula"
    right: "Formula"


Formula = Union[Predicate, Not, And, Or, Eventually, Always, Until,
                Implies, Iff, Xor]
BINARY = (And, Or, Until, Implies, Iff, Xor)
TEMPORAL = (Eventually, Always)
_BINARY_WORD = {And: "and", Or: "or", Until: "until", Implies: "implies",
                Iff: "iff", Xor: "xor"}


def kind_name(f):
    return type(f).__name__


def children(f):
    if isinstance(f, Predicate):
        return ()
    if isinstance(f, (Not, Eventually, Always)):
        return (f.child,)
    return (f.left, f.right)


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+|\n)
  | (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<op>>=|<=|[()\[\],%])
  | (?P<word>[A-Za-z_][A-Za-z_0-9]*)
""", re.VERBOSE)

_TEMPORAL_WORDS = {
    "always": (Always, Interest.BEFORE),
    "always_before": (Always, Interest.BEFORE),
    "always_after": (Always, Interest.AFTER),
    "eventually": (Eventually, Interest.BEFORE),
    "eventually_before": (Eventually, Interest.BEFORE),
    "eventually_after": (Eventually, Interest.AFTER),
}
_KEYWORDS = {"and", "or", "not", "until", "implies", "iff", "xor", "norm",
             *_TEMPORAL_WORDS}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text):
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}",
                                     line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            if m.group() == "\n":
                line += 1
                line_start = m.end()
        else:
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return FormulaSyntaxError(msg, tok.line, tok.col)

    def accept(self, text):
        if self.tok.text == text and self.tok.kind in ("op", "word"):
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")

    def number(self):
        tok = self.tok
        if tok.kind != "num":
            raise self.error(f"expected a number, found {tok.text or 'end of input'!r}")
        self.i += 1
        return float(tok.text)

    def parse(self):
        f = self.expr()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected token {self.tok.text!r}")
        return f

    def expr(self):
        left = self.or_expr()
        if self.accept("implies"):
            return Implies(left, self.expr())
        if self.accept("iff"):
            return Iff(left, self.expr())
        return left

    def or_expr(self):
        f = self.xor_expr()
        while self.accept("or"):
            f = Or(f, self.xor_expr())
        return f

    def xor_expr(self):
        f = self.and_expr()
        while self.accept("xor"):
            f = Xor(f, self.and_expr())
        return f

    def and_expr(self):
        f = self.until()
        while self.accept("and"):
            f = And(f, self.until())
        return f

    def until(self):
        left = self.unary()
        if self.accept("until"):
            return Until(left, self.until())
        return left

    def unary(self):
        tok = self.tok
        if self.accept("not"):
            return Not(self.unary())
        if tok.kind == "word" and tok.text in _TEMPORAL_WORDS:
            self.i += 1
            cls, interest = _TEMPORAL_WORDS[tok.text]
            interval = FULL
            if self.tok.text == "[":
                interval = self.window()
            return cls(self.unary(), interval, interest)
        return self.atom()

    def fraction(self):
        value = self.number()
        if self.accept("%"):
            value /= 100.0
        return value

    def window(self):
        start = self.tok
        self.expect("[")
        a = self.fraction()
        self.expect(",")
        b = self.fraction()
        self.expect("]")
        try:
            return Interval(a, b)
        except FormulaError as exc:
            raise self.error(str(exc), start) from None

    def atom(self):
        tok = self.tok
        if self.accept("("):
            f = self.expr()
            self.expect(")")
            return f
        if self.accept("norm"):
            self.expect("(")
            sig = self.signal()
            self.expect(")")
            cmp_tok = self.tok
            if self.accept(">="):
                kind = "norm-geq"
            elif self.accept("<="):
                kind = "norm-leq"
            else:
                raise self.error("expected '>=' or '<='", cmp_tok)
            return Predicate(PredicateSpec(kind, sig, self.number()))
        if tok.kind == "word" and tok.text not in _KEYWORDS:
            sig = self.signal()
            self.expect("[")
            idx_tok = self.tok
            idx = self.number()
            if idx != int(idx):
                raise self.error("signal index must be an integer", idx_tok)
            self.expect("]")
            if self.accept(">="):
                sense = 1
            elif self.accept("<="):
                sense = -1
            else:
                raise self.error("expected '>=' or '<='")
            lo, hi = SIGNALS[sig]
            if not 0 <= int(idx) < hi - lo:
                raise self.error(f"index {int(idx)} out of range for signal {sig!r}",
                                 idx_tok)
            return Predicate(PredicateSpec("affine", sig, self.number(),
                                           int(idx), sense))
        raise self.error(f"unexpected token {tok.text or 'end of input'!r}")

    def signal(self):
        tok = self.tok
        if tok.kind != "word":
            raise self.error("expected a signal name")
        if tok.text not in SIGNALS:
            raise self.error(f"unknown signal {tok.text!r}; known: "
                             + ", ".join(sorted(SIGNALS)))
        self.i += 1
        return tok.text


def parse(text):
    """Parse DSL text into a :data:`Formula`."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing


def _num(x):
    return repr(float(x))


def to_text(f):
    """Render a formula back to DSL text; ``parse(to_text(f)) == f``."""
    if isinstance(f, Predicate):
        p = f.spec
        if p.kind == "affine":
            cmp = ">=" if p.sense == 1 else "<="
            return f"{p.signal}[{p.index}] {cmp} {_num(p.threshold)}"
        cmp = ">=" if p.kind == "norm-geq" else "<="
        return f"norm({p.signal}) {cmp} {_num(p.threshold)}"
    if isinstance(f, Not):
        return f"not ({to_text(f.child)})"
    if isinstance(f, TEMPORAL):
        word = "always" if isinstance(f, Always) else "eventually"
        if f.interest is Interest.AFTER:
            word += "_after"
        window = "" if f.interval.is_full else \
            f"[{_num(f.interval.a)},{_num(f.interval.b)}]"
        return f"{word}{window} ({to_text(f.child)})"
    word = _BINARY_WORD[type(f)]
    return f"({to_text(f.left)}) {word} ({to_text(f.right)})"


# ---------------------------------------------------------------------------
# desugaring


def desugar(f):
    """Rewrite ``f`` using only Predicate/Not/And/Or/Eventually/Always.

    Negations are pushed down to predicates (De Morgan, and Eventually/Always
    duality with the window and interest preserved).
    """
    return _desugar(f, False)


def _desugar(f, neg):
    if isinstance(f, Predicate):
        return Not(f) if neg else f
    if isinstance(f, Not):
        return _desugar(f.child, not neg)
    if isinstance(f, And):
        cls = Or if neg else And
        return cls(_desugar(f.left, neg), _desugar(f.right, neg))
    if isinstance(f, Or):
        cls = And if neg else Or
        return cls(_desugar(f.left, neg), _desugar(f.right, neg))
    if isinstance(f, Eventually):
        cls = Always if neg else Eventually
        return cls(_desugar(f.child, neg), f.interval, f.interest)
    if isinstance(f, Always):
        cls = Eventually if neg else Always
        return cls(_desugar(f.child, neg), f.interval, f.interest)
    if isinstance(f, Implies):
        return _desugar(Or(Not(f.left), f.right), neg)
    if isinstance(f, Iff):
        return _desugar(And(Or(Not(f.left), f.right),
                            Or(Not(f.right), f.left)), neg)
    if isinstance(f, Xor):
        return _desugar(Or(And(f.left, Not(f.right)),
                           And(Not(f.left), f.right)), neg)
    if isinstance(f, Until):
        return _desugar(Eventually(And(f.right,
                                       Always(f.left, FULL, Interest.BEFORE))),
                        neg)
    raise TypeError(f"not a formula node: {f!r}")


def is_core(f):
    if isinstance(f, Predicate):
        return True
    if isinstance(f, Not):
        return isinstance(f.child, Predicate)
    if isinstance(f, (And, Or, Eventually, Always)):
        return all(is_core(c) for c in children(f))
    return False


def validate_top(f):
    """Raise :class:`TopNodeNotFlow` unless the root is Eventually/Always."""
    if not is_core(f):
        raise FormulaError("validate_top expects a desugared (core) formula")
    if not isinstance(f, TEMPORAL):
        raise TopNodeNotFlow(kind_name(f))


def as_formula(f):
    """Accept DSL text or a formula object."""
    return parse(f) if isinstance(f, str) else f
