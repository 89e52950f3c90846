"""Recursive-descent parser for the ASCII STL syntax.

Grammar, loosest binding first::

    formula   := conj ('|' conj)*
    conj      := until ('&' until)*
    until     := unary ('U' interval until)?
    unary     := '!' unary | ('G' | 'F') interval unary | atom
    atom      := '(' formula ')' | 'true' | 'false' | predicate
    predicate := linear ('<' | '<=' | '>' | '>=') linear
    linear    := ['-'] term (('+' | '-') term)*
    term      := NUMBER ['*' NAME] | NAME ['*' NUMBER]
    interval  := '[' NUMBER ',' NUMBER ']'

``>=`` and ``>`` are rewritten through negation so predicates only carry
``<`` or ``<=``.
"""
from __future__ import annotations

import re
from typing import List, NamedTuple

from .formula import And, Const, Eventually, Formula, Globally, Interval, Not, Or, Pred, Until

KEYWORDS = {"G", "F", "U", "true", "false"}

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|&&|\|\||[()\[\],!&|<>+\-*~])
""", re.VERBOSE)


class STLSyntaxError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        self.message, self.text, self.pos = message, text, pos
        super().__init__(f"{message} at position {pos}")

    def caret(self) -> str:
        return f"{self.text}\n{' ' * self.pos}^ {self.message}"


class Token(NamedTuple):
    kind: str
    value: str
    pos: int


def tokenize(text: str) -> List[Token]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise STLSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            value = {"&&": "&", "||": "|", "~": "!"}.get(value, value)
            out.append(Token(kind, value, pos))
        pos = m.end()
    out.append(Token("eof", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token = None):
        tok = tok or self.tok
        raise STLSyntaxError(msg, self.text, tok.pos)

    def accept(self, value: str) -> bool:
        if self.tok.kind in ("op", "name") and self.tok.value == value:
            self.i += 1
            return True
        return False

    def expect(self, value: str) -> Token:
        tok = self.tok
        if not self.accept(value):
            self.error(f"expected {value!r}, found {tok.value or 'end of input'!r}")
        return tok

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        tok = self.tok
        if tok.kind != "num":
            self.error("expected a number")
        self.i += 1
        return sign * float(tok.value)

    def parse(self) -> Formula:
        phi = self.formula()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.value!r}")
        return phi

    def formula(self) -> Formula:
        phi = self.conj()
        while self.accept("|"):
            phi = Or(phi, self.conj())
        return phi

    def conj(self) -> Formula:
        phi = self.until()
        while self.accept("&"):
            phi = And(phi, self.until())
        return phi

    def until(self) -> Formula:
        left = self.unary()
        if self.tok.kind == "name" and self.tok.value == "U":
            self.i += 1
            iv = self.interval()
            return Until(iv, left, self.until())
        return left

    def unary(self) -> Formula:
        if self.accept("!"):
            return Not(self.unary())
        tok = self.tok
        if tok.kind == "name" and tok.value in ("G", "F"):
            self.i += 1
            iv = self.interval()
            arg = self.unary()
            return Globally(iv, arg) if tok.value == "G" else Eventually(iv, arg)
        return self.atom()

    def interval(self) -> Interval:
        start = self.expect("[")
        lo = self.number()
        self.expect(",")
        hi = self.number()
        self.expect("]")
        if not 0 <= lo < hi:
            self.error(f"interval [{lo}, {hi}] must be non-singular with 0 <= lo < hi", start)
        return Interval(lo, hi)

    def atom(self) -> Formula:
        if self.accept("("):
            phi = self.formula()
            self.expect(")")
            return phi
        if self.accept("true"):
            return Const(True)
        if self.accept("false"):
            return Const(False)
        return self.predicate()

    def predicate(self) -> Formula:
        start = self.tok
        lterms, lconst = self.linear()
        op = self.tok
        if op.kind != "op" or op.value not in ("<", "<=", ">", ">="):
            self.error("expected a comparison operator")
        self.i += 1
        rterms, rconst = self.linear()
        coefs = dict(lterms)
        for name, c in rterms:
            coefs[name] = coefs.get(name, 0.0) - c
        terms = tuple(coefs.items())
        const = lconst - rconst
        if not terms and start.kind != "num" and start.value != "-":
            self.error("predicate has no signal or number", start)
        if op.value == "<":
            return Pred(terms, const, True)
        if op.value == "<=":
            return Pred(terms, const, False)
        # e >= 0  <=>  !(e < 0);   e > 0  <=>  !(e <= 0)
        return Not(Pred(terms, const, op.value == ">="))

    def linear(self) -> tuple:
        coefs: dict = {}
        const = 0.0
        sign = -1.0 if self.accept("-") else 1.0
        while True:
            name, value = self.term()
            if name is None:
                const += sign * value
            else:
                coefs[name] = coefs.get(name, 0.0) + sign * value
            if self.accept("+"):
                sign = 1.0
            elif self.accept("-"):
                sign = -1.0
            else:
                return list(coefs.items()), const

    def term(self) -> tuple:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            value = float(tok.value)
            if self.accept("*"):
                return self.name(), value
            return None, value
        if tok.kind == "name":
            name = self.name()
            if self.accept("*"):
                return name, self.number()
            return name, 1.0
        self.error("expected a signal name or number")

    def name(self) -> str:
        tok = self.tok
        if tok.kind != "name" or tok.value in KEYWORDS:
            self.error(f"expected a signal name, found {tok.value or 'end of input'!r}")
        self.i += 1
        return tok.value


def parse_stl(text: str) -> Formula:
    """Parse ``text`` into a formula tree; raises :class:`STLSyntaxError`."""
    return _Parser(text).parse()
