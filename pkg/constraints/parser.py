##################
## Recursive-descent parser for constraint files (.fcs):
##
##   model <name>
##   relation := term op term
##   op       := "<" | ">" | "=" | "~=" [ "(" delta ")" ]
##   term     := ["-"] atom
##   atom     := number | cell | "|" inner "|"
##   inner    := ["-"] (number | cell)
##   cell     := "L[" int "," int "]"
##
## One relation per line, "#" starts a comment, blank lines are ignored.
##################

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from constraints.ast import (DEFAULT_APPROX_DELTA, Abs, Cell, CellRef, ConstraintSystem, Literal, Neg, RelOp,
                             Relation, Term, is_literal)
from factor.errors import ParseError, UsageError

DEFAULT_MODEL_NAME = "model"

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)"
    r"|(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_.\-]*)"
    r"|(?P<op>[<>=~]+)"
    r"|(?P<punct>[\[\],()|\-])"
)
_OPS = {"<": RelOp.LT, ">": RelOp.GT, "=": RelOp.EQ, "~=": RelOp.APPROX}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    column: int


def tokenize(line: str, line_number: int, source: Optional[str] = None) -> List[Token]:
    tokens = []
    pos = 0
    while pos < len(line):
        match = _TOKEN.match(line, pos)
        if match is None:
            raise ParseError(line_number, pos + 1, f"unexpected character {line[pos]!r}", source)
        kind = match.lastgroup
        if kind != "ws":
            text = match.group()
            if kind == "op" and text not in _OPS:
                raise ParseError(line_number, pos + 1, f"malformed operator {text!r}", source)
            tokens.append(Token(kind, text, pos + 1))
        pos = match.end()
    return tokens


class _LineParser:
    def __init__(self, tokens: List[Token], line_number: int, line_length: int, source: Optional[str]):
        self.tokens = tokens
        self.pos = 0
        self.line = line_number
        self.end_column = line_length + 1
        self.source = source

    def error(self, message: str, token: Optional[Token] = None):
        column = token.column if token else self.end_column
        raise ParseError(self.line, column, message, self.source)

    def peek(self) -> Optional[Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> Token:
        token = self.peek()
        if token is None:
            self.error("unexpected end of line")
        self.pos += 1
        return token

    def expect(self, text: str) -> Token:
        token = self.peek()
        if token is None or token.text != text:
            self.error(f"expected {text!r}" + (f", found {token.text!r}" if token else ""), token)
        return self.take()

    def integer(self) -> int:
        token = self.peek()
        if token is None or token.kind != "number" or not token.text.isdigit():
            self.error("expected a positive integer index", token)
        self.take()
        value = int(token.text)
        if value < 1:
            self.error("indices are 1-based", token)
        return value

    def cell(self) -> Cell:
        name = self.take()
        if name.text != "L":
            self.error(f"unknown name {name.text!r}; cells are written L[i,j]", name)
        self.expect("[")
        i = self.integer()
        self.expect(",")
        j = self.integer()
        self.expect("]")
        return Cell(CellRef(i, j))

    def simple(self) -> Term:
        token = self.peek()
        if token is None:
            self.error("expected a number or a cell")
        if token.kind == "number":
            self.take()
            return Literal(float(token.text))
        if token.kind == "name":
            return self.cell()
        self.error(f"expected a number or a cell, found {token.text!r}", token)

    def inner(self) -> Term:
        token = self.peek()
        if token is not None and token.text == "-":
            self.take()
            term = self.simple()
            return Literal(-term.value) if isinstance(term, Literal) else Neg(term)
        return self.simple()

    def atom(self) -> Term:
        token = self.peek()
        if token is not None and token.text == "|":
            self.take()
            term = self.inner()
            self.expect("|")
            # |-x| is |x|
            if isinstance(term, Neg):
                term = term.term
            if isinstance(term, Literal):
                return Literal(abs(term.value))
            return Abs(term)
        return self.simple()

    def term(self) -> Term:
        token = self.peek()
        if token is not None and token.text == "-":
            self.take()
            term = self.atom()
            return Literal(-term.value) if isinstance(term, Literal) else Neg(term)
        return self.atom()

    def relation(self) -> Relation:
        lhs = self.term()
        token = self.peek()
        if token is None or token.kind != "op":
            self.error("expected one of <, >, =, ~=", token)
        self.take()
        op = _OPS[token.text]
        delta = None
        if op == RelOp.APPROX:
            delta = DEFAULT_APPROX_DELTA
            nxt = self.peek()
            if nxt is not None and nxt.text == "(":
                self.take()
                number = self.peek()
                if number is None or number.kind != "number":
                    self.error("expected a positive tolerance", number)
                self.take()
                delta = float(number.text)
                if not delta > 0:
                    self.error("tolerance must be positive", number)
                self.expect(")")
        rhs = self.term()
        extra = self.peek()
        if extra is not None:
            self.error(f"unexpected {extra.text!r} after relation; one relation per line", extra)
        if op in (RelOp.EQ, RelOp.APPROX) and not (is_literal(lhs) or is_literal(rhs)):
            self.error(f"'{token.text}' needs a number on one side", token)
        return Relation(lhs, op, rhs, delta, self.line)


def _strip_comment(line: str) -> str:
    cut = line.find("#")
    return line if cut < 0 else line[:cut]


def _oriented(relation: Relation) -> Tuple[Term, Term]:
    """(smaller, larger) sides of an order relation."""
    if relation.op == RelOp.LT:
        return relation.lhs, relation.rhs
    return relation.rhs, relation.lhs


def _check_semantics(relations: List[Relation], source: Optional[str]) -> List[Relation]:
    """Drop duplicates (with a warning) and reject contradictory pairs."""
    kept: List[Relation] = []
    orders: Dict[Tuple[Term, Term], Relation] = {}
    equalities: Dict[Term, Tuple[Relation, float]] = {}

    def duplicate(rel: Relation):
        logging.warning(f"{source or 'constraints'}:{rel.line}: duplicate relation ignored")

    for rel in relations:
        if any(rel.same_as(k) for k in kept):
            duplicate(rel)
            continue
        if rel.op in (RelOp.LT, RelOp.GT):
            low, high = _oriented(rel)
            clash = orders.get((high, low))
            if clash is not None:
                raise ParseError(rel.line, 1, f"contradicts the relation on line {clash.line}", source)
            if (low, high) in orders:
                duplicate(rel)
                continue
            orders[(low, high)] = rel
        elif rel.op == RelOp.EQ:
            side, value = (rel.rhs, rel.lhs) if is_literal(rel.lhs) else (rel.lhs, rel.rhs)
            if side in equalities:
                clash, pinned = equalities[side]
                if pinned == value.value:
                    duplicate(rel)
                    continue
                raise ParseError(rel.line, 1, f"contradicts the equality on line {clash.line}", source)
            equalities[side] = (rel, value.value)
        kept.append(rel)
    return kept


def parse(text: str, source: Optional[str] = None, default_name: str = DEFAULT_MODEL_NAME) -> ConstraintSystem:
    """
    Parse constraint text into a ConstraintSystem.

    Raises:
        ParseError: with 1-based line and column of the offending token.
    """
    name = None
    relations: List[Relation] = []
    seen_content = False
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        tokens = tokenize(line, number, source)
        if tokens[0].kind == "name" and tokens[0].text == "model":
            if seen_content:
                raise ParseError(number, tokens[0].column, "'model' must be the first statement", source)
            if len(tokens) != 2 or tokens[1].kind not in ("name", "number"):
                column = tokens[1].column if len(tokens) > 2 else len(line) + 1
                raise ParseError(number, column, "expected 'model <name>'", source)
            name = tokens[1].text
            seen_content = True
            continue
        seen_content = True
        relations.append(_LineParser(tokens, number, len(line.rstrip()), source).relation())
    relations = _check_semantics(relations, source)
    return ConstraintSystem(name or default_name, tuple(relations), text)


def parse_file(path: str) -> ConstraintSystem:
    """Parse a UTF-8 .fcs file; the model name defaults to the file stem."""
    file = Path(path)
    try:
        text = file.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read constraint file {path}: {exc.strerror}")
    return parse(text, source=file.name, default_name=file.stem)
