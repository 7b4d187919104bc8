"""Lexer, parser and pretty-printer for the reward-program language.

A program is a list of weighted sub-reward definitions::

    vel = exp(-square(base_lin_vel.x - command.x) / 0.25)
    bh  = 2.0 * exp(-square(base_height - 0.30) / 0.01)
    ls  = match_phase(foot_contacts, trot)

A definition whose right-hand side is ``<number> * <expr>`` carries that
number as its weight; otherwise the weight is 1.  See docs/grammar.ebnf.
"""
import math
import re
from dataclasses import dataclass, field

from ..errors import ParseError, UnknownFunction

# name -> (min args, max args)
BUILTINS = {
    "abs": (1, 1),
    "exp": (1, 1),
    "square": (1, 1),
    "clip": (3, 3),
    "min": (1, 2),
    "max": (1, 2),
    "sum": (1, 1),
    "norm": (1, 1),
    "match_phase": (2, 2),
}

COMPONENTS = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class Span:
    line: int
    column: int


def _span():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Num:
    value: float
    span: Span = _span()


@dataclass(frozen=True)
class Vec:
    items: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Name:
    id: str
    span: Span = _span()


@dataclass(frozen=True)
class TemplateRef:
    """Gait template name; only legal as the second argument of match_phase."""
    name: str
    span: Span = _span()


@dataclass(frozen=True)
class Attr:
    base: object
    comp: str
    span: Span = _span()


@dataclass(frozen=True)
class Index:
    base: object
    index: int
    span: Span = _span()


@dataclass(frozen=True)
class Unary:
    op: str
    operand: object
    span: Span = _span()


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object
    span: Span = _span()


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class SubReward:
    name: str
    expr: object
    weight: float = 1.0
    span: Span = _span()


@dataclass(frozen=True)
class RewardProgram:
    name: str
    sub_rewards: tuple
    source_text: str = field(default="", compare=False)
    provenance: str = field(default="generated", compare=False)

    @property
    def names(self):
        return [sub.name for sub in self.sub_rewards]

    @property
    def weights(self):
        return {sub.name: sub.weight for sub in self.sub_rewards}

    def __getitem__(self, name):
        for sub in self.sub_rewards:
            if sub.name == name:
                return sub
        raise KeyError(name)

    def with_weights(self, weights):
        subs = tuple(SubReward(sub.name, sub.expr, float(weights.get(sub.name, sub.weight)), sub.span)
                     for sub in self.sub_rewards)
        prog = RewardProgram(self.name, subs, provenance=self.provenance)
        return RewardProgram(self.name, subs, to_source(prog), self.provenance)


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>(?:\d+\.\d+|\d+|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"\n]*"|'[^'\n]*')
  | (?P<op>[-+*/()\[\],.=])
""", re.VERBOSE)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(source):
    tokens = []
    pos, line, line_start = 0, 1, 0
    depth = 0
    while pos < len(source):
        found = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if found is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = found.lastgroup
        text = found.group()
        if kind == "newline":
            if depth == 0:
                tokens.append(Token("newline", text, line, col))
            line += 1
            line_start = found.end()
        elif kind == "op":
            if text in "([":
                depth += 1
            elif text in ")]":
                depth = max(depth - 1, 0)
            tokens.append(Token(text, text, line, col))
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, col))
        pos = found.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source):
        self.toks = tokenize(source)
        self.cursor = 0

    @property
    def tok(self):
        return self.toks[self.cursor]

    def advance(self):
        tok = self.toks[self.cursor]
        self.cursor += 1
        return tok

    def expect(self, kind, what=None):
        tok = self.tok
        if tok.kind != kind:
            found = tok.text or tok.kind
            raise ParseError(f"expected {what or kind!r}, found {found!r}", tok.line, tok.column)
        return self.advance()

    def skip_newlines(self):
        while self.tok.kind == "newline":
            self.advance()

    def program(self):
        defs = []
        self.skip_newlines()
        while self.tok.kind != "eof":
            defs.append(self.sub_def())
            if self.tok.kind not in ("newline", "eof"):
                tok = self.tok
                raise ParseError(f"unexpected {tok.text!r} after definition", tok.line, tok.column)
            self.skip_newlines()
        if not defs:
            raise ParseError("empty program", 1, 1)
        return defs

    def sub_def(self):
        name_tok = self.expect("ident", "sub-reward name")
        self.expect("=")
        expr = self.expr()
        span = Span(name_tok.line, name_tok.column)
        if isinstance(expr, Bin) and expr.op == "*" and isinstance(expr.left, Num):
            return SubReward(name_tok.text, expr.right, expr.left.value, span)
        return SubReward(name_tok.text, expr, 1.0, span)

    def expr(self):
        node = self.term()
        while self.tok.kind in ("+", "-"):
            tok = self.advance()
            node = Bin(tok.text, node, self.term(), Span(tok.line, tok.column))
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind in ("*", "/"):
            tok = self.advance()
            node = Bin(tok.text, node, self.unary(), Span(tok.line, tok.column))
        return node

    def unary(self):
        if self.tok.kind == "-":
            tok = self.advance()
            operand = self.unary()
            if isinstance(operand, Num):
                return Num(-operand.value, Span(tok.line, tok.column))
            return Unary("-", operand, Span(tok.line, tok.column))
        return self.postfix()

    def postfix(self):
        node = self.primary()
        while self.tok.kind in (".", "["):
            tok = self.advance()
            if tok.kind == ".":
                comp = self.expect("ident", "component name")
                node = Attr(node, comp.text, Span(tok.line, tok.column))
            else:
                idx = self.expect("number", "integer index")
                if not re.fullmatch(r"\d+", idx.text):
                    raise ParseError(f"index must be a non-negative integer, got {idx.text}",
                                     idx.line, idx.column)
                self.expect("]")
                node = Index(node, int(idx.text), Span(tok.line, tok.column))
        return node

    def primary(self):
        tok = self.tok
        span = Span(tok.line, tok.column)
        if tok.kind == "number":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise ParseError(f"numeric literal {tok.text} out of range", tok.line, tok.column)
            return Num(value, span)
        if tok.kind == "ident":
            self.advance()
            if self.tok.kind == "(":
                return self.call(tok.text, span)
            return Name(tok.text, span)
        if tok.kind == "string":
            self.advance()
            return TemplateRef(tok.text[1:-1], span)
        if tok.kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "[":
            self.advance()
            items = [self.expr()]
            while self.tok.kind == ",":
                self.advance()
                items.append(self.expr())
            self.expect("]")
            return Vec(tuple(items), span)
        raise ParseError(f"unexpected {tok.text or tok.kind!r}", tok.line, tok.column)

    def call(self, func, span):
        if func not in BUILTINS:
            raise UnknownFunction(f"unknown function {func!r}", span.line, span.column)
        self.expect("(")
        args = []
        if self.tok.kind != ")":
            args.append(self.arg(func, 0))
            while self.tok.kind == ",":
                self.advance()
                args.append(self.arg(func, len(args)))
        self.expect(")")
        return Call(func, tuple(args), span)

    def arg(self, func, position):
        node = self.expr()
        if func == "match_phase" and position == 1 and isinstance(node, Name):
            return TemplateRef(node.id, node.span)
        return node


def parse(source, name="program", provenance="generated"):
    """Parse program text into a :class:`RewardProgram`."""
    defs = _Parser(source).program()
    seen = set()
    for defn in defs:
        if defn.name in seen:
            raise ParseError(f"duplicate sub-reward {defn.name!r}", defn.span.line, defn.span.column)
        seen.add(defn.name)
    return RewardProgram(name, tuple(defs), source, provenance)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(value):
    return repr(float(value))


def to_expr_source(node, parent_prec=0, right=False):
    if isinstance(node, Num):
        text = _fmt_num(node.value)
        if parent_prec > 3 and math.copysign(1.0, node.value) < 0:
            return f"({text})"
        return text
    if isinstance(node, Vec):
        return "[" + ", ".join(to_expr_source(item) for item in node.items) + "]"
    if isinstance(node, Name):
        return node.id
    if isinstance(node, TemplateRef):
        return node.name
    if isinstance(node, Attr):
        return f"{to_expr_source(node.base, 4)}.{node.comp}"
    if isinstance(node, Index):
        return f"{to_expr_source(node.base, 4)}[{node.index}]"
    if isinstance(node, Unary):
        text = "-" + to_expr_source(node.operand, 3)
        return f"({text})" if parent_prec > 3 else text
    if isinstance(node, Bin):
        prec = _PREC[node.op]
        text = f"{to_expr_source(node.left, prec)} {node.op} {to_expr_source(node.right, prec, right=True)}"
        if prec < parent_prec or (right and prec == parent_prec):
            return f"({text})"
        return text
    if isinstance(node, Call):
        return f"{node.func}(" + ", ".join(to_expr_source(arg) for arg in node.args) + ")"
    raise TypeError(f"not an expression node: {node!r}")


def to_source(program):
    """Pretty-print a program; ``parse(to_source(p))`` reproduces ``p``'s AST."""
    lines = []
    for sub in program.sub_rewards:
        implicit_weight = isinstance(sub.expr, Bin) and sub.expr.op == "*" and isinstance(sub.expr.left, Num)
        if sub.weight == 1.0 and not implicit_weight:
            lines.append(f"{sub.name} = {to_expr_source(sub.expr)}")
        else:
            lines.append(f"{sub.name} = {_fmt_num(sub.weight)} * {to_expr_source(sub.expr, 2, right=True)}")
    return "\n".join(lines) + "\n"
