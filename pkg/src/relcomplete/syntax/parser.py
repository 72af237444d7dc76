"""Reader for the ``.dc`` clause language.

The concrete syntax is Prolog-like::

    age(c_1) ~ val(55).
    clientLoan(C,L) := hasAccount(C,A), hasLoan(A,L).
    creditScore(C) ~ gaussian(755.5,0.1) := clientLoan(C,L), status(L)~=appr.

``:=``, ``:-``, ``<-`` and ``←`` are all accepted as the implication
arrow.  Numbers are read as floats.  ``%`` starts a line comment.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ArityError, DCSyntaxError
from .printer import INFIX, PREFIX
from .program import Clause, DistClause, Program, conj_to_list
from .terms import Struct, Var

_SYMBOL_CHARS = set("+-*/\\^<>=~:.?@#&$")
_PUNCT = set("()[],|")
ARROWS = {":=", ":-", "<-"}


@dataclass
class Token:
    kind: str  # atom, var, num, str, punct, end, eof
    value: object
    line: int
    col: int
    layout_before: bool


class _Lexer:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source
        self.i = 0
        self.line = 1
        self.col = 1

    def error(self, msg, line=None, col=None):
        raise DCSyntaxError(msg, line or self.line, col or self.col, self.source)

    def _advance(self, n=1):
        for _ in range(n):
            if self.text[self.i] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.i += 1

    def _skip_layout(self) -> bool:
        skipped = False
        text = self.text
        while self.i < len(text):
            c = text[self.i]
            if c.isspace():
                self._advance()
                skipped = True
            elif c == "%":
                while self.i < len(text) and text[self.i] != "\n":
                    self._advance()
                skipped = True
            elif text.startswith("/*", self.i):
                end = text.find("*/", self.i + 2)
                if end < 0:
                    self.error("unterminated block comment")
                self._advance(end + 2 - self.i)
                skipped = True
            else:
                break
        return skipped

    def tokens(self):
        text = self.text
        while True:
            layout = self._skip_layout()
            if self.i >= len(text):
                yield Token("eof", None, self.line, self.col, layout)
                return
            line, col = self.line, self.col
            c = text[self.i]
            if c.isdigit():
                j = self.i
                while j < len(text) and text[j].isdigit():
                    j += 1
                if j + 1 < len(text) and text[j] == "." and text[j + 1].isdigit():
                    j += 1
                    while j < len(text) and text[j].isdigit():
                        j += 1
                if j < len(text) and text[j] in "eE":
                    k = j + 1
                    if k < len(text) and text[k] in "+-":
                        k += 1
                    if k < len(text) and text[k].isdigit():
                        while k < len(text) and text[k].isdigit():
                            k += 1
                        j = k
                lexeme = text[self.i:j]
                self._advance(j - self.i)
                yield Token("num", float(lexeme), line, col, layout)
            elif c.isalpha() or c == "_":
                j = self.i
                while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                name = text[self.i:j]
                self._advance(j - self.i)
                kind = "var" if (name[0].isupper() or name[0] == "_") else "atom"
                yield Token(kind, name, line, col, layout)
            elif c == "'":
                j = self.i + 1
                buf = []
                while True:
                    if j >= len(text) or text[j] == "\n":
                        self.error("unterminated quoted atom", line, col)
                    if text[j] == "\\" and j + 1 < len(text):
                        buf.append(text[j + 1])
                        j += 2
                    elif text[j] == "'":
                        if j + 1 < len(text) and text[j + 1] == "'":
                            buf.append("'")
                            j += 2
                        else:
                            j += 1
                            break
                    else:
                        buf.append(text[j])
                        j += 1
                self._advance(j - self.i)
                yield Token("qatom", "".join(buf), line, col, layout)
            elif c == "←":
                self._advance()
                yield Token("atom", ":=", line, col, layout)
            elif c in _PUNCT:
                self._advance()
                yield Token("punct", c, line, col, layout)
            elif c in _SYMBOL_CHARS:
                if c == "." and (self.i + 1 >= len(text) or text[self.i + 1].isspace() or text[self.i + 1] == "%"):
                    self._advance()
                    yield Token("end", ".", line, col, layout)
                    continue
                j = self.i
                while j < len(text) and text[j] in _SYMBOL_CHARS:
                    j += 1
                # a trailing '.' followed by layout is the clause terminator
                if j - self.i > 1 and text[j - 1] == "." and (j >= len(text) or text[j].isspace() or text[j] == "%"):
                    j -= 1
                lexeme = text[self.i:j]
                self._advance(j - self.i)
                yield Token("atom", lexeme, line, col, layout)
            else:
                self.error(f"unexpected character {c!r}")


class _Parser:
    def __init__(self, text: str, source: str):
        self.source = source
        self.toks = list(_Lexer(text, source).tokens())
        self.k = 0
        self._anon = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.k]

    def peek(self, n=1) -> Token:
        return self.toks[min(self.k + n, len(self.toks) - 1)]

    def error(self, msg, tok: Token | None = None):
        tok = tok or self.tok
        raise DCSyntaxError(msg, tok.line, tok.col, self.source)

    def next(self) -> Token:
        t = self.tok
        self.k += 1
        return t

    def expect_punct(self, ch):
        t = self.tok
        if t.kind != "punct" or t.value != ch:
            self.error(f"expected {ch!r}")
        self.k += 1

    # -- operator helpers ---------------------------------------------------
    def _infix(self, tok: Token):
        if tok.kind == "punct" and tok.value == ",":
            return ",", INFIX[","]
        if tok.kind == "atom" and tok.value in INFIX:
            return tok.value, INFIX[tok.value]
        if tok.kind == "atom" and tok.value in ARROWS:
            return tok.value, (1200, "xfx")
        return None

    def _starts_term(self, tok: Token) -> bool:
        if tok.kind in ("num", "var", "qatom"):
            return True
        if tok.kind == "punct":
            return tok.value in "(["
        if tok.kind == "atom":
            return self._infix(tok) is None or tok.value in PREFIX
        return False

    # -- grammar --------------------------------------------------------------
    def parse(self, max_prio: int):
        left, left_prio = self.primary(max_prio)
        while True:
            op = self._infix(self.tok)
            if op is None:
                break
            name, (p, kind) = op
            lp = p - 1 if kind[0] == "x" else p
            rp = p - 1 if kind[2] == "x" else p
            if p > max_prio or left_prio > lp:
                break
            self.next()
            right = self.parse(rp)
            left = Struct(name, (left, right))
            left_prio = p
        return left

    def primary(self, max_prio: int):
        t = self.next()
        if t.kind == "num":
            return t.value, 0
        if t.kind == "var":
            if t.value == "_":
                self._anon += 1
                return Var(f"_G{self._anon}"), 0
            return Var(t.value), 0
        if t.kind == "punct":
            if t.value == "(":
                inner = self.parse(1200)
                self.expect_punct(")")
                return inner, 0
            if t.value == "[":
                return self._list(), 0
            self.error(f"unexpected {t.value!r}", t)
        if t.kind in ("atom", "qatom"):
            name = t.value
            nxt = self.tok
            if nxt.kind == "punct" and nxt.value == "(" and not nxt.layout_before:
                self.next()
                args = [self.parse(999)]
                while self.tok.kind == "punct" and self.tok.value == ",":
                    self.next()
                    args.append(self.parse(999))
                self.expect_punct(")")
                return Struct(name, tuple(args)), 0
            if t.kind == "atom":
                if name == "-" and nxt.kind == "num" and not nxt.layout_before:
                    self.next()
                    return -nxt.value, 0
                if name == "+" and nxt.kind == "num" and not nxt.layout_before:
                    self.next()
                    return nxt.value, 0
                if name in PREFIX and self._starts_term(nxt):
                    p, kind = PREFIX[name]
                    if p > max_prio:
                        p = 999
                    arg_prio = p if kind == "fy" else p - 1
                    arg = self.parse(arg_prio)
                    return Struct(name, (arg,)), p
                if name in ARROWS or name in INFIX:
                    # operator used as an atom, e.g. mode(+,-)
                    return name, 0
            return name, 0
        if t.kind == "end":
            self.error("unexpected end of clause", t)
        self.error("unexpected end of input", t)

    def _list(self):
        if self.tok.kind == "punct" and self.tok.value == "]":
            self.next()
            return ()
        items = [self.parse(999)]
        while self.tok.kind == "punct" and self.tok.value == ",":
            self.next()
            items.append(self.parse(999))
        if self.tok.kind == "punct" and self.tok.value == "|":
            self.error("list tails are not supported")
        self.expect_punct("]")
        return tuple(items)

    def clauses(self):
        out = []
        while self.tok.kind != "eof":
            start = self.tok
            term = self.parse(1200)
            if self.tok.kind != "end":
                self.error("operator expected" if self.tok.kind != "eof" else "missing '.' at end of clause")
            self.next()
            out.append(self._to_clause(term, start))
        return out

    def _to_clause(self, term, start: Token):
        pos = (start.line, start.col)
        if type(term) is Struct and term.functor in ARROWS and len(term.args) == 2:
            head, body = term.args
            body = tuple(conj_to_list(body))
        else:
            head, body = term, ()
        if type(head) is Struct and head.functor == "~" and len(head.args) == 2:
            rv, dist = head.args
            _check_head(rv, start, self.source)
            return DistClause(rv, dist, body, pos)
        _check_head(head, start, self.source)
        return Clause(head, body, pos)


def _check_head(h, tok: Token, source: str):
    if type(h) is Var or type(h) is float or type(h) is tuple:
        raise DCSyntaxError(f"invalid clause head {h!r}", tok.line, tok.col, source)
    if type(h) is Struct and h.functor in ("\\+", ","):
        raise DCSyntaxError("negated literals are only allowed in clause bodies", tok.line, tok.col, source)


_BUILTIN_GOALS = {
    ("~=", 2), ("==", 2), ("\\==", 2), ("=", 2), ("\\+", 1), ("true", 0),
    ("avg", 3), ("sum", 3), ("max", 3), ("min", 3), ("mod", 3), ("count", 3),
    ("linear", 3), ("logistic", 3), ("softmax", 3),
}


def _collect_predicates(goal, out: list):
    """(name, arity, is_rv) triples for user predicates and random variables."""
    if type(goal) is str:
        if (goal, 0) not in _BUILTIN_GOALS:
            out.append((goal, 0))
        return
    if type(goal) is not Struct:
        return
    k = goal.key
    if k == ("\\+", 1):
        _collect_predicates(goal.args[0], out)
    elif k == (",", 2):
        _collect_predicates(goal.args[0], out)
        _collect_predicates(goal.args[1], out)
    elif k == ("~=", 2):
        rv = goal.args[0]
        if type(rv) is Struct:
            out.append(rv.key)
        elif type(rv) is str:
            out.append((rv, 0))
    elif k in (("avg", 3), ("sum", 3), ("max", 3), ("min", 3), ("mod", 3), ("count", 3)):
        _collect_predicates(goal.args[1], out)
    elif k not in _BUILTIN_GOALS:
        out.append(k)


def check_arities(items, source: str = "<string>"):
    seen: dict[str, tuple[int, tuple]] = {}
    for c in items:
        preds = []
        if type(c) is Clause and c.is_fact and type(c.head) is Struct and c.head.functor in (
            "type", "mode", "rand", "rank", "entity", "link"
        ):
            continue
        preds.append(c.key)
        for b in c.body:
            _collect_predicates(b, preds)
        for name, arity in preds:
            prev = seen.get(name)
            if prev is None:
                seen[name] = (arity, c.pos)
            elif prev[0] != arity:
                line, col = c.pos or (0, 0)
                raise ArityError(
                    f"{name} used with arity {arity} and {prev[0]}", line, col, source
                )


def parse_program(text: str, source: str = "<string>") -> Program:
    """Parse ``.dc`` source into a :class:`Program`, preserving clause order."""
    items = _Parser(text, source).clauses()
    check_arities(items, source)
    return Program.from_items(items, source)


def parse_term(text: str):
    """Parse a single term (no trailing ``.`` required)."""
    p = _Parser(text.strip().removesuffix(".") + " .", "<term>")
    t = p.parse(1200)
    if p.tok.kind != "end":
        p.error("trailing input after term")
    return t


def parse_goal(text: str) -> list:
    """Parse a conjunctive goal into a list of literals."""
    text = text.strip()
    if not text:
        return []
    return conj_to_list(parse_term(text))
