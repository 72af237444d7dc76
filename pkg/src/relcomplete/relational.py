"""Relational tables, their logic-fact encoding, and declarative bias files.

A database in canonical form has entity tables (a key column plus
attribute columns, no foreign keys) and associative tables (exactly two
foreign-key columns).  Every entity row becomes a fact ``e(key)``, every
associative row a fact ``r(k1,k2)``, and every observed attribute cell a
deterministic clause ``a(key) ~ val(v)``.  Missing and query cells produce
no fact; they are reported separately.

Schema files reuse the declaration syntax::

    entity(client, cliId, [age, creditScore]).
    link(hasAcc, [cliId:client, accId:account]).
    rand(age, continuous, []).
    rand(freq, discrete, [low, high]).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from .errors import (
    BiasError,
    CellAlreadyObserved,
    DanglingForeignKey,
    DataError,
    DuplicateKey,
    ModeTypeError,
    NonCanonicalTable,
    OutOfDomain,
    UnknownAttribute,
)
from .syntax.parser import parse_program
from .syntax.printer import format_number, format_term
from .syntax.program import Clause, DistClause, Program, conj_to_list
from .syntax.terms import Struct, struct

OBSERVED, MISSING, QUERY = "observed", "missing", "query"
MISSING_MARKS = frozenset({"", "-"})
QUERY_MARK = "?"
AGGREGATORS = ("avg", "sum", "max", "min", "mod", "count")


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class RandDecl:
    attribute: str
    kind: str  # continuous | discrete
    domain: tuple = ()

    @property
    def continuous(self) -> bool:
        return self.kind == "continuous"


@dataclass(frozen=True)
class EntitySchema:
    name: str
    key: str
    attributes: tuple


@dataclass(frozen=True)
class LinkSchema:
    name: str
    columns: tuple  # two column names
    entities: tuple  # two entity table names


@dataclass(frozen=True)
class TableSchema:
    entities: tuple = ()
    links: tuple = ()
    rands: Mapping = field(default_factory=dict)

    def entity(self, name: str) -> EntitySchema:
        for e in self.entities:
            if e.name == name:
                return e
        raise DataError(f"unknown entity table {name}")

    def owner(self, attribute: str) -> EntitySchema:
        """Entity table that holds ``attribute``."""
        for e in self.entities:
            if attribute in e.attributes:
                return e
        raise UnknownAttribute(f"attribute {attribute} belongs to no entity table")

    @property
    def attributes(self) -> tuple:
        return tuple(a for e in self.entities for a in e.attributes)


def _names(t, what: str) -> tuple:
    if type(t) is not tuple or not all(type(x) is str for x in t):
        raise DataError(f"{what} must be a list of names, got {format_term(t)}")
    return t


def _rands_from(decls) -> dict:
    rands = {}
    for d in decls:
        if d.head.functor != "rand":
            continue
        if len(d.head.args) != 3:
            raise BiasError(f"rand/{len(d.head.args)}: expected rand(attribute, kind, domain)")
        attr, kind, dom = d.head.args
        if kind not in ("continuous", "discrete"):
            raise BiasError(f"rand({attr}): kind must be continuous or discrete, got {format_term(kind)}")
        dom = tuple(dom) if type(dom) is tuple else ()
        if kind == "discrete" and not dom:
            raise BiasError(f"rand({attr}): a discrete attribute needs a nonempty domain")
        if len(set(dom)) != len(dom):
            raise BiasError(f"rand({attr}): repeated labels in the domain")
        rands[attr] = RandDecl(attr, kind, dom)
    return rands


def parse_schema(text: str, source: str = "<schema>") -> TableSchema:
    """Read ``entity``, ``link`` and ``rand`` declarations."""
    p = parse_program(text, source)
    entities, links = [], []
    for d in p.declarations:
        f, args = d.head.functor, d.head.args
        if f == "entity":
            if len(args) != 3:
                raise DataError("entity/3 expected: entity(table, keyColumn, [attributes])")
            entities.append(EntitySchema(args[0], args[1], _names(args[2], "entity attributes")))
        elif f == "link":
            if len(args) != 2 or type(args[1]) is not tuple or len(args[1]) != 2:
                raise NonCanonicalTable(f"link {format_term(args[0])} must have exactly two foreign-key columns")
            cols, ents = [], []
            for c in args[1]:
                if type(c) is not Struct or c.key != (":", 2):
                    raise DataError(f"link column must be column:entity, got {format_term(c)}")
                cols.append(c.args[0])
                ents.append(c.args[1])
            links.append(LinkSchema(args[0], tuple(cols), tuple(ents)))
    schema = TableSchema(tuple(entities), tuple(links), _rands_from(p.declarations))
    _check_schema(schema)
    return schema


def _check_schema(schema: TableSchema) -> None:
    names = [e.name for e in schema.entities] + [l.name for l in schema.links]
    if len(set(names)) != len(names):
        raise DataError("table names must be unique")
    seen = set()
    keys = {e.key for e in schema.entities}
    for e in schema.entities:
        for a in e.attributes:
            if a in seen:
                raise DataError(f"attribute {a} declared in two entity tables")
            if a in keys:
                raise NonCanonicalTable(f"entity table {e.name} holds foreign key {a}")
            if a not in schema.rands:
                raise UnknownAttribute(f"attribute {a} of {e.name} has no rand declaration")
            seen.add(a)
    for l in schema.links:
        for ent in l.entities:
            schema.entity(ent)


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class Cell:
    status: str
    value: object = None


@dataclass(frozen=True)
class CellRef:
    table: str
    key: str
    attribute: str

    @property
    def rv(self) -> Struct:
        return struct(self.attribute, self.key)

    def __str__(self):
        return f"{self.table}/{self.key}/{self.attribute}"


@dataclass(frozen=True)
class EntityTable:
    name: str
    key: str
    attributes: tuple
    rows: tuple  # (key, {attribute: Cell}) pairs in file order


@dataclass(frozen=True)
class LinkTable:
    name: str
    columns: tuple
    rows: tuple  # (k1, k2) pairs


@dataclass(frozen=True)
class TableBundle:
    schema: TableSchema
    entities: tuple = ()
    links: tuple = ()

    def table(self, name: str) -> EntityTable:
        for t in self.entities:
            if t.name == name:
                return t
        raise DataError(f"no entity table {name}")

    def cells(self):
        """Every attribute cell as ``(CellRef, Cell)``."""
        for t in self.entities:
            for key, row in t.rows:
                for a in t.attributes:
                    yield CellRef(t.name, key, a), row[a]

    def cell(self, ref: CellRef) -> Cell:
        for key, row in self.table(ref.table).rows:
            if key == ref.key:
                if ref.attribute not in row:
                    raise UnknownAttribute(f"{ref.table} has no attribute {ref.attribute}")
                return row[ref.attribute]
        raise DataError(f"no row {ref.key} in {ref.table}")

    def with_cells(self, updates: Mapping) -> "TableBundle":
        """Copy with some cells replaced (``CellRef -> Cell``)."""
        by_table: dict = {}
        for ref, c in updates.items():
            by_table.setdefault(ref.table, {}).setdefault(ref.key, {})[ref.attribute] = c
        tables = []
        for t in self.entities:
            if t.name not in by_table:
                tables.append(t)
                continue
            upd = by_table[t.name]
            rows = tuple((k, {**row, **upd.get(k, {})}) for k, row in t.rows)
            tables.append(replace(t, rows=rows))
        return replace(self, entities=tuple(tables))


def parse_cell(raw: str, decl: RandDecl, where: str) -> Cell:
    text = raw.strip()
    if text in MISSING_MARKS:
        return Cell(MISSING)
    if text == QUERY_MARK:
        return Cell(QUERY)
    if decl.continuous:
        try:
            v = float(text)
        except ValueError:
            raise OutOfDomain(f"{where}: {text!r} is not a number") from None
        if not math.isfinite(v):
            raise OutOfDomain(f"{where}: {text!r} is not finite")
        return Cell(OBSERVED, v)
    if text not in decl.domain:
        raise OutOfDomain(f"{where}: {text!r} not in domain {list(decl.domain)}")
    return Cell(OBSERVED, text)


def format_cell(c: Cell) -> str:
    if c.status == MISSING:
        return "-"
    if c.status == QUERY:
        return QUERY_MARK
    return format_number(c.value) if type(c.value) is float else str(c.value)


def _read_rows(text: str, name: str) -> tuple[list, list]:
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(x.strip() for x in r)]
    if not rows:
        raise DataError(f"table {name} has no header row")
    return [h.strip() for h in rows[0]], rows[1:]


def bundle_from_texts(schema: TableSchema, texts: Mapping[str, str]) -> TableBundle:
    """Build a bundle from CSV text per table name (missing tables are empty)."""
    keys = {e.key for e in schema.entities}
    entities = []
    for e in schema.entities:
        rows, seen = [], set()
        if e.name in texts:
            header, data = _read_rows(texts[e.name], e.name)
            extra = [h for h in header if h != e.key and h not in e.attributes]
            if any(h in keys for h in extra):
                raise NonCanonicalTable(f"entity table {e.name} contains foreign key columns {extra}")
            if extra:
                raise DataError(f"table {e.name}: undeclared columns {extra}")
            if e.key not in header or any(a not in header for a in e.attributes):
                raise DataError(f"table {e.name}: header {header} lacks declared columns")
            idx = {h: i for i, h in enumerate(header)}
            for lineno, r in enumerate(data, start=2):
                if len(r) != len(header):
                    raise DataError(f"{e.name}.csv:{lineno}: expected {len(header)} fields, got {len(r)}")
                k = r[idx[e.key]].strip()
                if not k or k in MISSING_MARKS or k == QUERY_MARK:
                    raise DataError(f"{e.name}.csv:{lineno}: empty key")
                if k in seen:
                    raise DuplicateKey(f"{e.name}.csv:{lineno}: duplicate key {k}")
                seen.add(k)
                cells = {
                    a: parse_cell(r[idx[a]], schema.rands[a], f"{e.name}.csv:{lineno}:{a}") for a in e.attributes
                }
                rows.append((k, cells))
        entities.append(EntityTable(e.name, e.key, e.attributes, tuple(rows)))
    ids = {t.name: {k for k, _ in t.rows} for t in entities}
    links = []
    for l in schema.links:
        rows = []
        if l.name in texts:
            header, data = _read_rows(texts[l.name], l.name)
            if sorted(header) != sorted(l.columns):
                raise NonCanonicalTable(f"link table {l.name} must have exactly columns {list(l.columns)}")
            idx = [header.index(c) for c in l.columns]
            seen = set()
            for lineno, r in enumerate(data, start=2):
                pair = tuple(r[i].strip() for i in idx)
                for col, ent, k in zip(l.columns, l.entities, pair):
                    if k not in ids[ent]:
                        raise DanglingForeignKey(f"{l.name}.csv:{lineno}:{col}: {k!r} is not a key of {ent}")
                if pair in seen:
                    raise DuplicateKey(f"{l.name}.csv:{lineno}: duplicate row {pair}")
                seen.add(pair)
                rows.append(pair)
        links.append(LinkTable(l.name, l.columns, tuple(rows)))
    return TableBundle(schema, tuple(entities), tuple(links))


def load_bundle(schema_path: str | Path, tables_dir: str | Path) -> TableBundle:
    """Load ``<table>.csv`` files for every table named in the schema."""
    schema = parse_schema(Path(schema_path).read_text(encoding="utf-8"), str(schema_path))
    tables_dir = Path(tables_dir)
    if not tables_dir.is_dir():
        raise DataError(f"{tables_dir} is not a directory")
    texts = {}
    for name in [e.name for e in schema.entities] + [l.name for l in schema.links]:
        f = tables_dir / f"{name}.csv"
        if f.exists():
            texts[name] = f.read_text(encoding="utf-8")
    if not texts:
        raise DataError(f"no table files found in {tables_dir}")
    return bundle_from_texts(schema, texts)


def bundle_to_texts(b: TableBundle) -> dict:
    out = {}
    for t in b.entities:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([t.key, *t.attributes])
        for k, row in t.rows:
            w.writerow([k, *(format_cell(row[a]) for a in t.attributes)])
        out[t.name] = buf.getvalue()
    for l in b.links:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(l.columns))
        w.writerows(l.rows)
        out[l.name] = buf.getvalue()
    return out


def write_bundle(b: TableBundle, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in bundle_to_texts(b).items():
        (out_dir / f"{name}.csv").write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# table <-> facts


@dataclass(frozen=True)
class Transformed:
    r_db: tuple  # entity and link facts (Clause)
    a_db: tuple  # observed attribute cells (DistClause with val/1)
    queries: tuple  # CellRef
    missing: tuple  # CellRef

    def program(self) -> Program:
        return Program(self.r_db + self.a_db, "<tables>")

    def observed(self) -> dict:
        """Observed cells as evidence: ground random variable -> value."""
        return {c.head: c.dist.args[0] for c in self.a_db}


def transform_tables(b: TableBundle) -> Transformed:
    r_db, a_db, queries, missing = [], [], [], []
    for t in b.entities:
        for k, _ in t.rows:
            r_db.append(Clause(struct(t.name, k)))
    for l in b.links:
        for k1, k2 in l.rows:
            r_db.append(Clause(struct(l.name, k1, k2)))
    for ref, c in b.cells():
        if c.status == OBSERVED:
            a_db.append(DistClause(ref.rv, struct("val", c.value)))
        elif c.status == QUERY:
            queries.append(ref)
        else:
            missing.append(ref)
    return Transformed(tuple(r_db), tuple(a_db), tuple(queries), tuple(missing))


def reconstruct_tables(schema: TableSchema, t: Transformed) -> TableBundle:
    """Inverse of :func:`transform_tables` (rows in fact order)."""
    values = {c.head: c.dist.args[0] for c in t.a_db}
    status = {r.rv: QUERY for r in t.queries}
    status.update({r.rv: MISSING for r in t.missing})
    entity_names = {e.name for e in schema.entities}
    keys: dict = {e.name: [] for e in schema.entities}
    link_rows: dict = {l.name: [] for l in schema.links}
    for c in t.r_db:
        if c.head.functor in entity_names:
            keys[c.head.functor].append(c.head.args[0])
        else:
            link_rows[c.head.functor].append(tuple(c.head.args))
    entities = []
    for e in schema.entities:
        rows = []
        for k in keys[e.name]:
            cells = {}
            for a in e.attributes:
                rv = struct(a, k)
                cells[a] = Cell(OBSERVED, values[rv]) if rv in values else Cell(status.get(rv, MISSING))
            rows.append((k, cells))
        entities.append(EntityTable(e.name, e.key, e.attributes, tuple(rows)))
    links = tuple(LinkTable(l.name, l.columns, tuple(link_rows[l.name])) for l in schema.links)
    return TableBundle(schema, tuple(entities), links)


def mark_query_cells(b: TableBundle, selections: Iterable) -> TableBundle:
    """Flag cells as query cells; ``selections`` holds ``(table, key, attribute)``."""
    updates = {}
    for sel in selections:
        ref = sel if isinstance(sel, CellRef) else CellRef(*sel)
        c = b.cell(ref)
        if c.status == OBSERVED:
            raise CellAlreadyObserved(f"{ref} is observed ({format_cell(c)})")
        updates[ref] = Cell(QUERY)
    return b.with_cells(updates) if updates else b


# ---------------------------------------------------------------------------
# declarative bias


@dataclass(frozen=True)
class ModeLiteral:
    functor: str
    modes: tuple  # '+' / '-' per argument


@dataclass(frozen=True)
class ModeDecl:
    target: str
    aggregator: str  # 'none' or an aggregate name
    links: tuple  # ModeLiteral for the link relations, in order
    attribute: ModeLiteral  # the attribute read by the refinement

    @property
    def text(self) -> str:
        lits = [*self.links, self.attribute]
        body = ",".join(f"{l.functor}({','.join(l.modes)})" for l in lits)
        return f"mode({self.target},{self.aggregator},{'(' + body + ')' if self.links else body})"


@dataclass(frozen=True)
class BiasSpec:
    types: Mapping = field(default_factory=dict)  # functor -> argument types
    modes: tuple = ()
    rands: Mapping = field(default_factory=dict)
    rank: tuple = ()
    background: Program = field(default_factory=Program)

    def modes_for(self, target: str) -> tuple:
        return tuple(m for m in self.modes if m.target == target)

    def type_of(self, attribute: str) -> str:
        t = self.types.get(attribute)
        if t is None or len(t) != 1:
            raise UnknownAttribute(f"attribute {attribute} needs a type declaration of arity 1")
        return t[0]


def _mode_literal(t) -> ModeLiteral:
    if type(t) is not Struct or any(a not in ("+", "-") for a in t.args):
        raise BiasError(f"mode literal must look like f(+,-), got {format_term(t)}")
    return ModeLiteral(t.functor, tuple(t.args))


def parse_bias(text: str, source: str = "<bias>") -> BiasSpec:
    """Parse type/mode/rand/rank declarations; other clauses become background."""
    p = parse_program(text, source)
    types, modes = {}, []
    for d in p.declarations:
        f, args = d.head.functor, d.head.args
        if f == "type":
            if len(args) != 1 or type(args[0]) not in (Struct, str):
                raise BiasError(f"type/1 expects a typed functor, got {format_term(d.head)}")
            t = args[0]
            types[t if type(t) is str else t.functor] = () if type(t) is str else tuple(t.args)
        elif f == "mode":
            if len(args) != 3:
                raise BiasError(f"mode/3 expected, got {format_term(d.head)}")
            target, aggr, pattern = args
            lits = [_mode_literal(x) for x in conj_to_list(pattern)]
            modes.append(ModeDecl(target, aggr, tuple(lits[:-1]), lits[-1]))
    rank = p.rank or ()
    decls = set(p.declarations)
    bias = BiasSpec(
        types=types,
        modes=tuple(modes),
        rands=_rands_from(p.declarations),
        rank=tuple(rank),
        background=Program(tuple(c for c in p.items if c not in decls), source),
    )
    check_bias(bias)
    return bias


def check_bias(bias: BiasSpec) -> None:
    """Cross-check rank, rand, type and mode declarations."""
    for a in bias.rank:
        if a not in bias.rands:
            raise UnknownAttribute(f"rank lists {a} but there is no rand({a}, ...) declaration")
    for m in bias.modes:
        check_mode(m, bias)


def mode_bindings(m: ModeDecl, bias: BiasSpec) -> list:
    """Type-consistent variable wirings of a mode pattern.

    Variables are numbered: 0 is the head entity variable, later numbers
    are introduced by ``-`` arguments in pattern order.  Each wiring lists,
    per literal, the variable numbers of its arguments.  The attribute
    literal's input is the last entry.
    """
    for lit in (*m.links, m.attribute):
        if lit.functor not in bias.types:
            raise UnknownAttribute(f"{m.text}: {lit.functor} has no type declaration")
        if len(bias.types[lit.functor]) != len(lit.modes):
            raise ModeTypeError(f"{m.text}: {lit.functor} has arity {len(bias.types[lit.functor])}")
    var_types = [bias.type_of(m.target)]
    wirings: list = [([], var_types)]
    for lit in m.links:
        arg_types = bias.types[lit.functor]
        nxt = []
        for args, vt in wirings:
            partial = [([], list(vt))]
            for mode, ty in zip(lit.modes, arg_types):
                grown = []
                for chosen, vts in partial:
                    if mode == "-":
                        grown.append((chosen + [len(vts)], vts + [ty]))
                    else:
                        grown.extend((chosen + [i], vts) for i, t in enumerate(vts) if t == ty)
                partial = grown
            nxt.extend((args + [tuple(ch)], vts) for ch, vts in partial)
        wirings = nxt
    out = []
    (mode,) = m.attribute.modes if len(m.attribute.modes) == 1 else (None,)
    if mode != "+":
        raise ModeTypeError(f"{m.text}: the attribute literal must have a single + argument")
    ty = bias.type_of(m.attribute.functor)
    for args, vts in wirings:
        for i, t in enumerate(vts):
            if t == ty:
                out.append(args + [(i,)])
    return out


def check_mode(m: ModeDecl, bias: BiasSpec) -> None:
    if m.target not in bias.rands:
        raise UnknownAttribute(f"{m.text}: target {m.target} has no rand declaration")
    if m.attribute.functor not in bias.rands:
        raise UnknownAttribute(f"{m.text}: {m.attribute.functor} has no rand declaration")
    if m.aggregator == "none" and m.links:
        raise ModeTypeError(f"{m.text}: a pattern with link relations needs an aggregation function")
    if m.aggregator != "none" and (m.aggregator not in AGGREGATORS or not m.links):
        raise ModeTypeError(f"{m.text}: aggregation {m.aggregator} needs a link relation")
    if not mode_bindings(m, bias):
        raise ModeTypeError(f"{m.text}: no type-conform way to bind the + arguments")
