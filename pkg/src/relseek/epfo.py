"""Existential positive first-order queries over a knowledge graph.

Queries are ASTs of and/or over relation atoms r(X, Y), where X is an
anchor variable or a bound variable and Y is a bound variable or the
target.  The module provides DNF normalization, validity checking on the
per-conjunct dependency graph, a brute-force denotation evaluator (the
correctness oracle for the rest of the engine), constructive extraction of
relation sequences that cover the denotation, and a seeded random query
generator for property testing.

Text form is a small s-expression grammar, one query per line with an
adjacent JSON anchor-binding map:

    (and (directed ?d ?v) (starred ?v ?answer))\t{"?d": "George_Lucas"}

Variables start with "?"; the target variable is "?answer" by default;
variables bound in the JSON map are the anchors.  Universal
quantification and negation are rejected at parse time.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from .coalesce import EntitySet, RelationSeq
from .kg import SELF_ID, KnowledgeGraph

DEFAULT_TARGET = "?answer"


class QueryParseError(ValueError):
    """Raised for malformed query text or unresolvable names."""


@dataclass(frozen=True)
class Atom:
    rel: int
    src: str
    dst: str

    def key(self) -> tuple[int, str, str]:
        return (self.rel, self.src, self.dst)


@dataclass(frozen=True)
class And:
    parts: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Expr", ...]


Expr = Union[Atom, And, Or]

Conjunct = tuple[Atom, ...]


def _atoms_of(expr: Expr) -> Iterator[Atom]:
    if isinstance(expr, Atom):
        yield expr
    else:
        for p in expr.parts:
            yield from _atoms_of(p)


@dataclass(frozen=True)
class EpfoQuery:
    target: str
    anchors: dict[str, int]
    expr: Expr

    def atoms(self) -> list[Atom]:
        return list(_atoms_of(self.expr))

    def bound_vars(self) -> set[str]:
        out: set[str] = set()
        for a in self.atoms():
            for v in (a.src, a.dst):
                if v != self.target and v not in self.anchors:
                    out.add(v)
        return out


@dataclass(frozen=True)
class DnfQuery:
    target: str
    anchors: dict[str, int]
    conjuncts: tuple[Conjunct, ...]

    @property
    def n_or(self) -> int:
        return len(self.conjuncts) - 1


@dataclass
class ConjunctReport:
    index: int
    ok: bool
    reason: str | None = None


@dataclass
class ValidityReport:
    ok: bool
    conjuncts: list[ConjunctReport] = field(default_factory=list)

    def first_reason(self) -> str | None:
        for c in self.conjuncts:
            if not c.ok:
                return f"conjunct {c.index}: {c.reason}"
        return None


# ----------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _read_sexpr(tokens: list[str], pos: int):
    if pos >= len(tokens):
        raise QueryParseError("unexpected end of query text")
    tok = tokens[pos]
    if tok == "(":
        items = []
        pos += 1
        while pos < len(tokens) and tokens[pos] != ")":
            item, pos = _read_sexpr(tokens, pos)
            items.append(item)
        if pos >= len(tokens):
            raise QueryParseError("unbalanced parentheses")
        return items, pos + 1
    if tok == ")":
        raise QueryParseError("unexpected ')'")
    return tok, pos + 1


_REJECTED_HEADS = {
    "forall": "universal quantification is not supported",
    "all": "universal quantification is not supported",
    "every": "universal quantification is not supported",
    "not": "negation is not supported",
    "neg": "negation is not supported",
}


def _build_expr(tree, g: KnowledgeGraph) -> Expr:
    if not isinstance(tree, list) or not tree:
        raise QueryParseError(f"expected (op ...) form, got {tree!r}")
    head = tree[0]
    if not isinstance(head, str):
        raise QueryParseError("operator or relation name expected")
    if head in _REJECTED_HEADS:
        raise QueryParseError(_REJECTED_HEADS[head])
    if head in ("and", "or"):
        parts = tuple(_build_expr(c, g) for c in tree[1:])
        if not parts:
            raise QueryParseError(f"({head}) needs at least one subexpression")
        return And(parts) if head == "and" else Or(parts)
    if len(tree) != 3:
        raise QueryParseError(f"atom must be (relation var var), got {tree!r}")
    rel_name, x, y = tree
    if not isinstance(x, str) or not isinstance(y, str):
        raise QueryParseError("atom arguments must be variable tokens")
    if not x.startswith("?") or not y.startswith("?"):
        raise QueryParseError(
            "atom arguments must be ?-variables; bind entities through the anchor map"
        )
    try:
        rel = g.relation_id(rel_name)
    except KeyError:
        raise QueryParseError(f"unknown relation {rel_name!r}") from None
    if rel == SELF_ID:
        raise QueryParseError("the self relation cannot appear in queries")
    return Atom(rel=rel, src=x, dst=y)


def parse_query(
    text: str,
    bindings: dict[str, str],
    g: KnowledgeGraph,
    target: str = DEFAULT_TARGET,
) -> EpfoQuery:
    """Parse one s-expression query with its anchor bindings."""
    tokens = _tokenize(text)
    tree, pos = _read_sexpr(tokens, 0)
    if pos != len(tokens):
        raise QueryParseError("trailing tokens after query")
    expr = _build_expr(tree, g)
    anchors: dict[str, int] = {}
    for var, entity in bindings.items():
        if not var.startswith("?"):
            raise QueryParseError(f"anchor variable {var!r} must start with '?'")
        try:
            anchors[var] = g.entity_id(entity)
        except KeyError:
            raise QueryParseError(f"unknown entity {entity!r}") from None
    if target in anchors:
        raise QueryParseError("the target variable cannot be an anchor")
    if not any(a.dst == target for a in _atoms_of(expr)):
        raise QueryParseError(f"target {target!r} never appears as an atom object")
    return EpfoQuery(target=target, anchors=anchors, expr=expr)


def load_query_file(
    path, g: KnowledgeGraph, target: str = DEFAULT_TARGET
) -> list[EpfoQuery]:
    """One query per line: s-expression TAB json-anchor-map."""
    out: list[EpfoQuery] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise QueryParseError(
                    f"{path}:{lineno}: expected 'query<TAB>bindings-json'"
                )
            try:
                bindings = json.loads(parts[1])
            except json.JSONDecodeError as e:
                raise QueryParseError(f"{path}:{lineno}: bad bindings JSON: {e}") from None
            try:
                out.append(parse_query(parts[0], bindings, g, target=target))
            except QueryParseError as e:
                raise QueryParseError(f"{path}:{lineno}: {e}") from None
    return out


# ----------------------------------------------------------------------
# DNF
# ----------------------------------------------------------------------


def to_dnf(q: EpfoQuery) -> DnfQuery:
    """Distribute conjunction over disjunction; deterministic conjunct order."""

    def expand(expr: Expr) -> list[tuple[Atom, ...]]:
        if isinstance(expr, Atom):
            return [(expr,)]
        if isinstance(expr, Or):
            out: list[tuple[Atom, ...]] = []
            for p in expr.parts:
                out.extend(expand(p))
            return out
        combos = [expand(p) for p in expr.parts]
        return [
            tuple(itertools.chain.from_iterable(c)) for c in itertools.product(*combos)
        ]

    conjuncts = []
    for atoms in expand(q.expr):
        dedup = sorted(set(atoms), key=Atom.key)
        conjuncts.append(tuple(dedup))
    unique = sorted(set(conjuncts), key=lambda c: tuple(a.key() for a in c))
    return DnfQuery(target=q.target, anchors=dict(q.anchors), conjuncts=tuple(unique))


# ----------------------------------------------------------------------
# validity
# ----------------------------------------------------------------------


def _conjunct_graph(conj: Conjunct):
    nodes: set[str] = set()
    fwd: dict[str, list[Atom]] = {}
    indeg: dict[str, int] = {}
    for a in conj:
        nodes.update((a.src, a.dst))
    for v in nodes:
        fwd[v] = []
        indeg[v] = 0
    for a in conj:
        fwd[a.src].append(a)
        indeg[a.dst] += 1
    return nodes, fwd, indeg


def _topo_order(nodes: set[str], fwd, indeg) -> list[str] | None:
    order: list[str] = []
    pending = dict(indeg)
    queue = sorted(v for v in nodes if pending[v] == 0)
    while queue:
        v = queue.pop(0)
        order.append(v)
        added = []
        for a in fwd[v]:
            pending[a.dst] -= 1
            if pending[a.dst] == 0:
                added.append(a.dst)
        if added:
            queue = sorted(set(queue) | set(added))
    if len(order) != len(nodes):
        return None  # cycle
    return order


def _check_conjunct(conj: Conjunct, anchors: dict[str, int], target: str) -> str | None:
    if not conj:
        return "empty conjunct"
    for a in conj:
        if a.src == a.dst:
            return f"atom endpoints identical ({a.src})"
    nodes, fwd, indeg = _conjunct_graph(conj)
    order = _topo_order(nodes, fwd, indeg)
    if order is None:
        return "dependency graph has a cycle"
    for v in nodes:
        if indeg[v] == 0 and v not in anchors:
            return f"source {v} is not an anchor"
    if target not in nodes:
        return "target does not appear in conjunct"
    sinks = [v for v in nodes if not fwd[v]]
    if sinks != [target]:
        return "target is not the unique sink"
    # every bound variable must lie on an anchor-to-target path
    fwd_reach: set[str] = set(v for v in nodes if v in anchors)
    for v in order:
        if v in fwd_reach:
            for a in fwd[v]:
                fwd_reach.add(a.dst)
    back_reach: set[str] = {target}
    for v in reversed(order):
        if any(a.dst in back_reach for a in fwd[v]):
            back_reach.add(v)
    for v in nodes:
        if v in anchors or v == target:
            continue
        if v not in fwd_reach or v not in back_reach:
            return f"bound variable {v} not on an anchor-to-target path"
    return None


def validate(q: DnfQuery) -> ValidityReport:
    """Check each conjunct's dependency graph: acyclic, sources are
    anchors, the target is the unique sink, and every bound variable lies
    on an anchor-to-target path.  Reports the first violation per
    conjunct."""
    reports = []
    for i, conj in enumerate(q.conjuncts):
        reason = _check_conjunct(conj, q.anchors, q.target)
        reports.append(ConjunctReport(index=i, ok=reason is None, reason=reason))
    return ValidityReport(ok=all(r.ok for r in reports), conjuncts=reports)


def _require_valid(q: DnfQuery) -> None:
    report = validate(q)
    if not report.ok:
        raise ValueError(f"invalid query: {report.first_reason()}")


# ----------------------------------------------------------------------
# evaluation (brute-force oracle)
# ----------------------------------------------------------------------


def _conjunct_atom_order(conj: Conjunct) -> list[Atom]:
    nodes, fwd, indeg = _conjunct_graph(conj)
    order = _topo_order(nodes, fwd, indeg)
    assert order is not None, "validated conjunct cannot be cyclic"
    pos = {v: i for i, v in enumerate(order)}
    return sorted(conj, key=lambda a: (pos[a.dst], a.key()))


def _conjunct_satisfiable(
    g: KnowledgeGraph,
    atoms: list[Atom],
    assign: dict[str, int],
    i: int = 0,
) -> bool:
    """Exhaustive backtracking over bound-variable assignments.

    Atoms are pre-sorted so each atom's subject is already assigned when
    it is reached (anchors and the target are assigned up front)."""
    if i == len(atoms):
        return True
    a = atoms[i]
    sv = assign[a.src]
    if a.dst in assign:
        return g.has_edge(sv, a.rel, assign[a.dst]) and _conjunct_satisfiable(
            g, atoms, assign, i + 1
        )
    for o in g.out_neighbors(sv, a.rel):
        assign[a.dst] = int(o)
        if _conjunct_satisfiable(g, atoms, assign, i + 1):
            del assign[a.dst]
            return True
    assign.pop(a.dst, None)
    return False


def evaluate(g: KnowledgeGraph, q: DnfQuery) -> EntitySet:
    """Brute-force denotation: for each entity v and each conjunct, check
    satisfiability with the target bound to v; union over conjuncts.

    This is the ground-truth oracle; it has no efficiency goals beyond
    small graphs."""
    _require_valid(q)
    found: set[int] = set()
    for conj in q.conjuncts:
        atoms = _conjunct_atom_order(conj)
        base = {v: e for v, e in q.anchors.items()}
        for v in range(g.num_entities):
            if v in found:
                continue
            assign = dict(base)
            assign[q.target] = v
            if _conjunct_satisfiable(g, atoms, assign):
                found.add(v)
    return EntitySet(found)


# ----------------------------------------------------------------------
# cover sequences
# ----------------------------------------------------------------------


def cover_sequences(q: DnfQuery) -> list[RelationSeq]:
    """One relation sequence per conjunct whose reach covers the conjunct's
    denotation: the lexicographically smallest anchor-to-target label path
    in the dependency graph.  At most n_or + 1 sequences are returned."""
    _require_valid(q)
    out: list[RelationSeq] = []
    for conj in q.conjuncts:
        _, fwd, _ = _conjunct_graph(conj)
        best: tuple[int, ...] | None = None

        def walk(v: str, labels: tuple[int, ...]) -> None:
            nonlocal best
            if v == q.target:
                if best is None or labels < best:
                    best = labels
                return
            for a in sorted(fwd[v], key=Atom.key):
                walk(a.dst, labels + (a.rel,))

        for anchor_var in sorted(v for v in fwd if v in q.anchors):
            walk(anchor_var, ())
        assert best is not None, "validated conjunct must connect an anchor to the target"
        seq = (SELF_ID,) + best
        if seq not in out:
            out.append(seq)
    return out


# ----------------------------------------------------------------------
# random query generation (test harness)
# ----------------------------------------------------------------------


def random_query(
    g: KnowledgeGraph,
    max_conjuncts: int,
    max_atoms: int,
    rng_seed: int,
    target: str = DEFAULT_TARGET,
) -> DnfQuery:
    """Seeded generator of valid DNF queries whose atoms follow existing
    edges, so the denotation is nonempty with high probability."""
    if g.num_edges == 0:
        raise ValueError("graph has no edges")
    if max_conjuncts < 1 or max_atoms < 1:
        raise ValueError("max_conjuncts and max_atoms must be >= 1")
    rng = np.random.default_rng(rng_seed)
    src, _, dst = g.edge_arrays()
    start_pool = np.unique(src)

    anchors: dict[str, int] = {}
    conjuncts: list[Conjunct] = []
    n_conj = int(rng.integers(1, max_conjuncts + 1))
    for ci in range(n_conj):
        atoms: list[Atom] = []
        # chain: a seeded walk along real edges ending at the target variable
        walk_target = int(rng.integers(1, max_atoms + 1))
        start = int(start_pool[rng.integers(start_pool.size)])
        values = [start]
        labels: list[int] = []
        cur = start
        for _ in range(walk_target):
            rels = g.outgoing_relations_of(cur)
            if rels.size == 0:
                break
            r = int(rels[rng.integers(rels.size)])
            nbrs = g.out_neighbors(cur, r)
            cur = int(nbrs[rng.integers(nbrs.size)])
            labels.append(r)
            values.append(cur)
        if not labels:
            # start had outgoing edges by construction of start_pool
            raise AssertionError("walk must take at least one step")
        anchor_var = f"?c{ci}a0"
        anchors[anchor_var] = start
        var_of = {0: anchor_var}
        for j in range(1, len(values) - 1):
            var_of[j] = f"?c{ci}x{j}"
        var_of[len(values) - 1] = target
        for j, r in enumerate(labels):
            atoms.append(Atom(rel=r, src=var_of[j], dst=var_of[j + 1]))
        # optional side atoms: extra anchors pointing into chain variables,
        # instantiated from real in-edges of the witness values
        budget = max_atoms - len(labels)
        extra = 0
        while budget > 0 and rng.random() < 0.5:
            j = int(rng.integers(1, len(values)))
            w = values[j]
            in_edges = np.flatnonzero(dst == w)
            if in_edges.size == 0:
                budget -= 1
                continue
            e = int(in_edges[rng.integers(in_edges.size)])
            avar = f"?c{ci}a{extra + 1}"
            anchors[avar] = int(src[e])
            atoms.append(Atom(rel=int(g.edge_arrays()[1][e]), src=avar, dst=var_of[j]))
            extra += 1
            budget -= 1
        conjuncts.append(tuple(sorted(set(atoms), key=Atom.key)))
    unique = sorted(set(conjuncts), key=lambda c: tuple(a.key() for a in c))
    return DnfQuery(target=target, anchors=anchors, conjuncts=tuple(unique))


def format_query(q: DnfQuery, g: KnowledgeGraph) -> str:
    """Render a DNF query back to its s-expression text form."""

    def conj_text(conj: Conjunct) -> str:
        atoms = [f"({g.relation_name(a.rel)} {a.src} {a.dst})" for a in conj]
        return atoms[0] if len(atoms) == 1 else "(and " + " ".join(atoms) + ")"

    parts = [conj_text(c) for c in q.conjuncts]
    return parts[0] if len(parts) == 1 else "(or " + " ".join(parts) + ")"
