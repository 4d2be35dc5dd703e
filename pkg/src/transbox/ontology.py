"""EL++ data model, line-based text format, and ontology-level transforms."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Union

__all__ = [
    "Top",
    "Bottom",
    "Atomic",
    "Nominal",
    "Conjunction",
    "Exists",
    "ExistsAll",
    "ConceptExpr",
    "SubClassOf",
    "RoleInclusion",
    "RoleChain",
    "ConceptAssertion",
    "RoleAssertion",
    "Axiom",
    "Ontology",
    "OntologyError",
    "ParseError",
    "Violation",
    "conjunction",
    "parse_concept",
    "parse_axiom",
    "parse_ontology",
    "load_ontology",
    "format_concept",
    "format_axiom",
    "serialize_ontology",
    "validate_el",
    "semantic_enhance",
    "weaken",
    "desugar_abox",
    "concept_length",
    "axiom_length",
    "is_atomic",
]


# ---------------------------------------------------------------------------
# Concept expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Top:
    pass


@dataclass(frozen=True)
class Bottom:
    pass


@dataclass(frozen=True)
class Atomic:
    name: str


@dataclass(frozen=True)
class Nominal:
    individual: str


@dataclass(frozen=True)
class Conjunction:
    operands: tuple


@dataclass(frozen=True)
class Exists:
    role: str
    filler: "ConceptExpr"


@dataclass(frozen=True)
class ExistsAll:
    """Points related by ``role`` to *every* point of ``filler``.

    Only produced by :func:`semantic_enhance`; it has no surface syntax in
    user-supplied files (the serializer writes it with the ``allof`` keyword so
    enhanced ontologies can still be dumped and inspected).
    """

    role: str
    filler: "ConceptExpr"


ConceptExpr = Union[Top, Bottom, Atomic, Nominal, Conjunction, Exists, ExistsAll]


def conjunction(*parts: ConceptExpr) -> ConceptExpr:
    """Flattened, duplicate-free conjunction; a single survivor is returned bare."""
    flat: list = []
    for part in parts:
        members = part.operands if isinstance(part, Conjunction) else (part,)
        for m in members:
            if m not in flat:
                flat.append(m)
    if not flat:
        raise ValueError("conjunction of zero operands")
    if len(flat) == 1:
        return flat[0]
    return Conjunction(tuple(flat))


def is_atomic(expr: ConceptExpr) -> bool:
    return isinstance(expr, Atomic)


# ---------------------------------------------------------------------------
# Axioms and ontologies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubClassOf:
    lhs: ConceptExpr
    rhs: ConceptExpr


@dataclass(frozen=True)
class RoleInclusion:
    sub: str
    sup: str


@dataclass(frozen=True)
class RoleChain:
    # Kept as a tuple so over-long chains can be represented and then rejected
    # by validate_el instead of failing at construction.
    roles: tuple
    sup: str


@dataclass(frozen=True)
class ConceptAssertion:
    concept: str
    individual: str


@dataclass(frozen=True)
class RoleAssertion:
    role: str
    subject: str
    object: str


Axiom = Union[SubClassOf, RoleInclusion, RoleChain, ConceptAssertion, RoleAssertion]


class OntologyError(ValueError):
    pass


class ParseError(OntologyError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _walk(expr: ConceptExpr) -> Iterator[ConceptExpr]:
    yield expr
    if isinstance(expr, Conjunction):
        for op in expr.operands:
            yield from _walk(op)
    elif isinstance(expr, (Exists, ExistsAll)):
        yield from _walk(expr.filler)


def _names(axiom: Axiom) -> Iterator[tuple[str, str]]:
    """Yield (category, name) pairs in order of occurrence."""
    if isinstance(axiom, SubClassOf):
        for side in (axiom.lhs, axiom.rhs):
            for node in _walk(side):
                if isinstance(node, Atomic):
                    yield "concept", node.name
                elif isinstance(node, Nominal):
                    yield "individual", node.individual
                elif isinstance(node, (Exists, ExistsAll)):
                    yield "role", node.role
    elif isinstance(axiom, RoleInclusion):
        yield "role", axiom.sub
        yield "role", axiom.sup
    elif isinstance(axiom, RoleChain):
        for r in axiom.roles:
            yield "role", r
        yield "role", axiom.sup
    elif isinstance(axiom, ConceptAssertion):
        yield "concept", axiom.concept
        yield "individual", axiom.individual
    elif isinstance(axiom, RoleAssertion):
        yield "role", axiom.role
        yield "individual", axiom.subject
        yield "individual", axiom.object
    else:
        raise TypeError(f"not an axiom: {axiom!r}")


@dataclass(frozen=True)
class Ontology:
    """Axioms plus a signature of pairwise disjoint name tables.

    Name tables keep first-occurrence order; that order fixes parameter rows
    in an embedding model.
    """

    axioms: tuple = ()
    concepts: tuple = ()
    roles: tuple = ()
    individuals: tuple = ()

    @classmethod
    def from_axioms(
        cls,
        axioms: Iterable[Axiom],
        concepts: Iterable[str] = (),
        roles: Iterable[str] = (),
        individuals: Iterable[str] = (),
    ) -> "Ontology":
        """Build an ontology, dropping duplicate axioms and collecting names.

        Extra names may be declared up front (e.g. concepts that only occur
        in a held-out split).
        """
        unique: dict = {}
        for ax in axioms:
            unique.setdefault(ax, None)
        tables: dict[str, dict] = {"concept": {}, "role": {}, "individual": {}}
        for cat, names in (("concept", concepts), ("role", roles), ("individual", individuals)):
            for name in names:
                tables[cat].setdefault(name, None)
        for ax in unique:
            for cat, name in _names(ax):
                tables[cat].setdefault(name, None)
        _check_disjoint(tables)
        return cls(
            axioms=tuple(unique),
            concepts=tuple(tables["concept"]),
            roles=tuple(tables["role"]),
            individuals=tuple(tables["individual"]),
        )

    def __len__(self) -> int:
        return len(self.axioms)

    def merged_signature(self, other: "Ontology") -> "Ontology":
        """This ontology with ``other``'s names appended to the signature."""
        return Ontology.from_axioms(
            self.axioms,
            concepts=self.concepts + other.concepts,
            roles=self.roles + other.roles,
            individuals=self.individuals + other.individuals,
        )


def _check_disjoint(tables: dict) -> None:
    cats = list(tables)
    for i, a in enumerate(cats):
        for b in cats[i + 1 :]:
            clash = set(tables[a]) & set(tables[b])
            if clash:
                raise OntologyError(
                    f"names used both as {a} and {b}: {', '.join(sorted(clash))}"
                )


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")
_KEYWORDS = frozenset(
    {"Thing", "Nothing", "and", "some", "allof", "o", "SubClassOf", "SubPropertyOf"}
)
_PUNCT = "{}(),"


@dataclass
class _Token:
    kind: str  # "name", "kw", or the punctuation character itself
    text: str
    col: int


def _tokenize(line: str, lineno: int) -> list[_Token]:
    tokens = []
    i = 0
    while i < len(line):
        ch = line[i]
        if ch == "#":
            break
        if ch.isspace():
            i += 1
            continue
        if ch in _PUNCT:
            tokens.append(_Token(ch, ch, i + 1))
            i += 1
            continue
        m = _NAME.match(line, i)
        if not m:
            raise ParseError(f"unexpected character {ch!r}", lineno, i + 1)
        text = m.group()
        tokens.append(_Token("kw" if text in _KEYWORDS else "name", text, i + 1))
        i = m.end()
    return tokens


class _LineParser:
    def __init__(self, tokens: list[_Token], lineno: int, line: str):
        self.toks = tokens
        self.pos = 0
        self.lineno = lineno
        self.line = line
        # (category, name, column) in order of appearance
        self.names: list[tuple[str, str, int]] = []

    def error(self, message: str, tok: _Token | None = None) -> ParseError:
        if tok is None:
            tok = self.peek()
        col = tok.col if tok is not None else len(self.line.rstrip()) + 1
        return ParseError(message, self.lineno, col)

    def peek(self, offset: int = 0) -> _Token | None:
        j = self.pos + offset
        return self.toks[j] if j < len(self.toks) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of line")
        self.pos += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.peek()
        if tok is None or tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            got = "end of line" if tok is None else repr(tok.text)
            raise self.error(f"expected {want}, got {got}")
        self.pos += 1
        return tok

    def at_kw(self, text: str, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok is not None and tok.kind == "kw" and tok.text == text

    def name(self, category: str) -> str:
        tok = self.expect("name")
        self.names.append((category, tok.text, tok.col))
        return tok.text

    # concept := unary ("and" unary)*
    def concept(self) -> ConceptExpr:
        parts = [self.unary()]
        while self.at_kw("and"):
            self.pos += 1
            parts.append(self.unary())
        return conjunction(*parts)

    def unary(self) -> ConceptExpr:
        tok = self.peek()
        if tok is None:
            raise self.error("expected a concept")
        if tok.kind == "kw" and tok.text == "Thing":
            self.pos += 1
            return Top()
        if tok.kind == "kw" and tok.text == "Nothing":
            self.pos += 1
            return Bottom()
        if tok.kind == "{":
            self.pos += 1
            ind = self.name("individual")
            self.expect("}")
            return Nominal(ind)
        if tok.kind == "(":
            self.pos += 1
            inner = self.concept()
            self.expect(")")
            return inner
        if tok.kind == "name":
            if self.at_kw("some", 1) or self.at_kw("allof", 1):
                role = self.name("role")
                quant = self.next().text
                filler = self.unary()
                return Exists(role, filler) if quant == "some" else ExistsAll(role, filler)
            return Atomic(self.name("concept"))
        raise self.error(f"unexpected {tok.text!r}")

    def axiom(self) -> Axiom:
        first, second = self.peek(), self.peek(1)
        if first is not None and first.kind == "name" and second is not None and second.kind == "(":
            head = first.text
            self.pos += 2
            a = self.expect("name")
            if self.peek() is not None and self.peek().kind == ",":
                self.pos += 1
                b = self.expect("name")
                self.expect(")")
                self.names += [("role", head, first.col), ("individual", a.text, a.col),
                               ("individual", b.text, b.col)]
                ax: Axiom = RoleAssertion(head, a.text, b.text)
            else:
                self.expect(")")
                self.names += [("concept", head, first.col), ("individual", a.text, a.col)]
                ax = ConceptAssertion(head, a.text)
        elif any(t.kind == "kw" and t.text == "SubPropertyOf" for t in self.toks):
            chain = [self.name("role")]
            while self.at_kw("o"):
                self.pos += 1
                chain.append(self.name("role"))
            self.expect("kw", "SubPropertyOf")
            sup = self.name("role")
            if len(chain) == 1:
                ax = RoleInclusion(chain[0], sup)
            else:
                ax = RoleChain(tuple(chain), sup)
        else:
            lhs = self.concept()
            self.expect("kw", "SubClassOf")
            rhs = self.concept()
            ax = SubClassOf(lhs, rhs)
        if self.peek() is not None:
            raise self.error(f"trailing input {self.peek().text!r}")
        return ax


def _parse_line(line: str, lineno: int) -> tuple[Axiom | None, list]:
    tokens = _tokenize(line, lineno)
    if not tokens:
        return None, []
    p = _LineParser(tokens, lineno, line)
    return p.axiom(), p.names


def parse_axiom(text: str) -> Axiom:
    ax, _ = _parse_line(text, 1)
    if ax is None:
        raise ParseError("empty axiom", 1, 1)
    return ax


def parse_concept(text: str) -> ConceptExpr:
    tokens = _tokenize(text, 1)
    p = _LineParser(tokens, 1, text)
    expr = p.concept()
    if p.peek() is not None:
        raise p.error(f"trailing input {p.peek().text!r}")
    return expr


def parse_ontology(text: str) -> Ontology:
    """Parse the one-axiom-per-line format.

    Raises ParseError (with 1-based line/column) on malformed lines and when a
    name is used in two categories, e.g. both as a concept and as a role.
    """
    axioms = []
    seen: dict[str, tuple[str, int, int]] = {}
    tables: dict[str, dict] = {"concept": {}, "role": {}, "individual": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        ax, names = _parse_line(line, lineno)
        if ax is None:
            continue
        for cat, name, col in names:
            prev = seen.get(name)
            if prev is not None and prev[0] != cat:
                raise ParseError(
                    f"{name!r} used as {cat} but declared as {prev[0]} on line {prev[1]}",
                    lineno,
                    col,
                )
            seen.setdefault(name, (cat, lineno, col))
            tables[cat].setdefault(name, None)
        axioms.append(ax)
    unique = tuple(dict.fromkeys(axioms))
    return Ontology(unique, tuple(tables["concept"]), tuple(tables["role"]),
                    tuple(tables["individual"]))


def load_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        return parse_ontology(fh.read())


def format_concept(expr: ConceptExpr, nested: bool = False) -> str:
    """Render ``expr``; ``nested`` wraps conjunctions in parentheses."""
    if isinstance(expr, Top):
        return "Thing"
    if isinstance(expr, Bottom):
        return "Nothing"
    if isinstance(expr, Atomic):
        return expr.name
    if isinstance(expr, Nominal):
        return "{" + expr.individual + "}"
    if isinstance(expr, Conjunction):
        body = " and ".join(format_concept(op, nested=True) for op in expr.operands)
        return f"({body})" if nested else body
    if isinstance(expr, Exists):
        return f"{expr.role} some {format_concept(expr.filler, nested=True)}"
    if isinstance(expr, ExistsAll):
        return f"{expr.role} allof {format_concept(expr.filler, nested=True)}"
    raise TypeError(f"not a concept expression: {expr!r}")


def format_axiom(ax: Axiom) -> str:
    if isinstance(ax, SubClassOf):
        return f"{format_concept(ax.lhs)} SubClassOf {format_concept(ax.rhs)}"
    if isinstance(ax, RoleInclusion):
        return f"{ax.sub} SubPropertyOf {ax.sup}"
    if isinstance(ax, RoleChain):
        return f"{' o '.join(ax.roles)} SubPropertyOf {ax.sup}"
    if isinstance(ax, ConceptAssertion):
        return f"{ax.concept}({ax.individual})"
    if isinstance(ax, RoleAssertion):
        return f"{ax.role}({ax.subject},{ax.object})"
    raise TypeError(f"not an axiom: {ax!r}")


def serialize_ontology(onto: Ontology) -> str:
    return "".join(format_axiom(ax) + "\n" for ax in onto.axioms)


# ---------------------------------------------------------------------------
# Validation and transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    index: int
    axiom: str
    reason: str

    def __str__(self) -> str:
        return f"axiom {self.index} ({self.axiom}): {self.reason}"


_CONCEPT_TYPES = (Top, Bottom, Atomic, Nominal, Conjunction, Exists, ExistsAll)


def _expr_issues(expr, allow_exists_all: bool) -> list[str]:
    issues = []
    for node in _walk(expr):
        if not isinstance(node, _CONCEPT_TYPES):
            issues.append(f"unknown concept constructor {type(node).__name__}")
        elif isinstance(node, Conjunction):
            if len(node.operands) < 2:
                issues.append("conjunction with fewer than two operands")
            if len(set(node.operands)) != len(node.operands):
                issues.append("conjunction with duplicate operands")
        elif isinstance(node, ExistsAll) and not allow_exists_all:
            issues.append("exists-all is not surface EL++ syntax")
    return issues


def validate_el(onto: Ontology, allow_exists_all: bool = False) -> list[Violation]:
    """Return every EL++ violation found in ``onto`` (empty list when valid)."""
    out: list[Violation] = []
    signature = {
        "concept": set(onto.concepts),
        "role": set(onto.roles),
        "individual": set(onto.individuals),
    }
    for i, ax in enumerate(onto.axioms):
        issues: list[str] = []
        if isinstance(ax, SubClassOf):
            issues += _expr_issues(ax.lhs, allow_exists_all)
            issues += _expr_issues(ax.rhs, allow_exists_all)
        elif isinstance(ax, RoleChain):
            if len(ax.roles) != 2:
                issues.append(f"role chain of length {len(ax.roles)} (only 2 supported)")
        elif not isinstance(ax, (RoleInclusion, ConceptAssertion, RoleAssertion)):
            out.append(Violation(i, repr(ax), "unknown axiom type"))
            continue
        for cat, name in _names(ax):
            if name not in signature[cat]:
                issues.append(f"{cat} {name!r} missing from signature")
        for reason in dict.fromkeys(issues):
            out.append(Violation(i, format_axiom(ax), reason))
    try:
        _check_disjoint({k: dict.fromkeys(v) for k, v in signature.items()})
    except OntologyError as exc:
        out.append(Violation(-1, "<signature>", str(exc)))
    return out


def _strengthen(expr: ConceptExpr) -> ConceptExpr:
    if isinstance(expr, Exists):
        return ExistsAll(expr.role, _strengthen(expr.filler))
    if isinstance(expr, ExistsAll):
        return ExistsAll(expr.role, _strengthen(expr.filler))
    if isinstance(expr, Conjunction):
        return Conjunction(tuple(_strengthen(op) for op in expr.operands))
    return expr


def weaken(expr: ConceptExpr) -> ConceptExpr:
    """Inverse of the enhancement rewrite: every ExistsAll back to Exists."""
    if isinstance(expr, (Exists, ExistsAll)):
        return Exists(expr.role, weaken(expr.filler))
    if isinstance(expr, Conjunction):
        return Conjunction(tuple(weaken(op) for op in expr.operands))
    return expr


def semantic_enhance(onto: Ontology) -> Ontology:
    """Rewrite every existential on a GCI right-hand side into exists-all.

    Left-hand sides and non-GCI axioms are left alone, so the result has the
    same number of axioms and entails the input.
    """
    axioms = tuple(
        SubClassOf(ax.lhs, _strengthen(ax.rhs)) if isinstance(ax, SubClassOf) else ax
        for ax in onto.axioms
    )
    return replace(onto, axioms=axioms)


def desugar_abox(onto: Ontology) -> Ontology:
    """Turn assertions into nominal GCIs: A(a) to {a} ⊑ A, r(a,b) to {a} ⊑ ∃r.{b}."""
    out = []
    for ax in onto.axioms:
        if isinstance(ax, ConceptAssertion):
            out.append(SubClassOf(Nominal(ax.individual), Atomic(ax.concept)))
        elif isinstance(ax, RoleAssertion):
            out.append(SubClassOf(Nominal(ax.subject), Exists(ax.role, Nominal(ax.object))))
        else:
            out.append(ax)
    return replace(onto, axioms=tuple(out))


def concept_length(expr: ConceptExpr) -> int:
    """Number of atomic concept, nominal, and role-name occurrences."""
    return sum(
        1 for node in _walk(expr) if isinstance(node, (Atomic, Nominal, Exists, ExistsAll))
    )


def axiom_length(ax: Axiom) -> int:
    if isinstance(ax, SubClassOf):
        return concept_length(ax.lhs) + concept_length(ax.rhs)
    return sum(1 for _ in _names(ax))
