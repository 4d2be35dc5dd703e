"""Shared generators and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from transbox.geometry import ExtendedBox, plain_box
from transbox.model import EmbeddingModel
from transbox.ontology import (
    Atomic,
    Bottom,
    ConceptAssertion,
    Conjunction,
    Exists,
    Nominal,
    Ontology,
    RoleAssertion,
    RoleChain,
    RoleInclusion,
    SubClassOf,
    Top,
    conjunction,
)

CONCEPT_NAMES = [f"C{i}" for i in range(6)] + ["Father", "Male_1", "x.y-z"]
ROLE_NAMES = ["r", "s", "hasChild", "part-of"]
INDIVIDUAL_NAMES = ["tom", "jerry", "a1"]

# ---------------------------------------------------------------------------
# hypothesis strategies
# ---------------------------------------------------------------------------

atomic = st.sampled_from(CONCEPT_NAMES).map(Atomic)
nominal = st.sampled_from(INDIVIDUAL_NAMES).map(Nominal)


def concepts(max_leaves: int = 8):
    base = st.one_of(atomic, nominal, st.just(Top()), st.just(Bottom()))

    def extend(inner):
        exists = st.builds(Exists, st.sampled_from(ROLE_NAMES), inner)
        conj = st.lists(inner, min_size=2, max_size=3).map(lambda xs: conjunction(*xs))
        return st.one_of(exists, conj)

    return st.recursive(base, extend, max_leaves=max_leaves)


def axioms():
    roles = st.sampled_from(ROLE_NAMES)
    inds = st.sampled_from(INDIVIDUAL_NAMES)
    return st.one_of(
        st.builds(SubClassOf, concepts(), concepts()),
        st.builds(RoleInclusion, roles, roles),
        st.builds(lambda a, b, t: RoleChain((a, b), t), roles, roles, roles),
        st.builds(ConceptAssertion, st.sampled_from(CONCEPT_NAMES), inds),
        st.builds(RoleAssertion, roles, inds, inds),
    )


ontologies = st.lists(axioms(), max_size=12).map(Ontology.from_axioms)


# ---------------------------------------------------------------------------
# numpy generators
# ---------------------------------------------------------------------------


def random_plain_box(rng: np.random.Generator, n: int, spread: float = 2.0,
                     max_offset: float = 1.0) -> ExtendedBox:
    return plain_box(rng.uniform(-spread, spread, n), rng.uniform(0, max_offset, n))


def sample_in_box(rng, b: ExtendedBox, k: int) -> np.ndarray:
    return rng.uniform(b.lower, b.upper, size=(k, b.dim))


def make_model(dim: int, concepts=None, roles=None, individuals=None) -> EmbeddingModel:
    """Hand-built model from ``{name: (center, offset)}`` and ``{name: point}`` maps."""
    concepts, roles, individuals = concepts or {}, roles or {}, individuals or {}

    def table(entries, k):
        arr = np.asarray([np.broadcast_to(np.asarray(v[k] if k is not None else v, float), dim)
                          for v in entries.values()], dtype=np.float64)
        return arr.reshape(len(entries), dim)

    return EmbeddingModel(
        dim=dim,
        concepts=tuple(concepts),
        roles=tuple(roles),
        individuals=tuple(individuals),
        concept_center=table(concepts, 0),
        concept_offset=table(concepts, 1),
        role_center=table(roles, 0),
        role_offset=table(roles, 1),
        individual_point=table(individuals, None),
    )


# ---------------------------------------------------------------------------
# EL saturation oracle (completion rules over normalised TBoxes)
# ---------------------------------------------------------------------------


def saturate(axioms, concepts) -> dict:
    """Subsumer sets S(A) for every atomic concept under a normalised TBox.

    Handles A ⊑ B, A1 ⊓ A2 ⊑ B, A ⊑ ∃r.B, ∃r.B ⊑ A, r ⊑ s and r∘s ⊑ t by
    naive fixpoint iteration; Top and Bottom are not modelled.
    """
    S = {a: {a} for a in concepts}
    R: dict = {}
    nf1, nf2, nf3, nf4, ri, rc = [], [], [], [], [], []
    for ax in axioms:
        if isinstance(ax, RoleInclusion):
            ri.append((ax.sub, ax.sup))
        elif isinstance(ax, RoleChain):
            rc.append((ax.roles[0], ax.roles[1], ax.sup))
        elif isinstance(ax.lhs, Atomic) and isinstance(ax.rhs, Atomic):
            nf1.append((ax.lhs.name, ax.rhs.name))
        elif isinstance(ax.lhs, Conjunction):
            a, b = (x.name for x in ax.lhs.operands)
            nf2.append((a, b, ax.rhs.name))
        elif isinstance(ax.rhs, Exists):
            nf3.append((ax.lhs.name, ax.rhs.role, ax.rhs.filler.name))
        else:
            nf4.append((ax.lhs.role, ax.lhs.filler.name, ax.rhs.name))
    changed = True
    while changed:
        changed = False

        def add(x, b):
            nonlocal changed
            if b not in S[x]:
                S[x].add(b)
                changed = True

        def link(r, x, y):
            nonlocal changed
            pairs = R.setdefault(r, set())
            if (x, y) not in pairs:
                pairs.add((x, y))
                changed = True

        for x in concepts:
            for a, b in nf1:
                if a in S[x]:
                    add(x, b)
            for a, b, c in nf2:
                if a in S[x] and b in S[x]:
                    add(x, c)
            for a, r, b in nf3:
                if a in S[x]:
                    link(r, x, b)
        for r, b, a in nf4:
            for x, y in list(R.get(r, ())):
                if b in S[y]:
                    add(x, a)
        for r, s in ri:
            for x, y in list(R.get(r, ())):
                link(s, x, y)
        for r, s, t in rc:
            for x, y in list(R.get(r, ())):
                for y2, z in list(R.get(s, ())):
                    if y == y2:
                        link(t, x, z)
    return S


def synthetic_ontology(seed: int, n_concepts: int = 100, n_roles: int = 5, n_axioms: int = 300,
                       n_held_out: int = 50):
    """Normalised TBox over a random concept forest plus held-out entailments.

    Returns (training Ontology, held-out axioms). Held-out axioms are atomic
    subsumptions entailed by the training TBox but not stated in it.
    """
    rng = np.random.default_rng(seed)
    names = [f"C{i}" for i in range(n_concepts)]
    roles = [f"r{i}" for i in range(n_roles)]
    n_roots = max(1, n_concepts // 10)
    axioms = []
    # random recursive forest: shallow hierarchies with a few subsumers each
    for i in range(n_roots, n_concepts):
        parent = int(rng.integers(0, i))
        axioms.append(SubClassOf(Atomic(names[i]), Atomic(names[parent])))
    stated = set(axioms)
    remaining = n_axioms - len(axioms)
    n4, n2 = remaining // 20, remaining // 5
    n3 = remaining - n4 - n2

    def pick(lo=0):
        return names[int(rng.integers(lo, n_concepts))]

    def role():
        return roles[int(rng.integers(0, n_roles))]

    # rules that derive new subsumers only use the deeper half of the
    # forest, otherwise they cascade and nearly every concept ends up
    # subsumed by nearly every other
    deep = n_concepts // 2
    makers = (
        [lambda: SubClassOf(Atomic(pick(deep)), Exists(role(), Atomic(pick())))] * n3
        + [lambda: SubClassOf(Exists(role(), Atomic(pick(deep))), Atomic(pick(deep)))] * n4
        + [lambda: SubClassOf(conjunction(Atomic(pick(deep)), Atomic(pick(deep))),
                              Atomic(pick(deep)))] * n2
    )
    for make in makers:
        while True:
            ax = make()
            # a conjunction of a name with itself collapses to that name
            trivial = isinstance(ax.lhs, Atomic) and isinstance(ax.rhs, Atomic)
            if ax not in stated and not trivial:
                break
        stated.add(ax)
        axioms.append(ax)
    onto = Ontology.from_axioms(axioms, concepts=names, roles=roles)
    S = saturate(axioms, names)
    candidates = sorted(
        (a, b) for a in names for b in S[a]
        if a != b and SubClassOf(Atomic(a), Atomic(b)) not in stated
    )
    idx = rng.choice(len(candidates), size=min(n_held_out, len(candidates)), replace=False)
    held = [SubClassOf(Atomic(candidates[i][0]), Atomic(candidates[i][1])) for i in sorted(idx)]
    return onto, held


def brute_force_metrics(ranks, pool_size: int) -> dict:
    """Metric definitions evaluated with plain Python loops."""
    ranks = list(ranks)
    k = len(ranks)
    srt = sorted(ranks)
    med = srt[k // 2] if k % 2 else (srt[k // 2 - 1] + srt[k // 2]) / 2
    return {
        "H@1": sum(1 for r in ranks if r <= 1) / k,
        "H@10": sum(1 for r in ranks if r <= 10) / k,
        "H@100": sum(1 for r in ranks if r <= 100) / k,
        "Med": med,
        "MRR": sum(1.0 / r for r in ranks) / k,
        "MR": sum(ranks) / k,
        "AUC": sum((pool_size - r) / (pool_size - 1) for r in ranks) / k,
    }


def brute_force_rank(scores, true_index: int) -> float:
    """Tie-mean rank by listing every ordering position of the tie group."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    positions = [p + 1 for p, i in enumerate(order) if scores[i] == scores[true_index]]
    return sum(positions) / len(positions)


