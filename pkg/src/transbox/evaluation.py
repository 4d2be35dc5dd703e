"""Subsumption scoring, ranking tasks, and rank metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import EmbeddingModel, UnknownNameError, eval_concept_boxes
from .ontology import (
    Atomic,
    Conjunction,
    Exists,
    Ontology,
    ParseError,
    SubClassOf,
    format_axiom,
    is_atomic,
    parse_axiom,
    parse_ontology,
    validate_el,
)

__all__ = [
    "LARGE_PENALTY",
    "score",
    "score_matrix",
    "RankingTask",
    "RankingReport",
    "TASK_KINDS",
    "rank_queries",
    "tie_mean_rank",
    "aggregate_metrics",
    "TestSplit",
    "classify_axiom",
    "load_test_split",
    "parse_test_split",
    "build_tasks",
    "format_report_table",
    "format_report_keyvalue",
]

LARGE_PENALTY = 1e4


def _boxes(exprs, model):
    center, _offset, mask, universal, valid = eval_concept_boxes(exprs, model, plain=True)
    # A bottom filler under an existential is scored as the fully-∅ box.
    mask = np.where(valid[:, None], mask, 0.0)
    # ⊤ has no center; score it from the origin with every coordinate present.
    center = np.where(universal[:, None], 0.0, center)
    mask = np.where(universal[:, None], 1.0, mask)
    return center, mask


def _empty(mask: np.ndarray, strict: bool) -> np.ndarray:
    return np.any(mask == 0, axis=-1) if strict else np.all(mask == 0, axis=-1)


def score_matrix(lhs_center, lhs_mask, rhs_center, rhs_mask, penalty: float = LARGE_PENALTY,
                 strict_empty: bool = False, norm: int = 2) -> np.ndarray:
    """Broadcast score of ``C ⊑ D`` for stacked centers/masks (last axis = dim).

    ``-||(cC - cD) mC mD|| - M ||mC (1 - mD)||``, and 0 whenever the left box
    is empty.
    """
    both = lhs_mask * rhs_mask
    diff = (lhs_center - rhs_center) * both
    only_left = lhs_mask * (1 - rhs_mask)
    if norm == 1:
        d, p = np.abs(diff).sum(-1), np.abs(only_left).sum(-1)
    else:
        d, p = np.sqrt((diff * diff).sum(-1)), np.sqrt((only_left * only_left).sum(-1))
    s = -d - penalty * p
    empty = _empty(np.broadcast_to(lhs_mask, np.broadcast_shapes(lhs_mask.shape, rhs_mask.shape)),
                   strict_empty)
    return np.where(empty, 0.0, s)


def score(lhs, rhs, model: EmbeddingModel, penalty: float = LARGE_PENALTY,
          strict_empty: bool = False, norm: int = 2) -> float:
    """Plausibility of ``lhs ⊑ rhs``; higher is more likely."""
    center, mask = _boxes([lhs, rhs], model)
    return float(score_matrix(center[0], mask[0], center[1], mask[1], penalty, strict_empty, norm))


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

# kind -> (side that is queried, candidate pool type)
TASK_KINDS = {
    "rhs-atomic": ("rhs", "atomic"),  # * ⊑ ?A
    "lhs-atomic": ("lhs", "atomic"),  # ?A ⊑ *
    "rhs-complex": ("rhs", "complex"),  # * ⊑ ?C
    "lhs-complex": ("lhs", "complex"),  # ?C ⊑ *
    "nf1": ("rhs", "atomic"),  # A ⊑ ?B
    "nf2": ("rhs", "atomic"),  # A ⊓ B ⊑ ?B'
    "nf3": ("lhs", "atomic"),  # ?A ⊑ ∃r.B
    "nf4": ("rhs", "atomic"),  # ∃r.B ⊑ ?A
}


@dataclass
class RankingTask:
    kind: str
    candidates: list
    queries: list

    @property
    def side(self) -> str:
        return TASK_KINDS[self.kind][0]


def tie_mean_rank(scores: np.ndarray, true_index: int) -> float:
    """1-based rank of ``true_index`` under descending scores, ties averaged."""
    s = scores[true_index]
    higher = int(np.count_nonzero(scores > s))
    ties = int(np.count_nonzero(scores == s))
    return higher + (ties + 1) / 2


def rank_queries(task: RankingTask, model: EmbeddingModel, penalty: float = LARGE_PENALTY,
                 strict_empty: bool = False, norm: int = 2) -> list:
    """Raw (unfiltered) rank of each query's true answer among the candidates."""
    if not task.candidates:
        raise ValueError("empty candidate pool")
    position = {c: i for i, c in enumerate(task.candidates)}
    answers, fixed = [], []
    for q in task.queries:
        answer = q.rhs if task.side == "rhs" else q.lhs
        if answer not in position:
            raise ValueError(f"true answer of {format_axiom(q)} is not in the candidate pool")
        answers.append(position[answer])
        fixed.append(q.lhs if task.side == "rhs" else q.rhs)
    cand_c, cand_m = _boxes(list(task.candidates), model)
    if not fixed:
        return []
    fix_c, fix_m = _boxes(fixed, model)
    ranks = []
    for i, true_idx in enumerate(answers):
        if task.side == "rhs":
            s = score_matrix(fix_c[i], fix_m[i], cand_c, cand_m, penalty, strict_empty, norm)
        else:
            s = score_matrix(cand_c, cand_m, fix_c[i], fix_m[i], penalty, strict_empty, norm)
        ranks.append(tie_mean_rank(np.asarray(s), true_idx))
    return ranks


@dataclass(frozen=True)
class RankingReport:
    ranks: tuple
    pool_size: int
    hits1: float
    hits10: float
    hits100: float
    median: float
    mrr: float
    mean_rank: float
    auc: float
    name: str = ""

    def as_dict(self) -> dict:
        return {
            "H@1": self.hits1,
            "H@10": self.hits10,
            "H@100": self.hits100,
            "Med": self.median,
            "MRR": self.mrr,
            "MR": self.mean_rank,
            "AUC": self.auc,
        }


def aggregate_metrics(ranks: Sequence[float], pool_size: int, name: str = "") -> RankingReport:
    if len(ranks) == 0:
        raise ValueError("no ranks to aggregate")
    if pool_size < 2:
        raise ValueError("AUC needs a candidate pool of at least 2")
    r = np.asarray(ranks, dtype=np.float64)
    if np.any(r < 1) or np.any(r > pool_size):
        raise ValueError(f"ranks must lie in [1, {pool_size}]")
    return RankingReport(
        ranks=tuple(float(x) for x in r),
        pool_size=pool_size,
        hits1=float(np.mean(r <= 1)),
        hits10=float(np.mean(r <= 10)),
        hits100=float(np.mean(r <= 100)),
        median=float(np.median(r)),
        mrr=float(np.mean(1.0 / r)),
        mean_rank=float(np.mean(r)),
        auc=float(np.mean((pool_size - r) / (pool_size - 1))),
        name=name,
    )


# ---------------------------------------------------------------------------
# Test splits
# ---------------------------------------------------------------------------

CATEGORIES = ("A⊑D", "C⊑A", "C⊑D", "nf1", "nf2", "nf3", "nf4")


def classify_axiom(ax) -> str:
    """Category of a test GCI: a normal form if it is one, else by side atomicity."""
    if not isinstance(ax, SubClassOf):
        raise ValueError(f"test axioms must be concept inclusions: {format_axiom(ax)}")
    lhs, rhs = ax.lhs, ax.rhs
    if is_atomic(lhs) and is_atomic(rhs):
        return "nf1"
    if (
        isinstance(lhs, Conjunction)
        and len(lhs.operands) == 2
        and all(is_atomic(x) for x in lhs.operands)
        and is_atomic(rhs)
    ):
        return "nf2"
    if is_atomic(lhs) and isinstance(rhs, Exists) and is_atomic(rhs.filler):
        return "nf3"
    if isinstance(lhs, Exists) and is_atomic(lhs.filler) and is_atomic(rhs):
        return "nf4"
    if is_atomic(lhs):
        return "A⊑D"
    if is_atomic(rhs):
        return "C⊑A"
    return "C⊑D"


@dataclass
class TestSplit:
    __test__ = False  # not a pytest class

    categories: dict = field(default_factory=lambda: {c: [] for c in CATEGORIES})
    ontology: Ontology = field(default_factory=Ontology)

    def counts(self) -> dict:
        return {k: len(v) for k, v in self.categories.items()}

    @property
    def complex_axioms(self) -> list:
        return self.categories["A⊑D"] + self.categories["C⊑A"] + self.categories["C⊑D"]


def parse_test_split(text: str) -> TestSplit:
    onto = parse_ontology(text)
    bad = validate_el(onto)
    if bad:
        raise ValueError("non-EL++ test axioms: " + "; ".join(map(str, bad)))
    split = TestSplit(ontology=onto)
    for ax in onto.axioms:
        try:
            cat = classify_axiom(ax)
        except ValueError as exc:
            raise ParseError(str(exc), _line_of(text, ax), 1) from None
        split.categories[cat].append(ax)
    return split


def _line_of(text: str, ax) -> int:
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.split("#", 1)[0].strip():
            continue
        try:
            if parse_axiom(line) == ax:
                return i
        except ParseError:
            continue
    return 0


def load_test_split(paths) -> TestSplit:
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    text = ""
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            text += fh.read() + "\n"
    return parse_test_split(text)


def _check_names(split: TestSplit, model: EmbeddingModel) -> None:
    missing = (
        [n for n in split.ontology.concepts if n not in model.concept_index]
        + [n for n in split.ontology.roles if n not in model.role_index]
        + [n for n in split.ontology.individuals if n not in model.individual_index]
    )
    if missing:
        raise UnknownNameError(missing)


def build_tasks(split: TestSplit, model: EmbeddingModel, kinds: Sequence[str]) -> list:
    """Ranking tasks over a split.

    Atomic tasks rank against every concept of the model; complex tasks rank
    against every complex concept occurring on either side of the split.
    """
    _check_names(split, model)
    atoms = [Atomic(name) for name in model.concepts]
    pool: dict = {}
    for ax in split.complex_axioms:
        for side in (ax.lhs, ax.rhs):
            if not is_atomic(side):
                pool.setdefault(side, None)
    complex_pool = list(pool)
    cats = split.categories
    queries = {
        "rhs-atomic": cats["C⊑A"],
        "lhs-atomic": cats["A⊑D"],
        "rhs-complex": cats["A⊑D"] + cats["C⊑D"],
        "lhs-complex": cats["C⊑A"] + cats["C⊑D"],
        "nf1": cats["nf1"],
        "nf2": cats["nf2"],
        "nf3": cats["nf3"],
        "nf4": cats["nf4"],
    }
    tasks = []
    for kind in kinds:
        if kind not in TASK_KINDS:
            raise ValueError(f"unknown task {kind!r}; choose from {', '.join(TASK_KINDS)}")
        cand = atoms if TASK_KINDS[kind][1] == "atomic" else complex_pool
        tasks.append(RankingTask(kind, cand, list(queries[kind])))
    return tasks


_COLUMNS = ("H@1", "H@10", "H@100", "Med", "MRR", "MR", "AUC")


def format_report_table(reports: Sequence[RankingReport]) -> str:
    head = f"{'task':<14}{'queries':>8}" + "".join(f"{c:>10}" for c in _COLUMNS)
    lines = [head, "-" * len(head)]
    for rep in reports:
        vals = rep.as_dict()
        cells = []
        for c in _COLUMNS:
            v = vals[c]
            cells.append(f"{v:>10.1f}" if c in ("Med", "MR") else f"{v:>10.4f}")
        lines.append(f"{rep.name:<14}{len(rep.ranks):>8}" + "".join(cells))
    return "\n".join(lines) + "\n"


def format_report_keyvalue(report: RankingReport) -> str:
    lines = [f"task={report.name}", f"queries={len(report.ranks)}",
             f"pool_size={report.pool_size}"]
    lines += [f"{k}={v!r}" for k, v in report.as_dict().items()]
    return "\n".join(lines) + "\n"
