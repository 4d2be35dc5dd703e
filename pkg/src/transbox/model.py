"""Embedding parameters, Box(C) evaluation, soundness checks, checkpoints."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import geometry as geo
from .geometry import BottomFillerError, ExtendedBox
from .ontology import (
    Atomic,
    Axiom,
    Bottom,
    ConceptAssertion,
    Conjunction,
    Exists,
    ExistsAll,
    Nominal,
    Ontology,
    RoleAssertion,
    RoleChain,
    RoleInclusion,
    SubClassOf,
    Top,
    desugar_abox,
    format_axiom,
)

__all__ = [
    "EmbeddingModel",
    "UnknownNameError",
    "init_model",
    "compile_concept",
    "evaluate_compiled",
    "eval_concept_box",
    "eval_concept_boxes",
    "role_box",
    "axiom_residual",
    "check_axiom",
    "AxiomVerdict",
    "SoundnessReport",
    "soundness_report",
    "save_checkpoint",
    "load_checkpoint",
    "export_text",
    "CheckpointError",
]

DEFAULT_TOL = 1e-3


class UnknownNameError(KeyError):
    def __init__(self, names):
        self.names = sorted(set(names))
        super().__init__(f"unknown names: {', '.join(self.names)}")

    def __str__(self) -> str:
        return self.args[0]


@dataclass
class EmbeddingModel:
    """Centers and raw offsets per concept and role, one point per individual.

    Effective offsets are ``|raw_offset|``; the raw values are what the
    optimizer updates.
    """

    dim: int
    concepts: tuple
    roles: tuple
    individuals: tuple
    concept_center: np.ndarray
    concept_offset: np.ndarray
    role_center: np.ndarray
    role_offset: np.ndarray
    individual_point: np.ndarray
    metadata: dict = field(default_factory=dict)

    @cached_property
    def concept_index(self) -> dict:
        return {name: i for i, name in enumerate(self.concepts)}

    @cached_property
    def role_index(self) -> dict:
        return {name: i for i, name in enumerate(self.roles)}

    @cached_property
    def individual_index(self) -> dict:
        return {name: i for i, name in enumerate(self.individuals)}

    @property
    def parameter_count(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def arrays(self) -> dict:
        return {
            "concept_center": self.concept_center,
            "concept_offset": self.concept_offset,
            "role_center": self.role_center,
            "role_offset": self.role_offset,
            "individual_point": self.individual_point,
        }

    def with_arrays(self, **arrays) -> "EmbeddingModel":
        fields = dict(
            dim=self.dim,
            concepts=self.concepts,
            roles=self.roles,
            individuals=self.individuals,
            metadata=dict(self.metadata),
            **self.arrays(),
        )
        fields.update(arrays)
        return EmbeddingModel(**fields)

    def copy(self) -> "EmbeddingModel":
        return self.with_arrays(**{k: v.copy() for k, v in self.arrays().items()})

    def concept_box(self, name: str) -> ExtendedBox:
        i = self.concept_index[name]
        return geo.plain_box(self.concept_center[i], np.abs(self.concept_offset[i]))

    def role_box(self, name: str) -> ExtendedBox:
        i = self.role_index[name]
        return geo.plain_box(self.role_center[i], np.abs(self.role_offset[i]))

    def individual_box(self, name: str) -> ExtendedBox:
        return geo.point_box(self.individual_point[self.individual_index[name]])

    def same_parameters(self, other: "EmbeddingModel") -> bool:
        if (self.dim, self.concepts, self.roles, self.individuals) != (
            other.dim, other.concepts, other.roles, other.individuals
        ):
            return False
        a, b = self.arrays(), other.arrays()
        return all(np.array_equal(a[k], b[k]) for k in a)


def init_model(signature: Ontology, dim: int, seed: int) -> EmbeddingModel:
    """Random model: centers and points on [-1, 1]^n, raw offsets on (0, 0.5]^n."""
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if not (signature.concepts or signature.roles or signature.individuals):
        raise ValueError("cannot initialise a model for an empty signature")
    rng = np.random.default_rng(seed)
    nc, nr, ni = len(signature.concepts), len(signature.roles), len(signature.individuals)
    return EmbeddingModel(
        dim=dim,
        concepts=tuple(signature.concepts),
        roles=tuple(signature.roles),
        individuals=tuple(signature.individuals),
        concept_center=rng.uniform(-1.0, 1.0, size=(nc, dim)),
        concept_offset=0.5 * (1.0 - rng.random(size=(nc, dim))),
        role_center=rng.uniform(-1.0, 1.0, size=(nr, dim)),
        role_offset=0.5 * (1.0 - rng.random(size=(nr, dim))),
        individual_point=rng.uniform(-1.0, 1.0, size=(ni, dim)),
        metadata={"seed": seed},
    )


# ---------------------------------------------------------------------------
# Compiled evaluation
#
# A concept expression is split into a *shape* (the tree with names erased)
# and its leaves in depth-first order. Expressions sharing a shape are
# evaluated together as one batch: each leaf becomes a column of row indices
# into the parameter tables.
# ---------------------------------------------------------------------------


def compile_concept(expr) -> tuple[tuple, list]:
    """Return ``(shape, leaves)``; leaves are ``(table, name)`` pairs."""
    leaves: list = []

    def go(e):
        if isinstance(e, Top):
            return ("top",)
        if isinstance(e, Bottom):
            return ("bottom",)
        if isinstance(e, Atomic):
            leaves.append(("concept", e.name))
            return ("atomic",)
        if isinstance(e, Nominal):
            leaves.append(("individual", e.individual))
            return ("nominal",)
        if isinstance(e, Conjunction):
            return ("and",) + tuple(go(op) for op in e.operands)
        if isinstance(e, (Exists, ExistsAll)):
            leaves.append(("role", e.role))
            kind = "some" if isinstance(e, Exists) else "allof"
            return (kind, go(e.filler))
        raise TypeError(f"not a concept expression: {e!r}")

    shape = go(expr)
    return shape, leaves


def evaluate_compiled(shape: tuple, columns: list, params: dict, plain: bool = False):
    """Evaluate a batch of same-shape expressions.

    ``columns`` holds one integer index array per leaf (in compile order) and
    ``params`` maps ``concept_center``/``concept_offset``/... to arrays or
    tensors. Returns ``(box, valid)``; ``valid`` is False for rows in which an
    existential met a filler with an ∅ component. ``plain`` evaluates
    exists-all nodes as ordinary existentials.
    """
    cols = iter(columns)
    cc = params["concept_center"]
    ops = geo._ops(cc)
    batch = len(columns[0]) if columns else None

    def full(value, rows):
        if geo._is_torch(cc):
            return cc.new_full((rows, cc.shape[-1]), value)
        return np.full((rows, cc.shape[-1]), value)

    def go(node):
        kind = node[0]
        if kind == "atomic":
            idx = next(cols)
            c = cc[idx]
            return ExtendedBox(c, geo._abs(params["concept_offset"][idx]), ops.ones_like(c)), None
        if kind == "nominal":
            idx = next(cols)
            x = params["individual_point"][idx]
            return ExtendedBox(x, ops.zeros_like(x), ops.ones_like(x)), None
        if kind == "top":
            rows = batch or 1
            return ExtendedBox(full(0.0, rows), full(0.0, rows), full(1.0, rows), universal=True), None
        if kind == "bottom":
            rows = batch or 1
            z = full(0.0, rows)
            return ExtendedBox(z, z, z), None
        if kind == "and":
            box, valid = go(node[1])
            for child in node[2:]:
                nxt, v = go(child)
                box = geo.intersect(box, nxt)
                valid = _and(valid, v)
            return box, valid
        if kind in ("some", "allof"):
            idx = next(cols)
            rc = params["role_center"][idx]
            role = ExtendedBox(rc, geo._abs(params["role_offset"][idx]), ops.ones_like(rc))
            filler, valid = go(node[1])
            if not filler.universal:
                ok = (filler.mask == 1).all(-1)
                valid = _and(valid, ok)
            if kind == "some" or plain:
                return geo.exists_box(role, filler, check=False), valid
            return geo.exists_all_box(role, filler, check=False), valid
        raise ValueError(f"unknown shape node {kind!r}")

    box, valid = go(shape)
    if valid is None:
        valid = ops.zeros_like(box.center[..., 0]) == 0
    return box, valid


def _and(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a & b


def _leaf_columns(model: EmbeddingModel, leaf_rows: Sequence[list]) -> list:
    """Index columns for a batch of leaf lists (all from the same shape)."""
    tables = {
        "concept": model.concept_index,
        "role": model.role_index,
        "individual": model.individual_index,
    }
    missing = [name for leaves in leaf_rows for table, name in leaves if name not in tables[table]]
    if missing:
        raise UnknownNameError(missing)
    if not leaf_rows:
        return []
    width = len(leaf_rows[0])
    return [
        np.array([tables[leaves[j][0]][leaves[j][1]] for leaves in leaf_rows], dtype=np.int64)
        for j in range(width)
    ]


def eval_concept_box(expr, model: EmbeddingModel, plain: bool = False) -> ExtendedBox:
    """Box(expr) under ``model``.

    Raises UnknownNameError for names outside the model and BottomFillerError
    when an existential's filler evaluates to a box with an ∅ component.
    """
    shape, leaves = compile_concept(expr)
    cols = _leaf_columns(model, [leaves])
    box, valid = evaluate_compiled(shape, cols, model.arrays(), plain)
    if not bool(np.asarray(valid)[0]):
        raise BottomFillerError(f"bottom filler under an existential in {expr!r}")
    return box.row(0)


def eval_concept_boxes(exprs: Sequence, model: EmbeddingModel, plain: bool = False):
    """Evaluate many expressions, grouping by shape.

    Returns ``(center, offset, mask, universal, valid)`` stacked in input order.
    """
    n = len(exprs)
    center = np.zeros((n, model.dim))
    offset = np.zeros((n, model.dim))
    mask = np.zeros((n, model.dim))
    universal = np.zeros(n, dtype=bool)
    valid = np.ones(n, dtype=bool)
    groups: dict = {}
    for i, e in enumerate(exprs):
        shape, leaves = compile_concept(e)
        groups.setdefault(shape, ([], []))
        groups[shape][0].append(i)
        groups[shape][1].append(leaves)
    arrays = model.arrays()
    for shape, (rows, leaf_rows) in groups.items():
        cols = _leaf_columns(model, leaf_rows)
        box, ok = evaluate_compiled(shape, cols, arrays, plain)
        rows = np.asarray(rows)
        # leafless shapes (Top, Bottom) come back as a single row
        center[rows] = box.center
        offset[rows] = box.offset
        mask[rows] = box.mask
        universal[rows] = box.universal
        valid[rows] = ok
    return center, offset, mask, universal, valid


def role_box(model: EmbeddingModel, name: str) -> ExtendedBox:
    if name not in model.role_index:
        raise UnknownNameError([name])
    return model.role_box(name)


# ---------------------------------------------------------------------------
# Checking
# ---------------------------------------------------------------------------


def axiom_residual(axiom: Axiom, model: EmbeddingModel, gamma: float = 0.0, norm: int = 2,
                   plain: bool = False) -> float:
    """Inclusion loss of a single axiom (∞ when a side cannot be evaluated)."""
    if isinstance(axiom, (ConceptAssertion, RoleAssertion)):
        axiom = desugar_abox(Ontology((axiom,))).axioms[0]
    if isinstance(axiom, SubClassOf):
        try:
            lhs = eval_concept_box(axiom.lhs, model, plain)
            rhs = eval_concept_box(axiom.rhs, model, plain)
        except BottomFillerError:
            return float("inf")
        if lhs.universal and not rhs.universal:
            return float("inf")
        return float(geo.inclusion_loss(lhs, rhs, gamma, norm))
    if isinstance(axiom, RoleInclusion):
        return float(geo.inclusion_loss(role_box(model, axiom.sub), role_box(model, axiom.sup),
                                        gamma, norm))
    if isinstance(axiom, RoleChain):
        boxes = [role_box(model, r) for r in axiom.roles]
        composed = boxes[0]
        for b in boxes[1:]:
            composed = geo.compose_roles(composed, b)
        return float(geo.inclusion_loss(composed, role_box(model, axiom.sup), gamma, norm))
    raise TypeError(f"not an axiom: {axiom!r}")


def check_axiom(axiom: Axiom, model: EmbeddingModel, tol: float = DEFAULT_TOL,
                norm: int = 2) -> bool:
    """Whether ``model`` geometrically satisfies ``axiom`` up to ``tol``."""
    return axiom_residual(axiom, model, 0.0, norm) <= tol


@dataclass(frozen=True)
class AxiomVerdict:
    axiom: Axiom
    satisfied: bool
    residual: float

    def __str__(self) -> str:
        mark = "ok  " if self.satisfied else "FAIL"
        return f"{mark} {self.residual:.6g}  {format_axiom(self.axiom)}"


@dataclass(frozen=True)
class SoundnessReport:
    verdicts: tuple
    tol: float

    @property
    def sound(self) -> bool:
        return all(v.satisfied for v in self.verdicts)

    @property
    def violated(self) -> list:
        return [v for v in self.verdicts if not v.satisfied]

    def format(self) -> str:
        lines = [str(v) for v in self.verdicts]
        lines.append(
            f"sound={str(self.sound).lower()} tol={self.tol:g} "
            f"satisfied={len(self.verdicts) - len(self.violated)}/{len(self.verdicts)}"
        )
        return "\n".join(lines) + "\n"


def soundness_report(onto: Ontology, model: EmbeddingModel, tol: float = DEFAULT_TOL,
                     norm: int = 2) -> SoundnessReport:
    verdicts = []
    for ax in onto.axioms:
        r = axiom_residual(ax, model, 0.0, norm)
        verdicts.append(AxiomVerdict(ax, r <= tol, r))
    return SoundnessReport(tuple(verdicts), tol)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"TRANSBOX"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_names(buf, names) -> None:
    for name in names:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)


def _read_names(buf, count) -> tuple:
    out = []
    for _ in range(count):
        (k,) = struct.unpack("<I", _read_exact(buf, 4))
        out.append(_read_exact(buf, k).decode("utf-8"))
    return tuple(out)


def _read_exact(buf, k) -> bytes:
    data = buf.read(k)
    if len(data) != k:
        raise CheckpointError("truncated checkpoint")
    return data


def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Little-endian binary checkpoint; floats are stored as raw f64."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    nc, nr, ni = len(model.concepts), len(model.roles), len(model.individuals)
    buf.write(struct.pack("<IIIII", FORMAT_VERSION, model.dim, nc, nr, ni))
    for names in (model.concepts, model.roles, model.individuals):
        _write_names(buf, names)
    for arr in (
        model.concept_center,
        model.concept_offset,
        np.concatenate([model.role_center, model.role_offset], axis=0),
        model.individual_point,
    ):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta = json.dumps(model.metadata, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a TransBox checkpoint")
    version, dim, nc, nr, ni = struct.unpack("<IIIII", _read_exact(buf, 20))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    concepts = _read_names(buf, nc)
    roles = _read_names(buf, nr)
    individuals = _read_names(buf, ni)

    def block(rows):
        raw = _read_exact(buf, rows * dim * 8)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, dim)

    cc = block(nc)
    co = block(nc)
    roles_block = block(2 * nr)
    ip = block(ni)
    (k,) = struct.unpack("<I", _read_exact(buf, 4))
    metadata = json.loads(_read_exact(buf, k).decode("utf-8"))
    return EmbeddingModel(
        dim=dim,
        concepts=concepts,
        roles=roles,
        individuals=individuals,
        concept_center=cc,
        concept_offset=co,
        role_center=roles_block[:nr].copy(),
        role_offset=roles_block[nr:].copy(),
        individual_point=ip,
        metadata=metadata,
    )


def export_text(model: EmbeddingModel) -> str:
    """One line per entity: name, kind, centers..., offsets... (effective offsets)."""
    lines = []

    def fmt(v):
        return " ".join(repr(float(x)) for x in v)

    for i, name in enumerate(model.concepts):
        lines.append(f"{name} concept {fmt(model.concept_center[i])} "
                     f"{fmt(np.abs(model.concept_offset[i]))}")
    for i, name in enumerate(model.roles):
        lines.append(f"{name} role {fmt(model.role_center[i])} {fmt(np.abs(model.role_offset[i]))}")
    for i, name in enumerate(model.individuals):
        lines.append(f"{name} individual {fmt(model.individual_point[i])} "
                     f"{fmt(np.zeros(model.dim))}")
    return "\n".join(lines) + ("\n" if lines else "")
