"""Axiom losses, negative sampling, and the Adam training loop."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from . import geometry as geo
from .geometry import ExtendedBox
from .model import (
    EmbeddingModel,
    UnknownNameError,
    _leaf_columns,
    compile_concept,
    evaluate_compiled,
    init_model,
)
from .ontology import (
    Atomic,
    Axiom,
    ConceptAssertion,
    Exists,
    Ontology,
    RoleAssertion,
    RoleChain,
    RoleInclusion,
    SubClassOf,
    desugar_abox,
    semantic_enhance,
    validate_el,
)

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "PROTOCOL_GRID",
    "EpochStats",
    "TrainResult",
    "TrainingDiverged",
    "axiom_loss",
    "regularization_loss",
    "total_loss",
    "sample_negatives",
    "train",
    "gradient_check",
    "GradientCheckResult",
    "loss_and_gradient",
    "write_trace_csv",
]

# Hyperparameter grid of the published evaluation protocol.
PROTOCOL_GRID = {
    "dim": (25, 50, 100, 200),
    "gamma": (0.0, 0.05, 0.1, 0.15),
    "lr": (0.0005, 0.005, 0.01),
    "reg_lambda": (1.0,),
    "epochs": (5000,),
}


@dataclass
class TrainConfig:
    dim: int = 50
    gamma: float = 0.0
    lr: float = 0.01
    reg_lambda: float = 1.0
    epochs: int = 5000
    batch_size: int = 512
    negatives: int = 1
    seed: int = 0
    norm: int = 2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    square_positive_term: bool = True
    semantic_enhancement: bool = True
    non_inclusion_reading: str = "norm"
    # Opt-in floor on effective offsets (0 disables); keeps 2-D plots readable.
    min_offset: float = 0.0
    checkpoint_every: int = 0

    def validate(self) -> None:
        problems = []
        if self.dim < 1:
            problems.append("dim must be >= 1")
        if self.gamma < 0:
            problems.append("gamma must be >= 0")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if self.reg_lambda < 0:
            problems.append("reg_lambda must be >= 0")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.negatives < 0:
            problems.append("negatives must be >= 0")
        if self.norm not in (1, 2):
            problems.append("norm must be 1 or 2")
        if self.non_inclusion_reading not in ("norm", "coordinate", "gap"):
            problems.append("non_inclusion_reading must be 'norm', 'coordinate' or 'gap'")
        if self.min_offset < 0:
            problems.append("min_offset must be >= 0")
        if self.checkpoint_every < 0:
            problems.append("checkpoint_every must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string or typed values, coercing to the field types."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key == "lambda":
                key = "reg_lambda"
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            default = getattr(cls(), key)
            kwargs[key] = _coerce(raw, type(default))
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _coerce(raw, kind):
    if not isinstance(raw, str):
        return kind(raw)
    text = raw.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(text)


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Compiled axiom groups
# ---------------------------------------------------------------------------


@dataclass
class _Group:
    kind: str  # "gci" | "roles"
    lhs_shape: tuple = ()
    rhs_shape: tuple = ()
    lhs_width: int = 0
    # columns: int64 array (n_leaves, rows); for "roles" the last row is the super-role
    columns: np.ndarray = None
    reg_columns: np.ndarray = None  # concept leaf rows used by the regulariser
    axioms: list = field(default_factory=list)


@dataclass
class _Compiled:
    groups: list
    group_of: np.ndarray  # axiom -> group id
    row_of: np.ndarray  # axiom -> row within its group


def _compile_axioms(axioms: Sequence[Axiom], model: EmbeddingModel) -> _Compiled:
    by_key: dict = {}
    group_of = np.zeros(len(axioms), dtype=np.int64)
    row_of = np.zeros(len(axioms), dtype=np.int64)
    staged: dict = {}
    for i, ax in enumerate(axioms):
        if isinstance(ax, (ConceptAssertion, RoleAssertion)):
            ax = desugar_abox(Ontology((ax,))).axioms[0]
        if isinstance(ax, SubClassOf):
            ls, ll = compile_concept(ax.lhs)
            rs, rl = compile_concept(ax.rhs)
            key = ("gci", ls, rs)
            leaves = ll + rl
            width = len(ll)
        elif isinstance(ax, RoleInclusion):
            key, leaves, width = ("roles", 1), [("role", ax.sub), ("role", ax.sup)], 1
        elif isinstance(ax, RoleChain):
            roles = [("role", r) for r in ax.roles]
            key, leaves, width = ("roles", len(roles)), roles + [("role", ax.sup)], len(roles)
        else:
            raise TypeError(f"not an axiom: {ax!r}")
        if key not in by_key:
            by_key[key] = len(by_key)
            staged[key] = ([], [], width)
        g = by_key[key]
        group_of[i] = g
        row_of[i] = len(staged[key][0])
        staged[key][0].append(leaves)
        staged[key][1].append(i)
    groups = []
    for key, (leaf_rows, idx, width) in staged.items():
        cols = _leaf_columns(model, leaf_rows)
        columns = np.stack(cols) if cols else np.zeros((0, len(idx)), dtype=np.int64)
        concept_slots = [j for j, (table, _) in enumerate(leaf_rows[0]) if table == "concept"]
        reg = columns[concept_slots] if concept_slots else np.zeros((0, len(idx)), dtype=np.int64)
        if key[0] == "gci":
            groups.append(_Group("gci", key[1], key[2], width, columns, reg, idx))
        else:
            groups.append(_Group("roles", lhs_width=width, columns=columns, reg_columns=reg,
                                 axioms=idx))
    return _Compiled(groups, group_of, row_of)


def _role(params, idx) -> ExtendedBox:
    c = params["role_center"][idx]
    ops = geo._ops(c)
    return ExtendedBox(c, geo._abs(params["role_offset"][idx]), ops.ones_like(c))


def _group_losses(group: _Group, cols, params, cfg: "TrainConfig"):
    """Per-axiom (loss, regulariser, valid) vectors for selected rows."""
    if group.kind == "gci":
        lcols = list(cols[: group.lhs_width])
        rcols = list(cols[group.lhs_width :])
        lhs, lok = evaluate_compiled(group.lhs_shape, lcols, params)
        rhs, rok = evaluate_compiled(group.rhs_shape, rcols, params)
        valid = lok & rok
        if lhs.universal and not rhs.universal:
            loss = params["concept_center"].sum() * 0 + lhs.center[..., 0] * 0
            valid = valid & False
        else:
            loss = geo.inclusion_loss(lhs, rhs, cfg.gamma, cfg.norm)
    else:
        roles = [_role(params, cols[j]) for j in range(group.lhs_width)]
        composed = roles[0]
        for r in roles[1:]:
            composed = geo.compose_roles(composed, r)
        sup = _role(params, cols[group.lhs_width])
        loss = geo.inclusion_loss(composed, sup, cfg.gamma, cfg.norm)
        valid = geo._ops(loss).zeros_like(loss) == 0
    return loss, valid


def _regulariser(reg_cols, params, norm):
    cc = params["concept_center"]
    total = None
    for col in reg_cols:
        term = geo._norm(cc[col] - 1.0, norm)
        total = term if total is None else total + term
    return total


def _to_index(cols, like):
    if geo._is_torch(like):
        return torch.as_tensor(cols, dtype=torch.long)
    return cols


@dataclass
class _BatchTerms:
    total: object
    positive: float
    regular: float
    negative: float
    n_valid: int
    n_negatives: int
    skipped: int


def _batch_terms(compiled: _Compiled, batch: np.ndarray, negatives: np.ndarray, params,
                 cfg: "TrainConfig") -> _BatchTerms:
    """Assemble the batch loss.

    ``negatives`` is an int array (k, 3) of (A', r, B') rows.
    """
    like = params["concept_center"]
    ops = geo._ops(like)
    pos_sum = like.sum() * 0
    raw_pos, raw_reg, n_valid, skipped = 0.0, 0.0, 0, 0
    gids = compiled.group_of[batch]
    for g in np.unique(gids):
        group = compiled.groups[g]
        rows = compiled.row_of[batch[gids == g]]
        cols = _to_index(group.columns[:, rows], like)
        loss, valid = _group_losses(group, cols, params, cfg)
        term = loss
        reg = None
        if group.reg_columns.shape[0]:
            reg = _regulariser(_to_index(group.reg_columns[:, rows], like), params, cfg.norm)
            if cfg.reg_lambda:
                term = term + cfg.reg_lambda * reg
        if cfg.square_positive_term:
            term = term ** 2
        zero = ops.zeros_like(term)
        pos_sum = pos_sum + ops.where(valid, term, zero).sum()
        v = np.asarray(valid.detach().cpu().numpy() if geo._is_torch(valid) else valid)
        n_valid += int(v.sum())
        skipped += int((~v).sum())
        lv = loss.detach().cpu().numpy() if geo._is_torch(loss) else np.asarray(loss)
        raw_pos += float(np.where(v, lv, 0.0).sum())
        if reg is not None:
            rv = reg.detach().cpu().numpy() if geo._is_torch(reg) else np.asarray(reg)
            raw_reg += float(np.where(v, rv, 0.0).sum())
    neg_sum = like.sum() * 0
    raw_neg = 0.0
    if len(negatives):
        idx = _to_index(np.asarray(negatives, dtype=np.int64), like)
        a_idx, r_idx, b_idx = idx[:, 0], idx[:, 1], idx[:, 2]
        cc, co = params["concept_center"], params["concept_offset"]
        a_box = ExtendedBox(cc[a_idx], geo._abs(co[a_idx]), ops.ones_like(cc[a_idx]))
        b_box = ExtendedBox(cc[b_idx], geo._abs(co[b_idx]), ops.ones_like(cc[b_idx]))
        target = geo.exists_box(_role(params, r_idx), b_box, check=False)
        nl = geo.non_inclusion_loss(a_box, target, cfg.gamma, cfg.norm, cfg.non_inclusion_reading)
        neg_sum = nl.sum()
        raw_neg = float(neg_sum.detach() if geo._is_torch(neg_sum) else neg_sum)
    total = (pos_sum + neg_sum) / len(batch)
    if cfg.min_offset > 0:
        co = params["concept_offset"]
        floor = geo._norm(geo._relu(cfg.min_offset - geo._abs(co)), cfg.norm)
        total = total + floor.mean() if co.shape[0] else total
    return _BatchTerms(total, raw_pos, raw_reg, raw_neg, n_valid, len(negatives), skipped)


# ---------------------------------------------------------------------------
# Public loss functions (numpy, single model snapshot)
# ---------------------------------------------------------------------------


def _np_config(gamma, norm, **extra) -> "TrainConfig":
    cfg = TrainConfig(gamma=gamma, norm=norm, **extra)
    cfg.validate()
    return cfg


def axiom_loss(axiom: Axiom, model: EmbeddingModel, gamma: float = 0.0, norm: int = 2):
    """Inclusion loss of one axiom, or None when it is skipped (bottom filler)."""
    compiled = _compile_axioms([axiom], model)
    group = compiled.groups[0]
    loss, valid = _group_losses(group, group.columns, model.arrays(), _np_config(gamma, norm))
    if not bool(np.asarray(valid)[0]):
        return None
    return float(np.asarray(loss)[0])


def regularization_loss(axiom: Axiom, model: EmbeddingModel, norm: int = 2) -> float:
    """Sum over atomic-concept occurrences of ``||c(A) - 1||``."""
    compiled = _compile_axioms([axiom], model)
    group = compiled.groups[0]
    if not group.reg_columns.shape[0]:
        return 0.0
    return float(np.asarray(_regulariser(group.reg_columns, model.arrays(), norm))[0])


def _negative_rows(negatives: Iterable[SubClassOf], model: EmbeddingModel) -> np.ndarray:
    rows = []
    for neg in negatives:
        if not (
            isinstance(neg, SubClassOf)
            and isinstance(neg.lhs, Atomic)
            and isinstance(neg.rhs, Exists)
            and isinstance(neg.rhs.filler, Atomic)
        ):
            raise ValueError(f"negative samples must have the form A ⊑ ∃r.B, got {neg!r}")
        try:
            rows.append((model.concept_index[neg.lhs.name], model.role_index[neg.rhs.role],
                         model.concept_index[neg.rhs.filler.name]))
        except KeyError as exc:
            raise UnknownNameError([exc.args[0]]) from None
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def total_loss(
    batch: Sequence[Axiom],
    negatives: Sequence[SubClassOf],
    model: EmbeddingModel,
    gamma: float = 0.0,
    reg_lambda: float = 0.0,
    config: "TrainConfig | None" = None,
) -> float:
    """Batch objective: mean of squared positive terms plus negative penalties."""
    if not batch:
        raise ValueError("batch must be nonempty")
    cfg = config or _np_config(gamma, 2)
    cfg = TrainConfig(**{**asdict(cfg), "gamma": gamma, "reg_lambda": reg_lambda})
    compiled = _compile_axioms(list(batch), model)
    terms = _batch_terms(compiled, np.arange(len(batch)), _negative_rows(negatives, model),
                         model.arrays(), cfg)
    return float(terms.total)


# ---------------------------------------------------------------------------
# Negative sampling
# ---------------------------------------------------------------------------


def _nf3_triples(axioms: Sequence[Axiom], model: EmbeddingModel) -> tuple[np.ndarray, np.ndarray]:
    """Rows (A, r, B) of every ``A ⊑ ∃r.B`` axiom and their axiom positions."""
    triples, where = [], []
    for i, ax in enumerate(axioms):
        if (
            isinstance(ax, SubClassOf)
            and isinstance(ax.lhs, Atomic)
            and isinstance(ax.rhs, Exists)
            and isinstance(ax.rhs.filler, Atomic)
        ):
            triples.append((model.concept_index[ax.lhs.name], model.role_index[ax.rhs.role],
                            model.concept_index[ax.rhs.filler.name]))
            where.append(i)
    return (np.asarray(triples, dtype=np.int64).reshape(-1, 3),
            np.asarray(where, dtype=np.int64))


_MAX_RESAMPLES = 100


def _draw_negatives(triples: np.ndarray, count: int, n_concepts: int, forbidden: set,
                    rng: np.random.Generator) -> np.ndarray:
    if count == 0 or len(triples) == 0 or n_concepts == 0:
        return np.zeros((0, 3), dtype=np.int64)
    base = np.repeat(triples, count, axis=0)
    a = rng.integers(0, n_concepts, size=len(base))
    b = rng.integers(0, n_concepts, size=len(base))
    out = np.stack([a, base[:, 1], b], axis=1)
    keep = np.ones(len(out), dtype=bool)
    for i in range(len(out)):
        tries = 0
        while (int(out[i, 0]), int(out[i, 1]), int(out[i, 2])) in forbidden:
            if tries == _MAX_RESAMPLES:
                keep[i] = False
                break
            out[i, 0] = rng.integers(0, n_concepts)
            out[i, 2] = rng.integers(0, n_concepts)
            tries += 1
    return out[keep]


def sample_negatives(ontology: Ontology, count_per_axiom: int, seed: int) -> list:
    """Corrupt every ``A ⊑ ∃r.B`` into ``A' ⊑ ∃r.B'`` with uniform A', B'.

    Samples that coincide with a training axiom are redrawn.
    """
    concepts = ontology.concepts
    index = {name: i for i, name in enumerate(concepts)}
    roles = {name: i for i, name in enumerate(ontology.roles)}
    triples = []
    for ax in ontology.axioms:
        if (
            isinstance(ax, SubClassOf)
            and isinstance(ax.lhs, Atomic)
            and isinstance(ax.rhs, Exists)
            and isinstance(ax.rhs.filler, Atomic)
        ):
            triples.append((index[ax.lhs.name], roles[ax.rhs.role], index[ax.rhs.filler.name]))
    triples_arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    forbidden = {tuple(map(int, t)) for t in triples_arr}
    rng = np.random.default_rng(seed)
    rows = _draw_negatives(triples_arr, count_per_axiom, len(concepts), forbidden, rng)
    return [
        SubClassOf(Atomic(concepts[a]), Exists(ontology.roles[r], Atomic(concepts[b])))
        for a, r, b in rows
    ]


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    positive: float  # mean axiom loss over evaluated axioms
    negative: float  # mean non-inclusion loss over negatives
    regularization: float  # mean regulariser over evaluated axioms
    total: float  # mean batch objective
    skipped: int


@dataclass
class TrainResult:
    model: EmbeddingModel
    trace: list

    @property
    def final(self) -> EpochStats | None:
        return self.trace[-1] if self.trace else None


_PARAM_KEYS = ("concept_center", "concept_offset", "role_center", "role_offset",
               "individual_point")


def _torch_params(model: EmbeddingModel) -> dict:
    return {
        k: torch.tensor(v, dtype=torch.float64, requires_grad=True)
        for k, v in model.arrays().items()
    }


def train(
    ontology: Ontology,
    config: TrainConfig,
    model: EmbeddingModel | None = None,
    on_checkpoint: Callable[[int, EmbeddingModel], None] | None = None,
) -> TrainResult:
    """Fit a TransBox model to ``ontology`` with Adam.

    Existentials on right-hand sides are strengthened to exists-all first (when
    ``config.semantic_enhancement``), then assertions are rewritten as nominal
    GCIs. Negatives are redrawn every epoch from the un-enhanced
    ``A ⊑ ∃r.B`` axioms.
    """
    config.validate()
    violations = validate_el(ontology)
    if violations:
        raise ValueError("ontology is not valid EL++: " + "; ".join(map(str, violations[:5])))
    if model is None:
        model = init_model(ontology, config.dim, config.seed)
    elif model.dim != config.dim:
        raise ValueError(f"model dimension {model.dim} != config dimension {config.dim}")
    model = model.copy()
    model.metadata.update({"seed": config.seed, "config_digest": config.digest(), "epoch": 0})

    base = desugar_abox(ontology).axioms
    enhanced = semantic_enhance(ontology) if config.semantic_enhancement else ontology
    axioms = desugar_abox(enhanced).axioms
    if config.epochs == 0 or not axioms:
        return TrainResult(model, [])

    compiled = _compile_axioms(axioms, model)
    nf3, nf3_pos = _nf3_triples(base, model)
    forbidden = {tuple(map(int, t)) for t in nf3}
    nf3_of_axiom = np.full(len(axioms), -1, dtype=np.int64)
    nf3_of_axiom[nf3_pos] = np.arange(len(nf3_pos))

    params = _torch_params(model)
    opt = torch.optim.Adam(
        params.values(),
        lr=config.lr,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )
    rng = np.random.default_rng([config.seed, 1])
    trace: list = []
    n_concepts = len(model.concepts)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(axioms))
        pos = reg = neg = tot = 0.0
        n_pos = n_neg = skipped = 0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            picks = nf3_of_axiom[batch]
            negatives = _draw_negatives(nf3[picks[picks >= 0]], config.negatives, n_concepts,
                                        forbidden, rng)
            opt.zero_grad()
            terms = _batch_terms(compiled, batch, negatives, params, config)
            value = float(terms.total.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            terms.total.backward()
            opt.step()
            pos += terms.positive
            reg += terms.regular
            neg += terms.negative
            tot += value
            n_pos += terms.n_valid
            n_neg += terms.n_negatives
            skipped += terms.skipped
            n_batches += 1
        if skipped:
            log.warning("epoch %d: skipped %d axioms with bottom fillers", epoch, skipped)
        trace.append(EpochStats(
            epoch=epoch,
            positive=pos / n_pos if n_pos else 0.0,
            negative=neg / n_neg if n_neg else 0.0,
            regularization=reg / n_pos if n_pos else 0.0,
            total=tot / n_batches,
            skipped=skipped,
        ))
        if on_checkpoint and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            on_checkpoint(epoch, _snapshot(model, params, epoch, trace[-1]))
    return TrainResult(_snapshot(model, params, config.epochs, trace[-1]), trace)


def _snapshot(model: EmbeddingModel, params: dict, epoch: int, stats: EpochStats):
    out = model.with_arrays(**{k: params[k].detach().numpy().copy() for k in _PARAM_KEYS})
    out.metadata.update({"epoch": epoch, "loss": stats.total})
    return out


def write_trace_csv(trace: Sequence[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_positive_loss", "mean_negative_loss", "regularization",
                    "total", "skipped"])
        for s in trace:
            w.writerow([s.epoch, repr(s.positive), repr(s.negative), repr(s.regularization),
                        repr(s.total), s.skipped])


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def loss_and_gradient(model: EmbeddingModel, batch: Sequence[Axiom], config: TrainConfig,
                      negatives: Sequence[SubClassOf] = ()) -> tuple[float, dict]:
    """Batch objective and its gradient with respect to every parameter array."""
    if not batch:
        raise ValueError("batch must be nonempty")
    compiled = _compile_axioms(list(batch), model)
    params = _torch_params(model)
    terms = _batch_terms(compiled, np.arange(len(batch)), _negative_rows(negatives, model),
                         params, config)
    terms.total.backward()
    grads = {k: (params[k].grad.numpy().copy() if params[k].grad is not None
                 else np.zeros_like(params[k].detach().numpy())) for k in _PARAM_KEYS}
    return float(terms.total.detach()), grads


@dataclass(frozen=True)
class GradientCheckResult:
    max_relative_error: float
    probed: int
    skipped: int
    errors: tuple


def gradient_check(
    model: EmbeddingModel,
    batch: Sequence[Axiom],
    config: TrainConfig,
    probes: int = 50,
    seed: int = 0,
    negatives: Sequence[SubClassOf] = (),
    step: float = 1e-5,
    kink_radius: float = 1e-4,
) -> GradientCheckResult:
    """Compare autograd against central differences at random parameters.

    A parameter is skipped when moving it by ``kink_radius`` either way flips
    any branch of a non-smooth operation (abs, clipping, min/max, masks).
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    compiled = _compile_axioms(list(batch), model)
    neg_rows = _negative_rows(negatives, model)
    rows = np.arange(len(batch))
    _, grads = loss_and_gradient(model, batch, config, negatives)

    base = {k: v.copy() for k, v in model.arrays().items()}
    sizes = [base[k].size for k in _PARAM_KEYS]
    total = sum(sizes)
    if total == 0:
        raise ValueError("model has no parameters")
    offsets = np.cumsum([0] + sizes)

    def evaluate(key, flat, value, patterns=False):
        arrs = {k: v.copy() for k, v in base.items()}
        arrs[key].reshape(-1)[flat] = value
        tparams = {k: torch.tensor(v, dtype=torch.float64) for k, v in arrs.items()}
        if patterns:
            with geo.record_kinks() as pats:
                out = _batch_terms(compiled, rows, neg_rows, tparams, config).total
            return float(out), np.concatenate(pats) if pats else np.zeros(0, dtype=bool)
        return float(_batch_terms(compiled, rows, neg_rows, tparams, config).total)

    rng = np.random.default_rng(seed)
    errors, skipped = [], 0
    attempts = 0
    while len(errors) < probes and attempts < 50 * probes:
        attempts += 1
        p = int(rng.integers(0, total))
        a = int(np.searchsorted(offsets, p, side="right") - 1)
        key, flat = _PARAM_KEYS[a], p - offsets[a]
        x0 = float(base[key].reshape(-1)[flat])
        _, pat0 = evaluate(key, flat, x0, patterns=True)
        _, pat_lo = evaluate(key, flat, x0 - kink_radius, patterns=True)
        _, pat_hi = evaluate(key, flat, x0 + kink_radius, patterns=True)
        if not (np.array_equal(pat0, pat_lo) and np.array_equal(pat0, pat_hi)):
            skipped += 1
            continue
        numeric = (evaluate(key, flat, x0 + step) - evaluate(key, flat, x0 - step)) / (2 * step)
        analytic = float(grads[key].reshape(-1)[flat])
        scale = max(abs(analytic), abs(numeric))
        errors.append(0.0 if scale == 0 else abs(analytic - numeric) / max(scale, 1e-8))
    return GradientCheckResult(max(errors) if errors else 0.0, len(errors), skipped,
                               tuple(errors))
