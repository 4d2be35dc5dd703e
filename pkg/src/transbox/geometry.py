"""Extended boxes over (R ∪ {∅})^n and the operations TransBox needs on them.

All functions accept either numpy arrays or torch tensors for the box fields,
with any number of leading batch dimensions; the last axis is the embedding
dimension. The numpy path is the public algebra; the torch path is what the
trainer differentiates through. Masks are computed from comparisons, so in
torch they never carry gradient.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExtendedBox",
    "GeometryError",
    "BottomFillerError",
    "plain_box",
    "point_box",
    "universal_box",
    "bottom_box",
    "intersect",
    "exists_box",
    "exists_all_box",
    "compose_roles",
    "box_distance",
    "inclusion_loss",
    "non_inclusion_loss",
    "contains_point",
    "is_disjoint_empty",
    "box_subset",
    "monte_carlo_intersection_probability",
    "record_kinks",
]


class GeometryError(ValueError):
    pass


class BottomFillerError(GeometryError):
    """An existential was applied to a filler with an empty (∅) component."""


def _is_torch(x) -> bool:
    return type(x).__module__.startswith("torch")


class _NumpyOps:
    where = staticmethod(np.where)
    maximum = staticmethod(np.maximum)
    minimum = staticmethod(np.minimum)
    abs = staticmethod(np.abs)

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def as_float(cond, like):
        return cond.astype(like.dtype if like.dtype.kind == "f" else np.float64)

    @staticmethod
    def norm(x, ord):
        if ord == 1:
            return np.abs(x).sum(axis=-1)
        return np.sqrt((x * x).sum(axis=-1))

    @staticmethod
    def ones_like(x):
        return np.ones_like(x)

    @staticmethod
    def zeros_like(x):
        return np.zeros_like(x)


class _TorchOps:
    def __init__(self):
        import torch

        self.torch = torch
        self.where = torch.where
        self.maximum = torch.maximum
        self.minimum = torch.minimum
        self.abs = torch.abs
        self.relu = torch.relu
        self.ones_like = torch.ones_like
        self.zeros_like = torch.zeros_like

    def as_float(self, cond, like):
        return cond.to(like.dtype)

    def norm(self, x, ord):
        # vector_norm has subgradient 0 at the origin; sqrt(sum(x²)) would give NaN.
        return self.torch.linalg.vector_norm(x, ord=ord, dim=-1)


_NP = _NumpyOps()
_TORCH: _TorchOps | None = None


def _ops(x):
    global _TORCH
    if _is_torch(x):
        if _TORCH is None:
            _TORCH = _TorchOps()
        return _TORCH
    return _NP


# Kink recording lets the gradient checker see whether a perturbation moved any
# non-smooth operation (abs, clip, min/max, mask threshold) across its switch.
_kinks: contextvars.ContextVar = contextvars.ContextVar("transbox_kinks", default=None)


class record_kinks:
    """Context manager collecting the boolean branch pattern of every kink."""

    def __enter__(self) -> list:
        self.patterns: list = []
        self._token = _kinks.set(self.patterns)
        return self.patterns

    def __exit__(self, *exc) -> None:
        _kinks.reset(self._token)


def _note(cond) -> None:
    sink = _kinks.get()
    if sink is not None:
        if _is_torch(cond):
            cond = cond.detach().cpu().numpy()
        sink.append(np.asarray(cond, dtype=bool).ravel())


def _norm(x, ord):
    _note(x != 0)
    return _ops(x).norm(x, ord)


def _relu(x):
    _note(x > 0)
    return _ops(x).relu(x)


def _abs(x):
    _note(x > 0)
    return _ops(x).abs(x)


@dataclass(frozen=True, eq=False)
class ExtendedBox:
    """Per-coordinate intervals ``[center - offset, center + offset]`` or ∅.

    ``mask[j] == 1`` means coordinate j holds an interval, 0 means the ∅
    component. ``universal`` marks ⊤ (the whole space); center and offset are
    then ignored.
    """

    center: object
    offset: object
    mask: object
    universal: bool = False

    @property
    def dim(self) -> int:
        return int(self.center.shape[-1])

    @property
    def lower(self):
        return self.center - self.offset

    @property
    def upper(self):
        return self.center + self.offset

    def numpy(self) -> "ExtendedBox":
        """Detached numpy copy (identity for numpy-backed boxes)."""
        if not _is_torch(self.center):
            return self
        return ExtendedBox(
            self.center.detach().cpu().numpy(),
            self.offset.detach().cpu().numpy(),
            self.mask.detach().cpu().numpy(),
            self.universal,
        )

    def row(self, i) -> "ExtendedBox":
        return ExtendedBox(self.center[i], self.offset[i], self.mask[i], self.universal)

    def same_as(self, other: "ExtendedBox", atol: float = 0.0) -> bool:
        """Structural equality of (center, offset, mask, universal)."""
        a, b = self.numpy(), other.numpy()
        if a.universal or b.universal:
            return a.universal == b.universal
        return (
            np.array_equal(a.mask, b.mask)
            and np.allclose(a.center, b.center, rtol=0, atol=atol)
            and np.allclose(a.offset, b.offset, rtol=0, atol=atol)
        )

    def __repr__(self) -> str:
        if self.universal:
            return "ExtendedBox(universal)"
        b = self.numpy()
        return f"ExtendedBox(center={b.center!r}, offset={b.offset!r}, mask={b.mask!r})"


def plain_box(center, offset) -> ExtendedBox:
    """Box with all-ones mask; ``offset`` must already be nonnegative."""
    center = np.asarray(center, dtype=np.float64) if not _is_torch(center) else center
    offset = np.asarray(offset, dtype=np.float64) if not _is_torch(offset) else offset
    if center.shape != offset.shape:
        raise GeometryError(f"center shape {center.shape} != offset shape {offset.shape}")
    if not _is_torch(offset) and np.any(offset < 0):
        raise GeometryError("offsets must be nonnegative")
    return ExtendedBox(center, offset, _ops(center).ones_like(center))


def point_box(x) -> ExtendedBox:
    x = np.asarray(x, dtype=np.float64) if not _is_torch(x) else x
    zeros = _ops(x).zeros_like(x)
    return ExtendedBox(x, zeros, _ops(x).ones_like(x))


def universal_box(n: int) -> ExtendedBox:
    return ExtendedBox(np.zeros(n), np.zeros(n), np.ones(n), universal=True)


def bottom_box(n: int) -> ExtendedBox:
    return ExtendedBox(np.zeros(n), np.zeros(n), np.zeros(n))


def _check_dims(*boxes) -> None:
    dims = {b.dim for b in boxes}
    if len(dims) != 1:
        raise GeometryError(f"dimension mismatch: {sorted(dims)}")


def is_disjoint_empty(b: ExtendedBox):
    """True where every component is ∅ (the all-zero mask)."""
    if b.universal:
        return False
    m = b.mask
    return (m == 0).all(-1) if _is_torch(m) else np.all(m == 0, axis=-1)


def _all_ones(mask):
    return bool((mask == 1).all()) if _is_torch(mask) else bool(np.all(mask == 1))


def intersect(b1: ExtendedBox, b2: ExtendedBox) -> ExtendedBox:
    """Componentwise intersection; non-overlapping coordinates become ∅.

    For an ∅ coordinate the center is the midpoint of the gap and the offset is
    zero. Those values are inert because every consumer multiplies by the mask.
    """
    _check_dims(b1, b2)
    if b1.universal:
        return b2
    if b2.universal:
        return b1
    ops = _ops(b1.center)
    lo1, lo2 = b1.lower, b2.lower
    hi1, hi2 = b1.upper, b2.upper
    _note(lo1 > lo2)
    _note(hi1 < hi2)
    lo = ops.maximum(lo1, lo2)
    hi = ops.minimum(hi1, hi2)
    overlap = hi >= lo
    _note(overlap)
    mask = b1.mask * b2.mask * ops.as_float(overlap, b1.center)
    center = (lo + hi) / 2
    offset = ops.where(mask > 0, (hi - lo) / 2, ops.zeros_like(center))
    return ExtendedBox(center, offset, mask)


def _require_plain(role: ExtendedBox, b: ExtendedBox, check: bool) -> None:
    _check_dims(role, b)
    if role.universal:
        raise GeometryError("a role box cannot be universal")
    if check and not _all_ones(role.mask):
        raise GeometryError("role boxes must have an all-ones mask")
    if check and not _all_ones(b.mask):
        raise BottomFillerError("existential filler has an empty (∅) component")


def exists_box(role: ExtendedBox, b: ExtendedBox, check: bool = True) -> ExtendedBox:
    """Box of ∃r.B: the Minkowski sum of the filler and the role box."""
    if b.universal:
        return b
    _require_plain(role, b, check)
    return ExtendedBox(role.center + b.center, role.offset + b.offset,
                       _ops(b.center).ones_like(b.center))


def exists_all_box(role: ExtendedBox, b: ExtendedBox, check: bool = True) -> ExtendedBox:
    """Box of points related by ``role`` to every point of ``b``."""
    if b.universal:
        # No bounded translation set reaches the whole space.
        return bottom_box(role.dim)
    _require_plain(role, b, check)
    return ExtendedBox(role.center + b.center, _relu(role.offset - b.offset),
                       _ops(b.center).ones_like(b.center))


def compose_roles(r: ExtendedBox, t: ExtendedBox) -> ExtendedBox:
    _check_dims(r, t)
    if r.universal or t.universal:
        raise GeometryError("role boxes cannot be universal")
    if not (_all_ones(r.mask) and _all_ones(t.mask)):
        raise GeometryError("role boxes must have an all-ones mask")
    return ExtendedBox(r.center + t.center, r.offset + t.offset, r.mask * t.mask)


def box_distance(b1: ExtendedBox, b2: ExtendedBox):
    """Per-coordinate ``|c1 - c2| - o1 - o2``; negative where the intervals overlap."""
    _check_dims(b1, b2)
    if b1.universal or b2.universal:
        raise GeometryError("distance to a universal box is undefined")
    return _abs(b1.center - b2.center) - b1.offset - b2.offset


def inclusion_loss(b1: ExtendedBox, b2: ExtendedBox, gamma: float = 0.0, norm: int = 2):
    """Masked inclusion loss; zero iff ``b1`` sits inside ``b2``.

    The first term pushes the offsets of ``b1`` to zero where ``b2`` is ∅;
    the second is the usual margin-shifted containment penalty on
    coordinates where both boxes are non-empty.
    """
    _check_dims(b1, b2)
    if b2.universal:
        z = b1.center[..., 0] * 0
        return float(z) if np.ndim(z) == 0 and not _is_torch(z) else z
    if b1.universal:
        raise GeometryError("the universal box is not included in a bounded box")
    m1, m2 = b1.mask, b2.mask
    first = _norm(b1.offset * m1 * (1 - m2), norm)
    excess = (box_distance(b1, b2) + 2 * b1.offset) * m1 * m2 - gamma
    second = _norm(_relu(excess), norm)
    return first + second


def non_inclusion_loss(
    b1: ExtendedBox,
    b2: ExtendedBox,
    gamma: float = 0.0,
    norm: int = 2,
    reading: str = "norm",
):
    """Penalty discouraging ``b1`` ⊆ ``b2``, applied to negative samples.

    ``reading="norm"`` evaluates ``(1 - ||max(0, -d - gamma)||)^2``.
    ``reading="coordinate"`` applies the bracket per coordinate and averages:
    ``mean_j (1 - max(0, -d_j - gamma))^2``.
    Both are smallest when the boxes overlap by depth 1. ``reading="gap"``
    mirrors the bracket, ``(1 - ||max(0, d + gamma)||)^2``, and is smallest
    when the boxes are separated by a gap of norm 1.
    """
    _check_dims(b1, b2)
    d = box_distance(b1, b2)
    if reading == "gap":
        return (1 - _norm(_relu(d + gamma), norm)) ** 2
    clipped = _relu(-d - gamma)
    if reading == "norm":
        return (1 - _norm(clipped, norm)) ** 2
    if reading == "coordinate":
        return ((1 - clipped) ** 2).mean(-1)
    raise ValueError(f"unknown non-inclusion reading {reading!r}")


def contains_point(b: ExtendedBox, x) -> bool:
    b = b.numpy()
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != b.dim:
        raise GeometryError(f"point has dimension {x.shape[-1]}, box has {b.dim}")
    if b.universal:
        return True
    if not np.all(b.mask == 1):
        return False
    return bool(np.all((b.lower <= x) & (x <= b.upper)))


def box_subset(inner: ExtendedBox, outer: ExtendedBox, atol: float = 0.0) -> bool:
    """Exact set containment by corner comparison (∅ components are empty sets)."""
    inner, outer = inner.numpy(), outer.numpy()
    if outer.universal:
        return True
    if inner.universal:
        return False
    if np.any(inner.mask == 0):
        # a product with an ∅ factor is the empty set
        return True
    if np.any(outer.mask == 0):
        return False
    return bool(
        np.all(outer.lower - atol <= inner.lower) and np.all(inner.upper <= outer.upper + atol)
    )


def monte_carlo_intersection_probability(
    n: int,
    samples: int,
    seed: int,
    shared_offset: bool = True,
    chunk: int = 20_000,
) -> float:
    """Fraction of random box pairs whose ordinary intersection is non-empty.

    Centers are uniform on [-1, 1]^n, offsets uniform on (0, 1]^n. With
    ``shared_offset`` both boxes of a pair use the same offset draw, which is
    the distribution under which the probability is exactly (2/3)^n; with
    independent offsets it is (17/24)^n.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if n < 1:
        raise ValueError("dimension must be >= 1")
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        c1 = rng.uniform(-1.0, 1.0, size=(k, n))
        c2 = rng.uniform(-1.0, 1.0, size=(k, n))
        o1 = 1.0 - rng.random(size=(k, n))
        o2 = o1 if shared_offset else 1.0 - rng.random(size=(k, n))
        hits += int(np.all(np.abs(c1 - c2) <= o1 + o2, axis=1).sum())
        done += k
    return hits / samples
