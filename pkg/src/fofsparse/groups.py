"""Overlapping d x d coefficient blocks over an M x L coefficient matrix.

Coefficients are addressed through the column-major vectorization
``j = m + l * M`` (0-based), so that ``vec(A @ Psi @ B) = kron(B.T, A) @ vec(Psi)``.
Block ``b`` (1-based, ``b = 1..B``) has its top-left corner at
``(ceil(b / (L-d+1)), b mod (L-d+1))`` in 1-based matrix indices, where a zero
remainder stands for column ``L-d+1``. One extra group holds every
coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "GroupStructure",
    "RectangleSet",
    "block_origin",
    "enumerate_blocks",
    "balance_weights",
    "block_structure",
    "group_norms",
    "zero_rectangles",
]


def block_origin(b: int, L: int, d: int) -> tuple[int, int]:
    """1-based top-left corner ``(m*, l*)`` of block ``b`` (1-based)."""
    per_row = L - d + 1
    q, r = divmod(int(b), per_row)
    if r == 0:
        return q, per_row
    return q + 1, r


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """Block groups plus the global group, with optional balancing weights.

    Attributes
    ----------
    dims : (M, L, d)
    groups : tuple of int arrays
        Column-major coefficient indices of each group; the last one is global.
    weights : ndarray of shape (num_groups, M * L) or None
        Row ``b`` is ``c_b``: the balancing constant on members of group ``b``
        and zero elsewhere. ``None`` until :func:`balance_weights` is applied.
    """

    dims: tuple[int, int, int]
    groups: tuple[NDArray[np.intp], ...]
    weights: NDArray[np.float64] | None = None

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def num_blocks(self) -> int:
        return len(self.groups) - 1

    @property
    def num_coef(self) -> int:
        M, L, _ = self.dims
        return M * L

    @cached_property
    def membership(self) -> NDArray[np.bool_]:
        """Boolean ``(num_groups, M*L)`` indicator matrix."""
        S = np.zeros((self.num_groups, self.num_coef), dtype=bool)
        for b, idx in enumerate(self.groups):
            S[b, idx] = True
        S.setflags(write=False)
        return S

    @cached_property
    def counts(self) -> NDArray[np.int64]:
        """Number of groups containing each coefficient."""
        return self.membership.sum(axis=0).astype(np.int64)

    @cached_property
    def balance(self) -> NDArray[np.float64]:
        """Per-coefficient balancing constant ``1 / counts``."""
        return 1.0 / self.counts

    @cached_property
    def weights_sq(self) -> NDArray[np.float64]:
        return self._require_weights() ** 2

    @cached_property
    def penalty_diag(self) -> NDArray[np.float64]:
        """Diagonal of ``sum_b D_b^2``."""
        return self.weights_sq.sum(axis=0)

    def block_index(self, m: int, l: int) -> int:
        """0-based group index of the block whose top-left corner is ``(m, l)`` (0-based)."""
        M, L, d = self.dims
        return m * (L - d + 1) + l

    def _require_weights(self) -> NDArray[np.float64]:
        if self.weights is None:
            raise ValueError("balancing weights not set; call balance_weights first")
        return self.weights


def enumerate_blocks(M: int, L: int, d: int) -> GroupStructure:
    """All ``(M-d+1)(L-d+1)`` overlapping d x d blocks plus the global group."""
    M, L, d = int(M), int(L), int(d)
    if d < 1:
        raise ValueError("block size d must be at least 1")
    if M < d or L < d:
        raise ValueError(f"coefficient matrix {M}x{L} is smaller than the {d}x{d} block")
    n_blocks = (M - d + 1) * (L - d + 1)
    rows = np.arange(d)
    groups = []
    for b in range(1, n_blocks + 1):
        m0, l0 = block_origin(b, L, d)
        mm, ll = np.meshgrid(m0 - 1 + rows, l0 - 1 + rows, indexing="ij")
        groups.append(np.sort((mm + ll * M).ravel()))
    groups.append(np.arange(M * L))
    return GroupStructure(dims=(M, L, d), groups=tuple(groups))


def balance_weights(structure: GroupStructure) -> GroupStructure:
    """Fill ``c_b = vec(S_b * C)`` with ``C_ml`` = 1 / (number of groups containing ``(m, l)``)."""
    S = structure.membership
    counts = S.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError("every coefficient must belong to at least one group")
    W = S * (1.0 / counts)[None, :]
    W.setflags(write=False)
    return GroupStructure(dims=structure.dims, groups=structure.groups, weights=W)


def block_structure(M: int, L: int, d: int) -> GroupStructure:
    """Shorthand for ``balance_weights(enumerate_blocks(M, L, d))``."""
    return balance_weights(enumerate_blocks(M, L, d))


def group_norms(psi: ArrayLike, structure: GroupStructure) -> NDArray[np.float64]:
    """Euclidean norms ``||D_b psi||_2`` for every group."""
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 2:
        psi = psi.ravel(order="F")
    if psi.shape != (structure.num_coef,):
        raise ValueError(f"psi has {psi.size} entries, expected {structure.num_coef}")
    return np.sqrt(structure.weights_sq @ (psi * psi))


@dataclass(frozen=True, eq=False)
class RectangleSet:
    """Rectangles ``(tau_m, tau_{m+1}) x (sigma_l, sigma_{l+1})`` indexed 0-based by ``(m, l)``."""

    indices: tuple[tuple[int, int], ...]
    t_breaks: NDArray[np.float64]
    s_breaks: NDArray[np.float64]

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, item) -> bool:
        return tuple(item) in set(self.indices)

    def bounds(self) -> list[tuple[float, float, float, float]]:
        """``(t_lo, t_hi, s_lo, s_hi)`` for each rectangle."""
        t, s = self.t_breaks, self.s_breaks
        return [(float(t[m]), float(t[m + 1]), float(s[l]), float(s[l + 1])) for m, l in self.indices]

    def area(self) -> float:
        return float(sum((t1 - t0) * (s1 - s0) for t0, t1, s0, s1 in self.bounds()))

    def mask(self) -> NDArray[np.bool_]:
        """Boolean ``(len(t_breaks)-1, len(s_breaks)-1)`` map of covered cells."""
        out = np.zeros((self.t_breaks.size - 1, self.s_breaks.size - 1), dtype=bool)
        for m, l in self.indices:
            out[m, l] = True
        return out

    def contains(self, t: ArrayLike, s: ArrayLike) -> NDArray[np.bool_]:
        """Whether each point ``(t, s)`` lies in the open interior of some rectangle."""
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        inside = np.zeros(np.broadcast(t, s).shape, dtype=bool)
        for t0, t1, s0, s1 in self.bounds():
            inside |= (t > t0) & (t < t1) & (s > s0) & (s < s1)
        return inside


def zero_rectangles(
    Psi: ArrayLike,
    structure: GroupStructure,
    threshold: float = 0.0,
    t_breaks: ArrayLike | None = None,
    s_breaks: ArrayLike | None = None,
) -> RectangleSet:
    """Rectangles whose d x d coefficient block is entirely ``<= threshold`` in magnitude.

    ``t_breaks``/``s_breaks`` are the distinct knots of the two bases; when
    omitted, evenly spaced knots on ``[0, 1]`` are assumed.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    M, L, d = structure.dims
    t_breaks = np.linspace(0, 1, M - d + 2) if t_breaks is None else np.asarray(t_breaks, float)
    s_breaks = np.linspace(0, 1, L - d + 2) if s_breaks is None else np.asarray(s_breaks, float)
    if t_breaks.size != M - d + 2 or s_breaks.size != L - d + 2:
        raise ValueError("breakpoints do not match the block structure")
    P = np.asarray(Psi, dtype=float)
    if P.ndim == 1:
        P = P.reshape((M, L), order="F")
    if P.shape != (M, L):
        raise ValueError(f"Psi has shape {P.shape}, expected {(M, L)}")
    small = np.abs(P) <= threshold
    # A block is zero when its d x d window of `small` is all True; count via 2-D prefix sums.
    c = np.zeros((M + 1, L + 1), dtype=np.int64)
    c[1:, 1:] = np.cumsum(np.cumsum(small, axis=0), axis=1)
    win = c[d:, d:] - c[:-d, d:] - c[d:, :-d] + c[:-d, :-d]
    ms, ls = np.nonzero(win == d * d)
    idx = tuple((int(m), int(l)) for m, l in zip(ms, ls))
    return RectangleSet(indices=idx, t_breaks=t_breaks, s_breaks=s_breaks)
