"""Linear degradation operators with explicit SVD factors.

Every operator stores ``H = U diag(s) V^T`` with ``U`` (m, m) and ``V`` (n, n)
orthogonal and ``s`` of length ``min(m, n)``.  Structured kinds also keep their
direct formula (selection, block means, uniform filtering) which is used for
``apply``/``adjoint`` until the spectrum is modified by thresholding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import ndimage

# dense factors are (n, n); larger problems are out of desk scale
MAX_DIM = 4096

KINDS = ("dense", "mask", "block_average", "separable_blur")


@dataclass(frozen=True, eq=False)
class LinearOperator:
    U: np.ndarray
    singulars: np.ndarray
    V: np.ndarray
    kind: str = "dense"
    params: dict = field(default_factory=dict)
    # False once the spectrum no longer matches the kind's direct formula
    direct: bool = True

    def __post_init__(self):
        m, n = self.U.shape[0], self.V.shape[0]
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.U.shape != (m, m) or self.V.shape != (n, n):
            raise ValueError("U and V must be square")
        if self.singulars.shape != (min(m, n),):
            raise ValueError(f"expected {min(m, n)} singular values, got {self.singulars.shape}")
        if np.any(self.singulars < 0):
            raise ValueError("singular values must be nonnegative")
        for arr in (self.U, self.singulars, self.V):
            arr.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.singulars > 0))

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense ``H`` reconstructed from the SVD factors."""
        k = len(self.singulars)
        return (self.U[:, :k] * self.singulars) @ self.V[:, :k].T

    @cached_property
    def gram(self) -> np.ndarray:
        """``H^T H = V diag(s^2) V^T``."""
        k = len(self.singulars)
        vk = self.V[:, :k]
        return (vk * self.singulars**2) @ vk.T

    @cached_property
    def precond_diag(self) -> np.ndarray:
        """Diagonal of M = (I - S^+ S) + S^T S in the right-singular basis."""
        d = np.ones(self.shape[1])
        s = self.singulars
        d[: len(s)] = np.where(s > 0, s**2, 1.0)
        return d

    def __repr__(self):
        m, n = self.shape
        return f"LinearOperator(kind={self.kind!r}, shape=({m}, {n}), rank={self.rank})"

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_matrix(cls, matrix) -> "LinearOperator":
        h = np.atleast_2d(np.asarray(matrix, dtype=float))
        _check_dims(*h.shape)
        u, s, vt = np.linalg.svd(h, full_matrices=True)
        return cls(u, s, vt.T, "dense", {"matrix": h.copy()})

    @classmethod
    def identity(cls, n: int) -> "LinearOperator":
        return cls.mask(n, range(n))

    @classmethod
    def mask(cls, n: int, keep) -> "LinearOperator":
        """Coordinate selection ``x -> x[keep]`` (inpainting)."""
        keep = np.asarray(list(keep), dtype=int)
        _check_dims(len(keep), n)
        if len(np.unique(keep)) != len(keep) or np.any((keep < 0) | (keep >= n)):
            raise ValueError("mask indices must be distinct and within range")
        rest = np.setdiff1d(np.arange(n), keep)
        order = np.concatenate([keep, rest])
        v = np.eye(n)[:, order]
        m = len(keep)
        return cls(np.eye(m), np.ones(min(m, n)), v, "mask", {"n": n, "keep": keep})

    @classmethod
    def block_average(cls, shape, block: int) -> "LinearOperator":
        """Non-overlapping ``block``-wide means along every axis of ``shape``."""
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if any(s % block for s in shape):
            raise ValueError(f"shape {shape} is not divisible by block size {block}")
        factors = [_block_matrix(s, block) for s in shape]
        op = _kron_svd(factors)
        return replace(op, kind="block_average", params={"shape": shape, "block": int(block)})

    @classmethod
    def separable_blur(cls, shape, width: int) -> "LinearOperator":
        """Uniform ``width``-tap filter per axis with reflect boundaries."""
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if width < 1 or any(width > s for s in shape):
            raise ValueError(f"kernel width {width} does not fit shape {shape}")
        factors = [_blur_matrix(s, width) for s in shape]
        op = _kron_svd(factors)
        return replace(op, kind="separable_blur", params={"shape": shape, "width": int(width)})

    @classmethod
    def zero(cls, m: int, n: int) -> "LinearOperator":
        return cls.from_matrix(np.zeros((m, n)))

    # -- direct formulas ----------------------------------------------------

    def direct_apply(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "mask":
            return x[p["keep"]]
        if self.kind == "block_average":
            img = x.reshape(p["shape"])
            b = p["block"]
            for axis, size in enumerate(p["shape"]):
                new = img.shape[:axis] + (size // b, b) + img.shape[axis + 1:]
                img = img.reshape(new).mean(axis=axis + 1)
            return img.ravel()
        if self.kind == "separable_blur":
            img = x.reshape(p["shape"])
            return ndimage.uniform_filter(img, size=p["width"], mode="reflect").ravel()
        return p["matrix"] @ x

    def direct_adjoint(self, v: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "mask":
            out = np.zeros(p["n"])
            out[p["keep"]] = v
            return out
        if self.kind == "block_average":
            b = p["block"]
            img = v.reshape(tuple(s // b for s in p["shape"]))
            for axis in range(img.ndim):
                img = np.repeat(img, b, axis=axis) / b
            return img.ravel()
        return self.matrix.T @ v


def _check_dims(m, n):
    if m < 1 or n < 1:
        raise ValueError("operator dimensions must be positive")
    if max(m, n) > MAX_DIM:
        raise ValueError(f"operator dimension {max(m, n)} exceeds the cap of {MAX_DIM}")


def _block_matrix(size: int, block: int) -> np.ndarray:
    a = np.zeros((size // block, size))
    for i in range(size // block):
        a[i, i * block:(i + 1) * block] = 1.0 / block
    return a


def _blur_matrix(size: int, width: int) -> np.ndarray:
    # columns are responses to unit impulses, so the matrix matches the filter exactly
    return ndimage.uniform_filter1d(np.eye(size), size=width, axis=0, mode="reflect")


def _kron_svd(factors) -> LinearOperator:
    """SVD of ``kron(*factors)`` assembled from per-axis SVDs.

    Singular values of the Kronecker product are all products of the factor
    singular values; the right factor's columns are permuted so that
    ``H = U diag(s) V^T`` keeps the canonical rectangular-diagonal layout.
    """
    us, ss, vs = [], [], []
    for f in factors:
        u, s, vt = np.linalg.svd(f, full_matrices=True)
        us.append(u)
        ss.append(s)
        vs.append(vt.T)
    out_shape = tuple(f.shape[0] for f in factors)
    in_shape = tuple(f.shape[1] for f in factors)
    _check_dims(int(np.prod(out_shape)), int(np.prod(in_shape)))
    u = us[0]
    v = vs[0]
    for ui, vi in zip(us[1:], vs[1:]):
        u = np.kron(u, ui)
        v = np.kron(v, vi)
    # singular value at output multi-index (i_1..i_d) pairs with input column (i_1..i_d)
    diag_counts = [len(s) for s in ss]
    m = int(np.prod(out_shape))
    n = int(np.prod(in_shape))
    sing = np.zeros(m)
    paired_cols = np.full(m, -1)
    for flat in range(m):
        idx = np.unravel_index(flat, out_shape)
        if all(i < c for i, c in zip(idx, diag_counts)):
            sing[flat] = np.prod([s[i] for s, i in zip(ss, idx)])
            paired_cols[flat] = np.ravel_multi_index(idx, in_shape)
    k = min(m, n)
    # rows of U with no paired column carry zero singular values; move them last
    has = paired_cols >= 0
    row_order = np.concatenate([np.flatnonzero(has), np.flatnonzero(~has)])
    u = u[:, row_order]
    sing = sing[row_order]
    paired = paired_cols[row_order]
    used = paired[paired >= 0]
    rest = np.setdiff1d(np.arange(n), used)
    col_order = np.concatenate([used, rest])
    v = v[:, col_order]
    return LinearOperator(u, sing[:k].copy(), v, "dense", {"matrix": _kron_all(factors)})


def _kron_all(factors):
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(out, f)
    return out


# ---------------------------------------------------------------------------
# operations


def _vec(x, size, name):
    x = np.asarray(x, dtype=float)
    if x.shape != (size,):
        raise ValueError(f"{name} has shape {x.shape}, expected ({size},)")
    return x


def apply(op: LinearOperator, x) -> np.ndarray:
    """``H x``."""
    x = _vec(x, op.shape[1], "x")
    if op.direct:
        return op.direct_apply(x)
    return op.matrix @ x


def adjoint(op: LinearOperator, v) -> np.ndarray:
    """``H^T v``."""
    v = _vec(v, op.shape[0], "v")
    if op.direct:
        return op.direct_adjoint(v)
    return op.matrix.T @ v


def svd_apply(op: LinearOperator, x) -> np.ndarray:
    """``U diag(s) V^T x`` through the factors, never the direct formula."""
    x = _vec(x, op.shape[1], "x")
    k = len(op.singulars)
    return op.U[:, :k] @ (op.singulars * (op.V[:, :k].T @ x))


def threshold_singulars(op: LinearOperator, tau: float) -> LinearOperator:
    """Zero every singular value below ``tau``; U and V are kept."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    s = np.where(op.singulars < tau, 0.0, op.singulars)
    if np.array_equal(s, op.singulars):
        return op
    params = dict(op.params, tau=float(tau))
    return LinearOperator(op.U, s, op.V, op.kind, params, direct=False)


def preconditioner_solve(op: LinearOperator, g) -> np.ndarray:
    """``M^{-1} g`` with ``M = (I - S^+ S) + H^T H``, diagonal in the V basis."""
    g = _vec(g, op.shape[1], "g")
    d = op.precond_diag
    if np.all(d == 1.0):
        return g.copy()
    return op.V @ ((op.V.T @ g) / d)


def preconditioner_matrix(op: LinearOperator) -> np.ndarray:
    """Explicit dense ``M`` (for checks; the solver never forms it)."""
    n = op.shape[1]
    k = len(op.singulars)
    ind = np.zeros(n)
    ind[:k] = op.singulars > 0
    return np.eye(n) - (op.V * ind) @ op.V.T + op.matrix.T @ op.matrix
