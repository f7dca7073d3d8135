"""Flattened tensor views, Khatri-Rao products, and small matrix helpers.

Every symmetric tensor of order ``ell`` over R^n is stored flattened in a
vector of length ``n**ell``.  The flattening convention (first index slowest,
1-based in the public API) is owned by :class:`FlatIndexMap`; every other
routine that reshapes between vector and matrix views of a tensor is
consistent with it because the convention coincides with row-major order.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "FlatIndexMap",
    "flatten_index",
    "khatri_rao",
    "khatri_rao_power",
    "multilinear_kr_square",
    "sigma_min",
    "pseudo_inverse",
    "rank1_deflatten",
]


def flatten_index(indices, n):
    """Map a 1-based multi-index to its 1-based flat position.

    The tuple ``(i_1, ..., i_ell)`` with entries in ``{1, ..., n}`` maps to

        1 + sum_j n**(ell - j) * (i_j - 1),

    i.e. row-major order with the first index varying slowest.

    Parameters
    ----------
    indices : sequence of int
        Multi-index with 1-based entries.
    n : int
        Dimension of each index.

    Returns
    -------
    int
        Flat position in ``{1, ..., n**ell}``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("dimension must be positive")
    if len(indices) == 0:
        raise ValueError("empty multi-index")
    pos = 0
    for i in indices:
        i = int(i)
        if not 1 <= i <= n:
            raise ValueError(f"index {i} out of range 1..{n}")
        pos = pos * n + (i - 1)
    return pos + 1


class FlatIndexMap:
    """Bijection between order-``ell`` multi-indices over ``{1..n}`` and
    flat positions ``{1..n**ell}``.

    This class is the single owner of the flattening convention; cumulant
    tensors, Khatri-Rao columns, and their matrix views all agree with it
    because the convention is plain row-major order.
    """

    def __init__(self, dimension, order):
        dimension = int(dimension)
        order = int(order)
        if dimension < 1 or order < 1:
            raise ValueError("dimension and order must be positive")
        self.dimension = dimension
        self.order = order
        self.size = dimension**order

    def to_flat(self, indices):
        """1-based multi-index -> 1-based flat position."""
        if len(indices) != self.order:
            raise ValueError(f"expected {self.order} indices, got {len(indices)}")
        return flatten_index(indices, self.dimension)

    def from_flat(self, position):
        """1-based flat position -> 1-based multi-index tuple."""
        position = int(position)
        if not 1 <= position <= self.size:
            raise ValueError(f"position {position} out of range 1..{self.size}")
        rest = position - 1
        out = []
        for _ in range(self.order):
            rest, r = divmod(rest, self.dimension)
            out.append(r + 1)
        return tuple(reversed(out))


def khatri_rao(a, b):
    """Column-wise Khatri-Rao product.

    Column ``k`` of the result is the flattened outer product of column ``k``
    of ``a`` with column ``k`` of ``b`` (equivalently their Kronecker
    product), flattened in the :class:`FlatIndexMap` convention.

    Parameters
    ----------
    a : ndarray, shape (p, m)
    b : ndarray, shape (q, m)

    Returns
    -------
    ndarray, shape (p * q, m)
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    p, m = a.shape
    q = b.shape[0]
    return (a[:, None, :] * b[None, :, :]).reshape(p * q, m)


def khatri_rao_power(a, ell):
    """``ell``-fold Khatri-Rao power of ``a``; column ``k`` is the flattened
    ``ell``-fold tensor power of column ``k``."""
    a = np.asarray(a, dtype=float)
    ell = int(ell)
    if ell < 1:
        raise ValueError("power must be >= 1")
    out = a
    for _ in range(ell - 1):
        out = khatri_rao(out, a)
    return out


def multilinear_kr_square(a):
    """Strictly-lower multilinear square of ``a``.

    Row ``(i, j)`` with ``i < j`` (lexicographic order) of the result holds
    ``a[i, k] * a[j, k]`` in column ``k``.  Compared with the plain Khatri-Rao
    square this keeps each unordered pair once and drops the diagonal, so its
    smallest singular value lower-bounds the one of ``khatri_rao_power(a, 2)``.

    Parameters
    ----------
    a : ndarray, shape (n, m), with n >= 2

    Returns
    -------
    ndarray, shape (n * (n - 1) / 2, m)
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least two rows")
    i, j = np.triu_indices(n, k=1)
    return a[i, :] * a[j, :]


def sigma_min(a):
    """Smallest singular value (of the min(m, n) values) of ``a``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or min(a.shape) == 0:
        raise ValueError("expected a nonempty matrix")
    return float(np.linalg.svd(a, compute_uv=False)[-1])


def pseudo_inverse(a):
    """Moore-Penrose pseudo-inverse with a relative singular value cutoff.

    Singular values below ``max(a.shape) * sigma_max * 1e-12`` are treated as
    zero.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or min(a.shape) == 0:
        raise ValueError("expected a nonempty matrix")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cutoff = max(a.shape) * (s[0] if s.size else 0.0) * 1e-12
    inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def rank1_deflatten(v, n, p):
    """Best rank-one symmetric factor of a flattened order-``p`` tensor.

    Given ``v`` approximately proportional to the flattened tensor power
    ``u**(tensor p)`` of some unit vector ``u``, return that unit vector.
    For ``p == 2`` the ``n x n`` reshape is symmetrized and the eigenvector of
    the largest-magnitude eigenvalue is taken; for ``p > 2`` the top left
    singular vector of the ``n x n**(p-1)`` reshape is used.  The sign is
    fixed so the largest-magnitude entry of the output is positive.

    Parameters
    ----------
    v : ndarray, length n**p
    n : int
    p : int, >= 1

    Returns
    -------
    ndarray, shape (n,), unit norm.
    """
    v = np.asarray(v, dtype=float).ravel()
    n = int(n)
    p = int(p)
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    if v.size != n**p:
        raise ValueError(f"expected length {n**p}, got {v.size}")
    if not np.any(v):
        raise ValueError("zero tensor has no rank-one factor")
    if p == 1:
        u = v.copy()
    elif p == 2:
        mat = v.reshape(n, n)
        mat = 0.5 * (mat + mat.T)
        w, vecs = np.linalg.eigh(mat)
        u = vecs[:, int(np.argmax(np.abs(w)))]
    else:
        mat = v.reshape(n, n ** (p - 1))
        left, _, _ = np.linalg.svd(mat, full_matrices=False)
        u = left[:, 0]
    u = u / np.linalg.norm(u)
    k = int(np.argmax(np.abs(u)))
    if u[k] < 0:
        u = -u
    return u
