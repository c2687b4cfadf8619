"""Small dense linear algebra helpers and the seeded RNG wrapper."""
from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit

EPS_EIG = 1e-8
MAX_SWEEPS = 100


class ShapeError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    pass


class SeededRng:
    """Deterministic random stream; a thin wrapper over ``numpy.random.Generator``."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def bernoulli(self, p, size=None) -> np.ndarray:
        return self.gen.random(size) < p

    def random(self, size=None):
        return self.gen.random(size)

    def binomial(self, n, p, size=None):
        return self.gen.binomial(n, p, size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)


# -- matrix ops ------------------------------------------------------------

def _as_matrix(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = _as_matrix(a, "left"), _as_matrix(b, "right")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return _as_matrix(a).T.copy()


def add(a, b) -> np.ndarray:
    a, b = _as_matrix(a, "left"), _as_matrix(b, "right")
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")
    return a + b


def scale(a, c: float) -> np.ndarray:
    return float(c) * _as_matrix(a)


# -- Jacobi eigensolver ----------------------------------------------------

@njit
def _jacobi_kernel(a, tol, max_sweeps):
    # a is overwritten; returns (eigvals, eigvecs, sweeps) or sweeps = -1 on failure
    n = a.shape[0]
    v = np.eye(n)
    fro = np.sqrt(np.sum(a * a))
    target = tol * fro * 1e-2
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if np.sqrt(2.0 * off) <= target or off == 0.0:
            return np.diag(a).copy(), v, sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # symmetric update: only rows/cols p and q change
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[k, p]
                    akq = a[k, q]
                    nkp = c * akp - s * akq
                    nkq = s * akp + c * akq
                    a[k, p] = nkp
                    a[p, k] = nkp
                    a[k, q] = nkq
                    a[q, k] = nkq
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return np.diag(a).copy(), v, -1


def _jacobi_numpy(a, tol, max_sweeps):
    # same rotations as the kernel, with row/column updates vectorised
    n = a.shape[0]
    v = np.eye(n)
    fro = np.sqrt(np.sum(a * a))
    target = tol * fro * 1e-2
    iu = np.triu_indices(n, 1)
    for sweep in range(max_sweeps):
        off = float(np.sum(a[iu] ** 2))
        if np.sqrt(2.0 * off) <= target or off == 0.0:
            return np.diag(a).copy(), v, sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, -1


def jacobi_eigh(m, tol: float = 1e-10, use_numba: bool | None = None):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrised first. Returns ``(U, lam)`` with ``lam`` sorted
    in descending order and ``M ~= U @ diag(lam) @ U.T``.
    """
    m = _as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"eigendecomposition needs a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    a = 0.5 * (m + m.T)
    if a.shape[0] == 0:
        return np.zeros((0, 0)), np.zeros(0)
    fast = HAVE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    solver = _jacobi_kernel if fast else _jacobi_numpy
    lam, u, sweeps = solver(np.ascontiguousarray(a), float(tol), MAX_SWEEPS)
    if sweeps < 0:
        raise ConvergenceError("eigensolver did not converge")
    order = np.argsort(-lam, kind="stable")
    return u[:, order], lam[order]


@njit
def _jacobi_batch_kernel(stack, tol, max_sweeps):
    b, n, _ = stack.shape
    lams = np.empty((b, n))
    vecs = np.empty((b, n, n))
    ok = True
    for i in range(b):
        a = 0.5 * (stack[i] + stack[i].T)
        lam, v, sweeps = _jacobi_kernel(a, tol, max_sweeps)
        if sweeps < 0:
            ok = False
        lams[i] = lam
        vecs[i] = v
    return lams, vecs, ok


def jacobi_eigh_batch(stack, tol: float = 1e-10):
    """Batched :func:`jacobi_eigh` over the leading axis of ``stack``."""
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise ShapeError(f"expected a stack of square matrices, got {stack.shape}")
    if not np.all(np.isfinite(stack)):
        raise ValueError("matrix stack has non-finite entries")
    if HAVE_NUMBA and stack.shape[0] > 0:
        lams, vecs, ok = _jacobi_batch_kernel(stack, float(tol), MAX_SWEEPS)
        if not ok:
            raise ConvergenceError("eigensolver did not converge")
        order = np.argsort(-lams, axis=1, kind="stable")
        lams = np.take_along_axis(lams, order, axis=1)
        vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
        return vecs, lams
    out_u = np.empty_like(stack)
    out_l = np.empty(stack.shape[:2])
    for i in range(stack.shape[0]):
        out_u[i], out_l[i] = jacobi_eigh(stack[i], tol)
    return out_u, out_l


def clamp_eigenvalues(lam, floor: float = EPS_EIG) -> np.ndarray:
    return np.maximum(lam, floor)


def sym_power(u, lam, power: float, floor: float = EPS_EIG) -> np.ndarray:
    """U diag(lam^power) U^T with eigenvalues clamped at ``floor``."""
    lam = clamp_eigenvalues(lam, floor)
    return (u * lam[..., None, :] ** power) @ np.swapaxes(u, -1, -2)
