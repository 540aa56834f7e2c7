"""Matrix-free cut operators: anything that can apply W and report degrees.

Every concrete operator (dense oracle, bilateral grid, non-local means,
windowed brute force) subclasses :class:`CutOperator`, so the eigensolver and
segmenter never know which one they are driving.
"""

from __future__ import annotations

import numpy as np


class DegenerateGraphError(RuntimeError):
    """The operator (or the graph behind it) cannot support a cut."""


class CutOperator:
    """Linear operator ``v -> W v`` with cached degrees ``d = W 1``.

    Subclasses implement :meth:`_apply`, which receives a float64 array of
    shape ``(n,)`` or ``(n, c)`` and must return the same shape.  A block of
    ``c`` columns counts as ``c`` filter applications.
    """

    n: int

    def __init__(self, n: int):
        self.n = int(n)
        self.applications = 0
        self._degree = None

    def _apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_w(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.n or v.ndim > 2:
            raise ValueError(f"expected vector of length {self.n}, got shape {v.shape}")
        self.applications += 1 if v.ndim == 1 else v.shape[1]
        return self._apply(v)

    def degree(self) -> np.ndarray:
        if self._degree is None:
            self._degree = self.apply_w(np.ones(self.n))
            self._degree.setflags(write=False)
        return self._degree

    def filter(self, v) -> np.ndarray:
        """Normalized filter ``D^-1 W v``."""
        d = np.maximum(self.degree(), 1e-12)
        out = self.apply_w(v)
        return out / (d if out.ndim == 1 else d[:, None])


class MatrixOperator(CutOperator):
    """Explicit symmetric matrix; used for the dense oracle and for tests."""

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("matrix must be square")
        super().__init__(matrix.shape[0])
        self.matrix = matrix

    def _apply(self, v):
        return self.matrix @ v


class MaskedOperator(CutOperator):
    """Principal-submatrix restriction ``W|_S`` of another operator.

    Vectors on ``S`` are zero-extended to the full pixel set, pushed through
    the parent, and read back on ``S`` only; this is exact for any linear
    parent.  Degrees are therefore degrees *within* ``S``.
    """

    def __init__(self, parent: CutOperator, mask):
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.size != parent.n:
            raise ValueError("mask length must match the parent operator")
        self.parent = parent
        self.index = np.flatnonzero(mask)
        super().__init__(self.index.size)

    def _apply(self, v):
        full = np.zeros((self.parent.n,) + v.shape[1:])
        full[self.index] = v
        return self.parent.apply_w(full)[self.index]
