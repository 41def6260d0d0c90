"""Precision-matrix factorizations used by the Gibbs samplers.

Each factor of a symmetric positive definite ``P`` offers ``logdet``,
``solve(b) = P^-1 b`` and ``noise(z)``, a vector with covariance ``P^-1``
built from standard normals ``z``.  With natural ordering the dense and
sparse factors produce the same ``noise`` (the Cholesky factor is unique),
which is what makes the two mixed-model paths reproduce each other.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg


class FactorError(np.linalg.LinAlgError):
    pass


class DenseFactor:
    def __init__(self, P: np.ndarray):
        try:
            self.L = linalg.cholesky(P, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise FactorError(f"Cholesky failed: {exc}") from None
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve(self, b):
        return linalg.cho_solve((self.L, True), b, check_finite=False)

    def noise(self, z):
        return linalg.solve_triangular(self.L, z, lower=True, trans="T", check_finite=False)


class DiagonalFactor:
    def __init__(self, d: np.ndarray):
        if np.any(d <= 0) or np.any(~np.isfinite(d)):
            raise FactorError("diagonal precision must be positive")
        self.d = d
        self.logdet = float(np.sum(np.log(d)))

    def solve(self, b):
        return b / self.d if b.ndim == 1 else b / self.d[:, None]

    def noise(self, z):
        return z / np.sqrt(self.d)


class SparseFactor:
    """LDL' of a sparse SPD matrix through SuperLU in symmetric mode.

    With no row pivoting and a symmetric permutation, ``Pr P Pr' = L U`` with
    ``U = D L'``, so ``logdet = sum log U_ii`` and ``Pr' U^-1 D^{1/2} z`` has
    covariance ``P^-1``.
    """

    def __init__(self, P, ordering: str = "MMD_AT_PLUS_A"):
        P = sparse.csc_matrix(P)
        try:
            self.lu = splinalg.splu(P, permc_spec=ordering, diag_pivot_thresh=0.0,
                                    options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise FactorError(f"sparse factorization failed: {exc}") from None
        if not np.array_equal(self.lu.perm_r, self.lu.perm_c):
            raise FactorError("sparse factorization pivoted off the diagonal")
        d = self.lu.U.diagonal()
        if np.any(d <= 0):
            raise FactorError("matrix is not positive definite")
        self.sqrt_d = np.sqrt(d)
        self.U = sparse.csr_matrix(self.lu.U)
        self.perm = self.lu.perm_r
        self.logdet = float(np.sum(np.log(d)))

    def solve(self, b):
        return self.lu.solve(np.asarray(b, dtype=float))

    def noise(self, z):
        y = splinalg.spsolve_triangular(self.U, self.sqrt_d * z, lower=False)
        # Pr maps row i to position perm_r[i]; undo it
        return y[self.perm]
