"""Preconditioned CG for the SPD systems of the forward and Poisson solves."""
from __future__ import annotations

import logging

import numpy as np
import pyamg
from scipy.sparse.linalg import cg

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SPDSolver:
    """CG on a sparse SPD matrix with a smoothed-aggregation AMG preconditioner."""

    def __init__(self, A):
        self.A = A.tocsr()
        # 'local' weighting avoids pyamg's randomized spectral-radius estimate,
        # which would make reruns differ in the last bits
        self._ml = pyamg.smoothed_aggregation_solver(
            self.A, max_coarse=500, smooth=("jacobi", {"omega": 4.0 / 3.0, "weighting": "local"}))
        self._M = self._ml.aspreconditioner(cycle="V")

    def solve(self, b, tol=1e-10, maxiter=None):
        b = np.asarray(b, dtype=np.float64)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b), 0
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = cg(self.A, b, rtol=tol, atol=0.0, maxiter=maxiter,
                     M=self._M, callback=cb)
        res = np.linalg.norm(b - self.A @ x) / nb
        log.debug("cg: %d iterations, relative residual %.3e", count[0], res)
        # the recurrence residual may undershoot the true one by rounding
        if info != 0 or res > 10 * tol:
            raise SolverError(
                f"CG did not converge: relative residual {res:.3e} after "
                f"{count[0]} iterations (tol {tol:g})", residual=res,
                iterations=count[0])
        return x, count[0]
