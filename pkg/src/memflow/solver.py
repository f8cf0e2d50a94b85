"""Direct and preconditioned Krylov solves of the coupled block system.

The Krylov methods act on the symmetrically scaled reduced operator
``S^-1 E^T B E S^-1`` where ``S^2 = E^T E``.  The columns of ``E S^-1`` are
orthonormal, so the scaled operator is the product operator restricted to the
range of the orthogonal projection onto the identified unknowns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockSystem

log = logging.getLogger(__name__)

METHODS = ("auto", "direct", "bicgstab", "gmres")


class SingularSystemError(RuntimeError):
    """A matrix could not be factorized."""


class SolverFailure(RuntimeError):
    """Both the Krylov and the direct path failed."""


@dataclass(frozen=True)
class SolverConfig:
    """Linear solver settings.

    ``method="auto"`` picks BiCGSTAB for C1 = 0 and GMRES for C1 = 1.
    """

    method: str = "auto"
    tol: float = 1e-12
    maxit: int = 1000
    restart: int = 50
    precondition: bool = True
    fallback: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.maxit < 1 or self.restart < 1:
            raise ValueError("maxit and restart must be positive")

    def resolve(self, c1: int) -> str:
        if self.method != "auto":
            return self.method
        return "gmres" if c1 else "bicgstab"


class Factorization:
    """Sparse LU factorization usable for repeated solves."""

    def __init__(self, matrix, name: str = "matrix"):
        m = sp.csc_matrix(matrix)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"{name} is not square: {m.shape}")
        self.name = name
        self.shape = m.shape
        if m.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(m)
        except RuntimeError as exc:
            raise SingularSystemError(f"{name} is singular: {exc}") from exc
        d = np.abs(self._lu.U.diagonal())
        if not np.all(np.isfinite(d)) or d.min() == 0.0:
            raise SingularSystemError(f"{name} is singular to working precision")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros_like(b)
        return self._lu.solve(np.asarray(b, dtype=float))


def factorize(matrix, name: str = "matrix") -> Factorization:
    return Factorization(matrix, name)


@dataclass
class SolveResult:
    z: np.ndarray  # reduced solution
    fields: dict
    iterations: int
    method: str
    residual: float  # relative residual of the reduced system
    fell_back: bool = False


class CoupledSolver:
    """Holds factorizations of one assembled system for repeated solves."""

    def __init__(self, system: BlockSystem, config: SolverConfig | None = None):
        self.system = system
        self.config = config or SolverConfig()
        self.method = self.config.resolve(system.c1)
        self.K = system.reduced_matrix
        self.s = system.scale
        self._direct = None
        self._prec = None

    # -- pieces -----------------------------------------------------------
    def direct_factorization(self) -> Factorization:
        if self._direct is None:
            self._direct = factorize(self.K, "coupled reduced operator")
        return self._direct

    def _scaled_operator(self) -> spla.LinearOperator:
        inv = 1.0 / self.s
        K = self.K
        n = K.shape[0]
        return spla.LinearOperator((n, n), matvec=lambda v: inv * (K @ (inv * v)), dtype=float)

    def _preconditioner(self) -> spla.LinearOperator | None:
        if not self.config.precondition:
            return None
        if self._prec is None:
            sys = self.system
            E = sys.E
            inv = 1.0 / self.s
            if sys.c1:
                lu = factorize(sys.B, "coupled product operator")
                apply_prod = lu.solve
            else:
                lus = [(sys.product_offsets[i], factorize(b.B, f"phase {i} block"))
                       for i, b in sys.blocks.items()]

                def apply_prod(r):
                    out = np.zeros_like(r)
                    for off, lu in lus:
                        n = lu.shape[0]
                        out[off:off + n] = lu.solve(r[off:off + n])
                    return out

            n = self.K.shape[0]
            self._prec = spla.LinearOperator(
                (n, n), matvec=lambda v: inv * (E.T @ apply_prod(E @ (inv * v))), dtype=float
            )
        return self._prec

    # -- solves ------------------------------------------------------------
    def solve(self, rhs: np.ndarray, x0: np.ndarray | None = None) -> SolveResult:
        """Solve K z = rhs for a reduced right-hand side.

        ``x0`` is an optional initial guess for the Krylov methods.
        """
        rhs = np.asarray(rhs, float)
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            z = np.zeros_like(rhs)
            return SolveResult(z, self.system.unpack(z), 0, self.method, 0.0)
        if self.method == "direct":
            z = self.direct_factorization().solve(rhs)
            return SolveResult(z, self.system.unpack(z), 0, "direct", self._residual(z, rhs))

        z, its, ok = self._krylov(rhs, x0)
        res = self._residual(z, rhs) if ok else np.inf
        if ok and np.isfinite(res):
            return SolveResult(z, self.system.unpack(z), its, self.method, res)
        if not self.config.fallback:
            raise SolverFailure(f"{self.method} did not converge in {its} iterations")
        log.warning("%s stagnated after %d iterations; using direct solve", self.method, its)
        try:
            z = self.direct_factorization().solve(rhs)
        except SingularSystemError as exc:
            raise SolverFailure(f"Krylov and direct paths failed: {exc}") from exc
        res = self._residual(z, rhs)
        if not np.isfinite(res):
            raise SolverFailure(f"direct solve produced non-finite residual {res}")
        return SolveResult(z, self.system.unpack(z), its, "direct", res, fell_back=True)

    def _residual(self, z, rhs) -> float:
        return float(np.linalg.norm(self.K @ z - rhs) / np.linalg.norm(rhs))

    def _krylov(self, rhs, x0=None):
        cfg = self.config
        A = self._scaled_operator()
        M = self._preconditioner()
        b = rhs / self.s
        if x0 is not None:
            x0 = np.asarray(x0, float) * self.s
            if not np.all(np.isfinite(x0)):
                x0 = None
        count = [0]

        def cb(*_):
            count[0] += 1

        if self.method == "bicgstab":
            x, info = spla.bicgstab(A, b, rtol=cfg.tol, atol=0.0, maxiter=cfg.maxit, M=M, callback=cb,
                                 x0=x0)
        else:
            outer = max(1, math.ceil(cfg.maxit / cfg.restart))
            x, info = spla.gmres(A, b, rtol=cfg.tol, atol=0.0, restart=cfg.restart, maxiter=outer,
                                 M=M, callback=cb, callback_type="pr_norm", x0=x0)
        ok = info == 0 and np.all(np.isfinite(x))
        return x / self.s, count[0], ok


def solve_coupled(system: BlockSystem, config: SolverConfig | None = None, rhs=None) -> SolveResult:
    """One-shot solve of the coupled system with its assembled right-hand side."""
    solver = CoupledSolver(system, config)
    return solver.solve(system.reduced_rhs() if rhs is None else rhs)
