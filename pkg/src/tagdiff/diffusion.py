"""Diffusion operators and precomputed Simple-GCN / SIGN feature blocks.

Operator powers are never formed: the k-th power of an operator is applied
to the features as k successive sparse-times-dense products, each reusing
the previous result.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InvalidInputError
from .sparse import (
    add_identity,
    as_dense,
    elementwise_max,
    hadamard,
    row_sums,
    scale_cols,
    scale_rows,
    spgemm,
    spmm_dense,
    strip_diagonal,
    transpose,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PprParams:
    """Teleport probability and stopping rule of the PPR power iteration."""

    alpha: float = 0.15
    tol: float = 1e-8
    max_iter: int = 1000

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.tol > 0.0:
            raise InvalidInputError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidInputError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class SignConfig:
    """Number of GCN (``s``), PPR (``p``) and triangle (``t``) powers."""

    s: int = 3
    p: int = 0
    t: int = 0
    ppr: PprParams = field(default_factory=PprParams)

    def __post_init__(self):
        if min(self.s, self.p, self.t) < 0 or self.s + self.p + self.t < 1:
            raise InvalidInputError(f"invalid SIGN powers {(self.s, self.p, self.t)}")

    @property
    def powers(self):
        return (self.s, self.p, self.t)

    @property
    def n_blocks(self):
        return 1 + self.s + self.p + self.t


@dataclass
class PprDiffusion:
    powers: list
    converged: bool
    iterations: list
    deltas: list


@dataclass
class DiffusedFeatures:
    """Ordered feature blocks: raw X, then GCN, PPR and triangle powers."""

    blocks: list
    n_nodes: int
    operator_nnz: dict = field(default_factory=dict)
    converged: bool = True

    @property
    def labels(self):
        return [label for label, _ in self.blocks]

    def concat(self):
        return np.hstack([m for _, m in self.blocks])

    def __getitem__(self, label):
        for name, m in self.blocks:
            if name == label:
                return m
        raise KeyError(label)


def _check_square(a):
    if a.n_rows != a.n_cols:
        raise InvalidInputError(f"operator must be square, got {a.shape}")


def symmetrize(a):
    """Entrywise ``max(A, A^T)``."""
    _check_square(a)
    return elementwise_max(a, transpose(a))


def gcn_normalize(a):
    """``(D+I)^{-1/2} (A+I) (D+I)^{-1/2}`` with D the weighted row sums of ``a``."""
    _check_square(a)
    deg = row_sums(a) + 1.0
    if np.any(deg <= 0.0):
        raise InvalidInputError("negative edge weights give a non-positive degree")
    d = 1.0 / np.sqrt(deg)
    return scale_cols(scale_rows(add_identity(a), d), d)


def rw_normalize(a):
    """Column-stochastic walk matrix.

    Entry ``(j, i)`` is ``A[i, j] / deg(i)``: the walker at ``i`` leaves along
    one of its out-edges.  Columns of nodes without out-edges stay zero, so
    dangling mass is dropped rather than redistributed.
    """
    _check_square(a)
    deg = row_sums(a)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg != 0.0)
    return transpose(scale_rows(a, inv))


def ppr_diffuse(a_rw, x, params=None, n_powers=1, n_threads=1):
    """Approximate successive PPR powers of ``x`` by fixed-point iteration.

    Each power iterates ``Z <- (1-alpha) W Z + alpha S`` from ``Z = S`` until
    the max-abs update is at most ``params.tol``; the source ``S`` is ``x`` for
    the first power and the previous power afterwards.
    """
    params = params or PprParams()
    _check_square(a_rw)
    x = as_dense(x)
    if a_rw.n_cols != x.shape[0]:
        raise InvalidInputError(f"operator {a_rw.shape} does not match features {x.shape}")
    if n_powers < 1:
        raise InvalidInputError("n_powers must be >= 1")
    damp, alpha = 1.0 - params.alpha, params.alpha
    powers, iterations, deltas = [], [], []
    converged = True
    source = x
    for _ in range(n_powers):
        teleport = alpha * source
        z = source
        trace = []
        for _ in range(params.max_iter):
            z_new = damp * spmm_dense(a_rw, z, n_threads=n_threads) + teleport
            delta = float(np.max(np.abs(z_new - z))) if z.size else 0.0
            trace.append(delta)
            z = z_new
            if delta <= params.tol:
                break
        else:
            converged = False
            log.warning("PPR iteration stopped at max_iter=%d with delta %.3g",
                        params.max_iter, trace[-1])
        powers.append(z)
        iterations.append(len(trace))
        deltas.append(trace)
        source = z
    return PprDiffusion(powers, converged, iterations, deltas)


def triangle_adjacency(a):
    """``A^T * (A @ A)`` on the binary pattern of ``a`` without self-loops.

    Entry ``(i, j)`` counts the nodes ``k`` with ``i -> k -> j -> i``.  The
    product is only evaluated on the pattern of ``A^T``, so the full square
    of the adjacency is never held in memory.
    """
    _check_square(a)
    p = strip_diagonal(a).pattern()
    pt = transpose(p)
    return hadamard(pt, spgemm(p, p, mask=pt))


def apply_powers(op, x, k, n_threads=1):
    """Return ``[op x, op^2 x, ..., op^k x]`` by repeated sparse products."""
    _check_square(op)
    x = as_dense(x)
    if op.n_cols != x.shape[0]:
        raise InvalidInputError(f"operator {op.shape} does not match features {x.shape}")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    out = []
    h = x
    for _ in range(k):
        h = spmm_dense(op, h, n_threads=n_threads)
        out.append(h)
    return out


def simple_gcn_features(a, x, k, symmetrize_graph=True, n_threads=1):
    """``A_GCN^k X`` computed as k sparse products."""
    base = symmetrize(a) if symmetrize_graph else a
    return apply_powers(gcn_normalize(base), x, k, n_threads=n_threads)[-1]


def build_sign_features(a, x, cfg, symmetrize_graph=True, n_threads=1,
                        require_convergence=False):
    """Raw features followed by GCN, PPR and triangle diffusion powers.

    Only the GCN operator sees the symmetrized graph; the PPR and triangle
    operators are built from the directed adjacency.
    """
    _check_square(a)
    x = as_dense(x)
    if a.n_rows != x.shape[0]:
        raise InvalidInputError(f"graph has {a.n_rows} nodes but features have {x.shape[0]} rows")
    blocks = [("x", x)]
    nnz = {"adjacency": a.nnz}
    converged = True
    if cfg.s:
        a_gcn = gcn_normalize(symmetrize(a) if symmetrize_graph else a)
        nnz["gcn"] = a_gcn.nnz
        blocks += [(f"gcn^{m}", h) for m, h in
                   enumerate(apply_powers(a_gcn, x, cfg.s, n_threads), start=1)]
    if cfg.p:
        a_rw = rw_normalize(a)
        nnz["ppr"] = a_rw.nnz
        res = ppr_diffuse(a_rw, x, cfg.ppr, cfg.p, n_threads)
        if not res.converged and require_convergence:
            raise ConvergenceError(f"PPR did not converge within {cfg.ppr.max_iter} iterations")
        converged = res.converged
        blocks += [(f"ppr^{m}", h) for m, h in enumerate(res.powers, start=1)]
    if cfg.t:
        a_tri = gcn_normalize(triangle_adjacency(a))
        nnz["triangle"] = a_tri.nnz
        blocks += [(f"tri^{m}", h) for m, h in
                   enumerate(apply_powers(a_tri, x, cfg.t, n_threads), start=1)]
    return DiffusedFeatures(blocks, a.n_rows, nnz, converged)
