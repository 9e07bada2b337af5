"""Sparse coding over a labeled dictionary and residual-based classification.

The core solve is the noise-constrained l1 problem

    minimize ||x||_1  subject to  ||y - Y x||_2 <= epsilon.

It is solved through its penalized equivalent ``lam*||x||_1 + 0.5*||y-Yx||_2^2``
(FISTA with adaptive restart), with an outer bisection on ``lam`` until the
residual constraint is active: the returned iterate always satisfies
``||y - Y x||_2 <= epsilon`` and sits within a small band below it.  The
stationarity criterion for each inner solve is the lasso duality gap
(primal objective minus the value of the scaled-residual dual point), driven
below ``gap_tol``.  Everything is deterministic for fixed inputs.

The inner loop is JIT-compiled with numba when available and falls back to
the identical pure-numpy implementation otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledDataset
from .errors import SolverError


class DegenerateCodeWarning(UserWarning):
    """Raised-as-warning flag for operations on an all-zero sparse code."""


@dataclass(eq=False)
class Dictionary:
    """Unit-norm atom matrix with per-column class labels.

    ``class_index`` maps each class id to the (sorted) column indices holding
    its atoms; together the index sets partition the columns.
    """

    atoms: np.ndarray
    column_labels: tuple[str, ...]

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64, order="C")
        if atoms.ndim != 2:
            raise ValueError(f"atoms must be 2-D, got shape {atoms.shape}")
        labels = tuple(str(l) for l in self.column_labels)
        if len(labels) != atoms.shape[1]:
            raise ValueError(f"{len(labels)} labels for {atoms.shape[1]} atoms")
        norms = np.linalg.norm(atoms, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-9)
        if bad.size:
            raise ValueError(f"atom column {bad[0]} has norm {norms[bad[0]]:.6g}, "
                             "expected unit norm (normalize_columns first)")
        atoms.flags.writeable = False
        self.atoms = atoms
        self.column_labels = labels
        self.classes = tuple(sorted(set(labels)))
        arr = np.array(labels)
        self.class_index = {c: np.flatnonzero(arr == c) for c in self.classes}
        self._atoms_t = None
        self._lipschitz = None

    @classmethod
    def from_dataset(cls, data: LabeledDataset) -> "Dictionary":
        return cls(data.features, data.labels)

    @property
    def n_features(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def atoms_t(self) -> np.ndarray:
        if self._atoms_t is None:
            self._atoms_t = np.ascontiguousarray(self.atoms.T)
        return self._atoms_t

    @property
    def lipschitz(self) -> float:
        """Squared spectral norm of the atom matrix (gradient Lipschitz constant)."""
        if self._lipschitz is None:
            self._lipschitz = float(np.linalg.norm(self.atoms, 2) ** 2)
        return self._lipschitz


@dataclass(eq=False)
class SparseCode:
    """Solution of one l1 solve plus solver diagnostics."""

    coefficients: np.ndarray
    residual_norm: float
    iterations: int
    gap: float = 0.0


@dataclass(eq=False)
class ResidualVector:
    """Per-class reconstruction errors, aligned with ``classes`` (sorted order)."""

    per_class: np.ndarray
    classes: tuple[str, ...]
    argmin_class: str

    def smallest_two(self) -> tuple[float, float]:
        if len(self.classes) < 2:
            raise ValueError("need at least two classes")
        part = np.partition(self.per_class, 1)
        return float(part[0]), float(part[1])


# --- inner penalized solver ------------------------------------------------

def _fista_lasso(Y, Yt, y, lam, lip, x0, max_iter, gap_tol, check_every):
    """FISTA with gradient-scheme restart on 0.5*||y-Yx||^2 + lam*||x||_1.

    Returns (x, iterations, duality_gap).  Written against the numpy subset
    numba supports so the same source compiles to the JIT kernel.
    """
    x = x0.copy()
    z = x0.copy()
    t = 1.0
    step = 1.0 / lip
    thr = lam * step
    gap = np.inf
    it = 0
    while it < max_iter:
        w = z - step * (Yt @ (Y @ z - y))
        x_new = np.sign(w) * np.maximum(np.abs(w) - thr, 0.0)
        if np.dot(z - x_new, x_new - x) > 0.0:
            t = 1.0
            z = x_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new
        it += 1
        if it % check_every == 0 or it == max_iter:
            r = y - Y @ x
            corr = np.max(np.abs(Yt @ r))
            scale = 1.0 if corr <= lam else lam / corr
            nu = scale * r
            gap = (0.5 * np.dot(r, r) + lam * np.sum(np.abs(x))
                   - np.dot(nu, y) + 0.5 * np.dot(nu, nu))
            if gap <= gap_tol:
                break
    return x, it, gap


try:
    from numba import njit

    _fista_lasso_jit = njit(cache=True)(_fista_lasso)
except ImportError:  # pragma: no cover - exercised only without numba
    _fista_lasso_jit = _fista_lasso


def _solve_lasso(dictionary, y, lam, x0, max_iter, gap_tol, check_every=25):
    return _fista_lasso_jit(dictionary.atoms, dictionary.atoms_t, y, lam,
                            dictionary.lipschitz, x0, max_iter, gap_tol,
                            check_every)


def solve_l1(dictionary: Dictionary, y: np.ndarray, epsilon: float, *,
             gap_tol: float = 1e-6, max_iter: int = 10000) -> SparseCode:
    """Minimize ||x||_1 subject to ||y - Y x||_2 <= epsilon.

    Parameters
    ----------
    dictionary : Dictionary
        Unit-norm atoms Y.
    y : array, shape (n_features,)
        Target vector.
    epsilon : float
        Noise energy bound, >= 0.  Values below 1e-10 are clamped to 1e-10
        (the penalized route cannot represent an exact-equality constraint).
    gap_tol : float
        Duality-gap threshold for each inner penalized solve.
    max_iter : int
        Iteration cap per inner solve.

    Raises
    ------
    SolverError
        If no feasible point is found (constraint tighter than the
        dictionary can satisfy) or the final solve's gap exceeds ``gap_tol``.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (dictionary.n_features,):
        raise ValueError(f"y has shape {y.shape}, dictionary expects "
                         f"({dictionary.n_features},)")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    eps = max(epsilon, 1e-10)

    norm_y = float(np.linalg.norm(y))
    n = dictionary.n_atoms
    if norm_y <= eps:
        return SparseCode(np.zeros(n), norm_y, 0, 0.0)

    lam_max = float(np.max(np.abs(dictionary.atoms_t @ y)))
    if lam_max == 0.0:
        raise SolverError("y is orthogonal to every atom; constraint infeasible",
                          residual=norm_y)

    band = max(1e-4 * eps, 1e-12)
    total_iter = 0
    x_ws = np.zeros(n)

    def run(lam):
        nonlocal total_iter, x_ws
        x, it, gap = _solve_lasso(dictionary, y, lam, x_ws, max_iter, gap_tol)
        total_iter += it
        x_ws = x
        return x, float(np.linalg.norm(y - dictionary.atoms @ x)), gap

    # geometric descent from lam_max until the constraint is satisfied
    lam_hi = lam_max          # residual > eps at and above this
    lam = lam_max
    feasible = None           # (x, residual, gap, lam) with residual <= eps
    for _ in range(120):
        lam *= 0.5
        x, res, gap = run(lam)
        if res <= eps:
            feasible = (x.copy(), res, gap, lam)
            lam_lo = lam
            break
        lam_hi = lam
    if feasible is None:
        raise SolverError(f"no feasible point found: best residual {res:.3e} "
                          f"exceeds epsilon {eps:.3e}", gap=gap, residual=res)

    # bisect on the penalty until the residual lands just below eps
    for _ in range(100):
        if feasible[1] >= eps - band or (lam_hi - lam_lo) <= 1e-15 * lam_max:
            break
        lam = 0.5 * (lam_lo + lam_hi)
        x, res, gap = run(lam)
        if res <= eps:
            feasible = (x.copy(), res, gap, lam)
            lam_lo = lam
        else:
            lam_hi = lam

    x, res, gap, _lam = feasible
    if gap > gap_tol:
        raise SolverError(f"inner solver did not reach gap_tol={gap_tol:.1e} "
                          f"within {max_iter} iterations (gap {gap:.3e})",
                          gap=gap, residual=res)
    return SparseCode(x, res, total_iter, gap)


# --- classification on top of the solve -------------------------------------

def class_residuals(dictionary: Dictionary, y: np.ndarray,
                    code: SparseCode) -> ResidualVector:
    """Per-class reconstruction errors ||y - Y_k x_k||_2.

    ``x_k`` keeps only the coefficients on class k's atoms.  The argmin class
    is the classifier's candidate; ties resolve to the smallest class id.
    """
    coef = np.asarray(code.coefficients, dtype=np.float64)
    if coef.shape != (dictionary.n_atoms,):
        raise ValueError(f"code length {coef.shape} does not match dictionary "
                         f"({dictionary.n_atoms} atoms)")
    y = np.asarray(y, dtype=np.float64)
    per_class = np.empty(dictionary.n_classes)
    for i, cls in enumerate(dictionary.classes):
        idx = dictionary.class_index[cls]
        recon = dictionary.atoms[:, idx] @ coef[idx]
        per_class[i] = np.linalg.norm(y - recon)
    argmin = dictionary.classes[int(np.argmin(per_class))]
    return ResidualVector(per_class, dictionary.classes, argmin)


def src_classify(dictionary: Dictionary, y: np.ndarray, epsilon: float,
                 **solver_kwargs) -> tuple[str, ResidualVector]:
    """Closed-set sparse-representation classification: argmin-residual class."""
    code = solve_l1(dictionary, y, epsilon, **solver_kwargs)
    residuals = class_residuals(dictionary, y, code)
    return residuals.argmin_class, residuals


def sci(code: SparseCode, dictionary: Dictionary) -> float:
    """Sparsity concentration index of a code, in [0, 1].

    1 means all l1 mass sits on a single class, 0 means the mass is spread
    evenly over all classes.  A zero code is flagged with
    :class:`DegenerateCodeWarning` and scored 0 (maximally spread).
    """
    k = dictionary.n_classes
    if k < 2:
        raise ValueError("sci needs at least two classes")
    coef = np.abs(np.asarray(code.coefficients, dtype=np.float64))
    total = coef.sum()
    if total == 0.0:
        warnings.warn("sci of an all-zero code; returning 0",
                      DegenerateCodeWarning, stacklevel=2)
        return 0.0
    best = max(coef[dictionary.class_index[c]].sum() for c in dictionary.classes)
    return (k * best / total - 1.0) / (k - 1.0)


def ratio_score(residuals: ResidualVector, cap: float = 1e6) -> float:
    """Second-smallest class residual over the smallest; large means confident.

    An exact-zero smallest residual maps to ``cap`` (or 1.0 when both of the
    two smallest are zero, the maximally ambiguous case).
    """
    s0, s1 = residuals.smallest_two()
    if s0 == 0.0:
        return 1.0 if s1 == 0.0 else cap
    return s1 / s0
