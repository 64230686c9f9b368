"""Observed data, model partition, preprocessing, and projection/loss primitives.

The central object is :class:`DesignView`, which binds a :class:`Dataset` to a
:class:`ModelPartition` and caches the Gram products every estimator consumes.
All objects are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DataError, SingularGram, UnidentifiedAtOne

#: Reciprocal condition number (min/max singular value) below which a Gram
#: matrix is declared singular.
RCOND_GRAM = 1e-12

#: Relative eigenvalue floor applied before inverting a symmetric PSD matrix
#: to form its inverse square root.
EIG_CLAMP_REL = 1e-14


class IdentificationClass(str, Enum):
    """Sign of the identification degree ``q2 - d1``."""

    UNDER = "under"
    JUST = "just"
    OVER = "over"


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def rcond_symmetric(mat: np.ndarray) -> float:
    """Reciprocal condition number of a symmetric matrix via its spectrum."""
    if mat.size == 0:
        return 0.0
    w = np.abs(np.linalg.eigvalsh(mat))
    top = w.max()
    if top == 0.0:
        return 0.0
    return float(w.min() / top)


def checked_solve(name: str, mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``mat @ x = rhs`` after verifying the condition of ``mat``.

    Raises
    ------
    SingularGram
        If the reciprocal condition number of ``mat`` falls below
        :data:`RCOND_GRAM`. The exception names the offending matrix.
    """
    rc = rcond_symmetric(mat)
    if rc < RCOND_GRAM:
        raise SingularGram(name, rc)
    return np.linalg.solve(mat, rhs)


def psd_inverse_sqrt(name: str, mat: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a PSD matrix by eigendecomposition.

    Eigenvalues are clamped at ``EIG_CLAMP_REL * lambda_max`` before inversion.

    Raises
    ------
    SingularGram
        If the matrix fails the reciprocal-condition check.
    """
    w, v = np.linalg.eigh(mat)
    top = float(w.max()) if w.size else 0.0
    if top <= 0.0 or float(w.min()) / top < RCOND_GRAM:
        raise SingularGram(name, 0.0 if top <= 0.0 else float(w.min()) / top)
    w = np.maximum(w, EIG_CLAMP_REL * top)
    return (v * (1.0 / np.sqrt(w))) @ v.T


@dataclass(frozen=True)
class Dataset:
    """Observed data matrices.

    Parameters
    ----------
    y : ndarray of shape (n,)
        Response observations.
    x : ndarray of shape (n, d)
        Endogenous regressors.
    a : ndarray of shape (n, q)
        Exogenous (anchor/instrument) variables.
    y_name, x_names, a_names : optional column labels.
    """

    y: np.ndarray
    x: np.ndarray
    a: np.ndarray
    y_name: str = "y"
    x_names: tuple[str, ...] | None = None
    a_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        if x.shape[0] != y.shape[0] or a.shape[0] != y.shape[0]:
            raise DataError(
                f"row mismatch: y has {y.shape[0]} rows, x has {x.shape[0]}, a has {a.shape[0]}"
            )
        n, d = x.shape
        q = a.shape[1]
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if d < 1 or q < 1:
            raise DataError("x and a must each contain at least one column")
        if n < max(d, q):
            raise DataError(f"need n >= max(d, q); got n={n}, d={d}, q={q}")
        for name, arr in (("y", y), ("x", x), ("a", a)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "a", _readonly(a))
        if self.x_names is None:
            object.__setattr__(self, "x_names", tuple(f"x{i + 1}" for i in range(d)))
        if self.a_names is None:
            object.__setattr__(self, "a_names", tuple(f"a{i + 1}" for i in range(q)))
        if len(self.x_names) != d or len(self.a_names) != q:
            raise DataError("column-name tuples do not match matrix shapes")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.a.shape[1]

    def with_intercept(self, name: str = "const") -> "Dataset":
        """Append a constant exogenous column (used by the intercept pipeline)."""
        ones = np.ones((self.n, 1))
        return Dataset(
            y=self.y,
            x=self.x,
            a=np.hstack([self.a, ones]),
            y_name=self.y_name,
            x_names=self.x_names,
            a_names=self.a_names + (name,),
        )


@dataclass(frozen=True)
class CsvSchema:
    """Column-role map binding CSV columns to target/endogenous/exogenous."""

    target: str
    endogenous: tuple[str, ...]
    exogenous: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "endogenous", tuple(self.endogenous))
        object.__setattr__(self, "exogenous", tuple(self.exogenous))
        cols = [self.target, *self.endogenous, *self.exogenous]
        if len(set(cols)) != len(cols):
            raise DataError(f"duplicate column roles in schema: {cols}")
        if not self.endogenous or not self.exogenous:
            raise DataError("schema needs at least one endogenous and one exogenous column")


def load_csv(path: str | Path, schema: CsvSchema) -> Dataset:
    """Load a dataset from a headered CSV file.

    The file must be UTF-8 with a header row, decimal points and no thousands
    separators; missing values are an error.

    Raises
    ------
    DataError
        On a missing column, a non-numeric cell (reported with its row and
        column), or too few rows.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        wanted = [schema.target, *schema.endogenous, *schema.exogenous]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"missing column(s) {missing} in {path}; header is {header}")
        idx = {c: header.index(c) for c in wanted}
        rows: list[list[float]] = []
        for i, rec in enumerate(reader, start=1):
            if not rec or all(cell.strip() == "" for cell in rec):
                continue
            parsed = []
            for col in wanted:
                cell = rec[idx[col]].strip() if idx[col] < len(rec) else ""
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"non-numeric value {cell!r} at data row {i}, column {col!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path} contains no data rows")
    mat = np.asarray(rows, dtype=float)
    nx = len(schema.endogenous)
    return Dataset(
        y=mat[:, 0],
        x=mat[:, 1 : 1 + nx],
        a=mat[:, 1 + nx :],
        y_name=schema.target,
        x_names=schema.endogenous,
        a_names=schema.exogenous,
    )


ALL_ROLES = frozenset({"target", "endogenous", "exogenous"})


def _demean(arr: np.ndarray) -> np.ndarray:
    # two passes: the second removes the cancellation residue left when the
    # column offset dwarfs its spread
    out = arr - arr.mean(axis=0)
    return out - out.mean(axis=0)


def center(ds: Dataset, roles: Sequence[str] = ("target", "endogenous", "exogenous")) -> Dataset:
    """Subtract the sample mean from each column of the selected roles."""
    roleset = frozenset(roles)
    unknown = roleset - ALL_ROLES
    if unknown:
        raise ValueError(f"unknown roles {sorted(unknown)}; valid roles are {sorted(ALL_ROLES)}")
    if ds.n < 2:
        raise ValueError("centering requires at least two rows")
    y = _demean(ds.y) if "target" in roleset else ds.y
    x = _demean(ds.x) if "endogenous" in roleset else ds.x
    a = _demean(ds.a) if "exogenous" in roleset else ds.a
    return Dataset(y=y, x=x, a=a, y_name=ds.y_name, x_names=ds.x_names, a_names=ds.a_names)


def projection_apply(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``v`` onto the column space of ``a``.

    Returns ``P_A v = A (A^T A)^{-1} A^T v``.

    Raises
    ------
    SingularGram
        If ``A^T A`` fails the condition check.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    v = np.asarray(v, dtype=float)
    gram = a.T @ a
    coef = checked_solve("A^T A", gram, a.T @ v)
    return a @ coef


@dataclass(frozen=True)
class ModelPartition:
    """Declared split of the regressors for a single target equation.

    ``included_endogenous`` indexes columns of ``x`` that enter the target
    equation; ``included_exogenous`` indexes columns of ``a`` that do.  The
    complements are the excluded regressors and the instruments.
    """

    included_endogenous: tuple[int, ...]
    included_exogenous: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        inc_x = tuple(int(i) for i in self.included_endogenous)
        inc_a = tuple(int(i) for i in self.included_exogenous)
        if len(set(inc_x)) != len(inc_x) or len(set(inc_a)) != len(inc_a):
            raise ValueError("partition index sets must be duplicate-free")
        if not inc_x:
            raise ValueError("at least one endogenous regressor must be included")
        object.__setattr__(self, "included_endogenous", inc_x)
        object.__setattr__(self, "included_exogenous", inc_a)

    @property
    def d1(self) -> int:
        return len(self.included_endogenous)

    @property
    def q1(self) -> int:
        return len(self.included_exogenous)

    def validate(self, d: int, q: int) -> None:
        bad_x = [i for i in self.included_endogenous if not 0 <= i < d]
        bad_a = [i for i in self.included_exogenous if not 0 <= i < q]
        if bad_x or bad_a:
            raise ValueError(f"partition indices out of range: x{bad_x}, a{bad_a}")

    def identification_degree(self, q: int) -> int:
        """Degree ``q2 - d1``: negative under-, zero just-, positive over-identified."""
        return (q - self.q1) - self.d1

    def identification_class(self, q: int) -> IdentificationClass:
        deg = self.identification_degree(q)
        if deg < 0:
            return IdentificationClass.UNDER
        if deg == 0:
            return IdentificationClass.JUST
        return IdentificationClass.OVER

    @staticmethod
    def all_endogenous(d: int) -> "ModelPartition":
        """Every endogenous regressor included, no included exogenous."""
        return ModelPartition(tuple(range(d)), ())


class DesignView:
    """Immutable view of ``(y, Z, A)`` with cached Gram products.

    ``Z = [X_* A_*]`` stacks the included endogenous regressors first and the
    included exogenous regressors second; this ordering is the cross-module
    coefficient contract.  Cached products make each K-class solve
    ``O((d1+q1)^3)`` independent of the sample size.
    """

    def __init__(self, dataset: Dataset, partition: ModelPartition | None = None):
        if partition is None:
            partition = ModelPartition.all_endogenous(dataset.d)
        partition.validate(dataset.d, dataset.q)
        self.dataset = dataset
        self.partition = partition
        self.y = dataset.y
        self.a = dataset.a
        x_star = dataset.x[:, list(partition.included_endogenous)]
        a_star = (
            dataset.a[:, list(partition.included_exogenous)]
            if partition.q1
            else np.empty((dataset.n, 0))
        )
        self.z = _readonly(np.hstack([x_star, a_star]))
        self.n = dataset.n
        self.d1 = partition.d1
        self.q1 = partition.q1
        self.q = dataset.q
        self.d2 = dataset.d - partition.d1
        self.q2 = dataset.q - partition.q1
        self.k = self.d1 + self.q1
        self.coef_names = tuple(dataset.x_names[i] for i in partition.included_endogenous) + tuple(
            dataset.a_names[i] for i in partition.included_exogenous
        )

        self.ztz = _readonly(self.z.T @ self.z)
        self.ata = _readonly(self.a.T @ self.a)
        self.atz = _readonly(self.a.T @ self.z)
        self.zty = _readonly(self.z.T @ self.y)
        self.aty = _readonly(self.a.T @ self.y)
        self.yty = float(self.y @ self.y)

        self.rcond_ztz = rcond_symmetric(self.ztz)
        self.rcond_ata = rcond_symmetric(self.ata)
        self._ata_isqrt: np.ndarray | None = None
        self._s: np.ndarray | None = None
        self._sy: np.ndarray | None = None

    @property
    def identification(self) -> IdentificationClass:
        return self.partition.identification_class(self.q)

    @property
    def identification_degree(self) -> int:
        return self.partition.identification_degree(self.q)

    def _iv_pieces(self) -> tuple[np.ndarray, np.ndarray]:
        """Whitened cross products ``S = (A^T A)^{-1/2} A^T Z`` and ``s_y``."""
        if self._s is None:
            # idempotent lazy init; the guard field is assigned last so a
            # concurrent reader never sees a half-built pair
            isqrt = psd_inverse_sqrt("A^T A", self.ata)
            s = isqrt @ self.atz
            self._ata_isqrt = isqrt
            self._sy = isqrt @ self.aty
            self._s = s
        return self._s, self._sy

    def ols_loss(self, alpha: np.ndarray) -> float:
        """Mean squared residual ``n^{-1} ||y - Z alpha||^2``."""
        alpha = self._check_alpha(alpha)
        val = (self.yty - 2.0 * (alpha @ self.zty) + alpha @ self.ztz @ alpha) / self.n
        return max(float(val), 0.0)

    def iv_loss(self, alpha: np.ndarray) -> float:
        """Projected mean squared residual ``n^{-1} (y - Z alpha)^T P_A (y - Z alpha)``."""
        alpha = self._check_alpha(alpha)
        s, sy = self._iv_pieces()
        r = sy - s @ alpha
        return max(float(r @ r) / self.n, 0.0)

    def _check_alpha(self, alpha: np.ndarray) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.shape[0] != self.k:
            raise ValueError(f"coefficient vector must have length {self.k}, got {alpha.shape[0]}")
        return alpha

    def kclass_solve(self, kappa: float) -> np.ndarray:
        """Closed-form K-class solution for a given ``kappa``.

        Uses the identity ``I - kappa P_A^perp = (1 - kappa) I + kappa P_A`` so
        only cached Gram products are needed.
        """
        kappa = float(kappa)
        s, sy = self._iv_pieces()
        # kappa within 1e-8 of one is routed through the exact TSLS branch in
        # just/over-identified setups: the (1 - kappa) I term underflows the
        # conditioning of the general formula there.
        near_one = abs(kappa - 1.0) <= 1e-8
        if near_one and (kappa >= 1.0 or self.identification is not IdentificationClass.UNDER):
            if self.q2 < self.d1:
                raise UnidentifiedAtOne(
                    f"kappa=1 needs q2 >= d1; got q2={self.q2}, d1={self.d1}"
                )
            return checked_solve("Z^T P_A Z", s.T @ s, s.T @ sy)
        if self.rcond_ztz < RCOND_GRAM:
            raise SingularGram("Z^T Z", self.rcond_ztz)
        mat = (1.0 - kappa) * self.ztz + kappa * (s.T @ s)
        rhs = (1.0 - kappa) * self.zty + kappa * (s.T @ sy)
        return checked_solve("Z^T (I - kappa P_A^perp) Z", mat, rhs)

    def min_iv_loss(self) -> float:
        """Infimum of the IV loss: zero unless the setup is over-identified."""
        if self.identification is IdentificationClass.OVER:
            return self.iv_loss(self.kclass_solve(1.0))
        return 0.0


def ols_loss(view: DesignView, alpha: np.ndarray) -> float:
    return view.ols_loss(alpha)


def iv_loss(view: DesignView, alpha: np.ndarray) -> float:
    return view.iv_loss(alpha)
