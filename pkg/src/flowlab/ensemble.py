"""Ensemble lifts and rank certificates for simultaneous steering of N points.

Driving ``N`` copies of the state with one shared control gives a system on
``R^{Nd}`` whose admissible velocities are ``(f(x_1), ..., f(x_N))``.  Full
rank ``Nd`` of those velocities (or of the lifted Lie closure) at a
configuration of distinct points is the controllability certificate
reported here.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .families import ControlFamily
from .liealg import DEFAULT_DEGREE_CAP, DEFAULT_DEPTH_CAP, lie_closure
from .polyvec import Polynomial, PolyVectorField

__all__ = [
    "Ensemble",
    "RankReport",
    "VandermondeCertificate",
    "DegenerateEnsembleError",
    "lift_eval",
    "lift_fields",
    "numerical_rank",
    "span_rank",
    "lie_rank",
    "vandermonde_certificate",
]

DISTINCTNESS_TOL = 1e-9
SVD_REL_TOL = 1e-8


class DegenerateEnsembleError(ValueError):
    """Two ensemble points coincide (within the distinctness tolerance)."""


@dataclass(frozen=True)
class Ensemble:
    points: np.ndarray  # (N, d)
    distinctness_tol: float = DISTINCTNESS_TOL

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"ensemble needs an (N, d) array with N >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("ensemble points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        gap = self.min_separation()
        if gap <= self.distinctness_tol:
            raise DegenerateEnsembleError(
                f"ensemble points are not pairwise distinct (min inf-norm gap {gap:.3g})"
            )

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def min_separation(self) -> float:
        pts = self.points
        if pts.shape[0] < 2:
            return float("inf")
        diff = np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=2)
        diff[np.diag_indices_from(diff)] = np.inf
        return float(diff.min())

    @classmethod
    def random(cls, N: int, d: int, seed: int, low: float = -1.0, high: float = 1.0) -> "Ensemble":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(low, high, size=(N, d)))

    @classmethod
    def from_csv(cls, path) -> "Ensemble":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    if rows:
                        raise
                    continue  # header line
        return cls(np.array(rows))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for p in self.points:
                w.writerow([repr(float(v)) for v in p])


def _as_points(X) -> np.ndarray:
    return X.points if isinstance(X, Ensemble) else np.atleast_2d(np.asarray(X, dtype=float))


def lift_eval(family: ControlFamily, params, X) -> np.ndarray:
    """``(f(x_1; theta), ..., f(x_N; theta))`` flattened to length ``N d``."""
    pts = _as_points(X)
    theta = family.check_params(params)
    if theta.ndim != 1:
        raise ValueError("lift_eval takes a single parameter vector")
    return family.evaluate(theta, pts).reshape(-1)


def lift_fields(fields: Sequence[PolyVectorField], X) -> np.ndarray:
    """Rows are lifted evaluations of each polynomial field, shape (k, N d)."""
    pts = _as_points(X)
    return np.array([[v for p in pts for v in f.evaluate(p)] for f in fields], dtype=float).reshape(
        len(fields), -1
    )


def numerical_rank(M: np.ndarray, rel_tol: float = SVD_REL_TOL) -> tuple[int, np.ndarray]:
    """Count singular values above ``rel_tol * sigma_max``."""
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    return int(np.sum(s > rel_tol * s[0])), s


def _normalise_rows(M):
    norms = np.linalg.norm(M, axis=1)
    keep = norms > 0
    out = np.zeros_like(M)
    out[keep] = M[keep] / norms[keep, None]
    return out


def _select_witnesses(M: np.ndarray, rank: int, rel_tol: float) -> list[int]:
    """Indices of ``rank`` rows of ``M`` that are numerically independent."""
    if rank == 0:
        return []
    _, _, piv = scipy.linalg.qr(M.T, pivoting=True, mode="economic")
    chosen = sorted(int(i) for i in piv[:rank])
    if numerical_rank(M[chosen], rel_tol)[0] == rank:
        return chosen
    chosen = []  # greedy fallback
    for i in range(M.shape[0]):
        trial = chosen + [i]
        if numerical_rank(M[trial], rel_tol)[0] == len(trial):
            chosen = trial
            if len(chosen) == rank:
                break
    return chosen


@dataclass
class RankReport:
    N: int
    d: int
    achieved_rank: int
    method: str  # span_exact | span_sampled | lie_exact
    tolerance: float
    witnesses: list = field(default_factory=list)
    singular_values: list[float] = field(default_factory=list)
    notes: str = ""

    @property
    def target_rank(self) -> int:
        return self.N * self.d

    @property
    def full_rank(self) -> bool:
        return self.achieved_rank == self.target_rank

    def to_dict(self) -> dict:
        def enc(w):
            if isinstance(w, PolyVectorField):
                return str(w)
            if isinstance(w, np.ndarray):
                return w.tolist()
            return w

        return {
            "N": self.N,
            "d": self.d,
            "target_rank": self.target_rank,
            "achieved_rank": self.achieved_rank,
            "full_rank": self.full_rank,
            "method": self.method,
            "tolerance": self.tolerance,
            "witnesses": [enc(w) for w in self.witnesses],
            "singular_values": [float(s) for s in self.singular_values],
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _ensure(X) -> Ensemble:
    return X if isinstance(X, Ensemble) else Ensemble(np.asarray(X, dtype=float))


def span_rank(
    family: ControlFamily,
    X,
    sampler_seed: int = 0,
    num_samples: int = 512,
    svd_rel_tol: float = SVD_REL_TOL,
) -> RankReport:
    """Numerical rank of the lifted family at the ensemble ``X``.

    Affine families are assembled exactly from their basis fields.  resnet
    families are sampled, so the result is only a lower bound on the true
    span dimension and never a proof of deficiency.
    """
    ens = _ensure(X)
    if ens.d != family.dimension:
        raise ValueError(f"ensemble dimension {ens.d} does not match family dimension {family.dimension}")
    if family.kind == "affine":
        M = lift_fields(family.basis, ens)
        method, cands = "span_exact", list(family.basis)
    else:
        rng = np.random.default_rng(sampler_seed)
        thetas = family.sample_params(rng, num_samples)
        W, A, b = family.unpack(thetas)
        pts = ens.points
        # f(x; theta) for all samples at once: (S, N, d)
        Z = np.einsum("sij,nj->sni", A, pts) + b[:, None, :]
        act = {
            "tanh": np.tanh,
            "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
            "relu": lambda z: np.maximum(z, 0.0),
            "identity": lambda z: z,
        }[family.activation]
        M = np.einsum("sij,snj->sni", W, act(Z)).reshape(num_samples, -1)
        method, cands = "span_sampled", list(thetas)
    Mn = _normalise_rows(M)
    rank, s = numerical_rank(Mn, svd_rel_tol)
    wit = _select_witnesses(Mn, rank, svd_rel_tol)
    return RankReport(
        N=ens.N,
        d=ens.d,
        achieved_rank=rank,
        method=method,
        tolerance=svd_rel_tol,
        witnesses=[cands[i] for i in wit],
        singular_values=list(s),
        notes="lower bound (sampled)" if method == "span_sampled" else "",
    )


def lie_rank(
    family: ControlFamily,
    X,
    degree_cap: int = DEFAULT_DEGREE_CAP,
    depth_cap: int = DEFAULT_DEPTH_CAP,
    svd_rel_tol: float = SVD_REL_TOL,
) -> RankReport:
    """Numerical rank of the lifted finite-slice Lie closure of an affine
    polynomial family."""
    if family.kind != "affine":
        raise TypeError("lie_rank needs an affine family with polynomial basis fields")
    ens = _ensure(X)
    if ens.d != family.dimension:
        raise ValueError(f"ensemble dimension {ens.d} does not match family dimension {family.dimension}")
    cb = lie_closure(family.basis, degree_cap, depth_cap)
    M = lift_fields(cb.basis, ens)
    Mn = _normalise_rows(M)
    rank, s = numerical_rank(Mn, svd_rel_tol)
    wit = _select_witnesses(Mn, rank, svd_rel_tol)
    return RankReport(
        N=ens.N,
        d=ens.d,
        achieved_rank=rank,
        method="lie_exact",
        tolerance=svd_rel_tol,
        witnesses=[cb.basis[i] for i in wit],
        singular_values=list(s),
        notes=f"closure basis size {len(cb)} (caps degree={degree_cap}, depth={depth_cap})",
    )


# -- explicit certificate for the area-preserving family ---------------------------

@dataclass
class VandermondeCertificate:
    a: float
    b: float
    matrix: np.ndarray  # (2N, 2N)
    invertible: bool
    min_abs_det_scale: float  # min |U_ii| / max |U_ii| of the LU factor
    log10_abs_det: float
    exact_invertible: bool
    attempts: int

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "matrix": self.matrix.tolist(),
            "invertible": self.invertible,
            "min_abs_det_scale": self.min_abs_det_scale,
            "log10_abs_det": self.log10_abs_det,
            "exact_invertible": self.exact_invertible,
            "attempts": self.attempts,
        }


def _distinct(values: np.ndarray, tol: float) -> bool:
    v = np.sort(values)
    return bool(v.size < 2 or np.min(np.diff(v)) > tol)


def _exact_nonsingular(M: np.ndarray) -> bool:
    A = [[Fraction(float(v)) for v in row] for row in M]
    n = len(A)
    for c in range(n):
        piv = next((r for r in range(c, n) if A[r][c] != 0), None)
        if piv is None:
            return False
        A[c], A[piv] = A[piv], A[c]
        for r in range(c + 1, n):
            f = A[r][c] / A[c][c]
            if f:
                for k in range(c, n):
                    A[r][k] -= f * A[c][k]
    return True


def vandermonde_certificate(
    X,
    direction_seed: int = 0,
    candidates: Iterable[tuple[float, float]] = (),
    max_draws: int = 1000,
    distinct_tol: float = DISTINCTNESS_TOL,
    pivot_rel_tol: float = 1e-13,
) -> VandermondeCertificate:
    """Explicit 2N independent lifted curl fields at ``N`` distinct planar points.

    Picks ``a != b`` such that ``u_k = a x1_k - x2_k`` and ``w_k = b x1_k - x2_k``
    are each N distinct numbers, then uses potentials ``(a x1 - x2)^i`` and
    ``(b x1 - x2)^j`` (``i, j = 1..N``).  Row ``i`` of the returned matrix lists
    ``-d_x2`` of the potential at every point followed by ``d_x1`` at every
    point, so the matrix has block form ``[[D V_u, a D V_u], [D V_w, b D V_w]]``
    with Vandermonde blocks; it is invertible exactly when ``a != b`` and both
    projections are distinct.  ``candidates`` are tried before random draws.
    """
    pts = _ensure(X).points
    if pts.shape[1] != 2:
        raise ValueError("the Vandermonde certificate is for planar ensembles")
    N = pts.shape[0]
    rng = np.random.default_rng(direction_seed)

    def draws():
        yield from candidates
        while True:
            yield tuple(rng.standard_normal(2))

    attempts = 0
    for a, b in draws():
        attempts += 1
        if attempts > max_draws:
            raise DegenerateEnsembleError(f"no admissible (a, b) found in {max_draws} draws")
        if abs(a - b) <= distinct_tol:
            continue
        u = a * pts[:, 0] - pts[:, 1]
        w = b * pts[:, 0] - pts[:, 1]
        if _distinct(u, distinct_tol) and _distinct(w, distinct_tol):
            break

    M = np.empty((2 * N, 2 * N))
    for slope, proj, base in ((a, u, 0), (b, w, N)):
        for i in range(1, N + 1):
            # potential (slope*x1 - x2)^i: -d_x2 = i proj^(i-1), d_x1 = slope * i proj^(i-1)
            g = i * proj ** (i - 1)
            M[base + i - 1, :N] = g
            M[base + i - 1, N:] = slope * g
    lu, _piv = scipy.linalg.lu_factor(M, check_finite=True)
    diag = np.abs(np.diag(lu))
    scale = float(diag.min() / diag.max()) if diag.max() > 0 else 0.0
    return VandermondeCertificate(
        a=float(a),
        b=float(b),
        matrix=M,
        invertible=bool(scale > pivot_rel_tol),
        min_abs_det_scale=scale,
        log10_abs_det=float(np.sum(np.log10(diag))) if np.all(diag > 0) else float("-inf"),
        exact_invertible=_exact_nonsingular(M),
        attempts=attempts,
    )


def curl_potential_fields(N: int, a: float, b: float) -> list[PolyVectorField]:
    """The 2N curl fields behind :func:`vandermonde_certificate` as exact polynomials."""
    from .polyvec import curl2

    x1 = Polynomial.variable(0, 2)
    x2 = Polynomial.variable(1, 2)
    out = []
    for slope in (a, b):
        lin = x1.scale(Fraction(slope)) - x2
        out.extend(curl2(lin**i) for i in range(1, N + 1))
    return out
