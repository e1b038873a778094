"""Control families: right-hand sides ``f(x; theta)`` selectable by a parameter vector.

Two kinds are supported:

* ``affine``: ``f(x; theta) = sum_k theta_k f_k(x)`` over a fixed list of
  polynomial basis fields.
* ``resnet``: ``f(x; theta) = W act(A x + b)``, where ``theta`` packs only the
  free entries allowed by the weight structure.

Weight structures for resnet families:

``full``               W, A dense, b free
``diagonal_W``         W diagonal, A dense
``translation_only``   W dense, A fixed to the identity
``diagonal_W_and_A``   W and A both diagonal
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels_numpy as _np_kernels
from ._kernels import ACTIVATION_CODES, POLY, RESNET
from .polyvec import Polynomial, PolyVectorField, curl2, to_arrays

ACTIVATIONS = tuple(ACTIVATION_CODES)
WEIGHT_STRUCTURES = ("full", "diagonal_W", "translation_only", "diagonal_W_and_A")

__all__ = [
    "ControlFamily",
    "ACTIVATIONS",
    "WEIGHT_STRUCTURES",
    "area_preserving_family",
    "origin_fixed_family",
    "cubic_quadratic_family",
    "family_from_spec",
]


@dataclass(frozen=True)
class KernelParams:
    """Per-segment arrays in the layout the RK4 kernels consume."""

    kind: int
    act: int
    P1: np.ndarray
    P2: np.ndarray
    P3: np.ndarray
    E: np.ndarray

    def args(self):
        return (self.kind, self.act, self.P1, self.P2, self.P3, self.E)


@dataclass(frozen=True, eq=False)
class ControlFamily:
    kind: str
    dimension: int
    basis: tuple[PolyVectorField, ...] = ()
    activation: str = "tanh"
    weight_structure: str = "full"
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("affine", "resnet"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind == "affine":
            if not self.basis:
                raise ValueError("affine family needs at least one basis field")
            if any(f.dimension != self.dimension for f in self.basis):
                raise ValueError("affine basis fields must share the family dimension")
        else:
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")
            if self.weight_structure not in WEIGHT_STRUCTURES:
                raise ValueError(f"unknown weight structure {self.weight_structure!r}")

    # -- construction ------------------------------------------------------
    @classmethod
    def affine(cls, basis: Sequence[PolyVectorField], name: str | None = None) -> "ControlFamily":
        basis = tuple(basis)
        if not basis:
            raise ValueError("affine family needs at least one basis field")
        return cls("affine", basis[0].dimension, basis=basis, name=name)

    @classmethod
    def resnet(cls, dimension: int, activation: str = "tanh", weight_structure: str = "full") -> "ControlFamily":
        return cls("resnet", dimension, activation=activation, weight_structure=weight_structure)

    # -- parameter layout --------------------------------------------------
    @property
    def is_polynomial(self) -> bool:
        return self.kind == "affine"

    @property
    def smooth(self) -> bool:
        return self.kind == "affine" or self.activation != "relu"

    @cached_property
    def _layout(self):
        d = self.dimension
        diag = [(i, i) for i in range(d)]
        dense = [(i, j) for i in range(d) for j in range(d)]
        ws = self.weight_structure
        w_idx = diag if ws in ("diagonal_W", "diagonal_W_and_A") else dense
        if ws == "translation_only":
            a_idx = []
        elif ws == "diagonal_W_and_A":
            a_idx = diag
        else:
            a_idx = dense
        return w_idx, a_idx

    @property
    def num_params(self) -> int:
        if self.kind == "affine":
            return len(self.basis)
        w_idx, a_idx = self._layout
        return len(w_idx) + len(a_idx) + self.dimension

    def unpack(self, theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Resnet parameter vector(s) -> ``(W, A, b)``; leading batch axes kept."""
        if self.kind != "resnet":
            raise TypeError("unpack is only defined for resnet families")
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {theta.shape[-1]}")
        d = self.dimension
        lead = theta.shape[:-1]
        w_idx, a_idx = self._layout
        W = np.zeros(lead + (d, d))
        A = np.zeros(lead + (d, d))
        k = 0
        for i, j in w_idx:
            W[..., i, j] = theta[..., k]
            k += 1
        if a_idx:
            for i, j in a_idx:
                A[..., i, j] = theta[..., k]
                k += 1
        else:
            A[..., :, :] = np.eye(d)
        b = theta[..., k:k + d].copy()
        return W, A, b

    def pack(self, W, A, b) -> np.ndarray:
        W, A, b = np.asarray(W, float), np.asarray(A, float), np.asarray(b, float)
        w_idx, a_idx = self._layout
        parts = [W[..., i, j] for i, j in w_idx] + [A[..., i, j] for i, j in a_idx]
        return np.concatenate([np.stack(parts, axis=-1), b], axis=-1)

    @cached_property
    def _poly_arrays(self):
        return to_arrays(self.basis)

    def check_params(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0 or theta.shape[-1] != self.num_params:
            raise ValueError(
                f"parameter shape {theta.shape} does not match family with {self.num_params} parameters"
            )
        return theta

    def kernel_params(self, theta_segments) -> KernelParams:
        """Per-segment parameter rows (S, p) -> kernel arrays."""
        th = self.check_params(np.atleast_2d(theta_segments))
        S = th.shape[0]
        d = self.dimension
        if self.kind == "affine":
            E, C = self._poly_arrays
            P1 = np.ascontiguousarray(np.einsum("sk,kim->sim", th, C))
            return KernelParams(POLY, 0, P1, np.zeros((S, 0, 0)), np.zeros((S, 0)), E)
        W, A, b = self.unpack(th)
        return KernelParams(
            RESNET,
            ACTIVATION_CODES[self.activation],
            np.ascontiguousarray(W),
            np.ascontiguousarray(A),
            np.ascontiguousarray(b),
            np.zeros((0, d), dtype=np.int64),
        )

    def project_grads(self, G1, G2, G3) -> np.ndarray:
        """Kernel-array cotangents -> cotangent of the (S, p) parameter rows."""
        if self.kind == "affine":
            _, C = self._poly_arrays
            return np.einsum("sim,kim->sk", G1, C)
        w_idx, a_idx = self._layout
        parts = [G1[:, i, j] for i, j in w_idx] + [G2[:, i, j] for i, j in a_idx]
        return np.concatenate([np.stack(parts, axis=-1), G3], axis=-1)

    # -- evaluation ----------------------------------------------------------
    def evaluate(self, theta, X) -> np.ndarray:
        """``f(x; theta)`` for each row of ``X`` (n, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[-1] != self.dimension:
            raise ValueError(f"points have dimension {X.shape[-1]}, family has {self.dimension}")
        kp = self.kernel_params(theta)
        return _np_kernels.field(*kp.args(), 0, X)

    def jacobian(self, theta, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        kp = self.kernel_params(theta)
        return _np_kernels.jac(*kp.args(), 0, X)

    def sample_params(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Random parameter vectors.

        resnet: W and A entries ~ N(0, 1/d), b ~ N(0, 1); affine: theta ~ N(0, 1).
        Draws are sequential, so the first ``m`` of ``count`` samples equal a
        call with ``count = m`` from the same seed.
        """
        if self.kind == "affine":
            return rng.standard_normal((count, self.num_params))
        w_idx, a_idx = self._layout
        d = self.dimension
        out = np.empty((count, self.num_params))
        nw = len(w_idx) + len(a_idx)
        for r in range(count):
            out[r, :nw] = rng.standard_normal(nw) / np.sqrt(d)
            out[r, nw:] = rng.standard_normal(d)
        return out

    def describe(self) -> dict:
        if self.kind == "affine":
            out = {"kind": "affine", "basis": [str(f) for f in self.basis]}
            if self.name:
                out["name"] = self.name
            return out
        return {
            "kind": "resnet",
            "dimension": self.dimension,
            "activation": self.activation,
            "weight_structure": self.weight_structure,
        }


def _mono2(a, b):
    return Polynomial.monomial((a, b))


def area_preserving_family() -> ControlFamily:
    """``x1' = -t1 - 2 t3 x1^2 x2``, ``x2' = t2 + 2 t3 x1 x2^2``: curl fields of
    ``x2``, ``x1`` and ``x1^2 x2^2``, all divergence-free."""
    return ControlFamily.affine(
        [curl2(_mono2(0, 1)), curl2(_mono2(1, 0)), curl2(_mono2(2, 2))],
        name="area_preserving",
    )


def origin_fixed_family() -> ControlFamily:
    """``x1' = t1 x1^3 + t2 x1^2 + t3 x2``, ``x2' = t4 x2^3 + t5 x2^2 + t6 x1``.
    Every member vanishes at the origin."""
    z = Polynomial.zero(2)
    return ControlFamily.affine(
        [
            PolyVectorField([_mono2(3, 0), z]),
            PolyVectorField([_mono2(2, 0), z]),
            PolyVectorField([_mono2(0, 1), z]),
            PolyVectorField([z, _mono2(0, 3)]),
            PolyVectorField([z, _mono2(0, 2)]),
            PolyVectorField([z, _mono2(1, 0)]),
        ],
        name="origin_fixed",
    )


def cubic_quadratic_family() -> ControlFamily:
    """One-dimensional ``x' = t1 x^3 + t2 x^2``."""
    return ControlFamily.affine(
        [PolyVectorField([Polynomial.monomial((3,))]), PolyVectorField([Polynomial.monomial((2,))])],
        name="cubic_quadratic",
    )


NAMED_FAMILIES = {
    "area_preserving": area_preserving_family,
    "origin_fixed": origin_fixed_family,
    "cubic_quadratic": cubic_quadratic_family,
}


def family_from_spec(spec: dict) -> ControlFamily:
    """Build a family from its JSON description (see :meth:`ControlFamily.describe`)."""
    from .polyvec import parse_field

    spec = dict(spec)
    kind = spec.pop("kind", "named" if "name" in spec else None)
    if kind == "named":
        name = spec.pop("name", None)
        if spec:
            raise ValueError(f"unknown family fields: {sorted(spec)}")
        if name not in NAMED_FAMILIES:
            raise ValueError(f"unknown family name {name!r}; choose from {sorted(NAMED_FAMILIES)}")
        return NAMED_FAMILIES[name]()
    if kind == "affine":
        basis = spec.pop("basis")
        name = spec.pop("name", None)
        if spec:
            raise ValueError(f"unknown family fields: {sorted(spec)}")
        return ControlFamily.affine([parse_field(s) for s in basis], name=name)
    if kind == "resnet":
        d = spec.pop("dimension")
        act = spec.pop("activation", "tanh")
        ws = spec.pop("weight_structure", "full")
        if spec:
            raise ValueError(f"unknown family fields: {sorted(spec)}")
        return ControlFamily.resnet(int(d), act, ws)
    raise ValueError(f"family kind must be 'affine', 'resnet' or a named family, got {kind!r}")
