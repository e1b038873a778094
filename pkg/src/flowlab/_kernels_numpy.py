"""Pure-numpy RK4 kernels, vectorised over the batch of points.

Family encoding shared with :mod:`flowlab._kernels_numba`:

* ``kind == 0`` (resnet): ``P1 = W (S,d,d)``, ``P2 = A (S,d,d)``, ``P3 = b (S,d)``;
  the field is ``W act(A x + b)`` with ``act`` coded 0 tanh, 1 sigmoid,
  2 relu, 3 identity.
* ``kind == 1`` (polynomial): ``P1 = C (S,d,M)`` effective coefficients and
  ``E (M,d)`` exponents; the field is ``C @ x^E``.  ``P2``/``P3`` are unused.

Status codes: 0 finished, 1 crossed the blow-up threshold, 2 non-finite state.
"""
from __future__ import annotations

import numpy as np

RESNET, POLY = 0, 1
TANH, SIGMOID, RELU, IDENTITY = 0, 1, 2, 3


def _act(act, z):
    if act == TANH:
        s = np.tanh(z)
        return s, 1.0 - s * s
    if act == SIGMOID:
        s = 1.0 / (1.0 + np.exp(-z))
        return s, s * (1.0 - s)
    if act == RELU:
        return np.maximum(z, 0.0), (z > 0.0).astype(float)
    return z, np.ones_like(z)


def _powers(X, E):
    top = int(E.max()) if E.size else 0
    P = np.empty(X.shape + (top + 1,))
    P[..., 0] = 1.0
    for e in range(1, top + 1):
        P[..., e] = P[..., e - 1] * X
    return P  # (n, d, top+1)


def _monomials(X, E):
    P = _powers(X, E)
    d = X.shape[1]
    cols = [P[:, j, E[:, j]] for j in range(d)]  # each (n, M)
    mono = np.prod(np.stack(cols, axis=0), axis=0)
    return P, cols, mono


def _dmonomials(P, cols, E):
    n, d = P.shape[0], P.shape[1]
    M = E.shape[0]
    dm = np.empty((n, M, d))
    for j in range(d):
        ej = E[:, j]
        term = ej * P[:, j, np.maximum(ej - 1, 0)]
        for l in range(d):
            if l != j:
                term = term * cols[l]
        dm[:, :, j] = term
    return dm


def field(kind, act, P1, P2, P3, E, s, X):
    if kind == RESNET:
        S, _ = _act(act, X @ P2[s].T + P3[s])
        return S @ P1[s].T
    _, _, mono = _monomials(X, E)
    return mono @ P1[s].T


def jac(kind, act, P1, P2, P3, E, s, X):
    if kind == RESNET:
        _, Sp = _act(act, X @ P2[s].T + P3[s])
        return np.einsum("ij,nj,jk->nik", P1[s], Sp, P2[s])
    P, cols, _ = _monomials(X, E)
    return np.einsum("im,nmj->nij", P1[s], _dmonomials(P, cols, E))


def vjp(kind, act, P1, P2, P3, E, s, X, lam, G1, G2, G3):
    """Return ``lam @ Df(X)`` and accumulate parameter cotangents into G*[s]."""
    if kind == RESNET:
        S, Sp = _act(act, X @ P2[s].T + P3[s])
        mu = (lam @ P1[s]) * Sp
        G1[s] += lam.T @ S
        G2[s] += mu.T @ X
        G3[s] += mu.sum(axis=0)
        return mu @ P2[s]
    P, cols, mono = _monomials(X, E)
    G1[s] += lam.T @ mono
    J = np.einsum("im,nmj->nij", P1[s], _dmonomials(P, cols, E))
    return np.einsum("ni,nij->nj", lam, J)


def _check(X, threshold):
    if not np.all(np.isfinite(X)):
        return 2
    if X.size and np.max(np.abs(X)) > threshold:
        return 1
    return 0


def forward(kind, act, P1, P2, P3, E, hs, segs, X0, threshold, store):
    X = np.array(X0, dtype=float, copy=True)
    nsteps = hs.shape[0]
    traj = np.empty((nsteps + 1 if store else 0,) + X.shape)
    if store:
        traj[0] = X
    st = _check(X, threshold)
    if st:
        return X, traj, st, 0
    for k in range(nsteps):
        h, s = hs[k], segs[k]
        k1 = field(kind, act, P1, P2, P3, E, s, X)
        k2 = field(kind, act, P1, P2, P3, E, s, X + 0.5 * h * k1)
        k3 = field(kind, act, P1, P2, P3, E, s, X + 0.5 * h * k2)
        k4 = field(kind, act, P1, P2, P3, E, s, X + h * k3)
        with np.errstate(over="ignore", invalid="ignore"):
            X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if store:
            traj[k + 1] = X
        st = _check(X, threshold)
        if st:
            return X, traj, st, k
    return X, traj, 0, nsteps


def variational(kind, act, P1, P2, P3, E, hs, segs, X0, threshold):
    X = np.array(X0, dtype=float, copy=True)
    n, d = X.shape
    J = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    L = np.zeros(n)
    st = _check(X, threshold)
    if st:
        return X, J, L, st, 0

    def rhs(s, Y, JY):
        Df = jac(kind, act, P1, P2, P3, E, s, Y)
        return field(kind, act, P1, P2, P3, E, s, Y), Df @ JY, np.trace(Df, axis1=1, axis2=2)

    for k in range(hs.shape[0]):
        h, s = hs[k], segs[k]
        a1, b1, c1 = rhs(s, X, J)
        a2, b2, c2 = rhs(s, X + 0.5 * h * a1, J + 0.5 * h * b1)
        a3, b3, c3 = rhs(s, X + 0.5 * h * a2, J + 0.5 * h * b2)
        a4, b4, c4 = rhs(s, X + h * a3, J + h * b3)
        with np.errstate(over="ignore", invalid="ignore"):
            X = X + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
            J = J + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
            L = L + (h / 6.0) * (c1 + 2 * c2 + 2 * c3 + c4)
        st = _check(X, threshold)
        if st:
            return X, J, L, st, k
    return X, J, L, 0, hs.shape[0]


def adjoint(kind, act, P1, P2, P3, E, hs, segs, traj, Xbar):
    """Reverse sweep of the discrete RK4 map.

    ``traj`` holds the states before every step (as stored by ``forward``);
    ``Xbar`` is the cotangent of the final state.  Returns the cotangent of
    the initial state, parameter cotangents shaped like P1/P2/P3, and the
    cotangent of every step length.
    """
    G1 = np.zeros_like(P1)
    G2 = np.zeros_like(P2)
    G3 = np.zeros_like(P3)
    hbar = np.zeros(hs.shape[0])
    a = np.array(Xbar, dtype=float, copy=True)
    for k in range(hs.shape[0] - 1, -1, -1):
        h, s = hs[k], segs[k]
        X = traj[k]
        k1 = field(kind, act, P1, P2, P3, E, s, X)
        y2 = X + 0.5 * h * k1
        k2 = field(kind, act, P1, P2, P3, E, s, y2)
        y3 = X + 0.5 * h * k2
        k3 = field(kind, act, P1, P2, P3, E, s, y3)
        y4 = X + h * k3
        k4 = field(kind, act, P1, P2, P3, E, s, y4)
        hb = np.sum(a * (k1 + 2 * k2 + 2 * k3 + k4)) / 6.0
        k1b = (h / 6.0) * a
        k2b = (h / 3.0) * a
        k3b = (h / 3.0) * a
        k4b = (h / 6.0) * a
        xb = a.copy()
        y4b = vjp(kind, act, P1, P2, P3, E, s, y4, k4b, G1, G2, G3)
        xb += y4b
        k3b = k3b + h * y4b
        hb += np.sum(y4b * k3)
        y3b = vjp(kind, act, P1, P2, P3, E, s, y3, k3b, G1, G2, G3)
        xb += y3b
        k2b = k2b + 0.5 * h * y3b
        hb += 0.5 * np.sum(y3b * k2)
        y2b = vjp(kind, act, P1, P2, P3, E, s, y2, k2b, G1, G2, G3)
        xb += y2b
        k1b = k1b + 0.5 * h * y2b
        hb += 0.5 * np.sum(y2b * k1)
        xb += vjp(kind, act, P1, P2, P3, E, s, X, k1b, G1, G2, G3)
        hbar[k] = hb
        a = xb
    return a, G1, G2, G3, hbar
