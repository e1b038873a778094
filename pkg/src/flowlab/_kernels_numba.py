"""numba-compiled RK4 kernels; same signatures and encoding as
:mod:`flowlab._kernels_numpy`.

States are held internally as ``(d, n)`` arrays so that every inner loop runs
over the batch of points with unit stride, which LLVM vectorises.  A
point-by-point layout was 5-20x slower on wide batches.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

RESNET, POLY = 0, 1
TANH, SIGMOID, RELU, IDENTITY = 0, 1, 2, 3


@njit(cache=True)
def _act_row(act, z, out, dout, want_d):
    """Activation (and derivative when ``want_d``) of a row of pre-activations."""
    n = z.shape[0]
    if act == TANH:
        for p in range(n):
            s = math.tanh(z[p])
            out[p] = s
            if want_d:
                dout[p] = 1.0 - s * s
    elif act == SIGMOID:
        for p in range(n):
            s = 1.0 / (1.0 + math.exp(-z[p]))
            out[p] = s
            if want_d:
                dout[p] = s * (1.0 - s)
    elif act == RELU:
        for p in range(n):
            v = z[p]
            out[p] = v if v > 0.0 else 0.0
            if want_d:
                dout[p] = 1.0 if v > 0.0 else 0.0
    else:
        for p in range(n):
            out[p] = z[p]
            if want_d:
                dout[p] = 1.0


@njit(cache=True)
def _preact(P2, P3, s, Y, Z, S, Sp, act, want_d):
    d, n = Y.shape
    for i in range(d):
        zi = Z[i]
        b = P3[s, i]
        for p in range(n):
            zi[p] = b
        for j in range(d):
            a = P2[s, i, j]
            if a != 0.0:
                yj = Y[j]
                for p in range(n):
                    zi[p] += a * yj[p]
        _act_row(act, zi, S[i], Sp[i], want_d)


@njit(cache=True)
def _monomial(E, m, Y, out):
    d, n = Y.shape
    for p in range(n):
        out[p] = 1.0
    for j in range(d):
        yj = Y[j]
        for _ in range(E[m, j]):
            for p in range(n):
                out[p] *= yj[p]


@njit(cache=True)
def _dmonomial(E, m, k, Y, out):
    """d/dx_k of monomial ``m``; returns False when it vanishes identically."""
    d, n = Y.shape
    ek = E[m, k]
    if ek == 0:
        return False
    for p in range(n):
        out[p] = ek
    for j in range(d):
        yj = Y[j]
        e = E[m, j] - 1 if j == k else E[m, j]
        for _ in range(e):
            for p in range(n):
                out[p] *= yj[p]
    return True


@njit(cache=True)
def _field(kind, act, P1, P2, P3, E, s, Y, out, Z, S, Sp, mono):
    d, n = Y.shape
    for i in range(d):
        for p in range(n):
            out[i, p] = 0.0
    if kind == RESNET:
        _preact(P2, P3, s, Y, Z, S, Sp, act, False)
        for i in range(d):
            oi = out[i]
            for j in range(d):
                w = P1[s, i, j]
                if w != 0.0:
                    sj = S[j]
                    for p in range(n):
                        oi[p] += w * sj[p]
    else:
        for m in range(E.shape[0]):
            _monomial(E, m, Y, mono)
            for i in range(d):
                c = P1[s, i, m]
                if c != 0.0:
                    oi = out[i]
                    for p in range(n):
                        oi[p] += c * mono[p]


@njit(cache=True)
def _jac(kind, act, P1, P2, P3, E, s, Y, Df, Z, S, Sp, mono):
    """``Df[i, k, p] = d f_i / d x_k`` at every point."""
    d, n = Y.shape
    for i in range(d):
        for k in range(d):
            for p in range(n):
                Df[i, k, p] = 0.0
    if kind == RESNET:
        _preact(P2, P3, s, Y, Z, S, Sp, act, True)
        for i in range(d):
            for j in range(d):
                w = P1[s, i, j]
                if w == 0.0:
                    continue
                spj = Sp[j]
                for k in range(d):
                    c = w * P2[s, j, k]
                    if c != 0.0:
                        dik = Df[i, k]
                        for p in range(n):
                            dik[p] += c * spj[p]
    else:
        for m in range(E.shape[0]):
            for k in range(d):
                if not _dmonomial(E, m, k, Y, mono):
                    continue
                for i in range(d):
                    c = P1[s, i, m]
                    if c != 0.0:
                        dik = Df[i, k]
                        for p in range(n):
                            dik[p] += c * mono[p]


@njit(cache=True)
def _vjp(kind, act, P1, P2, P3, E, s, Y, lam, out, G1, G2, G3, Z, S, Sp, mono, tmp):
    """``out[:, p] = lam[:, p] @ Df(Y[:, p])``; parameter cotangents accumulate into G*[s]."""
    d, n = Y.shape
    for k in range(d):
        for p in range(n):
            out[k, p] = 0.0
    if kind == RESNET:
        _preact(P2, P3, s, Y, Z, S, Sp, act, True)
        for i in range(d):
            li = lam[i]
            for j in range(d):
                sj = S[j]
                acc = 0.0
                for p in range(n):
                    acc += li[p] * sj[p]
                G1[s, i, j] += acc
        # Z <- mu = (lam^T W) * act'
        for j in range(d):
            mu = Z[j]
            for p in range(n):
                mu[p] = 0.0
            for i in range(d):
                w = P1[s, i, j]
                if w != 0.0:
                    li = lam[i]
                    for p in range(n):
                        mu[p] += w * li[p]
            spj = Sp[j]
            for p in range(n):
                mu[p] *= spj[p]
        for i in range(d):
            mu = Z[i]
            acc3 = 0.0
            for p in range(n):
                acc3 += mu[p]
            G3[s, i] += acc3
            for j in range(d):
                yj = Y[j]
                acc = 0.0
                for p in range(n):
                    acc += mu[p] * yj[p]
                G2[s, i, j] += acc
            for k in range(d):
                a = P2[s, i, k]
                if a != 0.0:
                    ok = out[k]
                    for p in range(n):
                        ok[p] += a * mu[p]
    else:
        for m in range(E.shape[0]):
            _monomial(E, m, Y, mono)
            # tmp <- sum_i lam_i C_im
            for p in range(n):
                tmp[p] = 0.0
            for i in range(d):
                li = lam[i]
                acc = 0.0
                for p in range(n):
                    acc += li[p] * mono[p]
                G1[s, i, m] += acc
                c = P1[s, i, m]
                if c != 0.0:
                    for p in range(n):
                        tmp[p] += c * li[p]
            for k in range(d):
                if not _dmonomial(E, m, k, Y, mono):
                    continue
                ok = out[k]
                for p in range(n):
                    ok[p] += tmp[p] * mono[p]


@njit(cache=True)
def _status(X, threshold):
    """0 all finite and below threshold, 1 above threshold, 2 non-finite."""
    st = 0
    d, n = X.shape
    for j in range(d):
        xj = X[j]
        for p in range(n):
            v = xj[p]
            if not math.isfinite(v):
                return 2
            if abs(v) > threshold:
                st = 1
    return st


@njit(cache=True)
def _stage(X, c, K, Y):
    d, n = X.shape
    for j in range(d):
        for p in range(n):
            Y[j, p] = X[j, p] + c * K[j, p]


@njit(cache=True)
def _forward(kind, act, P1, P2, P3, E, hs, segs, X0, threshold, store):
    n, d = X0.shape
    nsteps = hs.shape[0]
    X = np.ascontiguousarray(X0.T)
    traj = np.empty((nsteps + 1 if store else 0, n, d))
    if store:
        traj[0] = X0
    st = _status(X, threshold)
    if st != 0:
        return X0.copy(), traj, st, 0
    k1 = np.empty((d, n))
    k2 = np.empty((d, n))
    k3 = np.empty((d, n))
    k4 = np.empty((d, n))
    Y = np.empty((d, n))
    Z = np.empty((d, n))
    S = np.empty((d, n))
    Sp = np.empty((d, n))
    mono = np.empty(n)
    for k in range(nsteps):
        h = hs[k]
        s = segs[k]
        _field(kind, act, P1, P2, P3, E, s, X, k1, Z, S, Sp, mono)
        _stage(X, 0.5 * h, k1, Y)
        _field(kind, act, P1, P2, P3, E, s, Y, k2, Z, S, Sp, mono)
        _stage(X, 0.5 * h, k2, Y)
        _field(kind, act, P1, P2, P3, E, s, Y, k3, Z, S, Sp, mono)
        _stage(X, h, k3, Y)
        _field(kind, act, P1, P2, P3, E, s, Y, k4, Z, S, Sp, mono)
        h6 = h / 6.0
        for j in range(d):
            for p in range(n):
                X[j, p] += h6 * (k1[j, p] + 2.0 * k2[j, p] + 2.0 * k3[j, p] + k4[j, p])
        if store:
            traj[k + 1] = X.T
        st = _status(X, threshold)
        if st != 0:
            return np.ascontiguousarray(X.T), traj, st, k
    return np.ascontiguousarray(X.T), traj, 0, nsteps


@njit(cache=True)
def _variational(kind, act, P1, P2, P3, E, hs, segs, X0, threshold):
    n, d = X0.shape
    X = np.ascontiguousarray(X0.T)
    J = np.zeros((d, d, n))
    for j in range(d):
        for p in range(n):
            J[j, j, p] = 1.0
    L = np.zeros(n)
    st = _status(X, threshold)
    if st != 0:
        return X0.copy(), np.ascontiguousarray(J.transpose(2, 0, 1)), L, st, 0
    kx = np.empty((4, d, n))
    kJ = np.empty((4, d, d, n))
    kL = np.empty((4, n))
    Y = np.empty((d, n))
    JY = np.empty((d, d, n))
    Df = np.empty((d, d, n))
    Z = np.empty((d, n))
    S = np.empty((d, n))
    Sp = np.empty((d, n))
    mono = np.empty(n)
    for k in range(hs.shape[0]):
        h = hs[k]
        s = segs[k]
        for q in range(4):
            c = 0.0 if q == 0 else (h if q == 3 else 0.5 * h)
            for j in range(d):
                for p in range(n):
                    Y[j, p] = X[j, p] + (c * kx[q - 1, j, p] if q > 0 else 0.0)
                for l in range(d):
                    for p in range(n):
                        JY[j, l, p] = J[j, l, p] + (c * kJ[q - 1, j, l, p] if q > 0 else 0.0)
            _field(kind, act, P1, P2, P3, E, s, Y, kx[q], Z, S, Sp, mono)
            _jac(kind, act, P1, P2, P3, E, s, Y, Df, Z, S, Sp, mono)
            for p in range(n):
                kL[q, p] = 0.0
            for i in range(d):
                for p in range(n):
                    kL[q, p] += Df[i, i, p]
                for l in range(d):
                    for p in range(n):
                        kJ[q, i, l, p] = 0.0
                    for j in range(d):
                        for p in range(n):
                            kJ[q, i, l, p] += Df[i, j, p] * JY[j, l, p]
        h6 = h / 6.0
        for j in range(d):
            for p in range(n):
                X[j, p] += h6 * (kx[0, j, p] + 2.0 * kx[1, j, p] + 2.0 * kx[2, j, p] + kx[3, j, p])
            for l in range(d):
                for p in range(n):
                    J[j, l, p] += h6 * (kJ[0, j, l, p] + 2.0 * kJ[1, j, l, p] + 2.0 * kJ[2, j, l, p]
                                        + kJ[3, j, l, p])
        for p in range(n):
            L[p] += h6 * (kL[0, p] + 2.0 * kL[1, p] + 2.0 * kL[2, p] + kL[3, p])
        st = _status(X, threshold)
        if st != 0:
            return np.ascontiguousarray(X.T), np.ascontiguousarray(J.transpose(2, 0, 1)), L, st, k
    return np.ascontiguousarray(X.T), np.ascontiguousarray(J.transpose(2, 0, 1)), L, 0, hs.shape[0]


@njit(cache=True)
def _dot(A, B):
    d, n = A.shape
    acc = 0.0
    for j in range(d):
        for p in range(n):
            acc += A[j, p] * B[j, p]
    return acc


@njit(cache=True)
def _adjoint(kind, act, P1, P2, P3, E, hs, segs, traj, Xbar):
    nsteps = hs.shape[0]
    n, d = Xbar.shape
    G1 = np.zeros_like(P1)
    G2 = np.zeros_like(P2)
    G3 = np.zeros_like(P3)
    hbar = np.zeros(nsteps)
    a = np.ascontiguousarray(Xbar.T)
    X = np.empty((d, n))
    k1 = np.empty((d, n))
    k2 = np.empty((d, n))
    k3 = np.empty((d, n))
    k4 = np.empty((d, n))
    y2 = np.empty((d, n))
    y3 = np.empty((d, n))
    y4 = np.empty((d, n))
    kb = np.empty((d, n))
    yb = np.empty((d, n))
    xb = np.empty((d, n))
    Z = np.empty((d, n))
    S = np.empty((d, n))
    Sp = np.empty((d, n))
    mono = np.empty(n)
    tmp = np.empty(n)
    for k in range(nsteps - 1, -1, -1):
        h = hs[k]
        s = segs[k]
        for j in range(d):
            for p in range(n):
                X[j, p] = traj[k, p, j]
        _field(kind, act, P1, P2, P3, E, s, X, k1, Z, S, Sp, mono)
        _stage(X, 0.5 * h, k1, y2)
        _field(kind, act, P1, P2, P3, E, s, y2, k2, Z, S, Sp, mono)
        _stage(X, 0.5 * h, k2, y3)
        _field(kind, act, P1, P2, P3, E, s, y3, k3, Z, S, Sp, mono)
        _stage(X, h, k3, y4)
        _field(kind, act, P1, P2, P3, E, s, y4, k4, Z, S, Sp, mono)
        hb = (_dot(a, k1) + 2.0 * _dot(a, k2) + 2.0 * _dot(a, k3) + _dot(a, k4)) / 6.0
        for j in range(d):
            for p in range(n):
                xb[j, p] = a[j, p]
                kb[j, p] = (h / 6.0) * a[j, p]
        # stage 4
        _vjp(kind, act, P1, P2, P3, E, s, y4, kb, yb, G1, G2, G3, Z, S, Sp, mono, tmp)
        hb += _dot(yb, k3)
        for j in range(d):
            for p in range(n):
                xb[j, p] += yb[j, p]
                kb[j, p] = (h / 3.0) * a[j, p] + h * yb[j, p]
        # stage 3
        _vjp(kind, act, P1, P2, P3, E, s, y3, kb, yb, G1, G2, G3, Z, S, Sp, mono, tmp)
        hb += 0.5 * _dot(yb, k2)
        for j in range(d):
            for p in range(n):
                xb[j, p] += yb[j, p]
                kb[j, p] = (h / 3.0) * a[j, p] + 0.5 * h * yb[j, p]
        # stage 2
        _vjp(kind, act, P1, P2, P3, E, s, y2, kb, yb, G1, G2, G3, Z, S, Sp, mono, tmp)
        hb += 0.5 * _dot(yb, k1)
        for j in range(d):
            for p in range(n):
                xb[j, p] += yb[j, p]
                kb[j, p] = (h / 6.0) * a[j, p] + 0.5 * h * yb[j, p]
        # stage 1
        _vjp(kind, act, P1, P2, P3, E, s, X, kb, yb, G1, G2, G3, Z, S, Sp, mono, tmp)
        for j in range(d):
            for p in range(n):
                a[j, p] = xb[j, p] + yb[j, p]
        hbar[k] = hb
    return np.ascontiguousarray(a.T), G1, G2, G3, hbar


def forward(kind, act, P1, P2, P3, E, hs, segs, X0, threshold, store):
    return _forward(kind, act, P1, P2, P3, E, hs, segs,
                    np.ascontiguousarray(X0, dtype=np.float64), float(threshold), bool(store))


def variational(kind, act, P1, P2, P3, E, hs, segs, X0, threshold):
    return _variational(kind, act, P1, P2, P3, E, hs, segs,
                        np.ascontiguousarray(X0, dtype=np.float64), float(threshold))


def adjoint(kind, act, P1, P2, P3, E, hs, segs, traj, Xbar):
    return _adjoint(kind, act, P1, P2, P3, E, hs, segs, np.ascontiguousarray(traj, dtype=np.float64),
                    np.ascontiguousarray(Xbar, dtype=np.float64))
