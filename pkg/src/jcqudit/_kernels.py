"""Compiled inner loops of the batched circuit engine."""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def sandwich(A, G, C):
    """A[n] @ G[b, n] @ C[n] for G of shape (B, N, 3, 3)."""
    B, N = G.shape[0], G.shape[1]
    out = np.empty_like(G)
    tmp = np.empty((3, 3), G.dtype)
    for b in range(B):
        for n in range(N):
            for i in range(3):
                for j in range(3):
                    s = 0j
                    for k in range(3):
                        s += G[b, n, i, k] * C[n, k, j]
                    tmp[i, j] = s
            for i in range(3):
                for j in range(3):
                    s = 0j
                    for k in range(3):
                        s += A[n, i, k] * tmp[k, j]
                    out[b, n, i, j] = s
    return out


@nb.njit(cache=True)
def rot_apply(R, x, adjoint):
    """Apply per-n blocks R (B, N, 3, 3) (or their adjoints) to x (B, 3, N, C)."""
    B, _, N, C = x.shape
    out = np.empty_like(x)
    for b in range(B):
        for n in range(N):
            for i in range(3):
                for c in range(C):
                    s = 0j
                    for j in range(3):
                        if adjoint:
                            s += np.conj(R[b, n, j, i]) * x[b, j, n, c]
                        else:
                            s += R[b, n, i, j] * x[b, j, n, c]
                    out[b, i, n, c] = s
    return out


@nb.njit(cache=True)
def jc_apply(D, e_phase, f_top, x, d, g0, adjoint):
    """Apply a JC layer given by doublets D (B, d, 2, 2), e phases and |f,d> phase.

    ``f_top`` is ignored unless the space holds N = d + 1 levels. With
    ``g0`` = 0 the |g,0> entry is dropped (used for derivatives).
    """
    B, _, N, C = x.shape
    m = N - 1 if N == d else d
    out = np.zeros_like(x)
    for b in range(B):
        for c in range(C):
            out[b, 0, 0, c] = g0 * x[b, 0, 0, c]
            for n in range(N):
                ep = e_phase[b, n]
                if adjoint:
                    ep = np.conj(ep)
                out[b, 1, n, c] = ep * x[b, 1, n, c]
            for n in range(m):
                f = x[b, 2, n, c]
                g = x[b, 0, n + 1, c]
                if adjoint:
                    a00 = np.conj(D[b, n, 0, 0])
                    a01 = np.conj(D[b, n, 1, 0])
                    a10 = np.conj(D[b, n, 0, 1])
                    a11 = np.conj(D[b, n, 1, 1])
                else:
                    a00 = D[b, n, 0, 0]
                    a01 = D[b, n, 0, 1]
                    a10 = D[b, n, 1, 0]
                    a11 = D[b, n, 1, 1]
                out[b, 2, n, c] = a00 * f + a01 * g
                out[b, 0, n + 1, c] = a10 * f + a11 * g
            if N == d:
                a = D[b, d - 1, 0, 0]
                if adjoint:
                    a = np.conj(a)
                out[b, 2, d - 1, c] = a * x[b, 2, d - 1, c]
            else:
                a = f_top[b]
                if adjoint:
                    a = np.conj(a)
                out[b, 2, d, c] = a * x[b, 2, d, c]
    return out


@nb.njit(cache=True)
def inner(lam, v):
    """sum conj(lam) * v over all but the batch axis of (B, Q, N, C) arrays."""
    B, Q, N, C = lam.shape
    out = np.zeros(B, np.complex128)
    for b in range(B):
        s = 0j
        for q in range(Q):
            for n in range(N):
                for c in range(C):
                    s += np.conj(lam[b, q, n, c]) * v[b, q, n, c]
        out[b] = s
    return out


# ---------------------------------------------------------------------------
# fused forward/backward sweep
# ---------------------------------------------------------------------------


@nb.njit(cache=True, inline="always")
def _su2(s0, v0, v1, v2, ph, out, i0, j0, scale):
    # out[i0:i0+2, j0:j0+2] = ph * (s0 I - i v.sigma) * scale
    out[i0, j0] = ph * (s0 - 1j * v2) * scale
    out[i0 + 1, j0 + 1] = ph * (s0 + 1j * v2) * scale
    out[i0, j0 + 1] = ph * (-1j * (v0 - 1j * v1)) * scale
    out[i0 + 1, j0] = ph * (-1j * (v0 + 1j * v1)) * scale


@nb.njit(cache=True)
def _pair(m, h, c, tau, dm, dh, dtau, U, dU):
    """exp(-i tau [[m+h, c], [c*, m-h]]) and its derivative along (dm, dh, dtau)."""
    w0, w1, w2 = tau * c.real, -tau * c.imag, tau * h
    dw0, dw1, dw2 = dtau * c.real, -dtau * c.imag, dtau * h + tau * dh
    a = np.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
    if a > 1e-12:
        sinc = np.sin(a) / a
        da = (w0 * dw0 + w1 * dw1 + w2 * dw2) / a
    else:
        sinc = 1.0
        da = 0.0
    if a > 1e-6:
        dsinc = (np.cos(a) - sinc) / a
    else:
        dsinc = -a / 3.0
    mu = m * tau
    dmu = dm * tau + m * dtau
    ph = np.exp(-1j * mu)
    s0 = np.cos(a)
    _su2(s0, sinc * w0, sinc * w1, sinc * w2, ph, U, 0, 0, 1.0)
    ds0 = -np.sin(a) * da
    k = dsinc * da
    _su2(ds0, k * w0 + sinc * dw0, k * w1 + sinc * dw1, k * w2 + sinc * dw2, ph, dU, 0, 0, 1.0)
    for i in range(2):
        for j in range(2):
            dU[i, j] += -1j * dmu * U[i, j]


@nb.njit(cache=True)
def _mm3(A, B, out):
    for i in range(3):
        for j in range(3):
            s = 0j
            for k in range(3):
                s += A[i, k] * B[k, j]
            out[i, j] = s


@nb.njit(cache=True)
def _composite(theta, phi, n_levels, EF, EL, ge_e, ge_f, eps, det, tau_off, R, dRt, dRp, grad, W):
    """Composite rotation blocks R[n] and theta/phi derivatives for one (b, l).

    W is (4, 3, 3) complex scratch.
    """
    tau = theta / (2.0 * eps) + tau_off
    c = eps * np.exp(1j * phi)
    fr = np.exp(1j * det * tau)
    G, Hf, T, T2 = W[0], W[1], W[2], W[3]
    P = W[2, :2, :2]
    dP = W[3, :2, :2]
    for n in range(n_levels):
        ee = ge_e[n]
        m = 0.5 * ee
        h = -0.5 * ee
        _pair(m, h, c, tau, 0.0, 0.0, 0.0, P, dP)
        G[:, :] = 0.0
        G[0, 0] = P[0, 0]
        G[0, 1] = P[0, 1]
        G[1, 0] = P[1, 0] * fr
        G[1, 1] = P[1, 1] * fr
        G[2, 2] = np.exp(-1j * ge_f[n] * tau)
        _mm3(G, EF[n], T)
        _mm3(EL[n], T, R[n])
        if grad:
            Hf[:, :] = 0.0
            Hf[1, 1] = ee - det
            Hf[2, 2] = ge_f[n]
            Hf[0, 1] = c * np.conj(fr)
            Hf[1, 0] = np.conj(c) * fr
            _mm3(Hf, G, T2)
            for i in range(3):
                for j in range(3):
                    T2[i, j] *= -1j / (2.0 * eps)
            _mm3(T2, EF[n], T)
            _mm3(EL[n], T, dRt[n])
            for i in range(3):
                ki = 0.5 if i == 0 else (-0.5 if i == 1 else 0.0)
                for j in range(3):
                    kj = 0.5 if j == 0 else (-0.5 if j == 1 else 0.0)
                    T2[i, j] = 1j * (ki - kj) * G[i, j]
            _mm3(T2, EF[n], T)
            _mm3(EL[n], T, dRp[n])


@nb.njit(cache=True)
def _jc(phi_sb, delta, d, n_levels, F0, Gn, En, eps_sb, eps_cal, c0, tau_off, D, dD, ep, dep, grad, W):
    """JC doublets D[n], e phases and (if N = d + 1) |f,d> phase; returns (f_top, df_top)."""
    om_c = np.sqrt(0.25 * delta * delta + d * eps_cal * eps_cal)
    tau = np.pi / om_c + tau_off
    dtau = -(np.pi / om_c) * (0.25 * delta) / (om_c * om_c)
    carrier = c0 + delta
    frame = np.exp(-1j * carrier * tau)
    dframe = -1j * (tau + carrier * dtau) * frame
    emph = np.exp(-1j * phi_sb)
    U = W[0, :2, :2]
    dU = W[1, :2, :2]
    for n in range(d):
        mean = 0.5 * (F0[n] - carrier + Gn[n])
        half = 0.5 * (F0[n] - carrier - Gn[n])
        c = eps_sb * np.sqrt(n + 1.0) * emph
        _pair(mean, half, c, tau, -0.5, -0.5, dtau, U, dU)
        for j in range(2):
            D[n, 0, j] = U[0, j] * frame
            D[n, 1, j] = U[1, j]
            if grad:
                dD[n, 0, j] = dU[0, j] * frame + U[0, j] * dframe
                dD[n, 1, j] = dU[1, j]
    for n in range(n_levels):
        ep[n] = np.exp(-1j * En[n] * tau)
        if grad:
            dep[n] = -1j * En[n] * dtau * ep[n]
    ft = 0j
    dft = 0j
    if n_levels == d + 1:
        ft = np.exp(-1j * F0[d] * tau)
        dft = -1j * F0[d] * dtau * ft
    return ft, dft


@nb.njit(cache=True)
def _rot1(R, x, out, adjoint):
    N = x.shape[1]
    C = x.shape[2]
    for n in range(N):
        for i in range(3):
            for c in range(C):
                s = 0j
                for j in range(3):
                    if adjoint:
                        s += np.conj(R[n, j, i]) * x[j, n, c]
                    else:
                        s += R[n, i, j] * x[j, n, c]
                out[i, n, c] = s


@nb.njit(cache=True)
def _jc1(D, ep, ft, x, out, d, g0, adjoint):
    N = x.shape[1]
    C = x.shape[2]
    m = N - 1 if N == d else d
    for c in range(C):
        out[0, 0, c] = g0 * x[0, 0, c]
        for n in range(N):
            e = np.conj(ep[n]) if adjoint else ep[n]
            out[1, n, c] = e * x[1, n, c]
        for n in range(m):
            f = x[2, n, c]
            g = x[0, n + 1, c]
            if adjoint:
                a00, a01 = np.conj(D[n, 0, 0]), np.conj(D[n, 1, 0])
                a10, a11 = np.conj(D[n, 0, 1]), np.conj(D[n, 1, 1])
            else:
                a00, a01, a10, a11 = D[n, 0, 0], D[n, 0, 1], D[n, 1, 0], D[n, 1, 1]
            out[2, n, c] = a00 * f + a01 * g
            out[0, n + 1, c] = a10 * f + a11 * g
        if N == d:
            a = np.conj(D[d - 1, 0, 0]) if adjoint else D[d - 1, 0, 0]
            out[2, d - 1, c] = a * x[2, d - 1, c]
        else:
            a = np.conj(ft) if adjoint else ft
            out[2, d, c] = a * x[2, d, c]


@nb.njit(cache=True)
def _ip(a, b):
    s = 0j
    for i in range(a.shape[0]):
        for n in range(a.shape[1]):
            for c in range(a.shape[2]):
                s += np.conj(a[i, n, c]) * b[i, n, c]
    return s


@nb.njit(cache=True)
def _ip_f(a, b):
    s = 0j
    for n in range(a.shape[1]):
        for c in range(a.shape[2]):
            s += np.conj(a[2, n, c]) * b[2, n, c]
    return s


@nb.njit(cache=True)
def fused_sweep(theta, phi_q, phi_sb, delta, ftheta, fphi, has_final, X, Y,
                EF, EL, ge_e, ge_f, eps_ge, det, tau_ge_off,
                d, F0, Gn, En, eps_sb, eps_cal, c0, tau_sb_off, grad):
    """Overlaps o[b] = <Y, U_b X> and their parameter gradients for a batch of circuits.

    Returns (o, g, gf) with g[b, k, l] = do/dp_k of layer l (k: theta, phi_q,
    phi_sb, delta) and gf[b] the trailing-rotation (theta, phi_q) derivatives.
    """
    B, L = theta.shape
    _, N, C = X.shape
    o = np.zeros(B, np.complex128)
    g = np.zeros((B, 4, L), np.complex128)
    gf = np.zeros((B, 2), np.complex128)
    nst = 2 * L + 1 + (1 if has_final else 0)
    xs = np.zeros((nst, 3, N, C), np.complex128)
    R = np.zeros((L + 1, N, 3, 3), np.complex128)
    dRt = np.zeros((L + 1, N, 3, 3), np.complex128)
    dRp = np.zeros((L + 1, N, 3, 3), np.complex128)
    D = np.zeros((L, d, 2, 2), np.complex128)
    dD = np.zeros((L, d, 2, 2), np.complex128)
    ep = np.zeros((L, N), np.complex128)
    dep = np.zeros((L, N), np.complex128)
    ft = np.zeros(L, np.complex128)
    dft = np.zeros(L, np.complex128)
    lam = np.zeros((3, N, C), np.complex128)
    tmp = np.zeros((3, N, C), np.complex128)
    tmp2 = np.zeros((3, N, C), np.complex128)
    W = np.zeros((4, 3, 3), np.complex128)
    for b in range(B):
        xs[0] = X
        k = 0
        for l in range(L):
            _composite(theta[b, l], phi_q[b, l], N, EF, EL, ge_e, ge_f, eps_ge, det, tau_ge_off,
                       R[l], dRt[l], dRp[l], grad, W)
            _rot1(R[l], xs[k], xs[k + 1], False)
            k += 1
            ft[l], dft[l] = _jc(phi_sb[b, l], delta[b, l], d, N, F0, Gn, En, eps_sb, eps_cal, c0,
                                tau_sb_off, D[l], dD[l], ep[l], dep[l], grad, W)
            _jc1(D[l], ep[l], ft[l], xs[k], xs[k + 1], d, 1.0, False)
            k += 1
        if has_final:
            _composite(ftheta[b], fphi[b], N, EF, EL, ge_e, ge_f, eps_ge, det, tau_ge_off,
                       R[L], dRt[L], dRp[L], grad, W)
            _rot1(R[L], xs[k], xs[k + 1], False)
            k += 1
        o[b] = _ip(Y, xs[k])
        if not grad:
            continue
        lam[:] = Y
        if has_final:
            _rot1(dRt[L], xs[k - 1], tmp, False)
            gf[b, 0] = _ip(lam, tmp)
            _rot1(dRp[L], xs[k - 1], tmp, False)
            gf[b, 1] = _ip(lam, tmp)
            _rot1(R[L], lam, tmp, True)
            lam[:] = tmp
            k -= 1
        for l in range(L - 1, -1, -1):
            # JC layer maps xs[k-1] -> xs[k]
            _jc1(dD[l], dep[l], dft[l], xs[k - 1], tmp, d, 0.0, False)
            g[b, 3, l] = _ip(lam, tmp)
            _jc1(D[l], ep[l], ft[l], lam, tmp2, d, 1.0, True)
            g[b, 2, l] = 1j * (_ip_f(tmp2, xs[k - 1]) - _ip_f(lam, xs[k]))
            lam[:] = tmp2
            k -= 1
            _rot1(dRt[l], xs[k - 1], tmp, False)
            g[b, 0, l] = _ip(lam, tmp)
            _rot1(dRp[l], xs[k - 1], tmp, False)
            g[b, 1, l] = _ip(lam, tmp)
            _rot1(R[l], lam, tmp, True)
            lam[:] = tmp
            k -= 1
    return o, g, gf
