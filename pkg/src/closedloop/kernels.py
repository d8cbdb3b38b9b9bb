"""Hot numeric kernels: slice propagators, chain evolution, rotation insertion.

Every kernel exists twice: a vectorised numpy version (``*_np``) and an
explicit-loop version compiled with numba (``*_nb``). The public names at the
bottom of the module point at one or the other depending on
``closedloop._accel.NUMBA_ENABLED``. Both paths must agree to ~1e-12; the
test-suite checks this directly.

Shapes: ``d`` is the Hilbert-space dimension, ``K`` the number of
(sub-)slices, ``C`` the number of control channels.
"""
import numpy as np

from ._accel import NUMBA_ENABLED, njit

TWO_PI = 2.0 * np.pi


# --------------------------------------------------------------------------
# numpy implementations

def expm_hermitian_np(h, dt):
    """exp(-i dt_k H_k) for a stack of Hermitian matrices ``h`` (K, d, d).

    LAPACK eigendecomposition; the numba path uses cyclic Jacobi instead,
    which avoids the per-call LAPACK overhead on 4x4 blocks.
    """
    w, v = np.linalg.eigh(h)
    phase = np.exp(-1j * w * np.asarray(dt, dtype=np.float64)[:, None])
    return (v * phase[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def slice_hamiltonians_np(h0, ops, amps):
    return h0[None, :, :] + TWO_PI * np.tensordot(amps, ops, axes=(1, 0))


def slice_propagators_np(h0, ops, amps, dt):
    return expm_hermitian_np(slice_hamiltonians_np(h0, ops, amps), dt)


def evolve_chain_np(us, rho0):
    rho = rho0
    for u in us:
        rho = u @ rho @ np.conj(u.T)
    return rho


def insertion_states_np(us, rho0, rots, boundaries):
    """Final states with ``rots[r]`` applied after ``boundaries[b]`` slices.

    Returns an array of shape (B, R, d, d).
    """
    k, d = us.shape[0], us.shape[1]
    fwd = np.empty((k + 1, d, d), dtype=np.complex128)
    fwd[0] = rho0
    for i in range(k):
        fwd[i + 1] = us[i] @ fwd[i] @ np.conj(us[i].T)
    bwd = np.empty((k + 1, d, d), dtype=np.complex128)
    bwd[k] = np.eye(d)
    for i in range(k - 1, -1, -1):
        bwd[i] = bwd[i + 1] @ us[i]
    b = np.asarray(boundaries)
    full = bwd[b][:, None] @ rots[None, :]                     # (B, R, d, d)
    return full @ fwd[b][:, None] @ np.conj(np.swapaxes(full, -1, -2))


# --------------------------------------------------------------------------
# numba implementations (explicit loops; also valid, if slow, plain Python)

@njit
def _matmul(a, b):
    d = a.shape[0]
    out = np.zeros((d, d), dtype=np.complex128)
    for i in range(d):
        for k in range(d):
            aik = a[i, k]
            if aik != 0:
                for j in range(d):
                    out[i, j] += aik * b[k, j]
    return out


@njit
def _sandwich(u, rho):
    """u @ rho @ u^dagger."""
    d = u.shape[0]
    tmp = _matmul(u, rho)
    out = np.zeros((d, d), dtype=np.complex128)
    for i in range(d):
        for j in range(d):
            acc = 0j
            for k in range(d):
                acc += tmp[i, k] * np.conj(u[j, k])
            out[i, j] = acc
    return out


@njit
def _abs2(z):
    return z.real * z.real + z.imag * z.imag


@njit
def jacobi_eigh_inplace(a, v, tol):
    """Cyclic Jacobi diagonalisation of the Hermitian ``a``, in place.

    On return ``a`` is diagonal (eigenvalues on the diagonal) and ``v`` has
    been right-multiplied by the accumulated unitary rotations. Each rotation
    first removes the phase of a_pq, then applies the real symmetric Jacobi
    rotation to the resulting real 2x2 block.
    """
    d = a.shape[0]
    scale = 0.0
    for i in range(d):
        for j in range(d):
            scale += _abs2(a[i, j])
    thr = tol * tol * scale
    for _ in range(60):
        off = 0.0
        for p in range(d):
            for q in range(p + 1, d):
                off += _abs2(a[p, q])
        if off <= thr:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                r2 = _abs2(apq)
                if r2 == 0.0:
                    continue
                r = np.sqrt(r2)
                em = complex(apq.real / r, -apq.imag / r)
                theta = (a[q, q].real - a[p, p].real) / (2.0 * r)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotation J = [[c, s], [-s em, c em]] on the (p, q) plane
                jqp = -s * em
                jqq = c * em
                for k in range(d):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp * c + akq * jqp
                    a[k, q] = akp * s + akq * jqq
                cjqp = np.conj(jqp)
                cjqq = np.conj(jqq)
                for k in range(d):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk + cjqp * aqk
                    a[q, k] = s * apk + cjqq * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(d):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = vkp * c + vkq * jqp
                    v[k, q] = vkp * s + vkq * jqq


@njit
def jacobi_eigh(h):
    """Eigenvalues (unsorted) and eigenvectors of a Hermitian matrix."""
    d = h.shape[0]
    a = h.astype(np.complex128)
    v = np.eye(d, dtype=np.complex128)
    jacobi_eigh_inplace(a, v, 1e-15)
    w = np.empty(d)
    for i in range(d):
        w[i] = a[i, i].real
    return w, v


@njit
def _expm_into(out, h, dt, a, v, ph):
    d = h.shape[0]
    for i in range(d):
        for j in range(d):
            a[i, j] = h[i, j]
            v[i, j] = 1.0 if i == j else 0.0
    jacobi_eigh_inplace(a, v, 1e-15)
    for k in range(d):
        ph[k] = np.exp(-1j * a[k, k].real * dt)
    for i in range(d):
        for j in range(d):
            acc = 0j
            for k in range(d):
                acc += v[i, k] * ph[k] * np.conj(v[j, k])
            out[i, j] = acc


@njit
def expm_hermitian_nb(h, dt):
    k, d = h.shape[0], h.shape[1]
    out = np.empty((k, d, d), dtype=np.complex128)
    a = np.empty((d, d), dtype=np.complex128)
    v = np.empty((d, d), dtype=np.complex128)
    ph = np.empty(d, dtype=np.complex128)
    for s in range(k):
        _expm_into(out[s], h[s], dt[s], a, v, ph)
    return out


@njit
def slice_hamiltonians_nb(h0, ops, amps):
    k, c = amps.shape
    d = h0.shape[0]
    out = np.empty((k, d, d), dtype=np.complex128)
    for s in range(k):
        for i in range(d):
            for j in range(d):
                acc = h0[i, j]
                for ch in range(c):
                    acc += 2.0 * np.pi * amps[s, ch] * ops[ch, i, j]
                out[s, i, j] = acc
    return out


@njit
def slice_propagators_nb(h0, ops, amps, dt):
    return expm_hermitian_nb(slice_hamiltonians_nb(h0, ops, amps), dt)


@njit
def evolve_chain_nb(us, rho0):
    rho = rho0.copy()
    for s in range(us.shape[0]):
        rho = _sandwich(us[s], rho)
    return rho


@njit
def insertion_states_nb(us, rho0, rots, boundaries):
    k, d = us.shape[0], us.shape[1]
    fwd = np.empty((k + 1, d, d), dtype=np.complex128)
    fwd[0] = rho0
    for i in range(k):
        fwd[i + 1] = _sandwich(us[i], fwd[i])
    bwd = np.empty((k + 1, d, d), dtype=np.complex128)
    bwd[k] = np.eye(d, dtype=np.complex128)
    for i in range(k - 1, -1, -1):
        bwd[i] = _matmul(bwd[i + 1], us[i])
    nb_, nr = boundaries.shape[0], rots.shape[0]
    out = np.empty((nb_, nr, d, d), dtype=np.complex128)
    for b in range(nb_):
        m = boundaries[b]
        for r in range(nr):
            out[b, r] = _sandwich(_matmul(bwd[m], rots[r]), fwd[m])
    return out


# --------------------------------------------------------------------------
# dispatch

if NUMBA_ENABLED:
    expm_hermitian = expm_hermitian_nb
    slice_hamiltonians = slice_hamiltonians_nb
    slice_propagators = slice_propagators_nb
    evolve_chain = evolve_chain_nb
    insertion_states = insertion_states_nb
else:
    expm_hermitian = expm_hermitian_np
    slice_hamiltonians = slice_hamiltonians_np
    slice_propagators = slice_propagators_np
    evolve_chain = evolve_chain_np
    insertion_states = insertion_states_np
