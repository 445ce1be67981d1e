# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training-epoch kernel.  Same contract and random streams as
pyref.py; matmuls go through BLAS, everything else is fused C loops."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, log, isfinite
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t asn_mix64(uint64_t z) {
        z ^= z >> 30; z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27; z *= 0x94D049BB133111EBULL;
        z ^= z >> 31; return z;
    }
    """
    unsigned long long asn_mix64(unsigned long long z) nogil

cdef unsigned long long GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double U53 = 1.0 / 9007199254740992.0  # 2**-53


cdef inline double _uniform(unsigned long long key, unsigned long long counter) noexcept nogil:
    return <double>(asn_mix64(key + (counter + 1ULL) * GOLDEN) >> 11) * U53


cdef inline double _sigma(double a, double gamma) noexcept nogil:
    cdef double z = gamma * a
    if z > 500.0:
        z = 500.0
    elif z < -500.0:
        z = -500.0
    return 1.0 / (1.0 + exp(z))


# --- BLAS on row-major buffers ----------------------------------------------

cdef void _fwd_gemm(double* X, double* W, double* Z, int B, int I, int O) noexcept nogil:
    # Z[B,O] = X[B,I] @ W[O,I]^T
    cdef double one = 1.0, zero = 0.0
    dgemm("T", "N", &O, &B, &I, &one, W, &I, X, &I, &zero, Z, &O)


cdef void _dx_gemm(double* dZ, double* W, double* dX, int B, int I, int O, double beta) noexcept nogil:
    # dX[B,I] = dZ[B,O] @ W[O,I] (+ beta * dX)
    cdef double one = 1.0
    dgemm("N", "N", &I, &B, &O, &one, W, &I, dZ, &O, &beta, dX, &I)


cdef void _dw_gemm(double* dZ, double* X, double* dW, int B, int I, int O) noexcept nogil:
    # dW[O,I] = dZ[B,O]^T @ X[B,I]
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "T", &I, &O, &B, &one, X, &I, dZ, &O, &zero, dW, &I)


cdef void _layer_fwd(double[:, ::1] a_in, double[:, ::1] W, double[::1] b,
                     double[:, ::1] Z, double[:, ::1] A, int B, int relu) noexcept nogil:
    cdef int O = W.shape[0], I = W.shape[1]
    cdef int r, c
    cdef double v
    _fwd_gemm(&a_in[0, 0], &W[0, 0], &Z[0, 0], B, I, O)
    for r in range(B):
        for c in range(O):
            v = Z[r, c] + b[c]
            Z[r, c] = v
            if relu and v < 0.0:
                A[r, c] = 0.0
            else:
                A[r, c] = v


cdef class _Chain:
    cdef list W, b, Z, A, dW, db
    cdef int[64] relu
    cdef int n_layers, out_dim

    def __init__(self, layers, int bmax):
        self.W, self.b, self.Z, self.A, self.dW, self.db = [], [], [], [], [], []
        self.n_layers = len(layers)
        cdef int i
        for i in range(self.n_layers):
            w, bias, act = layers[i]
            self.W.append(np.ascontiguousarray(w))
            self.b.append(np.ascontiguousarray(bias))
            self.relu[i] = 1 if act else 0
            self.Z.append(np.empty((bmax, w.shape[0])))
            self.A.append(np.empty((bmax, w.shape[0])))
            self.dW.append(np.empty_like(w))
            self.db.append(np.empty_like(bias))
        self.out_dim = layers[self.n_layers - 1][0].shape[0] if self.n_layers > 0 else 0


cdef object _chain_fwd(_Chain ch, object a_in_arr, int B, list mask_bufs, bint use_masks):
    cdef int i, r, c
    cdef double[:, ::1] a_in, Z, A, m
    a = a_in_arr
    for i in range(ch.n_layers):
        a_in = a
        Z = ch.Z[i]
        A = ch.A[i]
        _layer_fwd(a_in, ch.W[i], ch.b[i], Z, A, B, ch.relu[i])
        if use_masks:
            m = mask_bufs[i]
            for r in range(B):
                for c in range(A.shape[1]):
                    A[r, c] *= m[r, c]
        a = ch.A[i]
    return a


cdef void _chain_bwd(_Chain ch, object a0_arr, object d_last_arr,
                     object d_in_arr, double beta, int B,
                     list mask_bufs, bint use_masks):
    """Backward pass through a chain.  Leaves dW/db per layer in the chain
    buffers.  When d_in_arr is given, accumulates (beta=1) or writes (beta=0)
    the gradient w.r.t. the chain input into it.  Reuses ch.A as scratch, so
    forward activations are consumed."""
    cdef int i, r, c
    cdef double[:, ::1] dA, Z, a_in, m, dW, d_in, Wv
    cdef double[::1] db
    cdef double s
    d_a = d_last_arr
    for i in range(ch.n_layers - 1, -1, -1):
        dA = d_a
        Z = ch.Z[i]
        if use_masks:
            m = mask_bufs[i]
            for r in range(B):
                for c in range(dA.shape[1]):
                    dA[r, c] *= m[r, c]
        if ch.relu[i]:
            for r in range(B):
                for c in range(dA.shape[1]):
                    if Z[r, c] <= 0.0:
                        dA[r, c] = 0.0
        a_in_obj = a0_arr if i == 0 else ch.A[i - 1]
        a_in = a_in_obj
        dW = ch.dW[i]
        db = ch.db[i]
        _dw_gemm(&dA[0, 0], &a_in[0, 0], &dW[0, 0], B, a_in.shape[1], dA.shape[1])
        for c in range(dA.shape[1]):
            s = 0.0
            for r in range(B):
                s += dA[r, c]
            db[c] = s
        Wv = ch.W[i]
        if i > 0:
            d_in = ch.A[i - 1]
            _dx_gemm(&dA[0, 0], &Wv[0, 0], &d_in[0, 0], B, a_in.shape[1], dA.shape[1], 0.0)
            d_a = ch.A[i - 1]
        elif d_in_arr is not None:
            d_in = d_in_arr
            _dx_gemm(&dA[0, 0], &Wv[0, 0], &d_in[0, 0], B, a_in.shape[1], dA.shape[1], beta)


cdef void _update(int kind, double lr, double eps, double mom, double wd,
                  double[::1] p, double[::1] g, double[::1] s) noexcept nogil:
    cdef Py_ssize_t i
    cdef double gi
    for i in range(p.shape[0]):
        gi = g[i]
        if wd != 0.0:
            p[i] -= lr * wd * p[i]
        if kind == 0:
            s[i] += gi * gi
            p[i] -= lr * gi / (sqrt(s[i]) + eps)
        else:
            s[i] = mom * s[i] - lr * gi
            p[i] += s[i]


cdef int _update_chain(_Chain ch, int kind, double lr, double eps, double mom,
                       double wd, list slots, int si):
    cdef int li
    for li in range(ch.n_layers):
        _update(kind, lr, eps, mom, wd, ch.W[li].ravel(), ch.dW[li].ravel(), slots[si].ravel())
        si += 1
        _update(kind, lr, eps, mom, wd, ch.b[li], ch.db[li], slots[si])
        si += 1
    return si


def run_epoch(chains, opt, cnp.ndarray[double, ndim=2] X, cnp.ndarray[double, ndim=1] y,
              cnp.ndarray[cnp.int64_t, ndim=1] order, int batch_size,
              double d, double gamma, double alpha,
              double dropout_rate=0.0, unsigned long long dropout_key=0):
    cdef int n = X.shape[0], D = X.shape[1]
    cdef int bmax = batch_size if batch_size < n else n
    cdef bint scalar_rho = len(chains["rej"]) == 0
    cdef bint has_aux = len(chains["aux"]) > 0
    cdef bint use_masks = dropout_rate > 0.0

    cdef _Chain body = _Chain(chains["body"], bmax)
    cdef _Chain pred = _Chain(chains["pred"], bmax)
    cdef _Chain rej = _Chain(chains["rej"], bmax) if not scalar_rho else None
    cdef _Chain aux = _Chain(chains["aux"], bmax) if has_aux else None

    xb_arr = np.empty((bmax, D))
    dfeat_arr = np.empty((bmax, body.out_dim))
    dpred_arr = np.empty((bmax, 1))
    drej_arr = np.empty((bmax, 1))
    daux_arr = np.empty((bmax, 2))
    rr_grad_arr = np.empty(1)
    mask_bufs = []
    cdef int li
    if use_masks:
        for li in range(body.n_layers):
            w = chains["body"][li][0]
            mask_bufs.append(np.empty((bmax, w.shape[0])))

    cdef double[:, ::1] Xv = X, xb = xb_arr
    cdef double[:, ::1] dpred = dpred_arr, drej = drej_arr, daux = daux_arr
    cdef double[::1] yv = y
    cdef cnp.int64_t[::1] ov = order
    cdef double[:, ::1] mbuf, logits, fview, rawview
    cdef double[::1] raw_rho
    cdef double[::1] rr_grad = rr_grad_arr

    yb_arr = np.empty(bmax)
    raw_arr = np.empty(bmax)
    rho_arr = np.empty(bmax)
    loss_arr = np.empty(bmax)
    dm_arr = np.empty(bmax)
    dr_arr = np.empty(bmax)
    cdef double[::1] yb = yb_arr, raw = raw_arr, rho = rho_arr
    cdef double[::1] loss = loss_arr, dm = dm_arr, dr = dr_arr

    if scalar_rho:
        raw_rho = chains["raw_rho"]

    cdef int kind = opt["kind"]
    cdef double lr = opt["lr"], eps = opt["eps"], mom = opt["mom"], wd = opt["wd"]
    slots = opt["slots"]

    cdef unsigned long long counter = 0
    cdef double total = 0.0
    cdef int start = 0, bi = -1, B, r, c, cls, si
    cdef double f, m_, s1, s2, t1, t2, batch_loss, hi, p0, p1, zsum, scale

    while start < n:
        bi += 1
        B = batch_size if start + batch_size <= n else n - start
        for r in range(B):
            yb[r] = yv[ov[start + r]]
            for c in range(D):
                xb[r, c] = Xv[ov[start + r], c]

        if use_masks:
            for li in range(body.n_layers):
                mbuf = mask_bufs[li]
                for r in range(B):
                    for c in range(mbuf.shape[1]):
                        if _uniform(dropout_key, counter) >= dropout_rate:
                            mbuf[r, c] = 1.0 / (1.0 - dropout_rate)
                        else:
                            mbuf[r, c] = 0.0
                        counter += 1

        feat_obj = _chain_fwd(body, xb_arr, B, mask_bufs, use_masks)
        f_obj = _chain_fwd(pred, feat_obj, B, [], False)
        fview = f_obj
        if scalar_rho:
            for r in range(B):
                raw[r] = raw_rho[0]
        else:
            raw_obj = _chain_fwd(rej, feat_obj, B, [], False)
            rawview = raw_obj
            for r in range(B):
                raw[r] = rawview[r, 0]
        for r in range(B):
            rho[r] = raw[r] if raw[r] > 0.0 else 0.0

        for r in range(B):
            f = fview[r, 0]
            m_ = yb[r] * f
            s1 = _sigma(m_ - rho[r], gamma)
            s2 = _sigma(m_ + rho[r], gamma)
            loss[r] = 2.0 * d * s1 + 2.0 * (1.0 - d) * s2
            t1 = 2.0 * d * s1 * (1.0 - s1)
            t2 = 2.0 * (1.0 - d) * s2 * (1.0 - s2)
            dm[r] = -gamma * (t1 + t2)
            dr[r] = gamma * (t1 - t2)

        if has_aux:
            log_obj = _chain_fwd(aux, feat_obj, B, [], False)
            logits = log_obj
            for r in range(B):
                cls = 1 if yb[r] > 0.0 else 0
                hi = logits[r, 0] if logits[r, 0] > logits[r, 1] else logits[r, 1]
                p0 = exp(logits[r, 0] - hi)
                p1 = exp(logits[r, 1] - hi)
                zsum = p0 + p1
                loss[r] = alpha * loss[r] + (1.0 - alpha) * (hi + log(zsum) - logits[r, cls])
                daux[r, 0] = (p0 / zsum - (1.0 if cls == 0 else 0.0)) * (1.0 - alpha) / B
                daux[r, 1] = (p1 / zsum - (1.0 if cls == 1 else 0.0)) * (1.0 - alpha) / B
            scale = alpha / B
        else:
            scale = 1.0 / B

        batch_loss = 0.0
        for r in range(B):
            batch_loss += loss[r]
        batch_loss /= B
        if not isfinite(batch_loss):
            return total / n, bi
        total += batch_loss * B

        for r in range(B):
            dpred[r, 0] = yb[r] * dm[r] * scale
        _chain_bwd(pred, feat_obj, dpred_arr, dfeat_arr, 0.0, B, [], False)
        if scalar_rho:
            rr_grad[0] = 0.0
            for r in range(B):
                if raw[r] > 0.0:
                    rr_grad[0] += dr[r] * scale
        else:
            for r in range(B):
                drej[r, 0] = dr[r] * scale if raw[r] > 0.0 else 0.0
            _chain_bwd(rej, feat_obj, drej_arr, dfeat_arr, 1.0, B, [], False)
        if has_aux:
            _chain_bwd(aux, feat_obj, daux_arr, dfeat_arr, 1.0, B, [], False)
        _chain_bwd(body, xb_arr, dfeat_arr, None, 0.0, B, mask_bufs, use_masks)

        si = _update_chain(body, kind, lr, eps, mom, wd, slots, 0)
        si = _update_chain(pred, kind, lr, eps, mom, wd, slots, si)
        if scalar_rho:
            _update(kind, lr, eps, mom, wd, raw_rho, rr_grad, slots[si])
            si += 1
        else:
            si = _update_chain(rej, kind, lr, eps, mom, wd, slots, si)
        if has_aux:
            si = _update_chain(aux, kind, lr, eps, mom, wd, slots, si)

        start += batch_size

    return total / n, -1
