# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: im2col convolution (BLAS-backed) and max pooling.

Single-threaded by design so results are reproducible run to run. The
numpy lane in ``numpy_kernels`` implements the same contracts; this module
wins on small shapes where Python dispatch overhead dominates.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memset
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

cdef extern from "_kernels_impl.h" nogil:
    void uspatem_axpy_f32(float* y, const float* x, float a, long n)
    void uspatem_axpy_f64(double* y, const double* x, double a, long n)
    float uspatem_dot_f32(const float* a, const float* b, long n)
    double uspatem_dot_f64(const double* a, const double* b, long n)

ctypedef fused floating:
    float
    double


cdef inline void _axpy(floating* y, const floating* x, floating a, long n) noexcept nogil:
    if floating is float:
        uspatem_axpy_f32(<float*> y, <const float*> x, a, n)
    else:
        uspatem_axpy_f64(<double*> y, <const double*> x, a, n)


cdef inline floating _dot(const floating* a, const floating* b, long n) noexcept nogil:
    if floating is float:
        return uspatem_dot_f32(<const float*> a, <const float*> b, n)
    else:
        return uspatem_dot_f64(<const double*> a, <const double*> b, n)


cdef inline void _gemm_nn(floating* a, floating* b, floating* c,
                          int m, int n, int k, floating beta) noexcept nogil:
    # row-major c[m,n] = a[m,k] @ b[k,n] + beta*c
    cdef int lda = k, ldb = n, ldc = n
    cdef floating alpha = 1.0
    if floating is float:
        sgemm("N", "N", &n, &m, &k, &alpha, <float*> b, &ldb,
              <float*> a, &lda, &beta, <float*> c, &ldc)
    else:
        dgemm("N", "N", &n, &m, &k, &alpha, <double*> b, &ldb,
              <double*> a, &lda, &beta, <double*> c, &ldc)


cdef inline void _gemm_nt(floating* a, floating* b, floating* c,
                          int m, int n, int k, floating beta) noexcept nogil:
    # row-major c[m,n] = a[m,k] @ b[n,k]^T + beta*c
    cdef int lda = k, ldb = k, ldc = n
    cdef floating alpha = 1.0
    if floating is float:
        sgemm("T", "N", &n, &m, &k, &alpha, <float*> b, &ldb,
              <float*> a, &lda, &beta, <float*> c, &ldc)
    else:
        dgemm("T", "N", &n, &m, &k, &alpha, <double*> b, &ldb,
              <double*> a, &lda, &beta, <double*> c, &ldc)


cdef inline void _gemm_tn(floating* a, floating* b, floating* c,
                          int m, int n, int k, floating beta) noexcept nogil:
    # row-major c[m,n] = a[k,m]^T @ b[k,n] + beta*c
    cdef int lda = m, ldb = n, ldc = n
    cdef floating alpha = 1.0
    if floating is float:
        sgemm("N", "T", &n, &m, &k, &alpha, <float*> b, &ldb,
              <float*> a, &lda, &beta, <float*> c, &ldc)
    else:
        dgemm("N", "T", &n, &m, &k, &alpha, <double*> b, &ldb,
              <double*> a, &lda, &beta, <double*> c, &ldc)


cdef void _im2col(floating[:, :, ::1] img, floating[:, ::1] cols,
                  int k, int s, int p, int oh, int ow) noexcept nogil:
    # cols[(c*k+kh)*k+kw, i*ow+j] = img[c, i*s-p+kh, j*s-p+kw], zero outside
    cdef int C = img.shape[0], H = img.shape[1], W = img.shape[2]
    cdef int c, kh, kw, i, j, ih, iw, r, base
    for c in range(C):
        for kh in range(k):
            for kw in range(k):
                r = (c * k + kh) * k + kw
                for i in range(oh):
                    ih = i * s - p + kh
                    if ih < 0 or ih >= H:
                        continue
                    base = i * ow
                    for j in range(ow):
                        iw = j * s - p + kw
                        if 0 <= iw < W:
                            cols[r, base + j] = img[c, ih, iw]


cdef void _col2im(floating[:, ::1] cols, floating[:, :, ::1] img,
                  int k, int s, int p, int oh, int ow) noexcept nogil:
    cdef int C = img.shape[0], H = img.shape[1], W = img.shape[2]
    cdef int c, kh, kw, i, j, ih, iw, r, base
    for c in range(C):
        for kh in range(k):
            for kw in range(k):
                r = (c * k + kh) * k + kw
                for i in range(oh):
                    ih = i * s - p + kh
                    if ih < 0 or ih >= H:
                        continue
                    base = i * ow
                    for j in range(ow):
                        iw = j * s - p + kw
                        if 0 <= iw < W:
                            img[c, ih, iw] += cols[r, base + j]


# Above this many output pixels per plane, scalar-free direct loops beat
# the skinny GEMMs the im2col path produces on few-channel layers.
DEF DIRECT_PLANE_MIN = 256


cdef inline int _lo(int kk, int s, int p) noexcept nogil:
    # smallest output index whose input tap kk - p + i*s is >= 0
    cdef int num = p - kk
    if num <= 0:
        return 0
    return (num + s - 1) // s


cdef void _conv_direct(floating[:, :, ::1] x, floating[:, :, :, ::1] w,
                       floating[:, :, ::1] y, int k, int s, int p,
                       int oh, int ow) noexcept nogil:
    cdef int C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef int O = w.shape[0]
    cdef int o, c, kh, kw, i, j, i0, i1, j0, j1, ih, base
    cdef floating ws
    cdef floating* xr
    cdef floating* yr
    for o in range(O):
        for c in range(C):
            for kh in range(k):
                i0 = _lo(kh, s, p)
                i1 = oh
                if i1 > i0 and (i1 - 1) * s + kh - p >= H:
                    i1 = (H - 1 - kh + p) // s + 1
                for kw in range(k):
                    ws = w[o, c, kh, kw]
                    j0 = _lo(kw, s, p)
                    j1 = ow
                    if j1 > j0 and (j1 - 1) * s + kw - p >= W:
                        j1 = (W - 1 - kw + p) // s + 1
                    if j1 <= j0:
                        continue
                    for i in range(i0, i1):
                        ih = i * s + kh - p
                        yr = &y[o, i, 0]
                        if s == 1:
                            _axpy(yr + j0, &x[c, ih, j0 + kw - p], ws, j1 - j0)
                        else:
                            base = kw - p
                            for j in range(j0, j1):
                                yr[j] += ws * x[c, ih, j * s + base]


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    int stride, int padding):
    cdef int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int O = w.shape[0], k = w.shape[2]
    cdef int oh = (H + 2 * padding - k) // stride + 1
    cdef int ow = (W + 2 * padding - k) // stride + 1
    cdef int ckk = C * k * k, n = oh * ow
    dtype = np.float32 if floating is float else np.float64
    cdef bint direct = n >= DIRECT_PLANE_MIN
    y_arr = np.zeros((B, O, oh, ow), dtype=dtype) if direct \
        else np.empty((B, O, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef floating[:, ::1] cols
    cdef int b
    if direct:
        with nogil:
            for b in range(B):
                _conv_direct(x[b], w, y[b], k, stride, padding, oh, ow)
        return y_arr
    cols_arr = np.empty((ckk, n), dtype=dtype)
    cols = cols_arr
    with nogil:
        for b in range(B):
            memset(&cols[0, 0], 0, ckk * n * sizeof(floating))
            _im2col(x[b], cols, k, stride, padding, oh, ow)
            _gemm_nn(&w[0, 0, 0, 0], &cols[0, 0], &y[b, 0, 0, 0],
                     O, n, ckk, <floating> 0.0)
    return y_arr


cdef void _conv_direct_gx(floating[:, :, ::1] g, floating[:, :, :, ::1] w,
                          floating[:, :, ::1] gx, int k, int s, int p,
                          int oh, int ow) noexcept nogil:
    cdef int C = gx.shape[0], H = gx.shape[1], W = gx.shape[2]
    cdef int O = w.shape[0]
    cdef int o, c, kh, kw, i, j, i0, i1, j0, j1, ih, base
    cdef floating ws
    cdef floating* gr
    cdef floating* xr
    for o in range(O):
        for c in range(C):
            for kh in range(k):
                i0 = _lo(kh, s, p)
                i1 = oh
                if i1 > i0 and (i1 - 1) * s + kh - p >= H:
                    i1 = (H - 1 - kh + p) // s + 1
                for kw in range(k):
                    ws = w[o, c, kh, kw]
                    j0 = _lo(kw, s, p)
                    j1 = ow
                    if j1 > j0 and (j1 - 1) * s + kw - p >= W:
                        j1 = (W - 1 - kw + p) // s + 1
                    if j1 <= j0:
                        continue
                    for i in range(i0, i1):
                        ih = i * s + kh - p
                        gr = &g[o, i, 0]
                        if s == 1:
                            _axpy(&gx[c, ih, j0 + kw - p], gr + j0, ws, j1 - j0)
                        else:
                            base = kw - p
                            for j in range(j0, j1):
                                gx[c, ih, j * s + base] += ws * gr[j]


def conv2d_grad_input(floating[:, :, :, ::1] g, floating[:, :, :, ::1] w,
                       int stride, int padding, int H, int W):
    cdef int B = g.shape[0], O = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    cdef int C = w.shape[1], k = w.shape[2]
    cdef int ckk = C * k * k, n = oh * ow
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((B, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, ::1] cols
    cdef int b
    if n >= DIRECT_PLANE_MIN:
        with nogil:
            for b in range(B):
                _conv_direct_gx(g[b], w, gx[b], k, stride, padding, oh, ow)
        return gx_arr
    cols_arr = np.empty((ckk, n), dtype=dtype)
    cols = cols_arr
    with nogil:
        for b in range(B):
            # cols = w2d^T @ g_b, then scatter back to image positions
            _gemm_tn(&w[0, 0, 0, 0], &g[b, 0, 0, 0], &cols[0, 0],
                     ckk, n, O, <floating> 0.0)
            _col2im(cols, gx[b], k, stride, padding, oh, ow)
    return gx_arr


cdef void _conv_direct_gw(floating[:, :, ::1] x, floating[:, :, ::1] g,
                          floating[:, :, :, ::1] gw, int k, int s, int p,
                          int oh, int ow) noexcept nogil:
    cdef int C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef int O = g.shape[0]
    cdef int o, c, kh, kw, i, j, i0, i1, j0, j1, ih, base
    cdef floating acc
    cdef floating* gr
    cdef floating* xr
    for o in range(O):
        for c in range(C):
            for kh in range(k):
                i0 = _lo(kh, s, p)
                i1 = oh
                if i1 > i0 and (i1 - 1) * s + kh - p >= H:
                    i1 = (H - 1 - kh + p) // s + 1
                for kw in range(k):
                    j0 = _lo(kw, s, p)
                    j1 = ow
                    if j1 > j0 and (j1 - 1) * s + kw - p >= W:
                        j1 = (W - 1 - kw + p) // s + 1
                    if j1 <= j0:
                        continue
                    acc = 0.0
                    for i in range(i0, i1):
                        ih = i * s + kh - p
                        gr = &g[o, i, 0]
                        if s == 1:
                            acc += _dot(gr + j0, &x[c, ih, j0 + kw - p], j1 - j0)
                        else:
                            base = kw - p
                            for j in range(j0, j1):
                                acc += gr[j] * x[c, ih, j * s + base]
                    gw[o, c, kh, kw] += acc


def conv2d_grad_weight(floating[:, :, :, ::1] x, floating[:, :, :, ::1] g,
                        int stride, int padding, int k):
    cdef int B = x.shape[0], C = x.shape[1]
    cdef int O = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    cdef int ckk = C * k * k, n = oh * ow
    dtype = np.float32 if floating is float else np.float64
    gw_arr = np.zeros((O, C, k, k), dtype=dtype)
    cdef floating[:, :, :, ::1] gw = gw_arr
    cdef floating[:, ::1] cols
    cdef int b
    if n >= DIRECT_PLANE_MIN:
        with nogil:
            for b in range(B):
                _conv_direct_gw(x[b], g[b], gw, k, stride, padding, oh, ow)
        return gw_arr
    cols_arr = np.empty((ckk, n), dtype=dtype)
    cols = cols_arr
    with nogil:
        for b in range(B):
            memset(&cols[0, 0], 0, ckk * n * sizeof(floating))
            _im2col(x[b], cols, k, stride, padding, oh, ow)
            _gemm_nt(&g[b, 0, 0, 0], &cols[0, 0], &gw[0, 0, 0, 0],
                     O, ckk, n, <floating> 1.0)
    return gw_arr


def maxpool_forward(floating[:, :, :, ::1] x, int factor):
    cdef int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int oh = H // factor, ow = W // factor
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((B, C, oh, ow), dtype=dtype)
    idx_arr = np.empty((B, C, oh, ow), dtype=np.int64)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef int b, c, i, j, u, v, ih, iw
    cdef floating best
    cdef cnp.int64_t besti
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(oh):
                    for j in range(ow):
                        best = x[b, c, i * factor, j * factor]
                        besti = (i * factor) * W + j * factor
                        for u in range(factor):
                            ih = i * factor + u
                            for v in range(factor):
                                iw = j * factor + v
                                if x[b, c, ih, iw] > best:
                                    best = x[b, c, ih, iw]
                                    besti = ih * W + iw
                        y[b, c, i, j] = best
                        idx[b, c, i, j] = besti
    return y_arr, idx_arr


def maxpool_backward(floating[:, :, :, ::1] g, cnp.int64_t[:, :, :, ::1] idx,
                      int H, int W):
    cdef int B = g.shape[0], C = g.shape[1], oh = g.shape[2], ow = g.shape[3]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((B, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef int b, c, i, j
    cdef cnp.int64_t f
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(oh):
                    for j in range(ow):
                        f = idx[b, c, i, j]
                        gx[b, c, f // W, f % W] += g[b, c, i, j]
    return gx_arr
