/* Innermost conv loops. Kept in C so `restrict` lets the compiler emit
 * AVX/FMA code; the Cython memoryview loops otherwise fail to vectorize. */
#ifndef USPATEM_KERNELS_IMPL_H
#define USPATEM_KERNELS_IMPL_H

static inline void uspatem_axpy_f32(float* restrict y, const float* restrict x,
                                    float a, long n) {
    for (long i = 0; i < n; i++) y[i] += a * x[i];
}

static inline void uspatem_axpy_f64(double* restrict y, const double* restrict x,
                                    double a, long n) {
    for (long i = 0; i < n; i++) y[i] += a * x[i];
}

/* Eight partial sums so the reduction vectorizes without -ffast-math.
 * Summation order is fixed, so results are reproducible run to run. */
static inline float uspatem_dot_f32(const float* restrict a,
                                    const float* restrict b, long n) {
    float s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    long i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    float s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
    for (; i < n; i++) s += a[i] * b[i];
    return s;
}

static inline double uspatem_dot_f64(const double* restrict a,
                                     const double* restrict b, long n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    long i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    double s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
    for (; i < n; i++) s += a[i] * b[i];
    return s;
}

#endif
