# cython: language_level=3, boundscheck=False, wraparound=False
# cython: initializedcheck=False, cdivision=True
"""Compiled numeric kernels.

The scaled accumulation does exactly one multiply and one add per element
in double precision (built with -ffp-contract=off), matching the numpy
fallback bit for bit. The reductions use Neumaier compensated summation,
at least as accurate as numpy's pairwise sums.
"""

from libc.math cimport fabs

BACKEND = "compiled"

ctypedef fused floating:
    float
    double


def accumulate_scaled(double[::1] acc, const floating[::1] x, double w):
    """In place acc[i] += w * float64(x[i]) for 1-D acc (f64) and x (f32/f64)."""
    cdef Py_ssize_t i, n = x.shape[0]
    if acc.shape[0] != n:
        raise ValueError("accumulate_scaled: length mismatch")
    for i in range(n):
        acc[i] = acc[i] + w * (<double> x[i])


def sum_squared_diff(const floating[::1] a, const floating[::1] b):
    """Sum of (a[i] - b[i])**2 accumulated in float64."""
    cdef Py_ssize_t i, n = a.shape[0]
    if b.shape[0] != n:
        raise ValueError("sum_squared_diff: length mismatch")
    cdef double s = 0.0, c = 0.0, t, term, d
    for i in range(n):
        d = (<double> a[i]) - (<double> b[i])
        term = d * d
        t = s + term
        if fabs(s) >= fabs(term):
            c += (s - t) + term
        else:
            c += (term - t) + s
        s = t
    return s + c


def dot_products(const floating[::1] a, const floating[::1] b):
    """One-pass (a.b, a.a, b.b) in float64, for cosine similarity."""
    cdef Py_ssize_t i, n = a.shape[0]
    if b.shape[0] != n:
        raise ValueError("dot_products: length mismatch")
    cdef double sab = 0.0, cab = 0.0
    cdef double saa = 0.0, caa = 0.0
    cdef double sbb = 0.0, cbb = 0.0
    cdef double t, term, x, y
    for i in range(n):
        x = <double> a[i]
        y = <double> b[i]

        term = x * y
        t = sab + term
        if fabs(sab) >= fabs(term):
            cab += (sab - t) + term
        else:
            cab += (term - t) + sab
        sab = t

        term = x * x
        t = saa + term
        if fabs(saa) >= fabs(term):
            caa += (saa - t) + term
        else:
            caa += (term - t) + saa
        saa = t

        term = y * y
        t = sbb + term
        if fabs(sbb) >= fabs(term):
            cbb += (sbb - t) + term
        else:
            cbb += (term - t) + sbb
        sbb = t

    return (sab + cab, saa + caa, sbb + cbb)
