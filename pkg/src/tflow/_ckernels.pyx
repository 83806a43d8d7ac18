# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loop of the sector-packed superoperator product."""

cdef extern from "complex.h":
    pass


def packed_product(const double complex[:, :, :, :] X, const double complex[:, :, :, :] Y,
                   const Py_ssize_t[:] q, const Py_ssize_t[:] r, const Py_ssize_t[:] p,
                   double complex[:, :, :, :] out):
    """``out[b, p_t] += X[b, q_t] * Y[b, r_t]`` over the three batch axes ``b``.

    ``X`` and ``Y`` may carry zero strides (numpy broadcasting); the triplets
    must be sorted by ``p``.
    """
    cdef Py_ssize_t n0 = out.shape[0], n1 = out.shape[1], n2 = out.shape[2]
    cdef Py_ssize_t nt = q.shape[0]
    cdef Py_ssize_t i, j, k, t, slot
    cdef Py_ssize_t xs0 = X.strides[0], xs1 = X.strides[1], xs2 = X.strides[2], xs3 = X.strides[3]
    cdef Py_ssize_t ys0 = Y.strides[0], ys1 = Y.strides[1], ys2 = Y.strides[2], ys3 = Y.strides[3]
    cdef Py_ssize_t os0 = out.strides[0], os1 = out.strides[1], os2 = out.strides[2], os3 = out.strides[3]
    cdef const char* xb
    cdef const char* yb
    cdef char* ob
    cdef double complex acc
    if nt == 0 or n0 == 0 or n1 == 0 or n2 == 0:
        return
    cdef const char* x0 = <const char*> &X[0, 0, 0, 0]
    cdef const char* y0 = <const char*> &Y[0, 0, 0, 0]
    cdef char* o0 = <char*> &out[0, 0, 0, 0]
    with nogil:
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    xb = x0 + i * xs0 + j * xs1 + k * xs2
                    yb = y0 + i * ys0 + j * ys1 + k * ys2
                    ob = o0 + i * os0 + j * os1 + k * os2
                    slot = p[0]
                    acc = 0
                    for t in range(nt):
                        if p[t] != slot:
                            (<double complex*> (ob + slot * os3))[0] += acc
                            slot = p[t]
                            acc = 0
                        acc = acc + (<const double complex*> (xb + q[t] * xs3))[0] * \
                            (<const double complex*> (yb + r[t] * ys3))[0]
                    (<double complex*> (ob + slot * os3))[0] += acc
