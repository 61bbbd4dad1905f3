# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``. Keep the two in step."""

from libc.math cimport asin, cos, sin, sqrt, INFINITY

cdef double EARTH_RADIUS_M = 6371008.8
cdef double DEG = 3.141592653589793 / 180.0


def nb_log_scores(const long long[:] token_ids, const double[:] log_prior,
                  const double[:] log_lik, Py_ssize_t width):
    cdef Py_ssize_t n_classes = log_prior.shape[0]
    cdef Py_ssize_t n_tokens = token_ids.shape[0]
    cdef Py_ssize_t c, i, base
    cdef double s
    out = [0.0] * n_classes
    for c in range(n_classes):
        base = c * width
        s = log_prior[c]
        for i in range(n_tokens):
            s += log_lik[base + token_ids[i]]
        out[c] = s
    return out


cdef inline double _radians(double x) nogil:
    # same expression CPython's math.radians evaluates
    return x * DEG


cdef double _haversine(double lat1, double lon1, double lat2, double lon2) nogil:
    cdef double p1 = _radians(lat1)
    cdef double p2 = _radians(lat2)
    cdef double dp = p2 - p1
    cdef double dl = _radians(lon2) - _radians(lon1)
    cdef double s1 = sin(dp * 0.5)
    cdef double s2 = sin(dl * 0.5)
    cdef double a = s1 * s1 + cos(p1) * cos(p2) * (s2 * s2)
    if a > 1.0:
        a = 1.0
    return 2.0 * EARTH_RADIUS_M * asin(sqrt(a))


def haversine_m(double lat1, double lon1, double lat2, double lon2):
    return _haversine(lat1, lon1, lat2, lon2)


def nearest_point(double lat, double lon, const double[:] lats, const double[:] lons):
    cdef Py_ssize_t best = -1
    cdef double best_d = INFINITY
    cdef double d
    cdef Py_ssize_t i
    for i in range(lats.shape[0]):
        d = _haversine(lat, lon, lats[i], lons[i])
        if d < best_d:
            best = i
            best_d = d
    return best, best_d


def chain_labels(const long long[:] seconds, long long window):
    cdef Py_ssize_t n = seconds.shape[0]
    cdef Py_ssize_t i
    cdef long long label = 0
    labels = [0] * n
    for i in range(1, n):
        if seconds[i] - seconds[i - 1] > window:
            label += 1
        labels[i] = label
    return labels
