"""Pure Python versions of the hot loops.

``_kernels.pyx`` mirrors these line for line; both perform the same IEEE
operations in the same order, so their results are bit-identical.
"""

from math import asin, cos, radians, sin, sqrt

EARTH_RADIUS_M = 6371008.8


def nb_log_scores(token_ids, log_prior, log_lik, width):
    """Unnormalised log posterior of every class.

    ``log_lik`` is a flat row-major table of ``len(log_prior)`` rows by
    ``width`` columns; ``token_ids`` index into a row.
    """
    n_classes = len(log_prior)
    out = [0.0] * n_classes
    for c in range(n_classes):
        base = c * width
        s = log_prior[c]
        for t in token_ids:
            s += log_lik[base + t]
        out[c] = s
    return out


def haversine_m(lat1, lon1, lat2, lon2):
    p1 = radians(lat1)
    p2 = radians(lat2)
    dp = p2 - p1
    dl = radians(lon2) - radians(lon1)
    s1 = sin(dp * 0.5)
    s2 = sin(dl * 0.5)
    a = s1 * s1 + cos(p1) * cos(p2) * (s2 * s2)
    if a > 1.0:
        a = 1.0
    return 2.0 * EARTH_RADIUS_M * asin(sqrt(a))


def nearest_point(lat, lon, lats, lons):
    """Index of and distance to the closest (lat, lon) pair; (-1, inf) if empty.

    Ties go to the lowest index.
    """
    best = -1
    best_d = float("inf")
    for i in range(len(lats)):
        d = haversine_m(lat, lon, lats[i], lons[i])
        if d < best_d:
            best = i
            best_d = d
    return best, best_d


def chain_labels(seconds, window):
    """Cluster label per element of an ascending sequence.

    Consecutive values at most ``window`` apart share a label.
    """
    labels = [0] * len(seconds)
    label = 0
    for i in range(1, len(seconds)):
        if seconds[i] - seconds[i - 1] > window:
            label += 1
        labels[i] = label
    return labels
