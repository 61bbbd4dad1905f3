"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``MA4BDI_PURE_PYTHON`` is set to a non-empty value, the pure Python module is
used. Both expose the same functions with bit-identical results.
"""

import os

if os.environ.get("MA4BDI_PURE_PYTHON"):
    from ._kernels_py import chain_labels, haversine_m, nb_log_scores, nearest_point

    BACKEND = "python"
else:
    try:
        from ._kernels import chain_labels, haversine_m, nb_log_scores, nearest_point

        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import chain_labels, haversine_m, nb_log_scores, nearest_point

        BACKEND = "python"

__all__ = ["BACKEND", "chain_labels", "haversine_m", "nb_log_scores", "nearest_point"]
