"""Selects the compiled packed-product kernel when it is available.

Set ``TFLOW_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

HAVE_COMPILED = False
packed_product = None

if not os.environ.get("TFLOW_PURE_PYTHON"):
    try:
        from ._ckernels import packed_product  # noqa: F401
        HAVE_COMPILED = True
    except ImportError:
        pass
