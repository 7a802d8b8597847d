"""Selects the compiled kernels when available, else the numpy fallback.

Set ACMPC_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
srb_step = _kernels_py.srb_step
slack_rows = _kernels_py.slack_rows

if os.environ.get("ACMPC_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        BACKEND = "compiled"
        srb_step = _compiled.srb_step
        slack_rows = _compiled.slack_rows
