"""Numba dispatch. OPCOUPLE_NUMBA=0 forces the pure-numpy fallbacks."""

import os

_flag = os.environ.get("OPCOUPLE_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

if _want_numba:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover
        HAS_NUMBA = False
else:
    HAS_NUMBA = False

if not HAS_NUMBA:

    def njit(*args, **kwargs):  # noqa: D103
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


def backend_name() -> str:
    return "numba" if HAS_NUMBA else "numpy"
