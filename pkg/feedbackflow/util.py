import contextlib
import os
import tempfile

import numpy as np

SIGNIFICANT_DIGITS = 12


# Plain decimal, never exponent form, rounded to SIGNIFICANT_DIGITS.
def format_number(x):
    if x is None:
        return "none"
    return np.format_float_positional(np.float64(x),
                                      precision=SIGNIFICANT_DIGITS,
                                      unique=False, fractional=False,
                                      trim="-")


# Write 'text' to 'path' via a temporary sibling file, so that a failure never
# leaves a partial file behind.
def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise
