"""Soft-prompt contrastive embedding workbench.

The heavy lifting lives in the C++ extension ``pembed._core``. When the package
is used straight from a CMake build tree (tests, CI), point ``PEMBED_EXT_DIR``
at the directory holding the built extension.
"""

import os
import sys

_ext_dir = os.environ.get("PEMBED_EXT_DIR")
if _ext_dir and _ext_dir not in sys.path:
    sys.path.insert(0, _ext_dir)

try:
    from _core import *  # noqa: F401,F403  (build-tree layout)
    from _core import System, gen_dataset, info_nce, softmax, cosine_sim, gradcheck  # noqa: F401
except ImportError:
    from ._core import *  # noqa: F401,F403  (installed layout)
    from ._core import System, gen_dataset, info_nce, softmax, cosine_sim, gradcheck  # noqa: F401

__version__ = "0.1.0"
