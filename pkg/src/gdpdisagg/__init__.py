# ==============================================================================
# gdpdisagg: Package Initializer
#
# This file marks the `gdpdisagg` directory as a Python package and serves as
# the single source of truth for the package's version number.
# ==============================================================================

__version__ = "0.1.0"
