"""
cvlab: cross-validation risk estimators, selection procedures and a
Monte-Carlo laboratory for checking their bias and variance laws
"""

__version__ = "0.1.0"

# Package metadata
__title__ = "cvlab"
__description__ = "Cross-validation estimators and Monte-Carlo checks of their statistical behaviour"
__license__ = "MIT"

# Version info
__version_info__ = tuple(map(int, __version__.split(".")))

from cvlab.core.config import get_settings
from cvlab.core.logger import get_logger

__all__ = [
    "__version__",
    "__version_info__",
    "get_settings",
    "get_logger",
]
