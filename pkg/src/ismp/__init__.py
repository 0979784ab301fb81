"""Point-cloud anomaly detection with internal-view depth slices and
dual (feature + coordinate) memory banks."""

__version__ = "0.1.0"

from .geometry import PointCloud, load_cloud, save_cloud  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["PointCloud", "load_cloud", "save_cloud", "BACKEND", "__version__"]
