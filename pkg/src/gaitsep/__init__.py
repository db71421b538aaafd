"""Ultra-light separable 1D-CNN gait detectors for triaxial accelerometer windows.

Training, evaluation and float32 deployment run on numpy alone; the hot
kernels are compiled with Cython when the extension is available.
"""

__version__ = "0.1.0"

from gaitsep._backend import NAME as BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
