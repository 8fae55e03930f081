from .main import main
from . import data, infer, summary, train  # noqa: F401  (register commands)

__all__ = ['main']
