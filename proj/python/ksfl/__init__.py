from ._ksfl import *  # noqa: F401,F403
