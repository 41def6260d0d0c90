"""Cobin and micobin regression for continuous proportions.

Submodules: ``dist`` (distributions), ``kg`` (Kolmogorov-Gamma sampling),
``glm`` (IRLS and EM), ``gibbs`` (Gibbs samplers), ``simulate`` and
``diagnostics`` (experiments and metrics), ``cli`` (command line).
"""
__version__ = "0.1.0"

from .dist import *  # noqa: F401,F403
from .kg import *  # noqa: F401,F403
from .glm import *  # noqa: F401,F403
from .gibbs import *  # noqa: F401,F403
from .diagnostics import *  # noqa: F401,F403
from .simulate import *  # noqa: F401,F403
from . import dist, kg, glm, gibbs, diagnostics, simulate  # noqa: F401
