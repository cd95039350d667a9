"""sparselab: iterative magnitude-pruning experiments and mask analytics."""

__version__ = "0.1.0"

from .zoo import ArchitectureSpec, lenet, parse_architecture, serialize_architecture  # noqa: F401
from .network import Network, init_network, forward, backward, sgd_step  # noqa: F401
from .training import train, evaluate  # noqa: F401
from .rng import make_rng  # noqa: F401
