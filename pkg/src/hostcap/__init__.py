"""hostcap: distribution-grid DER hosting capacity toolkit.

Computes how much solar PV, battery storage, EV charging, and heat-pump load a
radial feeder can host, comparing uncoordinated (static) operation against
network-wide coordinated (dynamic) dispatch.  Power flow uses the branch-flow
SOCP relaxation; coordinated dispatch is a multiperiod mixed-integer conic
program; siting and sizing is a two-stage stochastic program solved as a
deterministic equivalent with scenario reduction and warm starting.
"""

__version__ = "0.1.0"

from . import conic, der, network, powerflow, profiles

__all__ = [
    "__version__",
    "analysis",
    "conic",
    "der",
    "hca",
    "network",
    "opf",
    "powerflow",
    "profiles",
    "scenarios",
    "ssp",
]


def __getattr__(name):
    # heavier subpackages load on first use
    if name in ("analysis", "hca", "opf", "scenarios", "ssp", "io", "cli", "fixtures"):
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
