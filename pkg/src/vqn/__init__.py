"""Virtual quantum network testbed: emulated entangled-photon source,
time-tag measurement engine, fairness-aware pair allocation, queueing
simulation and an HTTP service tying them together."""

__version__ = "0.1.0"

from . import allocation, measurement, photon_source, simulation, tagcore

__all__ = ["allocation", "measurement", "photon_source", "simulation", "tagcore", "__version__"]
