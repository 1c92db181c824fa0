"""Multiscale analysis and simulation of stochastic mass-action reaction networks."""

from .network import (ReactionNetwork, Reaction, ScalingSpec, SimulationDefaults, Species,
                      find_conservation_laws, normalized_propensity, parse_network, propensity,
                      reaction_vector, serialize_network)
from .networks import load_builtin

__version__ = "0.1.0"
