"""Simulator and analysis toolkit for Fast Probabilistic Consensus with mana-weighted votes."""

__version__ = "0.1.0"

from .adversary import AdversaryStrategy, mana_ivs_opinion
from .detection import detection_bound_mana, detection_bound_uniform
from .mana import ManaDistribution, build_network, effective_node_count, zipf_weights
from .protocol import DetectionConfig, ProtocolConfig, RunOutcome, run_instance

__all__ = [
    "AdversaryStrategy",
    "DetectionConfig",
    "ManaDistribution",
    "ProtocolConfig",
    "RunOutcome",
    "build_network",
    "detection_bound_mana",
    "detection_bound_uniform",
    "effective_node_count",
    "mana_ivs_opinion",
    "run_instance",
    "zipf_weights",
]
