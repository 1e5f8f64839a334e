"""Fair (generalized Gini) planning and learning for weakly coupled MDPs."""

from .fairness import GgfWeights, ggf, make_exponential_weights, utilitarian_weights
from .instances import MachineReplacementConfig, build_instance
from .model import JointModel, SubMdp, WcmdpSpec, expand_joint, load_spec, save_spec

__all__ = [
    "GgfWeights", "ggf", "make_exponential_weights", "utilitarian_weights",
    "MachineReplacementConfig", "build_instance",
    "JointModel", "SubMdp", "WcmdpSpec", "expand_joint", "load_spec", "save_spec",
]
