from .arch import ArchError, ArchSpec, StageSpec, builtin_arch, load_arch, parse_arch, validate_arch
from .layers import softmax_cross_entropy
from .modules import InvertedModule, ModuleSpec
from .network import CostTally, Network, ParamTally, build_network, count_madd, count_params
