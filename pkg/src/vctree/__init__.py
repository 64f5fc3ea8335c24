"""Dynamic tree composition of visual context.

Learned pairwise scores over object proposals, (sampled) maximum
spanning trees binarized left-child right-sibling, bidirectional
TreeLSTM context encoding, scene-graph and question-answering heads,
and a hybrid supervised plus policy-gradient training loop.
"""

__version__ = "0.1.0"

from . import ndcore
from .config import desk_config, load_config, validate_config
from .errors import (ConfigError, DimensionError, EmptyTapeError,
                     NonFiniteError, ValidationError, VCTreeError)
from .experiment import comparison_table, run_experiment
