"""Switch spaces: sparse mixtures of constant-curvature embedding spaces.

Modules
-------
numerics    reverse-mode autodiff, Adam, parameter store and checkpoints
manifolds   stereographic gyrovector operations (any curvature)
product     product-space signatures and distances
gating      sparse top-K gating and switch scoring
kg          SwisE knowledge-graph completion model
rec         metric-learning recommender
data        dataset loading and splitting
metrics     ranking metrics
"""

from .errors import ContractViolation, DomainError, NumericFailure, SignatureParseError, SwitchSpacesError
from .kg import SwisE
from .product import Signature, parse_signature
from .rec import SwitchRec

__all__ = [
    "ContractViolation",
    "DomainError",
    "NumericFailure",
    "SignatureParseError",
    "Signature",
    "SwitchRec",
    "SwisE",
    "SwitchSpacesError",
    "parse_signature",
]
__version__ = "0.1.0"
