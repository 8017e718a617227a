"""Preimage-averaged expansion weights and Perron-Frobenius spectra for
covering maps of the torus."""

__version__ = "0.1.0"

from .cotangent import (
    B_mu,
    Covector,
    GridSpec,
    appendix_certify,
    b_mu,
    factorized_b,
    generalized_B,
    pullback_covector,
    virtual_expansion_rate,
)
from .dynamics import (
    CircleExpand,
    LinearMap,
    SkewCosine,
    SkewGeneral,
    compose,
    iterate,
    make_map,
)
from .spectral import (
    TrigPoly,
    apply_P_pointwise,
    assemble_transfer_matrix,
    cesaro_average,
    essential_radius_report,
    h_mu_norm,
    invariant_density,
    leading_spectrum,
)
