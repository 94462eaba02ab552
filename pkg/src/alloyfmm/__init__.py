"""Numerical laboratory for fractional-moment localization in discrete
alloy-type random operators with sign-indefinite single-site profiles."""

__version__ = "0.1.0"

from .geometry import (
    AnnulusGeometry,
    SiteSet,
    annulus_geometry,
    boundaries,
    box,
    component_of,
    components,
    metrics,
)
from .model import (
    DisorderDistribution,
    DisorderField,
    LatticeOperator,
    SingleSitePotential,
    check_assumptions,
    coupling_closure,
    deplete,
    hamiltonian,
    potential_field,
    restrict,
    sample_field,
    smooth_bump_density,
    table_density,
    triangular_density,
    uniform_density,
)
from .resolvent import (
    CombesThomasBound,
    GreenEvaluator,
    IdentityReport,
    SpectrumHitError,
    combes_thomas,
    green,
    schur_complement,
    verify_combes_thomas,
    verify_geometric_identities,
    verify_schur_identities,
)
