"""Higher-order likelihood pivots and their distributional calibration.

A toolkit for the family of asymptotically standard normal
likelihood-based test statistics: the signed root of the likelihood
ratio, Wald and score statistics under observed or expected
information, and their adjusted-profile-likelihood variants.  Provides
exact and Monte Carlo cumulant tensors, second-order expansion
coefficients, Cornish-Fisher and parametric-bootstrap p-values,
Bartlett correction, conditional inference given the location-scale
configuration ancillary, and a slope-experiment harness that measures
the asymptotic orders empirically.
"""

__version__ = "0.1.0"

from .models import (
    Dataset,
    DomainError,
    LogLikDerivs,
    Model,
    ParamPoint,
    available_families,
    make_model,
    read_csv_dataset,
)
from .fit import (
    AdjustedFit,
    FitError,
    FitResult,
    ProfileResult,
    fit_adjusted,
    fit_constrained,
    fit_global,
    likelihood_ratio,
    signed_root,
)
from .tensors import (
    CumulantTensors,
    DerivedTensors,
    IdentityReport,
    check_bartlett_identities,
    check_moment_identities_mc,
    derive,
    estimate_tensors_mc,
    rho,
)
from .pivots import (
    AdjustmentInfo,
    AdjustmentSpec,
    ExpansionCoefficients,
    PivotKind,
    PivotValue,
    adjustment_value,
    beta1,
    evaluate_pivot,
    expansion_coefficients,
)
from .theory import (
    ConditionReport,
    CumulantTriple,
    cf_pvalue,
    cumulants,
    equivalence_check,
    stability_check,
)
from .mc import (
    AncillaryConfig,
    BartlettFactor,
    BootstrapMoments,
    bartlett_factor,
    bootstrap_pvalue,
    bootstrap_standardized_r,
    conditional_distribution_location_scale,
)
from .verify import (
    ExperimentConfig,
    SlopeReport,
    bartlett_experiment,
    order_of_agreement,
    pivot_prediction_experiment,
    stability_experiment,
    uniformity_experiment,
)
