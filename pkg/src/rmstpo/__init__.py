"""Two-sample tests for restricted mean survival times in small samples.

Four tests of ``mu_1(t*) - mu_0(t*) = 0`` are provided: the asymptotic
Wald test (``Asy``), a studentized permutation test (``Perm``), and
pseudo-observation regression with an HC3 sandwich, either with normal
critical values (``PO1``) or a bootstrap-t (``PO2``).  The ``simgen`` and
``harness`` modules run the accompanying Monte Carlo study.
"""

from .datafile import load_ovarian, load_sample, write_sample
from .errors import EstimationError, InestimableError, RMSTError, ValidationError
from .glm import DesignMatrix, FitResult, fit_identity_gee
from .harness import ScenarioResult, run_cell, run_grid, summarize
from .inference import (ResamplePlan, Scheme, po_asymptotic_test, po_bootstrap_test,
                        run_all_methods, studentized_permutation_test)
from .pseudo import POMethod, PseudoObsSet, Strata, pseudo_observations
from .results import Method, TestResult
from .simgen import ScenarioConfig, calibrate_scenario, make_dataset, true_rmst
from .survival import (ExtensionPolicy, KMCurve, RMSTEstimate, SurvivalSample, km_fit,
                       logrank_test, rmst, rmst_diff_asymptotic)

__version__ = "0.1.0"

__all__ = [
    "DesignMatrix", "EstimationError", "ExtensionPolicy", "FitResult", "InestimableError",
    "KMCurve", "Method", "POMethod", "PseudoObsSet", "RMSTError", "RMSTEstimate", "ResamplePlan",
    "ScenarioConfig", "ScenarioResult", "Scheme", "Strata", "SurvivalSample", "TestResult",
    "ValidationError", "calibrate_scenario", "fit_identity_gee", "km_fit", "load_ovarian",
    "load_sample", "logrank_test", "make_dataset", "po_asymptotic_test", "po_bootstrap_test",
    "pseudo_observations", "rmst", "rmst_diff_asymptotic", "run_all_methods", "run_cell",
    "run_grid", "studentized_permutation_test", "summarize", "true_rmst", "write_sample",
]
