"""Compressive ICA: sketch the 4th-order cumulant tensor, recover the mixing matrix from the sketch."""

__version__ = "0.1.0"

from .errors import (CicaError, DimensionError, DivergenceError, FingerprintError,
                     RankDeficiencyError, SketchFormatError)
from .evalsynth import (amari_error, population_cumulant, random_mixing, random_orthogonal,
                        relative_efficiency, sample_sources)
from .pipeline import (MixingEstimate, WhiteningTransform, baseline_comon_fit, cica_fit,
                       cica_fit_unwhitened, load_data, prewhiten, write_data)
from .projection import project_model_set, proxy_project
from .sketch import (SketchAccumulator, SketchOperator, SketchVector, make_operator, merge,
                     read_sketch, sketch_stream, sketch_tensor, write_sketch)
from .solvers import (AsdConfig, IpgConfig, SolveResult, asd_solve, ipg_solve,
                      ipg_solve_unwhitened)
from .tensor import (DiagonalTensor4, SymmetricTensor4, estimate_cumulant, multilinear_transform,
                     n_unique)
