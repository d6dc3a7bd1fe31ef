"""Subspace sketches for l_p norms and M-estimators, with the matching
hard instances built from Boolean-cube kernel spectra."""

__version__ = "0.1.0"

from .core import (
    KernelFunction,
    QueryMatrix,
    RngStream,
    cauchy_loss,
    condition_number,
    cube_rows,
    fair,
    huber,
    l1l2,
    log_abs,
    mollified_tukey,
    phi_norm,
    power,
    read_matrix,
    tukey,
    walsh_hadamard,
    write_matrix,
    zero_indicator,
)
from .hardinstance import (
    HardInstance,
    NoiseModel,
    build_hard_instance,
    distinguishing_experiment,
    recover_bit,
    recovery_experiment,
)
from .median2d import build_coreset_1d, build_l1_2d_sketch, query_l1_2d
from .sketches import (
    build_even_moment_sketch,
    build_gram_sketch,
    build_sampling_sketch,
    build_stable_sketch,
    compute_lewis_weights,
    size_bits,
)
from .spectrum import fourier_spectrum, lambda0_alternating_sum, lambda0_integral
from .tukey import estimate_tukey, fit_band_polynomial, heavy_hitters, mollified_tukey_eval

__all__ = [name for name in dir() if not name.startswith("_")]
