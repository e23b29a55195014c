"""Low-rank matrix completion from few-bit quantized samples.

The solver couples a variational sparse Bayesian factor model with an
expectation-propagation refinement of the quantized likelihood, estimating
the completed matrix, its rank, and the noise variance. A MUSIC-based
post-processing stage turns the factor estimates into 2D line spectral
estimates, and an experiment harness runs Monte-Carlo sweeps over SNR, bit
depth, sampling fraction, and rank.
"""

from .grsbl import (ExtrinsicState, GrSblConfig, GrSblResult, estimate_rank,
                    extrinsic, mmse_refine, run_mc_grsbl,
                    update_noise_variance)
from .harness import (ExperimentConfig, MetricRow, add_noise_and_quantize,
                      debiased_nmse, derive_seed, gen_line_spectral,
                      gen_random_lowrank, mse_freq, nmse, rows_to_csv,
                      run_experiment, sample_omega, summarize)
from .lse2d import (LineSpectralScene, Lse2dResult, PairingResult,
                    estimate_unitary, ls_powers, match_frequencies, music_1d,
                    resolve_pairing, run_lse2d, steering, steering_matrix,
                    wrap_angle)
from .numerics import (EmptyCellError, GaussInterval, hermitian_eig,
                       least_squares, trunc_gauss_moments,
                       trunc_gauss_moments_arrays)
from .quantizer import (ObservedMatrix, QuantizerSpec, bin_interval,
                        build_uniform_quantizer, observe_unquantized,
                        quantize_complex_matrix, quantize_real)
from .vsbl import (FactorState, HeteroObservations, VsblResult,
                   init_factor_state, posterior_moments_Z, update_gamma,
                   update_rows_u, update_rows_v, vb_sweep, vsbl_solve)

__version__ = "0.1.0"
