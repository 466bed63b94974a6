# Dense eigendecomposition is used for operator norms when min(n, d) is at
# most this size; power iteration above it.
FULL_NORM_THRESHOLD = 64

# Dense eigendecomposition is used for full spectra (and for block Gram norms)
# up to this size; Lanczos above it.
FULL_SPECTRUM_THRESHOLD = 2048

# Eigenvalue estimates of AᵀA in [-PSD_CLAMP_TOL * σ₁, 0) are clamped to 0.
PSD_CLAMP_TOL = 1e-10

# Eigenvalues at or below this fraction of σ₁ count as zero in the β bound.
SPECTRUM_ZERO_TOL = 1e-10

POWER_ITERATION_TOL = 1e-10
POWER_ITERATION_MAX_ITER = 20000

# Seed of the perturbed start vector used when the all-ones start lies in the
# null space of A, and of the Lanczos start vector.
POWER_FALLBACK_SEED = 20190417
LANCZOS_SEED = 20190418

# Lanczos runs max(2k, k + LANCZOS_EXTRA_STEPS) steps, capped at d.
LANCZOS_EXTRA_STEPS = 30

# Relative size of the Lanczos residual below which the Krylov space is
# treated as invariant.
LANCZOS_BREAKDOWN_TOL = 1e-12

# δ for certified random-partition bounds and for the heuristic variant.
CERTIFIED_DELTA = 15.
HEURISTIC_DELTA = 2.

# Minimum probability used when reporting the dimension limit of the random
# partition bound.
DEFAULT_MIN_PROBABILITY = 0.9

# Solvers abort once the objective passes this value.
DIVERGENCE_GUARD = 1e12

# Inner iterations of the FGP total-variation prox used by FISTA.
TV_INNER_ITERS = 50

# prox-SVRG default step as a fraction of 1/L_b.
SVRG_STEP_FRACTION = 0.25

PARTITION_SCHEMES = ('interleaved', 'random', 'consecutive', 'custom')
ENSEMBLE_KINDS = ('gaussian', 'uniform01', 'subsampled_wishart')
G_TERMS = ('l1', 'none')
H_TERMS = ('l1', 'nonneg_indicator', 'box', 'support_indicator', 'none')
ALGORITHMS = ('pgd', 'fista', 'minibatch_sgd', 'prox_svrg', 'pdhg', 'acc_pd_sgd')
SAMPLINGS = ('partition', 'with_replacement')
STEP_POLICIES = ('default', 'scaled')

# First line of every CSV file written by the command line.
SA_CURVE_SCHEMA = 'stochascope.sa_curve v1'
EXPECTED_SA_SCHEMA = 'stochascope.expected_sa v1'
PARTITION_RANKING_SCHEMA = 'stochascope.partition_ranking v1'
TRACE_SCHEMA = 'stochascope.trace v1'
MANIFEST_SCHEMA = 'stochascope.manifest v1'

SA_CURVE_COLUMNS = ('K', 'scheme', 'L_f', 'L_b', 'upsilon', 'mu_ell', 'alpha_ell',
                    'alpha_u', 'alpha_s', 'alpha_r_d15', 'alpha_r_d2',
                    'alpha_sigma', 'beta', 'rho')
EXPECTED_SA_COLUMNS = ('m', 'L_f', 'L_e_bound', 'upsilon_e_lower', 'upsilon_e_plugin')
TRACE_COLUMNS = ('epoch', 'objective', 'est_error', 'wall_ms')

# Environment variable capping worker processes/threads.
THREADS_ENV = 'STOCHASCOPE_THREADS'

# Solver configuration defaults; None means "derive from the problem".
# Copy before modifying.
SOLVER_DEFAULTS = {'epochs': 50,
                   'seed': 0,
                   'step': None,
                   'step_policy': 'default',
                   'K': 1,
                   'scheme': 'interleaved',
                   'partition_seed': None,
                   'sampling': 'partition',
                   'm': None,
                   'n_outer': None,
                   'n_inner': None,
                   'alpha': None,
                   'eta': None,
                   'theta': None,
                   'tv_inner_iters': TV_INNER_ITERS,
                   'x0': 'backprojection',
                   'record_every': None,
                   'outer_momentum': True}
