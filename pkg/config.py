"""
Configuration settings for msrds (mean-square spectra and attractors)
"""

VERSION = "0.1.0"

# Integration tolerances (oracle-grade runs)
TOLERANCES = {
    "rel_tol": 1e-10,
    "abs_tol": 1e-12
}

# PSD checks on moment states
PSD_TOLERANCES = {
    "validate": -1e-10,    # admissibility of user / sampled states
    "propagate": -1e-8     # drift allowance after integration
}

# Eigen-lift spectrum
SPECTRUM = {
    "cluster_rel_tol": 1e-7,   # times (1 + spectral radius)
    "merge_tol": 1e-9,         # retained points closer than this form one interval
    "proj_tol": 1e-8,          # relative size of a spectral projection that counts as nonzero
    "cone_samples": 4096,
    "cone_seed": 20130917,
    "max_dimension": 64,
    "defect_slack": 4096.0,    # backward-error multiple (times n eps |M|) a Jordan block may split by
    "defect_cap": 1e-3         # times (1 + spectral radius); largest spread ever merged as defective
}

# Finite-time growth-rate sampling
FINITE_TIME = {
    "horizon": 50.0,
    "n_samples": 64,
    "cluster_width": 0.05,
    "renormalize_every": 1.0,
    "rel_tol": 1e-8,
    "abs_tol": 1e-12
}

# Interacting-particle simulation
SIMULATION = {
    "N": 100000,
    "dt": 1e-3,
    "chunk_size": 4096,        # particles per RNG counter block / reduction chunk
    "blowup": 1e12,
    "record_every": 100
}

# Pullback / bifurcation experiments
PULLBACK = {
    "classify_tol": 1e-4,
    "depth": 40.0,
    "rel_tol": 1e-12,
    "abs_tol": 1e-14
}

# Output settings
OUTPUT = {
    "directory": "./out",
    "formats": ["csv"]
}
