"""Physical constants and the default experimental configuration.

SI units throughout. The constants table is versioned so output files can
record which values produced them.
"""

CONSTANTS_VERSION = "CODATA-2018-exact"

HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J / K

# Fullerene probe in an air bath.
PROBE_MASS = 1.2e-24  # kg
PROBE_WIDTH = 7.8e-9  # m, initial wave-packet width sigma_0
COHERENCE_LENGTH = 50e-9  # m, ell_0
MOLECULE_SIZE = 7e-10  # m, w
AIR_MASS = 5.0e-26  # kg
AIR_DENSITY = 4.0e14  # m^-3

# Coupling regimes used throughout the sweeps, m^-2 s^-1.
WEAK_LAMBDA = 3e15
INTERMEDIATE_LAMBDA = 3e20
STRONG_LAMBDA = 3e22
DEFAULT_LAMBDAS = (WEAK_LAMBDA, INTERMEDIATE_LAMBDA, STRONG_LAMBDA)

# Reference temperatures quoted alongside the three regimes, K.
ANCHOR_TEMPERATURES = {
    WEAK_LAMBDA: 16.9e-3,
    INTERMEDIATE_LAMBDA: 36.5,
    STRONG_LAMBDA: 786.0,
}
