"""Encrypted distance-based formation control with LWE ciphertexts.

Sensors quantize relative positions and distance errors, encrypt the digit
integers, an untrusted edge server multiplies ciphertexts, and agents decrypt
and apply the resulting gradient command.  Submodules:

``lwe``        LWE-style scheme over ``Z_q`` with gadget-based multiplication
``quantizer``  mixed uniform-logarithmic quantizer and its sector checks
``graph``      formation graphs, rigidity, exact and quantized control laws
``pipeline``   sensor / edge / agent roles, record and replay traces
``stability``  decay-rate constants and precision selection
``sim``        closed-loop simulation and output files
"""

from .config import SimConfig, load_config, parse_config, square_config
from .errors import (BudgetExceeded, ConfigError, DegenerateState, InputNotCanonical,
                     MissingEdgeResult, NonFiniteState, NotRigid, PlaintextOutOfRange,
                     SecformError, ShapeMismatch, TraceFormatError)
from .graph import (FormationGraph, FormationState, control_law_exact, control_law_quantized,
                    is_infinitesimally_rigid, rigidity_matrix)
from .lwe import (DEFAULT_PARAMS, CipherMat, CipherVec, LweParams, SecretKey, add, decrypt,
                  digit_decompose, encrypt, encrypt2, keygen, mult)
from .quantizer import MulqConfig, quantize, sector_checks, to_plaintext
from .stability import StabilityReport, analyze, choose_sigma, compute_k

__version__ = "0.1.0"
