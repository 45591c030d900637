"""Differentially private linear and logistic regression over vertically
partitioned data, via one-shot perturbation of the polynomial objective."""

from .baselines import SgdConfig, dpsgd, fit_nonprivate
from .data import (
    Dataset,
    DatasetSpec,
    IngestError,
    gen_synthetic,
    ingest_csv,
    partition_columns,
    save_csv,
    split_train_test,
    vsplit,
)
from .dp import (
    NoiseStream,
    PrivacyBudget,
    bottomup_epsilon,
    coefficient_noise,
    laplace_icdf,
    laplace_sample,
    party_epsilon,
    perturb,
)
from .objective import (
    CoefficientAllocation,
    CoeffEntry,
    PolyObjective,
    Task,
    VerticalPartition,
    aggregate,
    coeff_count,
    coeff_index,
    dissect,
    global_sensitivity,
    linear_record_coeffs,
    logistic_record_coeffs,
    party_sensitivity,
    record_coeffs,
    record_dot,
    sub_sensitivity_g,
    sub_sensitivity_h,
)
from .protocol import (
    AuditReport,
    ProtocolError,
    ProtocolTranscript,
    audit_server_view,
    centralized_fm,
    run_protocol,
)
from .secure import (
    MAX_DOT_LENGTH,
    PRIME,
    SCALE,
    BeaverDealer,
    BeaverTriple,
    FieldOverflowError,
    PlaintextBackend,
    SecretSharingBackend,
    TripleReuseError,
    beaver_mul,
    decode,
    encode,
    make_backend,
    reconstruct,
    secure_dot,
    share,
)
from .solver import Model, SolverError, accuracy, default_ridge_floor, minimize, mse, predict

__version__ = "0.1.0"
