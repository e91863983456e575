//! Independent checks of the solver and simulator: a brute-force oracle,
//! dynamic programming and supermartingale checks on the lattice, policy
//! pasting, and Monte Carlo invariance checks.

mod concat;
mod dpp;
mod invariance;
mod martingale;
mod oracle;
mod report;

pub use concat::{
    check_concatenation, concatenate_policies, near_optimal_bin_policies, Bin, ConcatReport, PartitionScheme,
    PastedLattice, PastedPolicy, ShiftedPolicy,
};
pub use dpp::{check_dpp, one_step_residuals, value_until, DppMode, DppReport, Horizon};
pub use invariance::{
    check_reference_invariance, check_truncation_continuity, ContinuityReport, ContinuityRow, InvarianceOptions,
    InvarianceReport, KsRow, StartPoint,
};
pub use martingale::{check_supermartingale_exact, check_supermartingale_mc, MartingaleReport, MonteCarloPair};
pub use oracle::{brute_force_value, OracleMethod, OracleResult, ENUMERATION_LIMIT, ORACLE_GUARD};
pub use report::{run_suite, ReportMetadata, SuiteOptions, TestOutcome, Tolerances, VerificationSuiteReport};
