//! Command-line front end for noise-oversampling experiments: dataset
//! generation, statistics, training, evaluation, normalization ablations,
//! additive-noise sweeps and gradient probes.

pub mod commands;
pub mod config;

/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 1;
/// Exit status when training diverges.
pub const EXIT_NUMERIC: i32 = 2;

/// Maps an error to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numeric = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<noisebalance::Error>(), Some(noisebalance::Error::NonFiniteLoss { .. })));
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}
