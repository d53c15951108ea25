//! Real-FLOP accounting for the estimator families.
//!
//! The counters implement the published per-iteration formulas verbatim:
//!
//! - SBL family: `16 K G^2 (M_R M_T)^2` per iteration.
//! - Unfolded network: the same E-step term plus a per-layer DNN overhead
//!   of `2 (5 N_F + 2) F_S^3 K G^2`.
//! - Multi-block: an extra `2 (N_F + 1) F_S^3 K G^2` per layer for the
//!   time-feature channel, plus `(G + N_R M_R) N_R M_R` once per block for
//!   the combiner predictor.
//!
//! Note: published end-to-end TFLOP tables for the same configurations do
//! not match a direct evaluation of these formulas (e.g. the 100-iteration
//! SBL count at `M_T = M_R = 16, G = 64, K = 8` evaluates to 3.44e12, while
//! the corresponding table row reports 2.577e12). The counter implements
//! the formulas as stated and run logs record the gap; see
//! [`REPORT_FORMULA_NOTE`].

use sblu_core::channel::SystemConfig;
use sblu_core::sblnet::ArchConfig;

use crate::config::EstimatorKind;
use crate::CliError;

/// Documented discrepancy between the per-iteration formulas and the
/// published end-to-end totals; emitted into run logs.
pub const REPORT_FORMULA_NOTE: &str = "flops counters evaluate the per-iteration formulas \
verbatim; published end-to-end TFLOP tables for the same settings differ (3.44e12 vs 2.577e12 \
for 100-iteration SBL at m_tx=m_rx=16, grid=64, n_sc=8) and are not reverse-engineered";

/// E-step cost shared by every variant.
fn e_step_term(sys: &SystemConfig) -> f64 {
    let g2 = (sys.grid * sys.grid) as f64;
    let m = (sys.m_rx * sys.m_tx) as f64;
    16.0 * sys.n_sc as f64 * g2 * m * m
}

/// Per-layer DNN overhead of the single-block network.
pub fn dnn_overhead(sys: &SystemConfig, arch: &ArchConfig) -> f64 {
    let g2 = (sys.grid * sys.grid) as f64;
    let fs3 = (arch.filter_size as f64).powi(3);
    2.0 * (5.0 * arch.n_filters as f64 + 2.0) * fs3 * sys.n_sc as f64 * g2
}

/// Per-layer extra cost of the time-feature channel in multi-block mode.
pub fn multi_block_conv_overhead(sys: &SystemConfig, arch: &ArchConfig) -> f64 {
    let g2 = (sys.grid * sys.grid) as f64;
    let fs3 = (arch.filter_size as f64).powi(3);
    2.0 * (arch.n_filters as f64 + 1.0) * fs3 * sys.n_sc as f64 * g2
}

/// One-shot cost of the combiner predictor.
pub fn combiner_overhead(sys: &SystemConfig) -> f64 {
    let nm = (sys.n_rx * sys.m_rx) as f64;
    (sys.grid as f64 + nm) * nm
}

/// Total real FLOPs of `iters` iterations of the given approach.
pub fn flops(
    kind: EstimatorKind,
    sys: &SystemConfig,
    arch: &ArchConfig,
    iters: usize,
) -> Result<f64, CliError> {
    let it = iters as f64;
    Ok(match kind {
        EstimatorKind::Classical(_) => it * e_step_term(sys),
        EstimatorKind::SblNet => it * (e_step_term(sys) + dnn_overhead(sys, arch)),
        EstimatorKind::SblNetMulti => {
            it * (e_step_term(sys) + dnn_overhead(sys, arch) + multi_block_conv_overhead(sys, arch))
                + combiner_overhead(sys)
        }
        EstimatorKind::Ls => {
            return Err(CliError::Config(
                "the LS baseline has no iteration-count FLOPs formula".into(),
            ))
        }
    })
}

/// Parses an approach id for the `flops` subcommand.
pub fn parse_approach(s: &str) -> Result<EstimatorKind, CliError> {
    let kind = EstimatorKind::parse(s)?;
    if kind == EstimatorKind::Ls {
        return Err(CliError::Config(
            "the LS baseline has no iteration-count FLOPs formula".into(),
        ));
    }
    Ok(kind)
}
