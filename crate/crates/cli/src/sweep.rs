//! Exhaustive hyperparameter search for the pattern-coupled estimators.
//!
//! Every grid point is scored on the same derived channel/beam/noise draws
//! so the comparison is paired; ties break toward the earlier grid entry.

use rayon::prelude::*;

use sblu_core::channel::{make_angular_grid, sample_channel};
use sblu_core::measurement::{measure, MeasurementSetup};
use sblu_core::sbl::{estimate, nmse, EstimatorOptions, PcsblHyper, SblVariant};
use sblu_core::seeds;

use crate::config::ExperimentSpec;
use crate::CliError;

/// β ∈ {0, 0.1, 0.5, 1} x a ∈ {0.5, 1} x b ∈ {0, 1e-4}.
pub fn default_hyper_grid() -> Vec<PcsblHyper> {
    let mut grid = Vec::new();
    for &beta in &[0.0, 0.1, 0.5, 1.0] {
        for &a in &[0.5, 1.0] {
            for &b in &[0.0, 1e-4] {
                grid.push(PcsblHyper { beta, a, b });
            }
        }
    }
    grid
}

/// Mean NMSE of `variant` at each grid point over `spec.trials` paired
/// draws; returns the winner and the full table.
pub fn hyper_sweep(
    variant: SblVariant,
    spec: &ExperimentSpec,
    grid_points: &[PcsblHyper],
) -> Result<(PcsblHyper, Vec<(PcsblHyper, f64)>), CliError> {
    assert!(!grid_points.is_empty(), "empty hyperparameter grid");
    assert!(variant.pattern_coupled(), "sweep targets PC variants");
    let grid = make_angular_grid(spec.sys.grid);

    // Fixed evaluation draws shared by every grid point.
    let draws: Vec<_> = (0..spec.trials as u64)
        .map(|t| {
            let mut chan_rng = seeds::derive(spec.seed, "hs-chan", t);
            let real = sample_channel(&spec.sys, &spec.chan, &mut chan_rng);
            let mut beam_rng = seeds::derive(spec.seed, "hs-beams", t);
            let setup = MeasurementSetup::random(&spec.sys, &grid, &mut beam_rng)
                .map_err(CliError::Core)?;
            let mut noise_rng = seeds::derive(spec.seed, "hs-noise", t);
            let y = measure(&real, &setup, spec.sys.noise_var, &mut noise_rng);
            Ok((real, setup, y))
        })
        .collect::<Result<_, CliError>>()?;

    let table: Vec<(PcsblHyper, f64)> = grid_points
        .iter()
        .map(|&hyper| {
            let total: f64 = draws
                .par_iter()
                .map(|(real, setup, y)| {
                    let opts = EstimatorOptions {
                        variant,
                        max_iters: spec.max_iters,
                        tol: spec.tol,
                        hyper,
                        track_gamma: false,
                    };
                    let est = estimate(y, setup, &spec.sys, &opts).map_err(CliError::Core)?;
                    nmse(&real.h, &est.h_hat).map_err(CliError::Core)
                })
                .collect::<Result<Vec<_>, _>>()?
                .iter()
                .sum();
            Ok((hyper, total / spec.trials as f64))
        })
        .collect::<Result<_, CliError>>()?;

    let mut best = table[0];
    for &(hyper, score) in &table[1..] {
        if score < best.1 {
            best = (hyper, score);
        }
    }
    Ok((best.0, table))
}
