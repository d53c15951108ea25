//! Monte-Carlo benchmark runner with derived per-trial seeds: results are
//! byte-identical across runs and worker counts.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use sblu_core::channel::{evolve, sample_channel, SystemConfig, TemporalConfig};
use sblu_core::measurement::{
    measure, measure_matrices, BeamPhases, MeasurementSetup,
};
use sblu_core::sbl::{estimate, ls_estimate, nmse, EstimatorOptions, SblVariant};
use sblu_core::autodiff::Tensor;
use sblu_core::sblnet::{forward, predict_combiner, time_features, NetworkParams};
use sblu_core::seeds;

use crate::config::{EstimatorKind, ExperimentSpec, Sweep};
use crate::flops::flops;
use crate::CliError;

/// One aggregated benchmark result.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub estimator: String,
    pub sweep_param: String,
    pub sweep_value: f64,
    pub nmse_mean: f64,
    pub trials: usize,
    pub flops: f64,
    pub seconds: f64,
}

/// Trained networks handed to the runner.
#[derive(Default)]
pub struct BenchNets {
    pub single: Option<NetworkParams>,
    pub multi: Option<NetworkParams>,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub workers: usize,
    /// Record wall time per estimator. Off by default so the CSV is
    /// byte-reproducible; with timing on, the seconds column varies from
    /// run to run.
    pub timing: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            timing: false,
        }
    }
}

fn estimator_options(spec: &ExperimentSpec, variant: SblVariant) -> EstimatorOptions {
    EstimatorOptions {
        variant,
        max_iters: spec.max_iters,
        tol: spec.tol,
        hyper: spec.hyper,
        track_gamma: false,
    }
}

struct TrialOutcome {
    nmse: Vec<f64>,
    seconds: Vec<f64>,
}

fn run_trial(
    spec: &ExperimentSpec,
    sys: &SystemConfig,
    nets: &BenchNets,
    sweep_tag: usize,
    trial: u64,
    timing: bool,
) -> Result<TrialOutcome, CliError> {
    let grid = sblu_core::channel::make_angular_grid(sys.grid);
    let label = |name: &str| format!("{name}-{sweep_tag}");
    let mut chan_rng = seeds::derive(spec.seed, &label("trial-chan"), trial);
    let real = sample_channel(sys, &spec.chan, &mut chan_rng);

    // Shared random-beam measurement for the classical estimators.
    let needs_random = spec
        .estimators
        .iter()
        .any(|e| matches!(e, EstimatorKind::Classical(_)));
    let random_measurement = if needs_random {
        let mut beam_rng = seeds::derive(spec.seed, &label("trial-beams"), trial);
        let setup = MeasurementSetup::random(sys, &grid, &mut beam_rng)
            .map_err(CliError::Core)?;
        let mut noise_rng = seeds::derive(spec.seed, &label("trial-noise"), trial);
        let y = measure(&real, &setup, sys.noise_var, &mut noise_rng);
        Some((setup, y))
    } else {
        None
    };

    let mut nmse_out = Vec::with_capacity(spec.estimators.len());
    let mut secs_out = Vec::with_capacity(spec.estimators.len());
    for kind in &spec.estimators {
        let start = timing.then(Instant::now);
        let value = match kind {
            EstimatorKind::Classical(variant) => {
                let (setup, y) = random_measurement.as_ref().expect("prepared above");
                let est = estimate(y, setup, sys, &estimator_options(spec, *variant))
                    .map_err(CliError::Core)?;
                nmse(&real.h, &est.h_hat).map_err(CliError::Core)?
            }
            EstimatorKind::Ls => {
                let ls_sys = SystemConfig {
                    m_tx: sys.n_tx,
                    m_rx: sys.n_rx,
                    ..sys.clone()
                };
                if ls_sys.m_rx % ls_sys.n_rf_rx != 0 {
                    return Err(CliError::Config(
                        "LS baseline needs n_rx divisible by n_rf_rx".into(),
                    ));
                }
                let mut beam_rng = seeds::derive(spec.seed, &label("ls-beams"), trial);
                let setup = MeasurementSetup::from_phases(
                    &ls_sys,
                    &BeamPhases::random(&ls_sys, &mut beam_rng),
                    &grid,
                )
                .map_err(CliError::Core)?;
                let mut noise_rng = seeds::derive(spec.seed, &label("ls-noise"), trial);
                let ys = measure_matrices(&real, &setup, sys.noise_var, &mut noise_rng);
                let h_hat = ls_estimate(&ys, &setup.w, &setup.f).map_err(CliError::Core)?;
                nmse(&real.h, &h_hat).map_err(CliError::Core)?
            }
            EstimatorKind::SblNet => {
                let net = nets.single.as_ref().ok_or_else(|| {
                    CliError::Config("sblnet requested but no checkpoint loaded".into())
                })?;
                let setup = MeasurementSetup::from_phases(sys, &net.phases, &grid)
                    .map_err(CliError::Core)?;
                let mut noise_rng = seeds::derive(spec.seed, &label("net-noise"), trial);
                let y = measure(&real, &setup, sys.noise_var, &mut noise_rng);
                let out = forward(&y, &setup, sys, net, None).map_err(CliError::Core)?;
                nmse(&real.h, &out.h_hat).map_err(CliError::Core)?
            }
            EstimatorKind::SblNetMulti => {
                let net = nets.multi.as_ref().ok_or_else(|| {
                    CliError::Config("sblnet-multi requested but no checkpoint loaded".into())
                })?;
                let temporal = spec
                    .temporal
                    .clone()
                    .unwrap_or_else(|| TemporalConfig::new(1.0, sys.carrier_hz, 1e-3));
                let mut evo_rng = seeds::derive(spec.seed, &label("trial-evolve"), trial);
                let cur = evolve(&real, sys, &temporal, &mut evo_rng);
                // Previous block estimated with the deployed fixed matrix.
                let setup1 = MeasurementSetup::from_phases(sys, &net.phases, &grid)
                    .map_err(CliError::Core)?;
                let mut n1_rng = seeds::derive(spec.seed, &label("net-noise1"), trial);
                let y1 = measure(&real, &setup1, sys.noise_var, &mut n1_rng);
                let zero_f4 = Tensor::zeros(&[sys.grid, sys.grid, sys.n_sc, 1]);
                let est1 =
                    forward(&y1, &setup1, sys, net, Some(&zero_f4)).map_err(CliError::Core)?;
                let f4 = time_features(&est1.x_hat);
                let comb = net.combiner.as_ref().ok_or_else(|| {
                    CliError::Config("multi-block checkpoint lacks a combiner head".into())
                })?;
                let (w_phase, _) = predict_combiner(&f4, comb, sys.n_rx, sys.m_rx);
                let phases2 = BeamPhases {
                    w_phase,
                    f_phase: net.phases.f_phase.clone(),
                };
                let setup2 = MeasurementSetup::from_phases(sys, &phases2, &grid)
                    .map_err(CliError::Core)?;
                let mut n2_rng = seeds::derive(spec.seed, &label("net-noise2"), trial);
                let y2 = measure(&cur, &setup2, sys.noise_var, &mut n2_rng);
                let out =
                    forward(&y2, &setup2, sys, net, Some(&f4)).map_err(CliError::Core)?;
                nmse(&cur.h, &out.h_hat).map_err(CliError::Core)?
            }
        };
        nmse_out.push(value);
        secs_out.push(start.map(|s| s.elapsed().as_secs_f64()).unwrap_or(0.0));
    }
    Ok(TrialOutcome {
        nmse: nmse_out,
        seconds: secs_out,
    })
}

/// Runs every estimator over every sweep value, `spec.trials` Monte-Carlo
/// trials each, on a thread pool of `opts.workers` threads. Per-trial seeds
/// are derived from `(seed, label, trial)`, so results do not depend on the
/// worker count.
pub fn run_benchmark(
    spec: &ExperimentSpec,
    nets: &BenchNets,
    opts: &BenchOptions,
) -> Result<Vec<ResultRow>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let sweep_values: Vec<(usize, String, f64, SystemConfig)> = match &spec.sweep {
        None => vec![(0, "none".to_string(), 0.0, spec.sys.clone())],
        Some(sweep) => sweep
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                (
                    i,
                    sweep.param_name().to_string(),
                    v,
                    sweep.apply(&spec.sys, i),
                )
            })
            .collect(),
    };

    let mut rows = Vec::new();
    for (tag, param, value, sys) in sweep_values {
        sys.validate().map_err(CliError::Core)?;
        let outcomes: Vec<TrialOutcome> = pool.install(|| {
            (0..spec.trials as u64)
                .into_par_iter()
                .map(|t| run_trial(spec, &sys, nets, tag, t, opts.timing))
                .collect::<Result<Vec<_>, _>>()
        })?;
        for (ei, kind) in spec.estimators.iter().enumerate() {
            let mut total = 0.0;
            let mut secs = 0.0;
            for outcome in &outcomes {
                total += outcome.nmse[ei];
                secs += outcome.seconds[ei];
            }
            let iters = match kind {
                EstimatorKind::Classical(_) => spec.max_iters,
                _ => spec.arch.layers,
            };
            let fl = match kind {
                EstimatorKind::Ls => 0.0,
                k => flops(*k, &sys, &spec.arch, iters)?,
            };
            rows.push(ResultRow {
                estimator: kind.name().to_string(),
                sweep_param: param.clone(),
                sweep_value: value,
                nmse_mean: total / spec.trials as f64,
                trials: spec.trials,
                flops: fl,
                seconds: if opts.timing {
                    secs / spec.trials as f64
                } else {
                    0.0
                },
            });
        }
    }
    Ok(rows)
}

/// Schema-stable CSV: `estimator,sweep_param,sweep_value,nmse_mean,trials,flops,seconds`.
pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("estimator,sweep_param,sweep_value,nmse_mean,trials,flops,seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6}\n",
            r.estimator, r.sweep_param, r.sweep_value, r.nmse_mean, r.trials, r.flops, r.seconds
        ));
    }
    out
}

/// Text log accompanying a benchmark run: the full spec, the seed, any
/// checkpoint hashes, per-variant FLOPs, and the documented FLOPs-formula
/// note.
pub fn run_log(
    spec: &ExperimentSpec,
    checkpoint_hashes: &BTreeMap<String, String>,
    rows: &[ResultRow],
) -> String {
    let mut log = String::new();
    log.push_str("== spec ==\n");
    log.push_str(&spec.render());
    log.push_str(&format!("== seed ==\n{}\n", spec.seed));
    if !checkpoint_hashes.is_empty() {
        log.push_str("== checkpoints ==\n");
        for (name, hash) in checkpoint_hashes {
            log.push_str(&format!("{name}={hash}\n"));
        }
    }
    log.push_str("== flops ==\n");
    for r in rows {
        log.push_str(&format!(
            "{} @ {}={}: {}\n",
            r.estimator, r.sweep_param, r.sweep_value, r.flops
        ));
    }
    log.push_str(&format!("note: {}\n", crate::flops::REPORT_FORMULA_NOTE));
    log
}

/// Named sweep presets whose CSVs reproduce the benchmark figures of the
/// companion guide.
pub fn figure_preset(name: &str) -> Option<(Sweep, &'static str)> {
    match name {
        "fig6a" => Some((
            Sweep::Grid(vec![32, 48, 64, 96, 128]),
            "fig6a_grid_sweep.csv",
        )),
        "fig6b" => Some((
            Sweep::RxBeams(vec![8, 12, 16, 24, 32]),
            "fig6b_beam_sweep.csv",
        )),
        "fig7" => Some((
            Sweep::SnrDb(vec![0.0, 5.0, 10.0, 15.0, 20.0]),
            "fig7_snr_sweep.csv",
        )),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec::parse(
            "n_tx=8\nn_rx=8\nn_rf_rx=2\nm_tx=4\nm_rx=4\ngrid=8\nn_sc=2\n\
             n_clusters=2\nn_subpaths=3\nsnr_db=20\ntrials=3\nseed=11\n\
             estimators=sbl,ls\nmax_iters=10\n",
        )
        .unwrap()
    }

    #[test]
    fn benchmark_is_deterministic_across_worker_counts() {
        let spec = tiny_spec();
        let nets = BenchNets::default();
        let a = run_benchmark(
            &spec,
            &nets,
            &BenchOptions {
                workers: 1,
                timing: false,
            },
        )
        .unwrap();
        let b = run_benchmark(
            &spec,
            &nets,
            &BenchOptions {
                workers: 8,
                timing: false,
            },
        )
        .unwrap();
        assert_eq!(to_csv(&a), to_csv(&b));
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let mut spec = tiny_spec();
        spec.estimators = vec![EstimatorKind::SblNet];
        let err = run_benchmark(&spec, &BenchNets::default(), &BenchOptions::default());
        assert!(err.is_err());
    }

    #[test]
    fn csv_schema_is_stable() {
        let rows = vec![ResultRow {
            estimator: "sbl".into(),
            sweep_param: "none".into(),
            sweep_value: 0.0,
            nmse_mean: 0.125,
            trials: 3,
            flops: 1e9,
            seconds: 0.0,
        }];
        let csv = to_csv(&rows);
        assert!(csv.starts_with(
            "estimator,sweep_param,sweep_value,nmse_mean,trials,flops,seconds\n"
        ));
        assert!(csv.contains("sbl,none,0,0.125,3,1000000000,0.000000"));
    }
}
