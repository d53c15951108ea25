//! Flat key=value experiment configuration.
//!
//! Every key mirrors a field of the library's configuration structs; `#`
//! starts a comment. Unknown keys are rejected so typos fail loudly.

use std::collections::BTreeMap;

use sblu_core::channel::{ChannelConfig, SystemConfig, TemporalConfig};
use sblu_core::sbl::{PcsblHyper, SblVariant};
use sblu_core::sblnet::train::TrainConfig;
use sblu_core::sblnet::ArchConfig;

use crate::CliError;

/// Which estimator a benchmark runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Classical(SblVariant),
    Ls,
    SblNet,
    SblNetMulti,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s.trim() {
            "sbl" => Self::Classical(SblVariant::Sbl),
            "m-sbl" => Self::Classical(SblVariant::MSbl),
            "pc-sbl" => Self::Classical(SblVariant::PcSbl),
            "m-pc-sbl" => Self::Classical(SblVariant::MPcSbl),
            "ls" => Self::Ls,
            "sblnet" => Self::SblNet,
            "sblnet-multi" => Self::SblNetMulti,
            other => return Err(CliError::Config(format!("unknown estimator {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Classical(v) => v.name(),
            Self::Ls => "ls",
            Self::SblNet => "sblnet",
            Self::SblNetMulti => "sblnet-multi",
        }
    }
}

/// A swept benchmark axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    SnrDb(Vec<f64>),
    Grid(Vec<usize>),
    RxBeams(Vec<usize>),
    TxBeams(Vec<usize>),
}

impl Sweep {
    pub fn param_name(&self) -> &'static str {
        match self {
            Sweep::SnrDb(_) => "snr_db",
            Sweep::Grid(_) => "grid",
            Sweep::RxBeams(_) => "m_rx",
            Sweep::TxBeams(_) => "m_tx",
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Sweep::SnrDb(v) => v.clone(),
            Sweep::Grid(v) => v.iter().map(|&x| x as f64).collect(),
            Sweep::RxBeams(v) => v.iter().map(|&x| x as f64).collect(),
            Sweep::TxBeams(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Applies value `i` to a copy of the system config.
    pub fn apply(&self, sys: &SystemConfig, i: usize) -> SystemConfig {
        let mut sys = sys.clone();
        match self {
            Sweep::SnrDb(v) => sys.noise_var = 10f64.powf(-v[i] / 10.0),
            Sweep::Grid(v) => sys.grid = v[i],
            Sweep::RxBeams(v) => sys.m_rx = v[i],
            Sweep::TxBeams(v) => sys.m_tx = v[i],
        }
        sys
    }
}

/// Everything one experiment needs: dimensions, channel statistics,
/// estimators, Monte-Carlo controls, and training hyperparameters.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub sys: SystemConfig,
    pub chan: ChannelConfig,
    pub temporal: Option<TemporalConfig>,
    pub estimators: Vec<EstimatorKind>,
    pub trials: usize,
    pub sweep: Option<Sweep>,
    pub seed: u64,
    pub hyper: PcsblHyper,
    pub max_iters: usize,
    pub tol: f64,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub dataset_count: usize,
    pub blocks: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            sys: SystemConfig::typical(),
            chan: ChannelConfig::default(),
            temporal: None,
            estimators: vec![
                EstimatorKind::Classical(SblVariant::Sbl),
                EstimatorKind::Classical(SblVariant::PcSbl),
                EstimatorKind::Classical(SblVariant::MSbl),
            ],
            trials: 300,
            sweep: None,
            seed: 1,
            hyper: PcsblHyper::default(),
            max_iters: 100,
            tol: 1e-6,
            arch: ArchConfig::full(),
            train: TrainConfig::default(),
            dataset_count: 10_000,
            blocks: 1,
        }
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut spec = Self::default();
        let mut jitter_deg: Option<f64> = None;
        let mut want_temporal = false;
        let mut speed = 1.0;
        let mut block_s = 1e-3;
        let mut rho_override: Option<f64> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: String| CliError::Config(format!("line {}: {e}", lineno + 1));
            match key {
                "n_tx" => spec.sys.n_tx = parse_num(value).map_err(bad)?,
                "n_rx" => spec.sys.n_rx = parse_num(value).map_err(bad)?,
                "n_rf_rx" => spec.sys.n_rf_rx = parse_num(value).map_err(bad)?,
                "n_rf_tx" => spec.sys.n_rf_tx = parse_num(value).map_err(bad)?,
                "m_tx" => spec.sys.m_tx = parse_num(value).map_err(bad)?,
                "m_rx" => spec.sys.m_rx = parse_num(value).map_err(bad)?,
                "grid" => spec.sys.grid = parse_num(value).map_err(bad)?,
                "n_sc" => spec.sys.n_sc = parse_num(value).map_err(bad)?,
                "carrier_hz" => spec.sys.carrier_hz = parse_f64(value).map_err(bad)?,
                "bandwidth_hz" => spec.sys.bandwidth_hz = parse_f64(value).map_err(bad)?,
                "noise_var" => spec.sys.noise_var = parse_f64(value).map_err(bad)?,
                "snr_db" => {
                    let db: f64 = parse_f64(value).map_err(bad)?;
                    spec.sys.noise_var = 10f64.powf(-db / 10.0);
                }
                "n_clusters" => spec.chan.n_clusters = parse_num(value).map_err(bad)?,
                "n_subpaths" => spec.chan.n_subpaths = parse_num(value).map_err(bad)?,
                "spread_deg" => {
                    spec.chan.spread_rad = parse_f64(value).map_err(bad)?.to_radians()
                }
                "tau_max_ns" => spec.chan.tau_max_s = parse_f64(value).map_err(bad)? * 1e-9,
                "squint" => spec.chan.squint_enabled = parse_bool(value).map_err(bad)?,
                "speed_mps" => {
                    speed = parse_f64(value).map_err(bad)?;
                    want_temporal = true;
                }
                "block_s" => {
                    block_s = parse_f64(value).map_err(bad)?;
                    want_temporal = true;
                }
                "rho" => {
                    rho_override = Some(parse_f64(value).map_err(bad)?);
                    want_temporal = true;
                }
                "angle_jitter_deg" => {
                    jitter_deg = Some(parse_f64(value).map_err(bad)?);
                    want_temporal = true;
                }
                "estimators" => {
                    spec.estimators = value
                        .split(',')
                        .map(EstimatorKind::parse)
                        .collect::<Result<_, _>>()?;
                }
                "trials" => spec.trials = parse_num(value).map_err(bad)?,
                "seed" => spec.seed = parse_num(value).map_err(bad)? as u64,
                "sweep" => spec.sweep = Some(parse_sweep(value).map_err(bad)?),
                "beta" => spec.hyper.beta = parse_f64(value).map_err(bad)?,
                "a" => spec.hyper.a = parse_f64(value).map_err(bad)?,
                "b" => spec.hyper.b = parse_f64(value).map_err(bad)?,
                "max_iters" => spec.max_iters = parse_num(value).map_err(bad)?,
                "tol" => spec.tol = parse_f64(value).map_err(bad)?,
                "layers" => spec.arch.layers = parse_num(value).map_err(bad)?,
                "n_filters" => spec.arch.n_filters = parse_num(value).map_err(bad)?,
                "filter_size" => spec.arch.filter_size = parse_num(value).map_err(bad)?,
                "batch" => spec.train.batch = parse_num(value).map_err(bad)?,
                "lr_stage12" => spec.train.lr_stage12 = parse_f64(value).map_err(bad)?,
                "lr_stage3" => spec.train.lr_stage3 = parse_f64(value).map_err(bad)?,
                "max_epochs" => spec.train.max_epochs = parse_num(value).map_err(bad)?,
                "dataset_count" => spec.dataset_count = parse_num(value).map_err(bad)?,
                "blocks" => spec.blocks = parse_num(value).map_err(bad)?,
                other => {
                    return Err(CliError::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if want_temporal {
            let mut t = TemporalConfig::new(speed, spec.sys.carrier_hz, block_s);
            if let Some(rho) = rho_override {
                t.rho = rho;
            }
            if let Some(j) = jitter_deg {
                t = t.with_angle_jitter(j.to_radians());
            }
            spec.temporal = Some(t);
        }
        spec.sys
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Renders the spec back to the key=value format, sorted by key, for
    /// run logs and container headers.
    pub fn render(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("n_tx", self.sys.n_tx.to_string());
        map.insert("n_rx", self.sys.n_rx.to_string());
        map.insert("n_rf_rx", self.sys.n_rf_rx.to_string());
        map.insert("n_rf_tx", self.sys.n_rf_tx.to_string());
        map.insert("m_tx", self.sys.m_tx.to_string());
        map.insert("m_rx", self.sys.m_rx.to_string());
        map.insert("grid", self.sys.grid.to_string());
        map.insert("n_sc", self.sys.n_sc.to_string());
        map.insert("carrier_hz", self.sys.carrier_hz.to_string());
        map.insert("bandwidth_hz", self.sys.bandwidth_hz.to_string());
        map.insert("noise_var", self.sys.noise_var.to_string());
        map.insert("n_clusters", self.chan.n_clusters.to_string());
        map.insert("n_subpaths", self.chan.n_subpaths.to_string());
        map.insert("spread_deg", self.chan.spread_rad.to_degrees().to_string());
        map.insert("tau_max_ns", (self.chan.tau_max_s * 1e9).to_string());
        map.insert("squint", self.chan.squint_enabled.to_string());
        if let Some(t) = &self.temporal {
            map.insert("speed_mps", t.speed_mps.to_string());
            map.insert("block_s", t.block_s.to_string());
            map.insert("rho", t.rho.to_string());
            if let Some(j) = t.angle_jitter_rad {
                map.insert("angle_jitter_deg", j.to_degrees().to_string());
            }
        }
        map.insert(
            "estimators",
            self.estimators
                .iter()
                .map(|e| e.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("trials", self.trials.to_string());
        map.insert("seed", self.seed.to_string());
        if let Some(sweep) = &self.sweep {
            let values = sweep
                .values()
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            map.insert("sweep", format!("{}:{}", sweep.param_name(), values));
        }
        map.insert("beta", self.hyper.beta.to_string());
        map.insert("a", self.hyper.a.to_string());
        map.insert("b", self.hyper.b.to_string());
        map.insert("max_iters", self.max_iters.to_string());
        map.insert("tol", self.tol.to_string());
        map.insert("layers", self.arch.layers.to_string());
        map.insert("n_filters", self.arch.n_filters.to_string());
        map.insert("filter_size", self.arch.filter_size.to_string());
        map.insert("batch", self.train.batch.to_string());
        map.insert("lr_stage12", self.train.lr_stage12.to_string());
        map.insert("lr_stage3", self.train.lr_stage3.to_string());
        map.insert("max_epochs", self.train.max_epochs.to_string());
        map.insert("dataset_count", self.dataset_count.to_string());
        map.insert("blocks", self.blocks.to_string());
        map.iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

fn parse_num(v: &str) -> Result<usize, String> {
    // Accept scientific notation for counts like 1e4.
    if let Ok(n) = v.parse::<usize>() {
        return Ok(n);
    }
    let f: f64 = v.parse().map_err(|_| format!("bad number {v:?}"))?;
    if f < 0.0 || f.fract() != 0.0 {
        return Err(format!("expected a nonnegative integer, got {v:?}"));
    }
    Ok(f as usize)
}

fn parse_f64(v: &str) -> Result<f64, String> {
    v.parse().map_err(|_| format!("bad number {v:?}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("bad boolean {v:?}")),
    }
}

fn parse_sweep(v: &str) -> Result<Sweep, String> {
    let (axis, values) = v
        .split_once(':')
        .ok_or_else(|| format!("sweep must be axis:v1,v2,... got {v:?}"))?;
    let floats: Vec<f64> = values
        .split(',')
        .map(|s| parse_f64(s.trim()))
        .collect::<Result<_, _>>()?;
    let ints = || -> Result<Vec<usize>, String> {
        floats
            .iter()
            .map(|&f| {
                if f.fract() == 0.0 && f >= 1.0 {
                    Ok(f as usize)
                } else {
                    Err(format!("sweep axis {axis} needs positive integers"))
                }
            })
            .collect()
    };
    Ok(match axis.trim() {
        "snr_db" => Sweep::SnrDb(floats),
        "grid" => Sweep::Grid(ints()?),
        "m_rx" => Sweep::RxBeams(ints()?),
        "m_tx" => Sweep::TxBeams(ints()?),
        other => return Err(format!("unknown sweep axis {other:?}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips_through_render() {
        let text = "\
n_tx=16\nn_rx=16\nn_rf_rx=2\nm_tx=8\nm_rx=8\ngrid=32\nn_sc=4\nsnr_db=20\n\
estimators=sbl,m-sbl,pc-sbl\ntrials=50\nseed=9\nsweep=snr_db:0,10,20\nbeta=0.5\n";
        let spec = ExperimentSpec::parse(text).unwrap();
        assert_eq!(spec.sys.n_tx, 16);
        assert_eq!(spec.trials, 50);
        assert!((spec.sys.noise_var - 0.01).abs() < 1e-15);
        assert_eq!(spec.estimators.len(), 3);
        let rendered = spec.render();
        let again = ExperimentSpec::parse(&rendered).unwrap();
        assert_eq!(again.sys, spec.sys);
        assert_eq!(again.trials, spec.trials);
        assert_eq!(again.sweep, spec.sweep);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentSpec::parse("n_xt=32\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let spec = ExperimentSpec::parse("# comment\n\ntrials=7 # trailing\n").unwrap();
        assert_eq!(spec.trials, 7);
    }

    #[test]
    fn invalid_system_config_is_rejected() {
        // grid smaller than the antenna count.
        assert!(ExperimentSpec::parse("grid=8\n").is_err());
    }

    #[test]
    fn temporal_keys_build_the_jakes_model() {
        let spec = ExperimentSpec::parse("speed_mps=1\nblock_s=1e-3\n").unwrap();
        let t = spec.temporal.unwrap();
        assert!((t.rho - 0.916).abs() < 1e-3);
    }
}
