//! Staged training of the unfolded estimator.
//!
//! Single-block training runs three stages: (1) conv filters against
//! freshly drawn random beams per sample per epoch, (2) measurement-matrix
//! phases with frozen filters, (3) joint fine-tuning at a small learning
//! rate. Multi-block training warm-starts from a single-block model (time
//! feature filter slices at zero), trains the filters on two-block
//! sequences, then the combiner predictor with frozen filters, then
//! fine-tunes jointly. Every stage applies learning-rate decay and early
//! stopping on a deterministic validation loss and returns the parameters
//! that scored best on validation.

use num_complex::Complex64;

use crate::autodiff::complex::CVar;
use crate::autodiff::{adam_step, AdamState, Tape, Tensor, Var};
use crate::channel::{make_angular_grid, to_angular, ChannelRealization, SystemConfig};
use crate::cmat::{complex_gaussian, CMat};
use crate::measurement::{measure, BeamPhases, MeasurementSetup, ReceivedSignal};

use crate::seeds;
use crate::{Error, Result};

use super::graph::{
    combiner_graph, forward_graph, load_layer, measure_graph, noise_cov_graph,
    phi_graph, sample_loss_graph, CombinerVars, LayerVars,
};
use super::{forward, time_features, NetworkParams, TrainSample};

/// Optimization schedule shared by all stages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Mini-batch size (S).
    pub batch: usize,
    /// Learning rate of stages 1 and 2.
    pub lr_stage12: f64,
    /// Fine-tuning learning rate of stage 3.
    pub lr_stage3: f64,
    /// Division factor applied when validation stalls.
    pub lr_decay_factor: f64,
    /// Epochs of stalled validation before the learning rate decays.
    pub lr_patience: usize,
    /// Epochs of stalled validation before a stage stops.
    pub early_stop_patience: usize,
    /// Hard per-stage epoch cap.
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            lr_stage12: 1e-4,
            lr_stage3: 1e-5,
            lr_decay_factor: 10.0,
            lr_patience: 2,
            early_stop_patience: 3,
            max_epochs: 50,
        }
    }
}

/// Loss history of one stage.
#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
}

/// 8:1:1 index split. Datasets smaller than ten samples degenerate to
/// "validate on the training data", which the smoke tests rely on.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    if n < 10 {
        let all: Vec<usize> = (0..n).collect();
        return (all.clone(), all, Vec::new());
    }
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    (
        (0..n_train).collect(),
        (n_train..n_train + n_val).collect(),
        (n_train + n_val..n).collect(),
    )
}

fn loss_scale(sys: &SystemConfig) -> f64 {
    1.0 / (sys.n_sc * sys.n_tx * sys.n_rx) as f64
}

// ---- parameter flattening ---------------------------------------------------

fn conv_tensors(net: &NetworkParams) -> Vec<Tensor> {
    net.layers
        .iter()
        .flat_map(|l| {
            [
                l.conv1_w.clone(),
                l.conv1_b.clone(),
                l.conv2_w.clone(),
                l.conv2_b.clone(),
            ]
        })
        .collect()
}

fn set_conv_tensors(net: &mut NetworkParams, tensors: &[Tensor]) {
    assert_eq!(tensors.len(), net.layers.len() * 4);
    for (i, layer) in net.layers.iter_mut().enumerate() {
        layer.conv1_w = tensors[i * 4].clone();
        layer.conv1_b = tensors[i * 4 + 1].clone();
        layer.conv2_w = tensors[i * 4 + 2].clone();
        layer.conv2_b = tensors[i * 4 + 3].clone();
    }
}

fn phase_tensors(phases: &BeamPhases) -> Vec<Tensor> {
    let w = Tensor::from_fn(&[phases.w_phase.len(), phases.w_phase[0].len()], |ix| {
        phases.w_phase[ix[0]][ix[1]]
    });
    let f = Tensor::from_fn(&[phases.f_phase.len(), phases.f_phase[0].len()], |ix| {
        phases.f_phase[ix[0]][ix[1]]
    });
    vec![w, f]
}

fn set_phase_tensors(phases: &mut BeamPhases, tensors: &[Tensor]) {
    let (w, f) = (&tensors[0], &tensors[1]);
    for i in 0..phases.w_phase.len() {
        for j in 0..phases.w_phase[0].len() {
            phases.w_phase[i][j] = w.at(&[i, j]);
        }
    }
    for i in 0..phases.f_phase.len() {
        for j in 0..phases.f_phase[0].len() {
            phases.f_phase[i][j] = f.at(&[i, j]);
        }
    }
}

fn combiner_tensors(net: &NetworkParams) -> Vec<Tensor> {
    let c = net.combiner.as_ref().expect("combiner head missing");
    vec![
        c.fc1_w.clone(),
        c.fc1_b.clone(),
        c.fc2_w.clone(),
        c.fc2_b.clone(),
    ]
}

fn set_combiner_tensors(net: &mut NetworkParams, tensors: &[Tensor]) {
    let c = net.combiner.as_mut().expect("combiner head missing");
    c.fc1_w = tensors[0].clone();
    c.fc1_b = tensors[1].clone();
    c.fc2_w = tensors[2].clone();
    c.fc2_b = tensors[3].clone();
}

// ---- shared epoch machinery --------------------------------------------------

struct EpochControl {
    lr: f64,
    best_val: f64,
    best_params: Vec<Tensor>,
    stalled_lr: usize,
    stalled_stop: usize,
}

impl EpochControl {
    fn new(lr: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            best_val: f64::INFINITY,
            best_params: params.to_vec(),
            stalled_lr: 0,
            stalled_stop: 0,
        }
    }

    /// Returns true when the stage should stop.
    fn observe(&mut self, cfg: &TrainConfig, val: f64, params: &[Tensor], adam: &mut AdamState) -> bool {
        if val < self.best_val {
            self.best_val = val;
            self.best_params = params.to_vec();
            self.stalled_lr = 0;
            self.stalled_stop = 0;
            return false;
        }
        self.stalled_lr += 1;
        self.stalled_stop += 1;
        if self.stalled_lr >= cfg.lr_patience {
            self.lr /= cfg.lr_decay_factor;
            adam.set_lr(self.lr);
            self.stalled_lr = 0;
        }
        self.stalled_stop >= cfg.early_stop_patience
    }
}

fn shuffled(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order = indices.to_vec();
    let mut rng = seeds::derive(seed, "shuffle", epoch as u64);
    order.shuffle(&mut rng);
    order
}

fn accumulate_grads(tape: &Tape, vars: &[Var], grads: &mut [Tensor]) {
    for (g, &v) in grads.iter_mut().zip(vars) {
        g.add_assign(&tape.grad(v));
    }
}

fn layer_vars_flat(layer_vars: &[LayerVars]) -> Vec<Var> {
    layer_vars
        .iter()
        .flat_map(|lv| [lv.conv1_w, lv.conv1_b, lv.conv2_w, lv.conv2_b])
        .collect()
}

// ---- stage 1: conv filters with random beams ---------------------------------

/// Validation loss of the current network under fixed per-sample random
/// beams and noise.
fn validate_random_beams(
    net: &NetworkParams,
    samples: &[TrainSample],
    val_idx: &[usize],
    sys: &SystemConfig,
    seed: u64,
) -> Result<f64> {
    let grid = make_angular_grid(sys.grid);
    let scale = loss_scale(sys);
    let mut total = 0.0;
    for &si in val_idx {
        let real = &samples[si].blocks[0];
        let mut beam_rng = seeds::derive(seed, "val-beams", si as u64);
        let setup = MeasurementSetup::random(sys, &grid, &mut beam_rng)?;
        let mut noise_rng = seeds::derive(seed, "val-noise", si as u64);
        let y = measure(real, &setup, sys.noise_var, &mut noise_rng);
        let out = forward(&y, &setup, sys, net, None)?;
        let mut acc = 0.0;
        for (hk, ek) in real.h.iter().zip(&out.h_hat) {
            acc += hk.sub(ek).frob_norm().powi(2);
        }
        total += acc * scale;
    }
    Ok(total / val_idx.len() as f64)
}

/// Stage 1: trains the conv filters with freshly drawn random `W`, `F`
/// per sample per epoch.
pub fn train_stage1(
    net: &mut NetworkParams,
    samples: &[TrainSample],
    sys: &SystemConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StageReport> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty training dataset".into()));
    }
    let (train_idx, val_idx, _) = split_indices(samples.len());
    let grid = make_angular_grid(sys.grid);
    let scale = loss_scale(sys);
    let mut params = conv_tensors(net);
    let mut adam = AdamState::new(cfg.lr_stage12, &params);
    let mut control = EpochControl::new(cfg.lr_stage12, &params);
    let mut report = StageReport::default();

    for epoch in 0..cfg.max_epochs {
        let order = shuffled(&train_idx, seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut grads: Vec<Tensor> =
                params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &si in batch {
                let real = &samples[si].blocks[0];
                let draw = (epoch * samples.len() + si) as u64;
                let mut beam_rng = seeds::derive(seed, "s1-beams", draw);
                let setup = MeasurementSetup::random(sys, &grid, &mut beam_rng)?;
                let mut noise_rng = seeds::derive(seed, "s1-noise", draw);
                let y = measure(real, &setup, sys.noise_var, &mut noise_rng);

                let tape = Tape::new();
                set_conv_tensors(net, &params);
                let layer_vars: Vec<LayerVars> = net
                    .layers
                    .iter()
                    .map(|l| load_layer(&tape, l, true))
                    .collect();
                let loss = build_fixed_measurement_loss(
                    &tape, sys, &grid, &layer_vars, &setup, &y, &real.h, None,
                )?;
                let scaled = tape.scale(loss, scale / batch.len() as f64);
                tape.backward(scaled)?;
                epoch_loss += tape.value(scaled).data()[0] * batch.len() as f64;
                accumulate_grads(&tape, &layer_vars_flat(&layer_vars), &mut grads);
            }
            adam_step(&mut params, &grads, &mut adam);
        }
        set_conv_tensors(net, &params);
        report.train_loss.push(epoch_loss / train_idx.len() as f64);
        let val = validate_random_beams(net, samples, &val_idx, sys, seed)?;
        report.val_loss.push(val);
        if control.observe(cfg, val, &params, &mut adam) {
            break;
        }
    }
    set_conv_tensors(net, &control.best_params);
    Ok(report)
}

fn build_fixed_measurement_loss(
    tape: &Tape,
    sys: &SystemConfig,
    grid: &[f64],
    layer_vars: &[LayerVars],
    setup: &MeasurementSetup,
    y: &ReceivedSignal,
    h_true: &[CMat],
    f4: Option<Var>,
) -> Result<Var> {
    let phi_v = tape.cinput(&setup.phi);
    let r_v = tape.cinput(&setup.noise_cov);
    let y_cols: Vec<CVar> = (0..y.y.cols())
        .map(|k| tape.cinput(&CMat::from_vec(y.y.rows(), 1, y.y.column(k))))
        .collect();
    let fwd = forward_graph(tape, sys, grid, &y_cols, phi_v, r_v, layer_vars, f4)?;
    Ok(sample_loss_graph(tape, h_true, &fwd.h_hat))
}

// ---- stages 2 and 3: learned phases ------------------------------------------

fn validate_learned_beams(
    net: &NetworkParams,
    samples: &[TrainSample],
    val_idx: &[usize],
    sys: &SystemConfig,
    seed: u64,
) -> Result<f64> {
    let grid = make_angular_grid(sys.grid);
    let scale = loss_scale(sys);
    let setup = MeasurementSetup::from_phases(sys, &net.phases, &grid)?;
    let mut total = 0.0;
    for &si in val_idx {
        let real = &samples[si].blocks[0];
        let mut noise_rng = seeds::derive(seed, "val-noise", si as u64);
        let y = measure(real, &setup, sys.noise_var, &mut noise_rng);
        let out = forward(&y, &setup, sys, net, None)?;
        let mut acc = 0.0;
        for (hk, ek) in real.h.iter().zip(&out.h_hat) {
            acc += hk.sub(ek).frob_norm().powi(2);
        }
        total += acc * scale;
    }
    Ok(total / val_idx.len() as f64)
}

fn raw_noise_draw(sys: &SystemConfig, seed: u64, label: &str, index: u64) -> Vec<CMat> {
    let groups = sys.m_rx / sys.n_rf_rx;
    let sigma = sys.noise_var.sqrt();
    let mut rng = seeds::derive(seed, label, index);
    (0..sys.n_sc)
        .map(|_| {
            CMat::from_fn(sys.n_rx, sys.m_tx * groups, |_, _| {
                complex_gaussian(&mut rng) * sigma
            })
        })
        .collect()
}

/// Stages 2 and 3 share this loop: the measurement is regenerated on the
/// tape from the stored channel so gradients flow into the beam phases
/// (including through the effective noise covariance and the combining of
/// the raw noise). `train_convs` distinguishes stage 3 from stage 2.
fn train_phase_stage(
    net: &mut NetworkParams,
    samples: &[TrainSample],
    sys: &SystemConfig,
    cfg: &TrainConfig,
    seed: u64,
    lr: f64,
    train_convs: bool,
    label: &str,
) -> Result<StageReport> {
    let (train_idx, val_idx, _) = split_indices(samples.len());
    let grid = make_angular_grid(sys.grid);
    let scale = loss_scale(sys);
    // Angular-domain channels are fixed inputs; precompute them.
    let x_cols: Vec<Vec<Vec<Complex64>>> = samples
        .iter()
        .map(|s| {
            let x = to_angular(&s.blocks[0], &grid)?;
            Ok((0..sys.n_sc).map(|k| x.col(k)).collect())
        })
        .collect::<Result<_>>()?;

    let mut params = phase_tensors(&net.phases);
    if train_convs {
        params.extend(conv_tensors(net));
    }
    let mut adam = AdamState::new(lr, &params);
    let mut control = EpochControl::new(lr, &params);
    let mut report = StageReport::default();

    for epoch in 0..cfg.max_epochs {
        let order = shuffled(&train_idx, seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut grads: Vec<Tensor> =
                params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &si in batch {
                let real = &samples[si].blocks[0];
                let draw = (epoch * samples.len() + si) as u64;
                let raw = raw_noise_draw(sys, seed, label, draw);

                let tape = Tape::new();
                let w_phase = tape.param(params[0].clone());
                let f_phase = tape.param(params[1].clone());
                set_phase_tensors(&mut net.phases, &params[0..2]);
                if train_convs {
                    set_conv_tensors(net, &params[2..]);
                }
                let layer_vars: Vec<LayerVars> = net
                    .layers
                    .iter()
                    .map(|l| load_layer(&tape, l, train_convs))
                    .collect();
                let (phi, w, _) = phi_graph(&tape, w_phase, f_phase, &grid);
                let r = noise_cov_graph(&tape, w, sys.noise_var, sys.m_tx, sys.n_rf_rx);
                let y_cols = measure_graph(
                    &tape,
                    phi,
                    w,
                    &x_cols[si],
                    &raw,
                    sys.m_tx,
                    sys.n_rf_rx,
                )?;
                let fwd = forward_graph(&tape, sys, &grid, &y_cols, phi, r, &layer_vars, None)?;
                let loss = sample_loss_graph(&tape, &real.h, &fwd.h_hat);
                let scaled = tape.scale(loss, scale / batch.len() as f64);
                tape.backward(scaled)?;
                epoch_loss += tape.value(scaled).data()[0] * batch.len() as f64;
                let mut vars = vec![w_phase, f_phase];
                if train_convs {
                    vars.extend(layer_vars_flat(&layer_vars));
                }
                accumulate_grads(&tape, &vars, &mut grads);
            }
            adam_step(&mut params, &grads, &mut adam);
        }
        set_phase_tensors(&mut net.phases, &params[0..2]);
        if train_convs {
            set_conv_tensors(net, &params[2..]);
        }
        report.train_loss.push(epoch_loss / train_idx.len() as f64);
        let val = validate_learned_beams(net, samples, &val_idx, sys, seed)?;
        report.val_loss.push(val);
        if control.observe(cfg, val, &params, &mut adam) {
            break;
        }
    }
    set_phase_tensors(&mut net.phases, &control.best_params[0..2]);
    if train_convs {
        set_conv_tensors(net, &control.best_params[2..]);
    }
    Ok(report)
}

/// Stage 2: frozen filters, trainable measurement phases.
pub fn train_stage2(
    net: &mut NetworkParams,
    samples: &[TrainSample],
    sys: &SystemConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StageReport> {
    // Fresh random phase initialization for the learned matrix.
    let mut rng = seeds::derive(seed, "s2-init", 0);
    net.phases = BeamPhases::random(sys, &mut rng);
    train_phase_stage(net, samples, sys, cfg, seed, cfg.lr_stage12, false, "s2-noise")
}

/// Stage 3: joint fine-tuning of filters and phases at the small rate.
pub fn train_stage3(
    net: &mut NetworkParams,
    samples: &[TrainSample],
    sys: &SystemConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StageReport> {
    train_phase_stage(net, samples, sys, cfg, seed, cfg.lr_stage3, true, "s3-noise")
}

/// The full three-stage single-block pipeline.
pub fn train_single_block(
    samples: &[TrainSample],
    sys: &SystemConfig,
    arch: super::ArchConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(NetworkParams, TrainReport)> {
    let mut init_rng = seeds::derive(seed, "init", 0);
    let mut net = NetworkParams::init(sys, arch, &mut init_rng);
    let mut report = TrainReport::default();
    report.stages.push(train_stage1(&mut net, samples, sys, cfg, seed)?);
    report.stages.push(train_stage2(&mut net, samples, sys, cfg, seed)?);
    report.stages.push(train_stage3(&mut net, samples, sys, cfg, seed)?);
    Ok((net, report))
}

// ---- multi-block training -----------------------------------------------------

/// Precomputed per-sample context for multi-block training: the previous
/// block's estimate (time features) and the current block's targets.
struct BlockPair {
    f4: Tensor,
    x2_cols: Vec<Vec<Complex64>>,
    h2: Vec<CMat>,
}

fn prepare_block_pairs(
    net: &NetworkParams,
    samples: &[TrainSample],
    sys: &SystemConfig,
    seed: u64,
) -> Result<Vec<BlockPair>> {
    let grid = make_angular_grid(sys.grid);
    let setup = MeasurementSetup::from_phases(sys, &net.phases, &grid)?;
    samples
        .iter()
        .enumerate()
        .map(|(si, sample)| {
            assert!(
                sample.blocks.len() >= 2,
                "multi-block training needs two-block samples"
            );
            let prev = &sample.blocks[0];
            let cur = &sample.blocks[1];
            let mut noise_rng = seeds::derive(seed, "mb-prev-noise", si as u64);
            let y1 = measure(prev, &setup, sys.noise_var, &mut noise_rng);
            // Zero time features: at initialization this is exactly the
            // single-block network.
            let zero_f4 = Tensor::zeros(&[sys.grid, sys.grid, sys.n_sc, 1]);
            let est = forward(&y1, &setup, sys, net, Some(&zero_f4))?;
            let f4 = time_features(&est.x_hat);
            let x2 = to_angular(cur, &grid)?;
            Ok(BlockPair {
                f4,
                x2_cols: (0..sys.n_sc).map(|k| x2.col(k)).collect(),
                h2: cur.h.clone(),
            })
        })
        .collect()
}

fn validate_multi_block(
    net: &NetworkParams,
    pairs: &[BlockPair],
    val_idx: &[usize],
    sys: &SystemConfig,
    seed: u64,
    predicted_w: bool,
) -> Result<f64> {
    let grid = make_angular_grid(sys.grid);
    let scale = loss_scale(sys);
    let base_setup = MeasurementSetup::from_phases(sys, &net.phases, &grid)?;
    let mut total = 0.0;
    for &si in val_idx {
        let pair = &pairs[si];
        let setup = if predicted_w {
            let comb = net.combiner.as_ref().expect("combiner head missing");
            let (w_phase, _) = super::predict_combiner(&pair.f4, comb, sys.n_rx, sys.m_rx);
            let phases = BeamPhases {
                w_phase,
                f_phase: net.phases.f_phase.clone(),
            };
            MeasurementSetup::from_phases(sys, &phases, &grid)?
        } else {
            base_setup.clone()
        };
        let mut noise_rng = seeds::derive(seed, "mb-val-noise", si as u64);
        let h2_real = ChannelRealization {
            params: crate::channel::PathParams {
                gains: vec![],
                aoa_rad: vec![],
                aod_rad: vec![],
                delays_s: vec![],
                cluster_means: vec![],
                n_clusters: 0,
                n_subpaths: 0,
            },
            h: pair.h2.clone(),
            squint_enabled: true,
        };
        let y2 = measure(&h2_real, &setup, sys.noise_var, &mut noise_rng);
        let out = forward(&y2, &setup, sys, net, Some(&pair.f4))?;
        let mut acc = 0.0;
        for (hk, ek) in pair.h2.iter().zip(&out.h_hat) {
            acc += hk.sub(ek).frob_norm().powi(2);
        }
        total += acc * scale;
    }
    Ok(total / val_idx.len() as f64)
}

/// Multi-block phase A: trains the (time-feature-aware) conv filters on
/// two-block sequences with the fixed learned measurement matrix.
fn train_multi_stage_convs(
    net: &mut NetworkParams,
    pairs: &[BlockPair],
    sys: &SystemConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StageReport> {
    let (train_idx, val_idx, _) = split_indices(pairs.len());
    let grid = make_angular_grid(sys.grid);
    let scale = loss_scale(sys);
    let setup = MeasurementSetup::from_phases(sys, &net.phases, &grid)?;
    let mut params = conv_tensors(net);
    let mut adam = AdamState::new(cfg.lr_stage12, &params);
    let mut control = EpochControl::new(cfg.lr_stage12, &params);
    let mut report = StageReport::default();

    for epoch in 0..cfg.max_epochs {
        let order = shuffled(&train_idx, seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut grads: Vec<Tensor> =
                params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &si in batch {
                let pair = &pairs[si];
                let draw = (epoch * pairs.len() + si) as u64;
                let mut noise_rng = seeds::derive(seed, "mbA-noise", draw);
                let h2_real = ChannelRealization {
                    params: crate::channel::PathParams {
                        gains: vec![],
                        aoa_rad: vec![],
                        aod_rad: vec![],
                        delays_s: vec![],
                        cluster_means: vec![],
                        n_clusters: 0,
                        n_subpaths: 0,
                    },
                    h: pair.h2.clone(),
                    squint_enabled: true,
                };
                let y2 = measure(&h2_real, &setup, sys.noise_var, &mut noise_rng);

                let tape = Tape::new();
                set_conv_tensors(net, &params);
                let layer_vars: Vec<LayerVars> = net
                    .layers
                    .iter()
                    .map(|l| load_layer(&tape, l, true))
                    .collect();
                let f4_v = tape.input(pair.f4.clone());
                let loss = build_fixed_measurement_loss(
                    &tape,
                    sys,
                    &grid,
                    &layer_vars,
                    &setup,
                    &y2,
                    &pair.h2,
                    Some(f4_v),
                )?;
                let scaled = tape.scale(loss, scale / batch.len() as f64);
                tape.backward(scaled)?;
                epoch_loss += tape.value(scaled).data()[0] * batch.len() as f64;
                accumulate_grads(&tape, &layer_vars_flat(&layer_vars), &mut grads);
            }
            adam_step(&mut params, &grads, &mut adam);
        }
        set_conv_tensors(net, &params);
        report.train_loss.push(epoch_loss / train_idx.len() as f64);
        let val = validate_multi_block(net, pairs, &val_idx, sys, seed, false)?;
        report.val_loss.push(val);
        if control.observe(cfg, val, &params, &mut adam) {
            break;
        }
    }
    set_conv_tensors(net, &control.best_params);
    Ok(report)
}

/// Multi-block phases B and C: the combiner predictor (frozen filters),
/// then joint fine-tuning.
fn train_multi_stage_combiner(
    net: &mut NetworkParams,
    pairs: &[BlockPair],
    sys: &SystemConfig,
    cfg: &TrainConfig,
    seed: u64,
    lr: f64,
    train_convs: bool,
    label: &str,
) -> Result<StageReport> {
    let (train_idx, val_idx, _) = split_indices(pairs.len());
    let grid = make_angular_grid(sys.grid);
    let scale = loss_scale(sys);
    // F is fixed in multi-block mode; precompute its factor of Φ.
    let (_, f_mat) = crate::measurement::phases_to_beams(&net.phases);
    let a_t_conj = crate::channel::dictionary(sys.n_tx, &grid).conj();
    let left_const = f_mat.transpose().mul(&a_t_conj);
    let a_r = crate::channel::dictionary(sys.n_rx, &grid);

    let mut params = combiner_tensors(net);
    if train_convs {
        params.extend(conv_tensors(net));
    }
    let mut adam = AdamState::new(lr, &params);
    let mut control = EpochControl::new(lr, &params);
    let mut report = StageReport::default();

    for epoch in 0..cfg.max_epochs {
        let order = shuffled(&train_idx, seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut grads: Vec<Tensor> =
                params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &si in batch {
                let pair = &pairs[si];
                let draw = (epoch * pairs.len() + si) as u64;
                let raw = raw_noise_draw(sys, seed, label, draw);

                let tape = Tape::new();
                set_combiner_tensors(net, &params[0..4]);
                if train_convs {
                    set_conv_tensors(net, &params[4..]);
                }
                let comb_vars = CombinerVars {
                    fc1_w: tape.param(params[0].clone()),
                    fc1_b: tape.param(params[1].clone()),
                    fc2_w: tape.param(params[2].clone()),
                    fc2_b: tape.param(params[3].clone()),
                };
                let layer_vars: Vec<LayerVars> = net
                    .layers
                    .iter()
                    .map(|l| load_layer(&tape, l, train_convs))
                    .collect();
                let f4_v = tape.input(pair.f4.clone());
                let (w, _) = combiner_graph(&tape, f4_v, &comb_vars, sys.n_rx, sys.m_rx);
                let left = tape.cinput(&left_const);
                let right = tape.cmatmul(tape.cconj_t(w), tape.cinput(&a_r));
                let phi = tape.ckron(left, right);
                let r = noise_cov_graph(&tape, w, sys.noise_var, sys.m_tx, sys.n_rf_rx);
                let y_cols = measure_graph(
                    &tape,
                    phi,
                    w,
                    &pair.x2_cols,
                    &raw,
                    sys.m_tx,
                    sys.n_rf_rx,
                )?;
                let fwd = forward_graph(
                    &tape,
                    sys,
                    &grid,
                    &y_cols,
                    phi,
                    r,
                    &layer_vars,
                    Some(f4_v),
                )?;
                let loss = sample_loss_graph(&tape, &pair.h2, &fwd.h_hat);
                let scaled = tape.scale(loss, scale / batch.len() as f64);
                tape.backward(scaled)?;
                epoch_loss += tape.value(scaled).data()[0] * batch.len() as f64;
                let mut vars = vec![
                    comb_vars.fc1_w,
                    comb_vars.fc1_b,
                    comb_vars.fc2_w,
                    comb_vars.fc2_b,
                ];
                if train_convs {
                    vars.extend(layer_vars_flat(&layer_vars));
                }
                accumulate_grads(&tape, &vars, &mut grads);
            }
            adam_step(&mut params, &grads, &mut adam);
        }
        set_combiner_tensors(net, &params[0..4]);
        if train_convs {
            set_conv_tensors(net, &params[4..]);
        }
        report.train_loss.push(epoch_loss / train_idx.len() as f64);
        let val = validate_multi_block(net, pairs, &val_idx, sys, seed, true)?;
        report.val_loss.push(val);
        if control.observe(cfg, val, &params, &mut adam) {
            break;
        }
    }
    set_combiner_tensors(net, &control.best_params[0..4]);
    if train_convs {
        set_conv_tensors(net, &control.best_params[4..]);
    }
    Ok(report)
}

/// Full multi-block pipeline, warm-started from a trained single-block
/// model: conv filters first (time-feature slices start at zero), then the
/// combiner predictor with frozen filters, then joint fine-tuning.
pub fn train_multi_block(
    samples: &[TrainSample],
    sys: &SystemConfig,
    single: &NetworkParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(NetworkParams, TrainReport)> {
    let mut net = single.to_multi_block();
    let pairs = prepare_block_pairs(&net, samples, sys, seed)?;
    let mut report = TrainReport::default();
    report
        .stages
        .push(train_multi_stage_convs(&mut net, &pairs, sys, cfg, seed)?);
    let mut comb_rng = seeds::derive(seed, "combiner-init", 0);
    net = net.with_combiner(sys, &mut comb_rng);
    report.stages.push(train_multi_stage_combiner(
        &mut net, &pairs, sys, cfg, seed, cfg.lr_stage12, false, "mbB-noise",
    )?);
    report.stages.push(train_multi_stage_combiner(
        &mut net, &pairs, sys, cfg, seed, cfg.lr_stage3, true, "mbC-noise",
    )?);
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{evolve, sample_channel, ChannelConfig, TemporalConfig};
    use crate::sblnet::ArchConfig;

    fn tiny_sys() -> SystemConfig {
        SystemConfig {
            n_tx: 8,
            n_rx: 8,
            n_rf_rx: 2,
            n_rf_tx: 1,
            m_tx: 4,
            m_rx: 4,
            grid: 8,
            n_sc: 2,
            carrier_hz: 28e9,
            bandwidth_hz: 4e9,
            noise_var: 0.01,
        }
    }

    fn make_samples(sys: &SystemConfig, n: usize, seed: u64, blocks: usize) -> Vec<TrainSample> {
        let chan = ChannelConfig {
            n_clusters: 2,
            n_subpaths: 3,
            ..Default::default()
        };
        let temporal = TemporalConfig::from_rho(0.9);
        (0..n)
            .map(|i| {
                let mut rng = seeds::derive(seed, "dataset", i as u64);
                let mut chain = vec![sample_channel(sys, &chan, &mut rng)];
                for _ in 1..blocks {
                    let next = evolve(chain.last().unwrap(), sys, &temporal, &mut rng);
                    chain.push(next);
                }
                TrainSample { blocks: chain }
            })
            .collect()
    }

    #[test]
    fn stage1_loss_decreases_on_one_sample() {
        let sys = tiny_sys();
        let samples = make_samples(&sys, 1, 7, 1);
        let cfg = TrainConfig {
            batch: 1,
            lr_stage12: 1e-3,
            max_epochs: 21,
            early_stop_patience: 100,
            lr_patience: 100,
            ..Default::default()
        };
        let mut rng = seeds::derive(7, "init", 0);
        let mut net = NetworkParams::init(&sys, ArchConfig::tiny(), &mut rng);
        let report = train_stage1(&mut net, &samples, &sys, &cfg, 7).unwrap();
        assert!(report.train_loss.len() >= 21);
        assert!(
            report.train_loss[20] < report.train_loss[0],
            "loss did not decrease: {} -> {}",
            report.train_loss[0],
            report.train_loss[20]
        );
    }

    #[test]
    fn stage2_freezes_conv_filters() {
        let sys = tiny_sys();
        let samples = make_samples(&sys, 2, 9, 1);
        let cfg = TrainConfig {
            batch: 2,
            max_epochs: 2,
            ..Default::default()
        };
        let mut rng = seeds::derive(9, "init", 0);
        let mut net = NetworkParams::init(&sys, ArchConfig::tiny(), &mut rng);
        let conv_before = conv_tensors(&net);
        let phases_before = net.phases.clone();
        train_stage2(&mut net, &samples, &sys, &cfg, 9).unwrap();
        // Conv parameters bit-unchanged; phases moved.
        assert_eq!(conv_tensors(&net), conv_before);
        assert_ne!(net.phases, phases_before);
    }

    #[test]
    fn multi_block_pipeline_runs_and_keeps_modulus() {
        let sys = tiny_sys();
        let samples = make_samples(&sys, 2, 11, 2);
        let cfg = TrainConfig {
            batch: 2,
            max_epochs: 1,
            ..Default::default()
        };
        let mut rng = seeds::derive(11, "init", 0);
        let single = NetworkParams::init(&sys, ArchConfig::tiny(), &mut rng);
        let (net, report) = train_multi_block(&samples, &sys, &single, &cfg, 11).unwrap();
        assert_eq!(report.stages.len(), 3);
        assert!(net.combiner.is_some());
        // Predicted combiner still constant-modulus after training.
        let pairs = prepare_block_pairs(&net, &samples, &sys, 11).unwrap();
        let (_, w) = crate::sblnet::predict_combiner(
            &pairs[0].f4,
            net.combiner.as_ref().unwrap(),
            sys.n_rx,
            sys.m_rx,
        );
        let expect = 1.0 / (sys.n_rx as f64).sqrt();
        for z in w.data() {
            assert!((z.norm() - expect).abs() < 4.0 * f64::EPSILON);
        }
    }
}
