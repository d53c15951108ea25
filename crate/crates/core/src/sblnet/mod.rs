//! The deep-unfolded estimator: a cascade of SBL layers whose variance
//! update is a small 3D conv net, trainable measurement-matrix phases, and
//! the multi-block extension with time features and an adaptive combiner
//! predictor.
//!
//! Each SBL layer runs the exact posterior E-step, reshapes the posterior
//! features onto the `(AoA, AoD, subcarrier)` grid, stacks position (and
//! optionally time) features, and maps them through
//! conv3d -> ReLU -> conv3d -> ReLU to the next variance matrix. Circular
//! padding on the angular axes follows the wrap-around of the sine grid;
//! the subcarrier axis is zero-padded. After the last layer the posterior
//! mean under the final variances is the channel estimate.
//!
//! Two execution paths share the same kernels: a plain evaluation path
//! ([`forward`]) and a tape path ([`graph`]) used for training and
//! gradient checks.

pub mod graph;
pub mod train;

use num_complex::Complex64;
use rand::Rng;

use crate::autodiff::conv3d::{conv3d_forward, ANGULAR_CIRCULAR};
use crate::autodiff::{xavier_init, Tensor};
use crate::channel::{from_angular, make_angular_grid, AngularChannel, SystemConfig};
use crate::cmat::CMat;
use crate::measurement::{BeamPhases, MeasurementSetup, ReceivedSignal};
use crate::sbl::SblState;
use crate::Result;

/// One training sample: a single channel block, or a short block sequence
/// in multi-block mode (the first block provides the time features, the
/// last is the estimation target).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub blocks: Vec<crate::channel::ChannelRealization>,
}

/// Network depth and filter geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Number of unfolded SBL layers (L).
    pub layers: usize,
    /// Filters in the first conv of each layer (N_F).
    pub n_filters: usize,
    /// Cubic filter size (F_S), odd.
    pub filter_size: usize,
    /// Multi-block mode adds the time-feature input channel.
    pub multi_block: bool,
}

impl ArchConfig {
    /// The configuration used at paper scale: L = 3, N_F = 8, F_S = 5.
    pub fn full() -> Self {
        Self {
            layers: 3,
            n_filters: 8,
            filter_size: 5,
            multi_block: false,
        }
    }

    /// A tiny configuration for gradient checks and smoke training.
    pub fn tiny() -> Self {
        Self {
            layers: 2,
            n_filters: 2,
            filter_size: 3,
            multi_block: false,
        }
    }

    /// Input channels of each layer's conv: F1, F2, two position channels,
    /// plus the time feature in multi-block mode.
    pub fn c_in(&self) -> usize {
        if self.multi_block {
            5
        } else {
            4
        }
    }
}

/// Conv filter banks of one SBL layer. Parameters are independent across
/// layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SblLayerParams {
    /// `(F, F, F, C_in, N_F)`.
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    /// `(F, F, F, N_F, 1)`.
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
}

/// The combiner-predictor head used in multi-block mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerParams {
    /// `(G, n_rx * m_rx / 2)`.
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    /// `(n_rx * m_rx / 2, n_rx * m_rx)`.
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

/// All trainable state of the unfolded estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    pub layers: Vec<SblLayerParams>,
    /// Measurement-matrix phases (trained in stages 2-3).
    pub phases: BeamPhases,
    /// Present in multi-block mode once the predictor head is attached.
    pub combiner: Option<CombinerParams>,
}

impl NetworkParams {
    /// Xavier conv filters, zero biases, uniform random phases.
    pub fn init(sys: &SystemConfig, arch: ArchConfig, rng: &mut impl Rng) -> Self {
        let f = arch.filter_size;
        let layers = (0..arch.layers)
            .map(|_| SblLayerParams {
                conv1_w: xavier_init(&[f, f, f, arch.c_in(), arch.n_filters], rng),
                conv1_b: Tensor::zeros(&[arch.n_filters]),
                conv2_w: xavier_init(&[f, f, f, arch.n_filters, 1], rng),
                conv2_b: Tensor::zeros(&[1]),
            })
            .collect();
        Self {
            arch,
            layers,
            phases: BeamPhases::random(sys, rng),
            combiner: None,
        }
    }

    /// Filters hand-set so every layer copies `F1 + F2` through the center
    /// taps: the network then reproduces the plain SBL variance update
    /// exactly. Needs `n_filters >= 2`.
    pub fn sbl_copying(sys: &SystemConfig, arch: ArchConfig, rng: &mut impl Rng) -> Self {
        assert!(arch.n_filters >= 2, "copying construction needs N_F >= 2");
        let f = arch.filter_size;
        let c = f / 2;
        let layers = (0..arch.layers)
            .map(|_| {
                let mut conv1_w = Tensor::zeros(&[f, f, f, arch.c_in(), arch.n_filters]);
                conv1_w.set(&[c, c, c, 0, 0], 1.0); // filter 0 picks F1
                conv1_w.set(&[c, c, c, 1, 1], 1.0); // filter 1 picks F2
                let mut conv2_w = Tensor::zeros(&[f, f, f, arch.n_filters, 1]);
                conv2_w.set(&[c, c, c, 0, 0], 1.0);
                conv2_w.set(&[c, c, c, 1, 0], 1.0);
                SblLayerParams {
                    conv1_w,
                    conv1_b: Tensor::zeros(&[arch.n_filters]),
                    conv2_w,
                    conv2_b: Tensor::zeros(&[1]),
                }
            })
            .collect();
        Self {
            arch,
            layers,
            phases: BeamPhases::random(sys, rng),
            combiner: None,
        }
    }

    /// Converts a single-block network for multi-block use: filter slices
    /// reading the new time-feature channel start at zero, everything else
    /// is copied, so the initial multi-block network computes exactly what
    /// the single-block one did.
    pub fn to_multi_block(&self) -> Self {
        assert!(!self.arch.multi_block, "already a multi-block network");
        let arch = ArchConfig {
            multi_block: true,
            ..self.arch
        };
        let f = arch.filter_size;
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let mut conv1_w = Tensor::zeros(&[f, f, f, arch.c_in(), arch.n_filters]);
                for a in 0..f {
                    for b in 0..f {
                        for k in 0..f {
                            for ci in 0..self.arch.c_in() {
                                for co in 0..arch.n_filters {
                                    conv1_w.set(
                                        &[a, b, k, ci, co],
                                        layer.conv1_w.at(&[a, b, k, ci, co]),
                                    );
                                }
                            }
                        }
                    }
                }
                SblLayerParams {
                    conv1_w,
                    conv1_b: layer.conv1_b.clone(),
                    conv2_w: layer.conv2_w.clone(),
                    conv2_b: layer.conv2_b.clone(),
                }
            })
            .collect();
        Self {
            arch,
            layers,
            phases: self.phases.clone(),
            combiner: None,
        }
    }

    /// Attaches a Xavier-initialized combiner-predictor head.
    pub fn with_combiner(mut self, sys: &SystemConfig, rng: &mut impl Rng) -> Self {
        let hidden = sys.n_rx * sys.m_rx / 2;
        let out = sys.n_rx * sys.m_rx;
        self.combiner = Some(CombinerParams {
            fc1_w: xavier_init(&[sys.grid, hidden], rng),
            fc1_b: Tensor::zeros(&[hidden]),
            fc2_w: xavier_init(&[hidden, out], rng),
            fc2_b: Tensor::zeros(&[out]),
        });
        self
    }
}

/// Position features `(G, G, K, 2)`: channel 0 carries the AoA grid sine
/// (varies along the first axis), channel 1 the AoD grid sine (second
/// axis); both are constant across subcarriers.
pub fn position_features(g: usize, n_sc: usize, grid: &[f64]) -> Tensor {
    assert_eq!(grid.len(), g);
    Tensor::from_fn(&[g, g, n_sc, 2], |ix| {
        if ix[3] == 0 {
            grid[ix[0]]
        } else {
            grid[ix[1]]
        }
    })
}

/// Time features for the multi-block network: the modulus of the previous
/// block's angular estimate, reshaped to `(G, G, K, 1)`.
pub fn time_features(x_prev: &AngularChannel) -> Tensor {
    let g = x_prev.grid();
    let k_total = x_prev.x.cols();
    Tensor::from_fn(&[g, g, k_total, 1], |ix| {
        x_prev.x[(ix[1] * g + ix[0], ix[2])].norm()
    })
}

/// Stacks F1, F2, position (and optional time) features into the conv
/// input tensor `(G, G, K, C)`. The per-subcarrier columns are in
/// column-major grid order (`g = AoD * G + AoA`).
pub fn assemble_features(
    f1: &[Vec<f64>],
    f2: &[Vec<f64>],
    f3: &Tensor,
    f4: Option<&Tensor>,
) -> Tensor {
    let k_total = f1.len();
    let g = (f1[0].len() as f64).sqrt().round() as usize;
    let c = if f4.is_some() { 5 } else { 4 };
    Tensor::from_fn(&[g, g, k_total, c], |ix| {
        let (i, j, k, ch) = (ix[0], ix[1], ix[2], ix[3]);
        match ch {
            0 => f1[k][j * g + i],
            1 => f2[k][j * g + i],
            2 | 3 => f3.at(&[i, j, k, ch - 2]),
            4 => f4.unwrap().at(&[i, j, k, 0]),
            _ => unreachable!(),
        }
    })
}

/// The conv stack of one layer: conv3d -> ReLU -> conv3d -> ReLU, circular
/// on the angular axes and zero-padded on the subcarrier axis. Returns the
/// `(G, G, K, 1)` nonnegative variance prediction.
pub fn layer_conv_stack(features: &Tensor, layer: &SblLayerParams) -> Tensor {
    let h = conv3d_forward(features, &layer.conv1_w, &layer.conv1_b, ANGULAR_CIRCULAR);
    let h = h.map(|v| v.max(0.0));
    let out = conv3d_forward(&h, &layer.conv2_w, &layer.conv2_b, ANGULAR_CIRCULAR);
    out.map(|v| v.max(0.0))
}

fn gamma_cols_from_tensor(out: &Tensor) -> Vec<Vec<f64>> {
    let (g, k_total) = (out.shape()[0], out.shape()[2]);
    (0..k_total)
        .map(|k| {
            let mut col = vec![0.0; g * g];
            for j in 0..g {
                for i in 0..g {
                    col[j * g + i] = out.at(&[i, j, k, 0]);
                }
            }
            col
        })
        .collect()
}

/// One unfolded SBL layer: E-step per subcarrier under the incoming
/// variances, then the conv net maps the posterior features to the next
/// variance matrix.
pub fn sbl_layer(
    y: &ReceivedSignal,
    setup: &MeasurementSetup,
    gamma_prev: &[Vec<f64>],
    layer: &SblLayerParams,
    f3: &Tensor,
    f4: Option<&Tensor>,
) -> Result<Vec<Vec<f64>>> {
    let state = SblState::from_e_step(gamma_prev, &setup.phi, &setup.noise_cov, &y.y, false)?;
    let features = assemble_features(&state.f1, &state.f2, f3, f4);
    let out = layer_conv_stack(&features, layer);
    Ok(gamma_cols_from_tensor(&out))
}

/// Output of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub x_hat: AngularChannel,
    pub h_hat: Vec<CMat>,
    /// Variance matrices after every layer.
    pub gamma_trace: Vec<Vec<Vec<f64>>>,
}

/// Runs the L-layer network from the all-one variance initialization and
/// evaluates the posterior mean under the final variances.
pub fn forward(
    y: &ReceivedSignal,
    setup: &MeasurementSetup,
    sys: &SystemConfig,
    net: &NetworkParams,
    f4: Option<&Tensor>,
) -> Result<ForwardOutput> {
    assert_eq!(
        net.arch.multi_block,
        f4.is_some(),
        "time features must be supplied exactly in multi-block mode"
    );
    let g = sys.grid;
    let g2 = g * g;
    let k_total = y.y.cols();
    let grid = make_angular_grid(g);
    let f3 = position_features(g, k_total, &grid);
    let mut gamma: Vec<Vec<f64>> = vec![vec![1.0; g2]; k_total];
    let mut trace = Vec::with_capacity(net.arch.layers);
    for layer in &net.layers {
        gamma = sbl_layer(y, setup, &gamma, layer, &f3, f4)?;
        trace.push(gamma.clone());
    }
    let state = SblState::from_e_step(&gamma, &setup.phi, &setup.noise_cov, &y.y, false)?;
    let mut x = CMat::zeros(g2, k_total);
    for (k, col) in state.mu.iter().enumerate() {
        for (row, &v) in col.iter().enumerate() {
            x[(row, k)] = v;
        }
    }
    let x_hat = AngularChannel { x };
    let h_hat = from_angular(&x_hat, &grid, sys.n_rx, sys.n_tx)?;
    Ok(ForwardOutput {
        x_hat,
        h_hat,
        gamma_trace: trace,
    })
}

/// Predicts the next block's combiner phases from the previous block's
/// time features: pool away AoD and subcarrier, two dense layers, sigmoid
/// scaled to `[0, 2π]`. Every induced entry has modulus `1/sqrt(n_rx)`.
pub fn predict_combiner(
    x_prev_mod: &Tensor,
    comb: &CombinerParams,
    n_rx: usize,
    m_rx: usize,
) -> (Vec<Vec<f64>>, CMat) {
    let g = x_prev_mod.shape()[0];
    assert_eq!(comb.fc1_w.shape()[0], g, "combiner head grid mismatch");
    // Global average over AoD, subcarrier, and the singleton channel axis.
    let k_total = x_prev_mod.shape()[2];
    let mut pooled = vec![0.0; g];
    for i in 0..g {
        let mut acc = 0.0;
        for j in 0..g {
            for k in 0..k_total {
                acc += x_prev_mod.at(&[i, j, k, 0]);
            }
        }
        pooled[i] = acc / (g * k_total) as f64;
    }
    let hidden = dense(&pooled, &comb.fc1_w, &comb.fc1_b).iter().map(|&v| v.max(0.0)).collect::<Vec<_>>();
    let logits = dense(&hidden, &comb.fc2_w, &comb.fc2_b);
    let phases: Vec<f64> = logits
        .iter()
        .map(|&v| std::f64::consts::TAU / (1.0 + (-v).exp()))
        .collect();
    let w_phase: Vec<Vec<f64>> = (0..n_rx)
        .map(|i| phases[i * m_rx..(i + 1) * m_rx].to_vec())
        .collect();
    let scale = 1.0 / (n_rx as f64).sqrt();
    let w = CMat::from_fn(n_rx, m_rx, |i, j| Complex64::from_polar(scale, w_phase[i][j]));
    (w_phase, w)
}

fn dense(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), n_in);
    let mut out = b.data().to_vec();
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &w.data()[i * n_out..(i + 1) * n_out];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xv * wv;
        }
    }
    out
}

/// Mini-batch MSE over real and imaginary parts:
/// `(1 / (S K N_T N_R)) Σ_s ||H_s - Ĥ_s||_F^2`.
pub fn loss_mse(h_true: &[Vec<CMat>], h_hat: &[Vec<CMat>]) -> f64 {
    assert_eq!(h_true.len(), h_hat.len());
    let s = h_true.len();
    let k = h_true[0].len();
    let (n_rx, n_tx) = (h_true[0][0].rows(), h_true[0][0].cols());
    let mut acc = 0.0;
    for (t, e) in h_true.iter().zip(h_hat) {
        for (tk, ek) in t.iter().zip(e) {
            acc += tk.sub(ek).frob_norm().powi(2);
        }
    }
    acc / (s * k * n_tx * n_rx) as f64
}
