//! Tape construction of the unfolded network for training and gradient
//! checks. Mirrors the evaluation path in [`super`] op for op; the two are
//! tested against each other.

use num_complex::Complex64;

use crate::autodiff::complex::CVar;
use crate::autodiff::conv3d::ANGULAR_CIRCULAR;
use crate::autodiff::{Tape, Tensor, Var};
use crate::channel::{dictionary, SystemConfig};
use crate::cmat::CMat;
use crate::Result;

use super::{CombinerParams, NetworkParams, SblLayerParams};

/// Tape handles of one layer's conv parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub conv1_w: Var,
    pub conv1_b: Var,
    pub conv2_w: Var,
    pub conv2_b: Var,
}

/// Tape handles of the combiner head.
#[derive(Debug, Clone, Copy)]
pub struct CombinerVars {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

pub fn load_layer(tape: &Tape, layer: &SblLayerParams, trainable: bool) -> LayerVars {
    let load = |t: &Tensor| {
        if trainable {
            tape.param(t.clone())
        } else {
            tape.input(t.clone())
        }
    };
    LayerVars {
        conv1_w: load(&layer.conv1_w),
        conv1_b: load(&layer.conv1_b),
        conv2_w: load(&layer.conv2_w),
        conv2_b: load(&layer.conv2_b),
    }
}

pub fn load_combiner(tape: &Tape, comb: &CombinerParams, trainable: bool) -> CombinerVars {
    let load = |t: &Tensor| {
        if trainable {
            tape.param(t.clone())
        } else {
            tape.input(t.clone())
        }
    };
    CombinerVars {
        fc1_w: load(&comb.fc1_w),
        fc1_b: load(&comb.fc1_b),
        fc2_w: load(&comb.fc2_w),
        fc2_b: load(&comb.fc2_b),
    }
}

/// One posterior E-step on the tape. `gamma` is a `[G^2]` vector node.
/// Returns the posterior mean pair `(G^2, 1)`, the posterior variance
/// diagonal `[G^2]`, and `f1 = |mu|^2` as `[G^2]`.
pub fn e_step_graph(
    tape: &Tape,
    gamma: Var,
    phi: CVar,
    noise_cov: CVar,
    y: CVar,
) -> Result<(CVar, Var, Var)> {
    let g2 = tape.shape(gamma)[0];
    let phi_rx = tape.cmul_bcast_row(phi, gamma);
    let s = tape.cadd(tape.cmatmul(phi_rx, tape.cconj_t(phi)), noise_cov);
    let z = tape.csolve(s, y)?;
    let phz = tape.cmatmul(tape.cconj_t(phi), z);
    let gamma_col = tape.reshape(gamma, &[g2, 1]);
    let mu = CVar {
        re: tape.mul(phz.re, gamma_col),
        im: tape.mul(phz.im, gamma_col),
    };
    // Posterior variance: ω = γ - γ^2 ⊙ diag(Φ^H S^{-1} Φ).
    let b = tape.csolve(s, phi)?;
    let quad2d = tape.add(tape.mul(phi.re, b.re), tape.mul(phi.im, b.im));
    let quad = tape.sum_axes(quad2d, &[true, false]);
    let omega = tape.sub(gamma, tape.mul(tape.mul(gamma, gamma), quad));
    let f1_col = tape.csqmod(mu);
    let f1 = tape.reshape(f1_col, &[g2]);
    Ok((mu, omega, f1))
}

/// Reorders a `[G^2]` column-major grid vector into a `(G, G, 1, 1)` tile
/// (AoA first axis).
fn grid_vec_to_tile(tape: &Tape, v: Var, g: usize) -> Var {
    let m = tape.reshape(v, &[g, g]); // (AoD, AoA) in row-major order
    let t = tape.transpose(m); // (AoA, AoD)
    tape.reshape(t, &[g, g, 1, 1])
}

/// Inverse of [`grid_vec_to_tile`] for one subcarrier slice.
fn tile_to_grid_vec(tape: &Tape, tile: Var, g: usize) -> Var {
    let m = tape.reshape(tile, &[g, g]);
    let t = tape.transpose(m);
    tape.reshape(t, &[g * g])
}

/// Stacks per-subcarrier `[G^2]` features into `(G, G, K, 1)`.
fn stack_feature(tape: &Tape, cols: &[Var], g: usize) -> Var {
    let tiles: Vec<Var> = cols.iter().map(|&c| grid_vec_to_tile(tape, c, g)).collect();
    tape.concat(&tiles, 2)
}

/// One unfolded layer on the tape: per-subcarrier E-steps, feature
/// assembly, then the two-conv stack. Returns the next `[G^2]` variance
/// vector per subcarrier.
#[allow(clippy::too_many_arguments)]
pub fn layer_graph(
    tape: &Tape,
    y_cols: &[CVar],
    phi: CVar,
    noise_cov: CVar,
    gamma_cols: &[Var],
    layer: &LayerVars,
    f3: Var,
    f4: Option<Var>,
) -> Result<Vec<Var>> {
    let g = tape.shape(f3)[0];
    let mut f1_cols = Vec::with_capacity(y_cols.len());
    let mut f2_cols = Vec::with_capacity(y_cols.len());
    for (k, &y) in y_cols.iter().enumerate() {
        let (_, omega, f1) = e_step_graph(tape, gamma_cols[k], phi, noise_cov, y)?;
        f1_cols.push(f1);
        f2_cols.push(omega);
    }
    let f1_t = stack_feature(tape, &f1_cols, g);
    let f2_t = stack_feature(tape, &f2_cols, g);
    let mut channels = vec![f1_t, f2_t, f3];
    if let Some(f4) = f4 {
        channels.push(f4);
    }
    let features = tape.concat(&channels, 3);
    let h = tape.relu(tape.conv3d(features, layer.conv1_w, layer.conv1_b, ANGULAR_CIRCULAR));
    let out = tape.relu(tape.conv3d(h, layer.conv2_w, layer.conv2_b, ANGULAR_CIRCULAR));
    let k_total = y_cols.len();
    Ok((0..k_total)
        .map(|k| {
            let tile = tape.slice(out, 2, k, 1);
            tile_to_grid_vec(tape, tile, g)
        })
        .collect())
}

/// Outputs of the tape forward pass.
pub struct GraphForward {
    /// Posterior means, one `(G^2, 1)` pair per subcarrier.
    pub mu: Vec<CVar>,
    /// Antenna-domain estimates, one `(N_R, N_T)` pair per subcarrier.
    pub h_hat: Vec<CVar>,
}

/// Full forward pass: L layers from the all-one initialization, then the
/// posterior mean under the final variances mapped back to the antenna
/// domain through the (constant) dictionaries.
#[allow(clippy::too_many_arguments)]
pub fn forward_graph(
    tape: &Tape,
    sys: &SystemConfig,
    grid: &[f64],
    y_cols: &[CVar],
    phi: CVar,
    noise_cov: CVar,
    layers: &[LayerVars],
    f4: Option<Var>,
) -> Result<GraphForward> {
    let g = sys.grid;
    let g2 = g * g;
    let k_total = y_cols.len();
    let f3 = tape.input(super::position_features(g, k_total, grid));
    let mut gamma_cols: Vec<Var> = (0..k_total)
        .map(|_| tape.input(Tensor::full(&[g2], 1.0)))
        .collect();
    for layer in layers {
        gamma_cols = layer_graph(tape, y_cols, phi, noise_cov, &gamma_cols, layer, f3, f4)?;
    }
    let a_r = tape.cinput(&dictionary(sys.n_rx, grid));
    let a_t_h = tape.cinput(&dictionary(sys.n_tx, grid).conj_t());
    let mut mu_out = Vec::with_capacity(k_total);
    let mut h_out = Vec::with_capacity(k_total);
    for (k, &y) in y_cols.iter().enumerate() {
        let (mu, _, _) = e_step_graph(tape, gamma_cols[k], phi, noise_cov, y)?;
        // vec^{-1}: (G^2, 1) -> (G, G) with AoA on the first axis.
        let x_mat = CVar {
            re: tape.transpose(tape.reshape(mu.re, &[g, g])),
            im: tape.transpose(tape.reshape(mu.im, &[g, g])),
        };
        let h = tape.cmatmul(tape.cmatmul(a_r, x_mat), a_t_h);
        mu_out.push(mu);
        h_out.push(h);
    }
    Ok(GraphForward {
        mu: mu_out,
        h_hat: h_out,
    })
}

/// Builds `W`, `F`, and `Φ = (F^T A_T^*) ⊗ (W^H A_R)` from phase nodes.
pub fn phi_graph(
    tape: &Tape,
    w_phase: Var,
    f_phase: Var,
    grid: &[f64],
) -> (CVar, CVar, CVar) {
    let n_rx = tape.shape(w_phase)[0];
    let n_tx = tape.shape(f_phase)[0];
    let w = tape.phase_to_complex(w_phase, n_rx);
    let f = tape.phase_to_complex(f_phase, n_tx);
    let a_r = tape.cinput(&dictionary(n_rx, grid));
    let a_t_conj = tape.cinput(&dictionary(n_tx, grid).conj());
    // F^T (plain transpose, no conjugation).
    let f_t = CVar {
        re: tape.transpose(f.re),
        im: tape.transpose(f.im),
    };
    let left = tape.cmatmul(f_t, a_t_conj);
    let right = tape.cmatmul(tape.cconj_t(w), a_r);
    let phi = tape.ckron(left, right);
    (phi, w, f)
}

/// Effective noise covariance on the tape:
/// `I_{m_tx} ⊗ Blkdiag(σ^2 W_q^H W_q)`.
pub fn noise_cov_graph(
    tape: &Tape,
    w: CVar,
    noise_var: f64,
    m_tx: usize,
    n_rf_rx: usize,
) -> CVar {
    let m_rx = tape.shape(w.re)[1];
    assert_eq!(m_rx % n_rf_rx, 0);
    let groups = m_rx / n_rf_rx;
    let mut block_rows_re = Vec::with_capacity(groups);
    let mut block_rows_im = Vec::with_capacity(groups);
    for q in 0..groups {
        let wq = CVar {
            re: tape.slice(w.re, 1, q * n_rf_rx, n_rf_rx),
            im: tape.slice(w.im, 1, q * n_rf_rx, n_rf_rx),
        };
        let gram = tape.cscale(tape.cmatmul(tape.cconj_t(wq), wq), noise_var);
        let left = q * n_rf_rx;
        let right = m_rx - left - n_rf_rx;
        let mut row_re = Vec::new();
        let mut row_im = Vec::new();
        if left > 0 {
            row_re.push(tape.input(Tensor::zeros(&[n_rf_rx, left])));
            row_im.push(tape.input(Tensor::zeros(&[n_rf_rx, left])));
        }
        row_re.push(gram.re);
        row_im.push(gram.im);
        if right > 0 {
            row_re.push(tape.input(Tensor::zeros(&[n_rf_rx, right])));
            row_im.push(tape.input(Tensor::zeros(&[n_rf_rx, right])));
        }
        block_rows_re.push(tape.concat(&row_re, 1));
        block_rows_im.push(tape.concat(&row_im, 1));
    }
    let block = CVar {
        re: tape.concat(&block_rows_re, 0),
        im: tape.concat(&block_rows_im, 0),
    };
    let eye = tape.cinput(&CMat::identity(m_tx));
    tape.ckron(eye, block)
}

/// Simulated measurement on the tape: `y^k = Φ x^k + ñ^k`, the effective
/// noise being the per-group combination of raw antenna noise (one
/// `(N_R, m_tx * groups)` constant matrix per subcarrier, columns indexed
/// `p * groups + q`).
pub fn measure_graph(
    tape: &Tape,
    phi: CVar,
    w: CVar,
    x_cols: &[Vec<Complex64>],
    raw_noise: &[CMat],
    m_tx: usize,
    n_rf_rx: usize,
) -> Result<Vec<CVar>> {
    let m_rx = tape.shape(w.re)[1];
    let groups = m_rx / n_rf_rx;
    let mut wq_h = Vec::with_capacity(groups);
    for q in 0..groups {
        let wq = CVar {
            re: tape.slice(w.re, 1, q * n_rf_rx, n_rf_rx),
            im: tape.slice(w.im, 1, q * n_rf_rx, n_rf_rx),
        };
        wq_h.push(tape.cconj_t(wq));
    }
    let mut y_cols = Vec::with_capacity(x_cols.len());
    for (k, x) in x_cols.iter().enumerate() {
        let x_node = tape.cinput(&CMat::col_vec(x));
        let signal = tape.cmatmul(phi, x_node);
        let mut parts = Vec::with_capacity(m_tx * groups);
        for p in 0..m_tx {
            for (q, wqh) in wq_h.iter().enumerate() {
                let n_pq = tape.cinput(&CMat::from_vec(
                    raw_noise[k].rows(),
                    1,
                    raw_noise[k].column(p * groups + q),
                ));
                parts.push(tape.cmatmul(*wqh, n_pq));
            }
        }
        let noise = CVar {
            re: tape.concat(&parts.iter().map(|c| c.re).collect::<Vec<_>>(), 0),
            im: tape.concat(&parts.iter().map(|c| c.im).collect::<Vec<_>>(), 0),
        };
        y_cols.push(tape.cadd(signal, noise));
    }
    Ok(y_cols)
}

/// Combiner prediction on the tape; returns the complex `W[n]` pair and
/// the phase node.
pub fn combiner_graph(
    tape: &Tape,
    f4: Var,
    comb: &CombinerVars,
    n_rx: usize,
    m_rx: usize,
) -> (CVar, Var) {
    let g = tape.shape(f4)[0];
    let pooled = tape.gap(f4, &[false, true, true, true]); // [G]
    let row = tape.reshape(pooled, &[1, g]);
    let hidden_dim = tape.shape(comb.fc1_w)[1];
    let h = tape.relu(tape.add(
        tape.matmul(row, comb.fc1_w),
        tape.reshape(comb.fc1_b, &[1, hidden_dim]),
    ));
    let out_dim = tape.shape(comb.fc2_w)[1];
    let logits = tape.add(
        tape.matmul(h, comb.fc2_w),
        tape.reshape(comb.fc2_b, &[1, out_dim]),
    );
    let phases = tape.scale(tape.sigmoid(logits), std::f64::consts::TAU);
    let w_phase = tape.reshape(phases, &[n_rx, m_rx]);
    let w = tape.phase_to_complex(w_phase, n_rx);
    (w, w_phase)
}

/// Squared-error loss contribution of one sample (sum over subcarriers of
/// `||H^k - Ĥ^k||_F^2`, both parts). The caller scales by the batch MSE
/// normalization.
pub fn sample_loss_graph(tape: &Tape, h_true: &[CMat], h_hat: &[CVar]) -> Var {
    assert_eq!(h_true.len(), h_hat.len());
    let mut total: Option<Var> = None;
    for (hk, &ek) in h_true.iter().zip(h_hat) {
        let t = tape.cinput(hk);
        let d = tape.csub(t, ek);
        let sq = tape.sum(tape.csqmod(d));
        total = Some(match total {
            Some(acc) => tape.add(acc, sq),
            None => sq,
        });
    }
    total.expect("at least one subcarrier")
}

/// Convenience: loads the network, builds the forward pass on constant
/// measurement inputs, and returns the loss node for one sample.
#[allow(clippy::too_many_arguments)]
pub fn single_block_loss(
    tape: &Tape,
    sys: &SystemConfig,
    grid: &[f64],
    net: &NetworkParams,
    phi: &CMat,
    noise_cov: &CMat,
    y: &CMat,
    h_true: &[CMat],
    trainable_convs: bool,
) -> Result<(Var, Vec<LayerVars>)> {
    let layer_vars: Vec<LayerVars> = net
        .layers
        .iter()
        .map(|l| load_layer(tape, l, trainable_convs))
        .collect();
    let phi_v = tape.cinput(phi);
    let r_v = tape.cinput(noise_cov);
    let y_cols: Vec<CVar> = (0..y.cols())
        .map(|k| tape.cinput(&CMat::from_vec(y.rows(), 1, y.column(k))))
        .collect();
    let fwd = forward_graph(tape, sys, grid, &y_cols, phi_v, r_v, &layer_vars, None)?;
    let loss = sample_loss_graph(tape, h_true, &fwd.h_hat);
    Ok((loss, layer_vars))
}
