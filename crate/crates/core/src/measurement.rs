//! Constant-modulus beams, the Kronecker measurement matrix, structured
//! effective noise, and compressed pilot simulation.
//!
//! Every beamformer/combiner entry is produced by a phase shifter, so its
//! modulus is pinned to `1/sqrt(N)`. A pilot sweep sends one transmit beam
//! at a time while the receiver cycles through groups of `n_rf_rx` combiner
//! columns; stacking everything gives the standard compressed-sensing form
//! `y^k = Φ x^k + ñ^k` with a block-diagonal effective noise covariance.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{dictionary, ChannelRealization, SystemConfig};
use crate::cmat::{complex_gaussian, CMat};
use crate::{Error, Result};

/// Phase-shifter settings behind the combiner `W` and beamformer `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPhases {
    /// Shape `(n_rx, m_rx)`, radians.
    pub w_phase: Vec<Vec<f64>>,
    /// Shape `(n_tx, m_tx)`, radians.
    pub f_phase: Vec<Vec<f64>>,
}

impl BeamPhases {
    /// Uniform random phases on `[0, 2π)` — the default pilot codebook.
    pub fn random(sys: &SystemConfig, rng: &mut impl Rng) -> Self {
        let draw = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| {
                    (0..cols)
                        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                        .collect()
                })
                .collect()
        };
        Self {
            w_phase: draw(sys.n_rx, sys.m_rx, rng),
            f_phase: draw(sys.n_tx, sys.m_tx, rng),
        }
    }

    pub fn zeros(sys: &SystemConfig) -> Self {
        Self {
            w_phase: vec![vec![0.0; sys.m_rx]; sys.n_rx],
            f_phase: vec![vec![0.0; sys.m_tx]; sys.n_tx],
        }
    }
}

/// Maps phases to the induced `(W, F)`: entry `(i, j)` is
/// `exp(j θ_{ij}) / sqrt(N)`, constant modulus by construction.
pub fn phases_to_beams(phases: &BeamPhases) -> (CMat, CMat) {
    (
        phase_matrix(&phases.w_phase),
        phase_matrix(&phases.f_phase),
    )
}

fn phase_matrix(phase: &[Vec<f64>]) -> CMat {
    let rows = phase.len();
    let cols = phase[0].len();
    let scale = 1.0 / (rows as f64).sqrt();
    CMat::from_fn(rows, cols, |i, j| Complex64::from_polar(scale, phase[i][j]))
}

/// Builds the measurement matrix `Φ = (F^T ⊗ W^H)(A_T^* ⊗ A_R)` using the
/// factored form `(F^T A_T^*) ⊗ (W^H A_R)`.
pub fn build_phi(w: &CMat, f: &CMat, grid: &[f64]) -> Result<CMat> {
    let g = grid.len();
    if w.rows() == 0 || f.rows() == 0 {
        return Err(Error::InvalidConfig("empty beam matrices".into()));
    }
    if g < w.rows().max(f.rows()) {
        return Err(Error::InvalidConfig(
            "grid must be at least the antenna count".into(),
        ));
    }
    let a_r = dictionary(w.rows(), grid);
    let a_t = dictionary(f.rows(), grid);
    let left = f.transpose().mul(&a_t.conj());
    let right = w.conj_t().mul(&a_r);
    Ok(left.kron(&right))
}

/// Effective noise covariance of one transmit beam, replicated over all
/// transmit beams:
/// `R = I_{m_tx} ⊗ Blkdiag(σ^2 W_1^H W_1, ..., σ^2 W_Q^H W_Q)` where the
/// `W_q` are consecutive groups of `n_rf_rx` combiner columns.
pub fn noise_covariance(
    w: &CMat,
    noise_var: f64,
    m_tx: usize,
    n_rf_rx: usize,
) -> Result<CMat> {
    let m_rx = w.cols();
    if m_rx % n_rf_rx != 0 {
        return Err(Error::InvalidConfig(format!(
            "m_rx ({m_rx}) must be a multiple of n_rf_rx ({n_rf_rx})"
        )));
    }
    let groups = m_rx / n_rf_rx;
    let mut block = CMat::zeros(m_rx, m_rx);
    for q in 0..groups {
        let wq = group_columns(w, q, n_rf_rx);
        let gram = wq.conj_t().mul(&wq).scale(noise_var);
        for i in 0..n_rf_rx {
            for j in 0..n_rf_rx {
                block[(q * n_rf_rx + i, q * n_rf_rx + j)] = gram[(i, j)];
            }
        }
    }
    Ok(CMat::identity(m_tx).kron(&block))
}

fn group_columns(w: &CMat, q: usize, n_rf_rx: usize) -> CMat {
    CMat::from_fn(w.rows(), n_rf_rx, |i, j| w[(i, q * n_rf_rx + j)])
}

/// A configured pilot stage: beams, measurement matrix, and the effective
/// noise covariance they induce.
#[derive(Debug, Clone)]
pub struct MeasurementSetup {
    pub w: CMat,
    pub f: CMat,
    pub phi: CMat,
    pub noise_cov: CMat,
    pub n_rf_rx: usize,
}

impl MeasurementSetup {
    pub fn from_phases(
        sys: &SystemConfig,
        phases: &BeamPhases,
        grid: &[f64],
    ) -> Result<Self> {
        let (w, f) = phases_to_beams(phases);
        let phi = build_phi(&w, &f, grid)?;
        let noise_cov = noise_covariance(&w, sys.noise_var, sys.m_tx, sys.n_rf_rx)?;
        Ok(Self {
            w,
            f,
            phi,
            noise_cov,
            n_rf_rx: sys.n_rf_rx,
        })
    }

    /// Random-phase setup drawn from `rng`.
    pub fn random(sys: &SystemConfig, grid: &[f64], rng: &mut impl Rng) -> Result<Self> {
        Self::from_phases(sys, &BeamPhases::random(sys, rng), grid)
    }

    pub fn n_meas(&self) -> usize {
        self.w.cols() * self.f.cols()
    }
}

/// Compressed received pilots: column `k` is `vec(Y^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    /// Shape `(m_rx * m_tx, K)`.
    pub y: CMat,
}

impl ReceivedSignal {
    pub fn col(&self, k: usize) -> Vec<Complex64> {
        self.y.column(k)
    }
}

/// Simulates the pilot sweep in matrix form: for every subcarrier returns
/// `Y^k = W^H H^k F + Ñ^k` of shape `(m_rx, m_tx)`, with the noise drawn
/// physically — a fresh CN(0, σ^2 I) antenna-noise vector per channel use
/// (transmit beam, combiner group) per subcarrier, combined through the
/// active `W_q`.
pub fn measure_matrices(
    real: &ChannelRealization,
    setup: &MeasurementSetup,
    noise_var: f64,
    rng: &mut impl Rng,
) -> Vec<CMat> {
    let m_rx = setup.w.cols();
    let m_tx = setup.f.cols();
    let n_rx = setup.w.rows();
    let groups = m_rx / setup.n_rf_rx;
    let sigma = noise_var.sqrt();
    real.h
        .iter()
        .map(|hk| {
            let mut yk = CMat::zeros(m_rx, m_tx);
            for p in 0..m_tx {
                let fp = setup.f.column(p);
                let hf = hk.mul_vec(&fp);
                for q in 0..groups {
                    let noisy: Vec<Complex64> = hf
                        .iter()
                        .map(|&v| v + complex_gaussian(rng) * sigma)
                        .collect();
                    for r in 0..setup.n_rf_rx {
                        let wcol = q * setup.n_rf_rx + r;
                        let mut acc = Complex64::ZERO;
                        for i in 0..n_rx {
                            acc += setup.w[(i, wcol)].conj() * noisy[i];
                        }
                        yk[(wcol, p)] = acc;
                    }
                }
            }
            yk
        })
        .collect()
}

/// Simulates the pilot sweep and stacks each `Y^k` column-major into the
/// `(m_rx * m_tx, K)` received-signal matrix.
pub fn measure(
    real: &ChannelRealization,
    setup: &MeasurementSetup,
    noise_var: f64,
    rng: &mut impl Rng,
) -> ReceivedSignal {
    let mats = measure_matrices(real, setup, noise_var, rng);
    ReceivedSignal {
        y: stack_columns(&mats),
    }
}

/// Column-major vectorization of each matrix into one column per subcarrier.
pub fn stack_columns(mats: &[CMat]) -> CMat {
    let (rows, cols) = (mats[0].rows(), mats[0].cols());
    let mut out = CMat::zeros(rows * cols, mats.len());
    for (k, m) in mats.iter().enumerate() {
        for j in 0..cols {
            for i in 0..rows {
                out[(j * rows + i, k)] = m[(i, j)];
            }
        }
    }
    out
}

/// Pilot-overhead report: channel uses consumed by the compressed sweep,
/// by the full-beam LS baseline, and the LS-to-compressed ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadReport {
    pub compressed_uses: usize,
    pub ls_uses: usize,
    pub ls_over_compressed: f64,
}

/// A full sweep takes `m_tx * m_rx / n_rf_rx` channel uses; the LS baseline
/// needs `n_tx * n_rx / n_rf_rx`, i.e. `n_tx n_rx / (m_tx m_rx)` times the
/// compressed overhead.
pub fn pilot_overhead(sys: &SystemConfig) -> OverheadReport {
    let compressed = sys.m_tx * sys.m_rx / sys.n_rf_rx;
    let ls = sys.n_tx * sys.n_rx / sys.n_rf_rx;
    OverheadReport {
        compressed_uses: compressed,
        ls_uses: ls,
        ls_over_compressed: (sys.n_tx * sys.n_rx) as f64 / (sys.m_tx * sys.m_rx) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        assemble_channel, make_angular_grid, sample_channel, to_angular, ChannelConfig,
        PathParams,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_sys() -> SystemConfig {
        SystemConfig {
            n_tx: 8,
            n_rx: 8,
            n_rf_rx: 2,
            n_rf_tx: 1,
            m_tx: 4,
            m_rx: 4,
            grid: 16,
            n_sc: 3,
            carrier_hz: 28e9,
            bandwidth_hz: 4e9,
            noise_var: 0.01,
        }
    }

    #[test]
    fn beams_have_constant_modulus() {
        let sys = small_sys();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w, f) = phases_to_beams(&BeamPhases::random(&sys, &mut rng));
        let expect_w = 1.0 / (sys.n_rx as f64).sqrt();
        let expect_f = 1.0 / (sys.n_tx as f64).sqrt();
        for z in w.data() {
            assert!((z.norm() - expect_w).abs() < 1e-12);
        }
        for z in f.data() {
            assert!((z.norm() - expect_f).abs() < 1e-12);
        }
        // All-zero phases give real entries.
        let (w0, _) = phases_to_beams(&BeamPhases::zeros(&sys));
        for z in w0.data() {
            assert!((z - Complex64::new(expect_w, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn random_beam_columns_decorrelate() {
        let sys = SystemConfig {
            n_rx: 32,
            m_rx: 8,
            n_rf_rx: 2,
            ..small_sys()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut acc = 0.0;
        let mut count = 0;
        for _ in 0..200 {
            let (w, _) = phases_to_beams(&BeamPhases::random(&sys, &mut rng));
            for i in 0..sys.m_rx {
                for j in i + 1..sys.m_rx {
                    let ci = w.column(i);
                    let cj = w.column(j);
                    let dot: Complex64 =
                        ci.iter().zip(&cj).map(|(a, b)| a.conj() * b).sum();
                    acc += dot.norm();
                    count += 1;
                }
            }
        }
        let mean = acc / count as f64;
        assert!(mean < 0.3, "mean |<w_i, w_j>| = {mean}");
    }

    #[test]
    fn phi_factored_matches_direct_kronecker() {
        let sys = SystemConfig {
            n_tx: 4,
            n_rx: 4,
            m_tx: 2,
            m_rx: 2,
            n_rf_rx: 2,
            grid: 8,
            ..small_sys()
        };
        let grid = make_angular_grid(sys.grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, f) = phases_to_beams(&BeamPhases::random(&sys, &mut rng));
        let phi = build_phi(&w, &f, &grid).unwrap();
        // Brute-force oracle: (F^T ⊗ W^H)(A_T^* ⊗ A_R).
        let a_r = dictionary(sys.n_rx, &grid);
        let a_t = dictionary(sys.n_tx, &grid);
        let direct = f
            .transpose()
            .kron(&w.conj_t())
            .mul(&a_t.conj().kron(&a_r));
        let rel = phi.sub(&direct).frob_norm() / direct.frob_norm();
        assert!(rel < 1e-12, "factored vs direct rel err {rel}");
    }

    #[test]
    fn phi_scalar_case() {
        let sys = SystemConfig {
            n_tx: 3,
            n_rx: 2,
            m_tx: 1,
            m_rx: 1,
            n_rf_rx: 1,
            grid: 4,
            ..small_sys()
        };
        let grid = make_angular_grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, f) = phases_to_beams(&BeamPhases::random(&sys, &mut rng));
        let phi = build_phi(&w, &f, &grid[..]).unwrap();
        assert_eq!((phi.rows(), phi.cols()), (1, 16));
        // Each column g = j*G + i is (f^T a_T(j)^*) (w^H a_R(i)).
        let a_r = dictionary(sys.n_rx, &grid);
        let a_t = dictionary(sys.n_tx, &grid);
        for j in 0..4 {
            for i in 0..4 {
                let ft: Complex64 = f
                    .column(0)
                    .iter()
                    .zip(&a_t.column(j))
                    .map(|(a, b)| a * b.conj())
                    .sum();
                let wh: Complex64 = w
                    .column(0)
                    .iter()
                    .zip(&a_r.column(i))
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                assert!((phi[(0, j * 4 + i)] - ft * wh).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn vec_identity_ties_phi_to_matrix_form() {
        // Φ x^k must equal vec(W^H H^k F) in the noiseless case.
        let sys = small_sys();
        let grid = make_angular_grid(sys.grid);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let real = sample_channel(&sys, &ChannelConfig::default(), &mut rng);
        let setup = MeasurementSetup::random(&sys, &grid, &mut rng).unwrap();
        let x = to_angular(&real, &grid).unwrap();
        let noiseless = measure_matrices(&real, &setup, 0.0, &mut rng);
        for k in 0..sys.n_sc {
            let via_phi = setup.phi.mul_vec(&x.col(k));
            let direct = stack_columns(&noiseless[k..k + 1]).column(0);
            let num: f64 = via_phi
                .iter()
                .zip(&direct)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            let den: f64 = direct.iter().map(|z| z.norm_sqr()).sum();
            assert!((num / den).sqrt() < 1e-10);
        }
    }

    #[test]
    fn noise_covariance_structure() {
        let sys = small_sys();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (w, _) = phases_to_beams(&BeamPhases::random(&sys, &mut rng));
        let sigma2 = 0.3;
        let r = noise_covariance(&w, sigma2, sys.m_tx, sys.n_rf_rx).unwrap();
        let m = sys.m_rx * sys.m_tx;
        assert_eq!((r.rows(), r.cols()), (m, m));
        // Hermitian, diagonal entries exactly σ^2 (unit-norm beam columns).
        for i in 0..m {
            assert!((r[(i, i)].re - sigma2).abs() < 1e-12);
            assert!(r[(i, i)].im.abs() < 1e-15);
            for j in 0..m {
                assert!((r[(i, j)] - r[(j, i)].conj()).norm() < 1e-13);
            }
        }
        // Zero noise gives the zero matrix.
        let r0 = noise_covariance(&w, 0.0, sys.m_tx, sys.n_rf_rx).unwrap();
        assert_eq!(r0.frob_norm(), 0.0);
        // Entries outside the n_rf-sized diagonal blocks are zero.
        for i in 0..m {
            for j in 0..m {
                let same_tx = i / sys.m_rx == j / sys.m_rx;
                let same_group =
                    same_tx && (i % sys.m_rx) / sys.n_rf_rx == (j % sys.m_rx) / sys.n_rf_rx;
                if !same_group {
                    assert_eq!(r[(i, j)], Complex64::ZERO);
                }
            }
        }
    }

    #[test]
    fn orthogonal_full_rf_combiner_gives_scaled_identity() {
        // n_rf_rx = m_rx with orthogonal W columns: R = σ^2 I.
        let n = 4;
        let grid = make_angular_grid(n);
        let w = dictionary(n, &grid); // tight frame with G = N: orthogonal columns
        let r = noise_covariance(&w, 0.5, 2, n).unwrap();
        let expected = CMat::identity(2 * n).scale(0.5);
        assert!(r.sub(&expected).frob_norm() < 1e-10);
    }

    #[test]
    fn noiseless_measurement_is_exact_matrix_product() {
        let sys = small_sys();
        let grid = make_angular_grid(sys.grid);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let real = sample_channel(&sys, &ChannelConfig::default(), &mut rng);
        let setup = MeasurementSetup::random(&sys, &grid, &mut rng).unwrap();
        let ys = measure_matrices(&real, &setup, 0.0, &mut rng);
        for (hk, yk) in real.h.iter().zip(&ys) {
            let expected = setup.w.conj_t().mul(hk).mul(&setup.f);
            assert!(yk.sub(&expected).frob_norm() < 1e-12);
        }
    }

    #[test]
    fn effective_noise_covariance_matches_empirically() {
        let sys = small_sys();
        let grid = make_angular_grid(sys.grid);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let setup = MeasurementSetup::random(&sys, &grid, &mut rng).unwrap();
        // Zero channel: received signal is pure effective noise.
        let zero = ChannelRealization {
            params: PathParams {
                gains: vec![Complex64::ZERO],
                aoa_rad: vec![0.0],
                aod_rad: vec![0.0],
                delays_s: vec![0.0],
                cluster_means: vec![(0.0, 0.0)],
                n_clusters: 1,
                n_subpaths: 1,
            },
            h: (0..1).map(|_| CMat::zeros(sys.n_rx, sys.n_tx)).collect(),
            squint_enabled: true,
        };
        let sigma2 = 0.5;
        let m = sys.n_meas();
        let mut acc = CMat::zeros(m, m);
        let draws = 10_000;
        for _ in 0..draws {
            let y = measure(&zero, &setup, sigma2, &mut rng);
            let col = y.col(0);
            for i in 0..m {
                for j in 0..m {
                    let v = col[i] * col[j].conj();
                    acc[(i, j)] += v;
                }
            }
        }
        let empirical = acc.scale(1.0 / draws as f64);
        let expected = noise_covariance(&setup.w, sigma2, sys.m_tx, sys.n_rf_rx).unwrap();
        let rel = empirical.sub(&expected).frob_norm() / expected.frob_norm();
        assert!(rel < 0.1, "empirical covariance rel err {rel}");
    }

    #[test]
    fn single_path_squintless_vec_consistency() {
        // σ^2 = 0: vec(Y^k) == Φ x^k for a hand-built single-path channel.
        let sys = small_sys();
        let grid = make_angular_grid(sys.grid);
        let params = PathParams {
            gains: vec![Complex64::new(0.8, -0.6)],
            aoa_rad: vec![0.4],
            aod_rad: vec![-0.9],
            delays_s: vec![5e-9],
            cluster_means: vec![(0.4, -0.9)],
            n_clusters: 1,
            n_subpaths: 1,
        };
        let real = ChannelRealization {
            h: assemble_channel(&sys, &params, false),
            params,
            squint_enabled: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let setup = MeasurementSetup::random(&sys, &grid, &mut rng).unwrap();
        let y = measure(&real, &setup, 0.0, &mut rng);
        let x = to_angular(&real, &grid).unwrap();
        for k in 0..sys.n_sc {
            let via_phi = setup.phi.mul_vec(&x.col(k));
            let col = y.col(k);
            let err: f64 = via_phi
                .iter()
                .zip(&col)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let den: f64 = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(err / den < 1e-10);
        }
    }

    #[test]
    fn overhead_report() {
        let sys = SystemConfig::typical();
        let report = pilot_overhead(&sys);
        assert_eq!(report.compressed_uses, 16 * 8 / 4);
        assert_eq!(report.ls_uses, 32 * 32 / 4);
        assert!((report.ls_over_compressed - 8.0).abs() < 1e-12);
    }
}
