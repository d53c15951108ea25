//! Clustered wideband channel simulation with beam squint, angular-domain
//! conversion, and block-to-block temporal evolution.
//!
//! A channel realization is a sum of cluster/subpath rank-one terms. Each
//! subcarrier sees the array through a frequency-dependent steering vector,
//! so the angular-domain support of the channel shifts across subcarriers
//! (beam squint) and off-grid path angles smear energy over neighboring
//! grid points (power leakage).

use num_complex::Complex64;
use rand::Rng;

use crate::cmat::{complex_gaussian, CMat};
use crate::{Error, Result};

/// Speed of light, SI exact value.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Array, bandwidth, pilot, and noise dimensions governing one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Transmit antenna count (user side).
    pub n_tx: usize,
    /// Receive antenna count (base-station side).
    pub n_rx: usize,
    /// Receive RF chain count.
    pub n_rf_rx: usize,
    /// Transmit RF chain count.
    pub n_rf_tx: usize,
    /// Transmit beam count.
    pub m_tx: usize,
    /// Receive beam count; must be a multiple of `n_rf_rx`.
    pub m_rx: usize,
    /// Angular dictionary size per side.
    pub grid: usize,
    /// Pilot subcarrier count.
    pub n_sc: usize,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// Total bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise variance (linear); SNR is `1 / noise_var`.
    pub noise_var: f64,
}

impl SystemConfig {
    /// The typical desk-scale configuration used throughout the tests:
    /// 32-antenna arrays on both sides, 4 receive RF chains, 16x8 beams,
    /// a 64-point grid, 8 pilot subcarriers, 28 GHz carrier with 4 GHz
    /// bandwidth, and 20 dB SNR.
    pub fn typical() -> Self {
        Self {
            n_tx: 32,
            n_rx: 32,
            n_rf_rx: 4,
            n_rf_tx: 1,
            m_tx: 16,
            m_rx: 8,
            grid: 64,
            n_sc: 8,
            carrier_hz: 28e9,
            bandwidth_hz: 4e9,
            noise_var: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.n_tx, self.n_rx, self.n_rf_rx, self.n_rf_tx, self.m_tx, self.m_rx, self.grid,
            self.n_sc,
        ];
        if positive.iter().any(|&v| v == 0) {
            return Err(Error::InvalidConfig("all counts must be positive".into()));
        }
        if self.m_rx % self.n_rf_rx != 0 {
            return Err(Error::InvalidConfig(format!(
                "m_rx ({}) must be a multiple of n_rf_rx ({})",
                self.m_rx, self.n_rf_rx
            )));
        }
        if self.grid < self.n_tx.max(self.n_rx) {
            return Err(Error::InvalidConfig(format!(
                "grid ({}) must be at least max(n_tx, n_rx) = {}",
                self.grid,
                self.n_tx.max(self.n_rx)
            )));
        }
        if !(self.carrier_hz > self.bandwidth_hz / 2.0) {
            return Err(Error::InvalidConfig(
                "carrier_hz must exceed bandwidth_hz / 2".into(),
            ));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::InvalidConfig("noise_var must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of stacked measurements per subcarrier.
    pub fn n_meas(&self) -> usize {
        self.m_tx * self.m_rx
    }

    /// SNR in dB implied by `noise_var`.
    pub fn snr_db(&self) -> f64 {
        -10.0 * self.noise_var.log10()
    }

    /// Sets `noise_var` from an SNR in dB.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_var = 10f64.powf(-snr_db / 10.0);
        self
    }

    /// Beam-squint factor of subcarrier `k` (1-based): `k fs / (K fc)`.
    pub fn squint_factor(&self, k: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.n_sc);
        k as f64 * self.bandwidth_hz / (self.n_sc as f64 * self.carrier_hz)
    }
}

/// Cluster geometry of the propagation environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub n_clusters: usize,
    pub n_subpaths: usize,
    /// Angular spread of each cluster, radians, same at both sides.
    pub spread_rad: f64,
    /// Maximum cluster delay in seconds.
    pub tau_max_s: f64,
    /// When false, channels are assembled with squint-free steering vectors
    /// (useful for ablations; the wideband model keeps it on).
    pub squint_enabled: bool,
}

impl Default for ChannelConfig {
    /// 3 clusters of 10 subpaths with 5 degrees of spread; 20 ns maximum
    /// delay keeps the per-subcarrier delay phase inside one rotation at
    /// 4 GHz bandwidth with 8 pilot subcarriers.
    fn default() -> Self {
        Self {
            n_clusters: 3,
            n_subpaths: 10,
            spread_rad: 5f64.to_radians(),
            tau_max_s: 20e-9,
            squint_enabled: true,
        }
    }
}

/// Per-path parameters of one realization, cluster-major order
/// (`path = cluster * n_subpaths + subpath`).
#[derive(Debug, Clone, PartialEq)]
pub struct PathParams {
    pub gains: Vec<Complex64>,
    pub aoa_rad: Vec<f64>,
    pub aod_rad: Vec<f64>,
    /// One delay per cluster.
    pub delays_s: Vec<f64>,
    /// Mean (AoA, AoD) per cluster.
    pub cluster_means: Vec<(f64, f64)>,
    pub n_clusters: usize,
    pub n_subpaths: usize,
}

/// A sampled channel: path parameters plus the assembled per-subcarrier
/// matrices `h[k - 1]` of shape `(n_rx, n_tx)` for `k = 1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub params: PathParams,
    pub h: Vec<CMat>,
    pub squint_enabled: bool,
}

impl ChannelRealization {
    pub fn n_sc(&self) -> usize {
        self.h.len()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.h.iter().map(|m| m.frob_norm().powi(2)).sum()
    }
}

/// Angular-domain channel: column `k` is `vec(X^k)` (column-major
/// vectorization, so index `g` maps to AoA grid `g % G`, AoD grid `g / G`).
#[derive(Debug, Clone, PartialEq)]
pub struct AngularChannel {
    /// Shape `(G^2, K)`.
    pub x: CMat,
}

impl AngularChannel {
    pub fn grid(&self) -> usize {
        (self.x.rows() as f64).sqrt().round() as usize
    }

    /// Column `k` (0-based) as a vector.
    pub fn col(&self, k: usize) -> Vec<Complex64> {
        self.x.column(k)
    }

    /// Unvectorizes column `k` into the `(G, G)` matrix `X^k`
    /// (row = AoA grid, column = AoD grid).
    pub fn unvec(&self, k: usize) -> CMat {
        let g = self.grid();
        CMat::from_fn(g, g, |i, j| self.x[(j * g + i, k)])
    }
}

/// Block-to-block temporal model: AR(1) path-gain evolution with a Jakes
/// correlation coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConfig {
    pub speed_mps: f64,
    pub block_s: f64,
    pub rho: f64,
    /// Optional per-cluster angle disturbance (uniform in `±value`) applied
    /// on every evolution step.
    pub angle_jitter_rad: Option<f64>,
}

impl TemporalConfig {
    /// Derives `rho` from the Jakes model for the given user speed, carrier,
    /// and block length.
    pub fn new(speed_mps: f64, carrier_hz: f64, block_s: f64) -> Self {
        Self {
            speed_mps,
            block_s,
            rho: temporal_rho(speed_mps, carrier_hz, block_s),
            angle_jitter_rad: None,
        }
    }

    /// Uses an explicit correlation coefficient.
    pub fn from_rho(rho: f64) -> Self {
        assert!((0.0..=1.0).contains(&rho.abs()), "|rho| must be <= 1");
        Self {
            speed_mps: 0.0,
            block_s: 0.0,
            rho,
            angle_jitter_rad: None,
        }
    }

    pub fn with_angle_jitter(mut self, jitter_rad: f64) -> Self {
        self.angle_jitter_rad = Some(jitter_rad);
        self
    }
}

/// Samples `G` grid sines: element `i` (1-based) is `(2i - 1 - G) / G`.
/// The result is strictly increasing inside `(-1, 1)`.
pub fn make_angular_grid(grid_size: usize) -> Vec<f64> {
    assert!(grid_size >= 1);
    let g = grid_size as f64;
    (1..=grid_size)
        .map(|i| (2.0 * i as f64 - 1.0 - g) / g)
        .collect()
}

/// ULA response for a direction sine. Element `m` (0-based) is
/// `exp(-j pi m (1 + squint) sin_angle) / sqrt(n_ant)`; `squint = 0` gives
/// the squint-free dictionary response.
pub fn steering_vector(sin_angle: f64, n_ant: usize, squint: f64) -> Vec<Complex64> {
    assert!(n_ant >= 1);
    let scale = 1.0 / (n_ant as f64).sqrt();
    let step = -std::f64::consts::PI * (1.0 + squint) * sin_angle;
    (0..n_ant)
        .map(|m| Complex64::from_polar(scale, step * m as f64))
        .collect()
}

/// Squint-free dictionary matrix `(n_ant, G)` whose columns are steering
/// vectors at the grid sines.
pub fn dictionary(n_ant: usize, grid: &[f64]) -> CMat {
    let mut m = CMat::zeros(n_ant, grid.len());
    for (j, &s) in grid.iter().enumerate() {
        for (i, v) in steering_vector(s, n_ant, 0.0).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Draws one clustered channel realization.
///
/// Per cluster: mean AoA and AoD uniform on `[0, 2pi]` and a delay uniform
/// on `[0, tau_max]`; per subpath: a CN(0, 1) gain and angles uniform within
/// `±spread` of the cluster means.
pub fn sample_channel(
    sys: &SystemConfig,
    chan: &ChannelConfig,
    rng: &mut impl Rng,
) -> ChannelRealization {
    let n_paths = chan.n_clusters * chan.n_subpaths;
    let mut params = PathParams {
        gains: Vec::with_capacity(n_paths),
        aoa_rad: Vec::with_capacity(n_paths),
        aod_rad: Vec::with_capacity(n_paths),
        delays_s: Vec::with_capacity(chan.n_clusters),
        cluster_means: Vec::with_capacity(chan.n_clusters),
        n_clusters: chan.n_clusters,
        n_subpaths: chan.n_subpaths,
    };
    for _ in 0..chan.n_clusters {
        let mean_aoa = rng.random_range(0.0..std::f64::consts::TAU);
        let mean_aod = rng.random_range(0.0..std::f64::consts::TAU);
        let delay = if chan.tau_max_s > 0.0 {
            rng.random_range(0.0..chan.tau_max_s)
        } else {
            0.0
        };
        params.cluster_means.push((mean_aoa, mean_aod));
        params.delays_s.push(delay);
        for _ in 0..chan.n_subpaths {
            params.gains.push(complex_gaussian(rng));
            params.aoa_rad.push(uniform_about(mean_aoa, chan.spread_rad, rng));
            params.aod_rad.push(uniform_about(mean_aod, chan.spread_rad, rng));
        }
    }
    let h = assemble_channel(sys, &params, chan.squint_enabled);
    ChannelRealization {
        params,
        h,
        squint_enabled: chan.squint_enabled,
    }
}

fn uniform_about(center: f64, spread: f64, rng: &mut impl Rng) -> f64 {
    if spread > 0.0 {
        center + rng.random_range(-spread..spread)
    } else {
        center
    }
}

/// Rebuilds the per-subcarrier matrices from path parameters:
/// `H^k = sqrt(NT NR / (Nc Np)) Σ_{i,j} α_{ij} e^{-j 2π τ_i fs k/K}
/// a_R(θ^R_{ij}, k) a_T(θ^T_{ij}, k)^H` with `k = 1..=K`.
pub fn assemble_channel(sys: &SystemConfig, params: &PathParams, squint: bool) -> Vec<CMat> {
    let n_paths = params.gains.len();
    let scale =
        ((sys.n_tx * sys.n_rx) as f64 / (params.n_clusters * params.n_subpaths) as f64).sqrt();
    (1..=sys.n_sc)
        .map(|k| {
            let sq = if squint { sys.squint_factor(k) } else { 0.0 };
            let mut h = CMat::zeros(sys.n_rx, sys.n_tx);
            for p in 0..n_paths {
                let cluster = p / params.n_subpaths;
                let delay_phase = -std::f64::consts::TAU
                    * params.delays_s[cluster]
                    * sys.bandwidth_hz
                    * (k as f64 / sys.n_sc as f64);
                let coeff =
                    params.gains[p] * Complex64::from_polar(scale, delay_phase);
                let ar = steering_vector(params.aoa_rad[p].sin(), sys.n_rx, sq);
                let at = steering_vector(params.aod_rad[p].sin(), sys.n_tx, sq);
                for (r, &arv) in ar.iter().enumerate() {
                    let row = h.row_mut(r);
                    let c = coeff * arv;
                    for (x, &atv) in row.iter_mut().zip(&at) {
                        *x += c * atv.conj();
                    }
                }
            }
            h
        })
        .collect()
}

/// Antenna domain to angular domain: `X^k = (NT NR / G^2) A_R^H H^k A_T`,
/// vectorized column-major into column `k` of the result.
pub fn to_angular(real: &ChannelRealization, grid: &[f64]) -> Result<AngularChannel> {
    let (n_rx, n_tx) = (real.h[0].rows(), real.h[0].cols());
    if grid.len() < n_rx.max(n_tx) {
        return Err(Error::InvalidConfig(
            "grid must be at least the antenna count".into(),
        ));
    }
    let g = grid.len();
    let a_r = dictionary(n_rx, grid);
    let a_t = dictionary(n_tx, grid);
    let scale = (n_tx * n_rx) as f64 / (g * g) as f64;
    let mut x = CMat::zeros(g * g, real.h.len());
    for (k, hk) in real.h.iter().enumerate() {
        hk.check_dims(n_rx, n_tx)?;
        let xk = a_r.conj_t().mul(hk).mul(&a_t).scale(scale);
        for j in 0..g {
            for i in 0..g {
                x[(j * g + i, k)] = xk[(i, j)];
            }
        }
    }
    Ok(AngularChannel { x })
}

/// Angular domain back to the antenna domain: `H^k = A_R X^k A_T^H`.
pub fn from_angular(
    angular: &AngularChannel,
    grid: &[f64],
    n_rx: usize,
    n_tx: usize,
) -> Result<Vec<CMat>> {
    let g = grid.len();
    if angular.x.rows() != g * g {
        return Err(Error::ShapeMismatch(format!(
            "angular channel has {} rows, expected G^2 = {}",
            angular.x.rows(),
            g * g
        )));
    }
    let a_r = dictionary(n_rx, grid);
    let a_t_h = dictionary(n_tx, grid).conj_t();
    Ok((0..angular.x.cols())
        .map(|k| a_r.mul(&angular.unvec(k)).mul(&a_t_h))
        .collect())
}

/// Jakes-model temporal correlation: `J0(2π (v fc / c) Δt)`.
pub fn temporal_rho(speed_mps: f64, carrier_hz: f64, block_s: f64) -> f64 {
    let doppler = speed_mps * carrier_hz / SPEED_OF_LIGHT;
    libm::j0(std::f64::consts::TAU * doppler * block_s)
}

/// Advances a realization by one block: each path gain follows the AR(1)
/// recursion `α[n] = ρ α[n-1] + sqrt(1 - ρ^2) w` with CN(0, 1) innovations;
/// angles and delays stay fixed unless an angle jitter is configured, in
/// which case every cluster's subpath angles receive a common uniform shift.
pub fn evolve(
    real: &ChannelRealization,
    sys: &SystemConfig,
    temporal: &TemporalConfig,
    rng: &mut impl Rng,
) -> ChannelRealization {
    let rho = temporal.rho;
    let innovation = (1.0 - rho * rho).max(0.0).sqrt();
    let mut params = real.params.clone();
    for gain in params.gains.iter_mut() {
        let w = complex_gaussian(rng);
        *gain = *gain * rho + w * innovation;
    }
    if let Some(jitter) = temporal.angle_jitter_rad {
        for cluster in 0..params.n_clusters {
            let d_aoa = rng.random_range(-jitter..jitter);
            let d_aod = rng.random_range(-jitter..jitter);
            let (m_aoa, m_aod) = params.cluster_means[cluster];
            params.cluster_means[cluster] = (m_aoa + d_aoa, m_aod + d_aod);
            let base = cluster * params.n_subpaths;
            for p in base..base + params.n_subpaths {
                params.aoa_rad[p] += d_aoa;
                params.aod_rad[p] += d_aod;
            }
        }
    }
    let h = assemble_channel(sys, &params, real.squint_enabled);
    ChannelRealization {
        params,
        h,
        squint_enabled: real.squint_enabled,
    }
}
