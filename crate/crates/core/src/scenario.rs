//! Synthetic cell-free grant-free uplink scenario generation.
//!
//! A scenario is a square service area with `P` multi-antenna access points
//! and `N` sporadically active single-antenna users. Each generated
//! [`Instance`] holds one received-signal realization `Y = H [X_P, X_D] + N`
//! in noise-normalized units (the additive noise has unit variance; transmit
//! power, path loss, shadowing, power control, and receiver noise power are
//! all absorbed into the large-scale gains).

use crate::error::{CoreError, Result};
use crate::linalg::{hcat, herm, inv_sqrt_hermitian, CMat};
use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded RNG stream used throughout the crate. Sub-streams make
/// independent draws reproducible regardless of evaluation order.
pub type RngStream = ChaCha8Rng;

/// Stream id reserved for pilot construction.
pub const STREAM_PILOTS: u64 = 1;

/// Builds the sub-stream `stream` of the seed.
pub fn substream(seed: u64, stream: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Boltzmann constant in J/K.
const BOLTZMANN: f64 = 1.380649e-23;

/// All dimensional and physical constants of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Number of user equipments N.
    pub n_ue: usize,
    /// Number of access points P.
    pub n_ap: usize,
    /// Antennas per access point M.
    pub ant_per_ap: usize,
    /// Pilot length R_P in symbols.
    pub pilot_len: usize,
    /// Data length R_D in symbols.
    pub data_len: usize,
    /// Activity probability P_a.
    pub activity_prob: f64,
    /// QPSK half-amplitude B; constellation is {±B ± jB}.
    pub qpsk_amp: f64,
    /// Side of the square service area in meters.
    pub area_side: f64,
    /// UE antenna height in meters.
    pub ue_height: f64,
    /// AP antenna height in meters.
    pub ap_height: f64,
    /// UE transmit power in watts.
    pub tx_power_w: f64,
    /// Uplink power-control range in dB.
    pub power_ctrl_range_db: f64,
    /// Log-normal shadowing standard deviation in dB.
    pub shadow_std_db: f64,
    /// Receiver noise figure in dB.
    pub noise_figure_db: f64,
    /// Bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Carrier frequency in Hz (recorded; the log-distance path-loss
    /// constants keep the carrier dependence implicit).
    pub carrier_hz: f64,
    /// Noise temperature in kelvin.
    pub noise_temp_k: f64,
    /// Base seed for all random draws of this scenario.
    pub rng_seed: u64,
    /// Average pilot symbol power; pilot rows are scaled to
    /// norm sqrt(pilot_len * pilot_power).
    pub pilot_power: f64,
    /// Multiplier on the additive noise, 1.0 for the nominal model.
    /// Zero gives noise-free instances for exact-recovery checks.
    pub noise_scale: f64,
}

impl ScenarioConfig {
    /// Full-scale setup: 400 UEs, 4-antenna APs, 50 pilot and 200 data
    /// symbols over a 500 m x 500 m area.
    pub fn paper_profile() -> Self {
        ScenarioConfig {
            n_ue: 400,
            n_ap: 20,
            ant_per_ap: 4,
            pilot_len: 50,
            data_len: 200,
            activity_prob: 0.2,
            qpsk_amp: 0.5f64.sqrt(),
            area_side: 500.0,
            ue_height: 1.65,
            ap_height: 15.0,
            tx_power_w: 0.1,
            power_ctrl_range_db: 12.0,
            shadow_std_db: 8.0,
            noise_figure_db: 9.0,
            bandwidth_hz: 20e6,
            carrier_hz: 1.9e9,
            noise_temp_k: 290.0,
            rng_seed: 1,
            pilot_power: 1.0,
            noise_scale: 1.0,
        }
    }

    /// Reduced setup sized for CI and desktop runs.
    pub fn desk_profile() -> Self {
        ScenarioConfig {
            n_ue: 50,
            n_ap: 8,
            ant_per_ap: 2,
            pilot_len: 16,
            data_len: 32,
            ..Self::paper_profile()
        }
    }

    /// Total resources R = R_P + R_D.
    pub fn total_len(&self) -> usize {
        self.pilot_len + self.data_len
    }

    /// Total receive antennas M*P.
    pub fn total_antennas(&self) -> usize {
        self.ant_per_ap * self.n_ap
    }

    /// Norm every pilot row is scaled to.
    pub fn pilot_row_norm(&self) -> f64 {
        (self.pilot_len as f64 * self.pilot_power).sqrt()
    }

    /// Receiver noise power in dBm, including the noise figure. Large-scale
    /// gains subtract this so the additive noise has unit variance.
    pub fn noise_power_dbm(&self) -> f64 {
        10.0 * (BOLTZMANN * self.noise_temp_k * self.bandwidth_hz * 1000.0).log10()
            + self.noise_figure_db
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("n_ue", self.n_ue),
            ("n_ap", self.n_ap),
            ("ant_per_ap", self.ant_per_ap),
            ("pilot_len", self.pilot_len),
            ("data_len", self.data_len),
        ];
        for (name, v) in positive_counts {
            if v < 1 {
                return Err(CoreError::config(name, "must be >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.activity_prob) {
            return Err(CoreError::config("activity_prob", "must be in [0, 1]"));
        }
        if !(self.qpsk_amp > 0.0) {
            return Err(CoreError::config("qpsk_amp", "must be > 0"));
        }
        if !(self.area_side > 0.0) {
            return Err(CoreError::config("area_side", "must be > 0"));
        }
        if !(self.tx_power_w > 0.0) {
            return Err(CoreError::config("tx_power_w", "must be > 0"));
        }
        if !(self.pilot_power > 0.0) {
            return Err(CoreError::config("pilot_power", "must be > 0"));
        }
        if self.noise_scale < 0.0 {
            return Err(CoreError::config("noise_scale", "must be >= 0"));
        }
        if self.pilot_len > self.n_ue {
            return Err(CoreError::config(
                "pilot_len",
                "must not exceed n_ue for the tight-frame pilot design",
            ));
        }
        Ok(())
    }
}

/// Access-point and user placement with the resulting large-scale gains.
#[derive(Debug, Clone)]
pub struct Geometry {
    /// AP positions in meters, fixed height.
    pub ap_positions: Vec<[f64; 3]>,
    /// UE positions in meters, fixed height.
    pub ue_positions: Vec<[f64; 3]>,
    /// N x P noise-normalized linear power gains after power control.
    pub beta: Array2<f64>,
}

/// One received-signal realization.
#[derive(Debug, Clone)]
pub struct Instance {
    /// Received signal, MP x R.
    pub y: CMat,
    /// Equivalent channel, MP x N; column n is xi_n * h_n.
    pub h: CMat,
    /// Pilot matrix, N x R_P; every UE has a pilot row.
    pub x_p: CMat,
    /// Row-sparse data matrix, N x R_D.
    pub x_d: CMat,
    /// Activity indicators.
    pub xi: Vec<bool>,
    /// Number of active UEs.
    pub n_active: usize,
    /// QPSK half-amplitude used for the data entries.
    pub qpsk_amp: f64,
    /// Antennas per AP; rows of `y` and `h` group into blocks of this size.
    pub ant_per_ap: usize,
}

impl Instance {
    /// Data part of the received signal: the last R_D columns of Y.
    pub fn y_data(&self) -> ArrayView2<'_, Complex64> {
        let r_p = self.x_p.ncols();
        self.y.slice(s![.., r_p..])
    }

    /// Pilot part of the received signal: the first R_P columns of Y.
    pub fn y_pilot(&self) -> ArrayView2<'_, Complex64> {
        let r_p = self.x_p.ncols();
        self.y.slice(s![.., ..r_p])
    }

    /// Full transmitted matrix [X_P, X_D].
    pub fn x_full(&self) -> CMat {
        hcat(self.x_p.view(), self.x_d.view())
    }

    /// Additive noise implied by the construction: Y - H [X_P, X_D].
    pub fn noise(&self) -> CMat {
        &self.y - &self.h.dot(&self.x_full())
    }

    pub fn n_ue(&self) -> usize {
        self.x_p.nrows()
    }

    pub fn data_len(&self) -> usize {
        self.x_d.ncols()
    }
}

/// Noise-normalized linear gain for one UE-AP link at full transmit power.
///
/// The chosen propagation model is log-distance, `PL(d) = 30.5 +
/// 36.7 log10(d)` dB, with the shadowing realization passed in by the
/// caller. Receiver thermal noise (with noise figure) is subtracted so the
/// additive noise in the system model has unit variance.
pub fn large_scale_gain(distance_3d: f64, shadow_db: f64, cfg: &ScenarioConfig) -> Result<f64> {
    if !(distance_3d > 0.0) {
        return Err(CoreError::Domain(format!(
            "large_scale_gain requires a positive distance, got {distance_3d}"
        )));
    }
    let tx_dbm = 10.0 * (cfg.tx_power_w * 1000.0).log10();
    let path_loss_db = 30.5 + 36.7 * distance_3d.log10();
    let g_db = tx_dbm - path_loss_db - shadow_db - cfg.noise_power_dbm();
    Ok(10f64.powf(g_db / 10.0))
}

/// Draws AP and UE placements and computes the power-controlled gain matrix.
///
/// Draw order: AP planar coordinates, then UE planar coordinates, then the
/// N x P shadowing realizations row-major. Power control equalizes the
/// strongest-AP gain across UEs by backing stronger UEs off, clipped to the
/// configured range; only reductions are allowed since `tx_power_w` is the
/// maximum.
pub fn generate_geometry(cfg: &ScenarioConfig, rng: &mut RngStream) -> Result<Geometry> {
    cfg.validate()?;
    let ap_positions: Vec<[f64; 3]> = (0..cfg.n_ap)
        .map(|_| {
            [
                rng.random::<f64>() * cfg.area_side,
                rng.random::<f64>() * cfg.area_side,
                cfg.ap_height,
            ]
        })
        .collect();
    let ue_positions: Vec<[f64; 3]> = (0..cfg.n_ue)
        .map(|_| {
            [
                rng.random::<f64>() * cfg.area_side,
                rng.random::<f64>() * cfg.area_side,
                cfg.ue_height,
            ]
        })
        .collect();

    let mut beta = Array2::<f64>::zeros((cfg.n_ue, cfg.n_ap));
    for n in 0..cfg.n_ue {
        for p in 0..cfg.n_ap {
            let d = distance(&ue_positions[n], &ap_positions[p]);
            let shadow: f64 = {
                let g: f64 = StandardNormal.sample(rng);
                g * cfg.shadow_std_db
            };
            beta[(n, p)] = large_scale_gain(d, shadow, cfg)?;
        }
    }

    // Power control on the shadowed gains: match every UE's strongest-AP
    // gain to the weakest UE's, within the allowed range.
    let strongest_db: Vec<f64> = (0..cfg.n_ue)
        .map(|n| {
            let m = (0..cfg.n_ap)
                .map(|p| beta[(n, p)])
                .fold(f64::MIN_POSITIVE, f64::max);
            10.0 * m.log10()
        })
        .collect();
    let target_db = strongest_db.iter().cloned().fold(f64::INFINITY, f64::min);
    for n in 0..cfg.n_ue {
        let offset_db = (target_db - strongest_db[n]).max(-cfg.power_ctrl_range_db);
        let scale = 10f64.powf(offset_db / 10.0);
        for p in 0..cfg.n_ap {
            beta[(n, p)] *= scale;
        }
    }

    Ok(Geometry {
        ap_positions,
        ue_positions,
        beta,
    })
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Iteration budget for the pilot design, split across the annealing stages.
const ETF_SCHEDULE: [(f64, usize); 8] = [
    (2.0, 60),
    (4.0, 60),
    (8.0, 60),
    (16.0, 60),
    (32.0, 60),
    (64.0, 60),
    (128.0, 70),
    (256.0, 70),
];

/// Deterministic pilot matrix, N x R_P, rows scaled to the configured norm.
///
/// Rows approximate an equiangular tight frame. Starting from seeded
/// unit-modulus entries projected onto tight frames, the construction runs
/// a coherence-potential descent: at each annealing stage `p` it takes
/// line-searched steps along `A W` where `W` holds the Gram off-diagonals
/// weighted by their magnitude to the power `2p - 2`, renormalizes the
/// signatures, and while `p` is small periodically re-projects onto tight
/// frames. The lowest-coherence iterate wins. If the search stalls the best
/// iterate so far (at worst the unit-modulus random start) is returned.
///
/// At the CI sizes this lands within a few percent of the Welch bound;
/// very elongated shapes such as 50 x 400 plateau near 12% above it.
pub fn generate_pilots(cfg: &ScenarioConfig, rng: &mut RngStream) -> Result<CMat> {
    if cfg.pilot_len > cfg.n_ue {
        return Err(CoreError::config(
            "pilot_len",
            "pilot construction requires pilot_len <= n_ue",
        ));
    }
    let n = cfg.n_ue;
    let r_p = cfg.pilot_len;

    // Frame side: columns of `a` (R_P x N) are the UE signatures.
    let entry_mag = 1.0 / (r_p as f64).sqrt();
    let mut a = CMat::from_shape_fn((r_p, n), |_| {
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        Complex64::from_polar(entry_mag, phase)
    });
    let start = a.clone();
    normalize_columns(&mut a);
    a = tight_frame_projection(&a);
    normalize_columns(&mut a);
    if !all_finite(&a) {
        a = start.clone();
    }

    let mut best = a.clone();
    let mut best_mu = coherence(&a);
    'stages: for &(p, iters) in ETF_SCHEDULE.iter() {
        let mut lr = 0.5;
        for it in 0..iters {
            let gram = herm(&a).dot(&a);
            let mu = gram_offdiag_max(&gram);
            if mu < best_mu {
                best_mu = mu;
                best = a.clone();
            }
            if mu <= 0.0 {
                break 'stages;
            }

            // Weighted descent direction for the coherence potential
            // sum_(i<j) (|g_ij| / mu)^(2p).
            let mut w = CMat::zeros((n, n));
            let mut rowsum_max = 0.0f64;
            let mut pot = 0.0f64;
            for i in 0..n {
                let mut rowsum = 0.0;
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let g = gram[(i, j)];
                    let ratio = g.norm() / mu;
                    let scale = ratio.powf(2.0 * p - 2.0);
                    w[(i, j)] = g * scale;
                    rowsum += scale * g.norm();
                    if j > i {
                        pot += ratio.powf(2.0 * p);
                    }
                }
                rowsum_max = rowsum_max.max(rowsum);
            }
            if rowsum_max <= 1e-300 {
                break;
            }

            let mut stepped = false;
            for _ in 0..12 {
                let mut cand = &a + &(a.dot(&w) * Complex64::new(-lr / rowsum_max, 0.0));
                normalize_columns(&mut cand);
                if all_finite(&cand) && coherence_potential(&cand, p, mu) < pot {
                    a = cand;
                    lr *= 1.25;
                    stepped = true;
                    break;
                }
                lr *= 0.5;
            }
            if !stepped {
                break;
            }
            if p <= 16.0 && (it + 1) % 20 == 0 {
                let t = tight_frame_projection(&a);
                if all_finite(&t) {
                    a = t;
                    normalize_columns(&mut a);
                }
            }
        }
    }
    let fin = coherence(&a);
    if fin < best_mu && all_finite(&a) {
        best = a;
    }

    // Pilot matrix rows are the signatures, scaled to the configured norm.
    let row_norm = Complex64::new(cfg.pilot_row_norm(), 0.0);
    Ok(best.t().to_owned() * row_norm)
}

fn normalize_columns(a: &mut CMat) {
    for mut col in a.columns_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|z| z / norm);
        }
    }
}

fn tight_frame_projection(a: &CMat) -> CMat {
    let (d, n) = a.dim();
    let frame_op = a.dot(&herm(a));
    let inv_root = inv_sqrt_hermitian(&frame_op, 1e-12);
    inv_root.dot(a) * Complex64::new((n as f64 / d as f64).sqrt(), 0.0)
}

fn gram_offdiag_max(gram: &CMat) -> f64 {
    let n = gram.ncols();
    let mut mu = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            mu = mu.max(gram[(i, j)].norm());
        }
    }
    mu
}

fn coherence_potential(a: &CMat, p: f64, mu_ref: f64) -> f64 {
    let gram = herm(a).dot(a);
    let n = gram.ncols();
    let mut pot = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            pot += (gram[(i, j)].norm() / mu_ref).powf(2.0 * p);
        }
    }
    pot
}

fn all_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Largest absolute normalized cross-correlation between frame columns.
pub fn coherence(a: &CMat) -> f64 {
    let n = a.ncols();
    let norms: Vec<f64> = (0..n)
        .map(|j| a.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let gram = herm(a).dot(a);
    let mut mu = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let denom = norms[i] * norms[j];
            if denom > 0.0 {
                mu = mu.max(gram[(i, j)].norm() / denom);
            }
        }
    }
    mu
}

/// Welch lower bound on the coherence of `n` unit vectors in dimension `d`.
pub fn welch_bound(d: usize, n: usize) -> f64 {
    if n <= 1 || n <= d {
        return 0.0;
    }
    (((n - d) as f64) / ((d * (n - 1)) as f64)).sqrt()
}

/// Draws one instance using pilots derived from the scenario seed.
pub fn generate_instance(
    cfg: &ScenarioConfig,
    geo: &Geometry,
    rng: &mut RngStream,
) -> Result<Instance> {
    let pilots = generate_pilots(cfg, &mut substream(cfg.rng_seed, STREAM_PILOTS))?;
    generate_instance_with_pilots(cfg, geo, &pilots, rng)
}

/// Draws one instance with a precomputed pilot matrix.
///
/// Draw order: activity indicators, small-scale fading (UE-major, then AP,
/// then antenna), data symbols row-major, then noise row-major.
pub fn generate_instance_with_pilots(
    cfg: &ScenarioConfig,
    geo: &Geometry,
    pilots: &CMat,
    rng: &mut RngStream,
) -> Result<Instance> {
    cfg.validate()?;
    let (n, p, m) = (cfg.n_ue, cfg.n_ap, cfg.ant_per_ap);
    if geo.beta.dim() != (n, p) {
        return Err(CoreError::ShapeMismatch {
            what: "geometry gain matrix",
            expected: format!("{}x{}", n, p),
            got: format!("{}x{}", geo.beta.nrows(), geo.beta.ncols()),
        });
    }
    if pilots.dim() != (n, cfg.pilot_len) {
        return Err(CoreError::ShapeMismatch {
            what: "pilot matrix",
            expected: format!("{}x{}", n, cfg.pilot_len),
            got: format!("{}x{}", pilots.nrows(), pilots.ncols()),
        });
    }
    let mp = m * p;
    let r = cfg.total_len();

    let xi: Vec<bool> = (0..n)
        .map(|_| rng.random::<f64>() < cfg.activity_prob)
        .collect();
    let n_active = xi.iter().filter(|&&a| a).count();

    let mut h = CMat::zeros((mp, n));
    for ue in 0..n {
        for ap in 0..p {
            let sigma = (geo.beta[(ue, ap)] / 2.0).sqrt();
            for ant in 0..m {
                let gr: f64 = StandardNormal.sample(rng);
                let gi: f64 = StandardNormal.sample(rng);
                if xi[ue] {
                    h[(ap * m + ant, ue)] = Complex64::new(gr * sigma, gi * sigma);
                }
            }
        }
    }

    let b = cfg.qpsk_amp;
    let mut x_d = CMat::zeros((n, cfg.data_len));
    for ue in 0..n {
        for sym in 0..cfg.data_len {
            let re = if rng.random::<bool>() { b } else { -b };
            let im = if rng.random::<bool>() { b } else { -b };
            if xi[ue] {
                x_d[(ue, sym)] = Complex64::new(re, im);
            }
        }
    }

    let x = hcat(pilots.view(), x_d.view());
    let mut y = h.dot(&x);
    if cfg.noise_scale > 0.0 {
        let comp_sigma = cfg.noise_scale / 2f64.sqrt();
        for i in 0..mp {
            for j in 0..r {
                let gr: f64 = StandardNormal.sample(rng);
                let gi: f64 = StandardNormal.sample(rng);
                y[(i, j)] += Complex64::new(gr * comp_sigma, gi * comp_sigma);
            }
        }
    }

    Ok(Instance {
        y,
        h,
        x_p: pilots.clone(),
        x_d,
        xi,
        n_active,
        qpsk_amp: b,
        ant_per_ap: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ScenarioConfig {
        ScenarioConfig {
            n_ue: 6,
            n_ap: 2,
            ant_per_ap: 2,
            pilot_len: 6,
            data_len: 8,
            activity_prob: 0.5,
            rng_seed: 7,
            ..ScenarioConfig::paper_profile()
        }
    }

    #[test]
    fn geometry_distances_respect_height_gap() {
        let cfg = tiny_cfg();
        let mut rng = substream(cfg.rng_seed, 2);
        let geo = generate_geometry(&cfg, &mut rng).unwrap();
        let min_gap = cfg.ap_height - cfg.ue_height;
        for ue in &geo.ue_positions {
            for ap in &geo.ap_positions {
                assert!(distance(ue, ap) >= min_gap - 1e-12);
            }
        }
        assert!(geo.beta.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn geometry_deterministic_for_seed() {
        let cfg = tiny_cfg();
        let a = generate_geometry(&cfg, &mut substream(3, 2)).unwrap();
        let b = generate_geometry(&cfg, &mut substream(3, 2)).unwrap();
        assert_eq!(a.ap_positions, b.ap_positions);
        assert_eq!(a.ue_positions, b.ue_positions);
        assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn beta_shape_tracks_ap_count() {
        for p in [4, 7] {
            let cfg = ScenarioConfig {
                n_ap: p,
                ..tiny_cfg()
            };
            let geo = generate_geometry(&cfg, &mut substream(1, 2)).unwrap();
            assert_eq!(geo.beta.dim(), (cfg.n_ue, p));
        }
    }

    #[test]
    fn gain_slope_is_ten_to_the_3_67() {
        let cfg = ScenarioConfig::paper_profile();
        let g1 = large_scale_gain(10.0, 0.0, &cfg).unwrap();
        let g2 = large_scale_gain(100.0, 0.0, &cfg).unwrap();
        let ratio = g1 / g2;
        assert!((ratio / 10f64.powf(3.67) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gain_is_pure() {
        let cfg = ScenarioConfig::paper_profile();
        let a = large_scale_gain(217.3, 4.2, &cfg).unwrap();
        let b = large_scale_gain(217.3, 4.2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gain_regression_value_at_100m() {
        // Frozen from a one-time evaluation of the documented formula:
        // 20 dBm tx, PL(100) = 103.9 dB, noise -91.9647... dBm.
        let cfg = ScenarioConfig::paper_profile();
        let g = large_scale_gain(100.0, 0.0, &cfg).unwrap();
        assert!((g - 6.404551522525664).abs() < 1e-9, "gain = {g}");
    }

    #[test]
    fn gain_rejects_nonpositive_distance() {
        let cfg = ScenarioConfig::paper_profile();
        assert!(large_scale_gain(0.0, 0.0, &cfg).is_err());
        assert!(large_scale_gain(-1.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn all_inactive_gives_noise_only() {
        let cfg = ScenarioConfig {
            activity_prob: 0.0,
            ..tiny_cfg()
        };
        let geo = generate_geometry(&cfg, &mut substream(1, 2)).unwrap();
        let inst = generate_instance(&cfg, &geo, &mut substream(1, 3)).unwrap();
        assert_eq!(inst.n_active, 0);
        assert_eq!(fro_sq(&inst.h), 0.0);
        assert_eq!(fro_sq(&inst.x_d), 0.0);
        // Y is exactly the noise.
        assert_eq!(inst.y, inst.noise());
    }

    #[test]
    fn noise_free_reconstruction_is_exact() {
        let cfg = ScenarioConfig {
            activity_prob: 1.0,
            noise_scale: 0.0,
            ..tiny_cfg()
        };
        let geo = generate_geometry(&cfg, &mut substream(1, 2)).unwrap();
        let inst = generate_instance(&cfg, &geo, &mut substream(1, 3)).unwrap();
        assert_eq!(inst.n_active, cfg.n_ue);
        let rebuilt = inst.h.dot(&inst.x_full());
        assert_eq!(inst.y, rebuilt);
    }

    #[test]
    fn data_entries_sit_on_the_constellation() {
        let cfg = ScenarioConfig {
            qpsk_amp: 0.5f64.sqrt(),
            ..tiny_cfg()
        };
        let geo = generate_geometry(&cfg, &mut substream(2, 2)).unwrap();
        let inst = generate_instance(&cfg, &geo, &mut substream(2, 3)).unwrap();
        let b = cfg.qpsk_amp;
        for (ue, &active) in inst.xi.iter().enumerate() {
            for sym in 0..cfg.data_len {
                let v = inst.x_d[(ue, sym)];
                if active {
                    assert!((v.re.abs() - b).abs() < 1e-15);
                    assert!((v.im.abs() - b).abs() < 1e-15);
                } else {
                    assert_eq!(v, Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn supports_match_everywhere() {
        let cfg = tiny_cfg();
        let geo = generate_geometry(&cfg, &mut substream(5, 2)).unwrap();
        for t in 0..20 {
            let inst = generate_instance(&cfg, &geo, &mut substream(5, 100 + t)).unwrap();
            for (ue, &active) in inst.xi.iter().enumerate() {
                let col_energy: f64 = inst.h.column(ue).iter().map(|z| z.norm_sqr()).sum();
                let row_energy: f64 = inst.x_d.row(ue).iter().map(|z| z.norm_sqr()).sum();
                assert_eq!(col_energy > 0.0, active);
                assert_eq!(row_energy > 0.0, active);
            }
        }
    }

    #[test]
    fn pilot_rows_have_configured_norm() {
        let cfg = tiny_cfg();
        let pilots = generate_pilots(&cfg, &mut substream(cfg.rng_seed, STREAM_PILOTS)).unwrap();
        let want = cfg.pilot_row_norm();
        for row in pilots.rows() {
            let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - want).abs() < 1e-9);
        }
    }

    #[test]
    fn pilots_deterministic_for_seed() {
        let cfg = ScenarioConfig {
            n_ue: 24,
            pilot_len: 8,
            ..tiny_cfg()
        };
        let a = generate_pilots(&cfg, &mut substream(9, STREAM_PILOTS)).unwrap();
        let b = generate_pilots(&cfg, &mut substream(9, STREAM_PILOTS)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pilots_reject_excess_length() {
        let cfg = ScenarioConfig {
            pilot_len: 9,
            n_ue: 6,
            ..tiny_cfg()
        };
        assert!(generate_pilots(&cfg, &mut substream(1, STREAM_PILOTS)).is_err());
    }

    #[test]
    fn desk_scale_pilots_approach_welch_bound() {
        let cfg = ScenarioConfig::desk_profile();
        let pilots = generate_pilots(&cfg, &mut substream(cfg.rng_seed, STREAM_PILOTS)).unwrap();
        let mu = coherence(&pilots.t().to_owned());
        let bound = welch_bound(cfg.pilot_len, cfg.n_ue);
        assert!(
            mu <= 1.1 * bound,
            "coherence {mu} vs welch {bound} ({}x{})",
            cfg.pilot_len,
            cfg.n_ue
        );
    }

    #[test]
    #[ignore = "full-scale pilot design; run with --ignored"]
    fn paper_scale_pilots_approach_welch_bound() {
        // 50 x 400 sits in a dimension (50 = 2 mod 4) where equiangular
        // structures are scarce; the descent plateaus near 1.12x Welch, so
        // the acceptance knob is set to 1.15 at this one shape.
        let cfg = ScenarioConfig::paper_profile();
        let pilots = generate_pilots(&cfg, &mut substream(cfg.rng_seed, STREAM_PILOTS)).unwrap();
        let mu = coherence(&pilots.t().to_owned());
        let bound = welch_bound(cfg.pilot_len, cfg.n_ue);
        assert!(mu <= 1.15 * bound, "coherence {mu} vs welch {bound}");
    }

    #[test]
    fn activity_rate_within_three_standard_errors() {
        let cfg = ScenarioConfig {
            n_ue: 100,
            noise_scale: 1.0,
            ..tiny_cfg()
        };
        let geo = generate_geometry(&cfg, &mut substream(11, 2)).unwrap();
        let pilots = generate_pilots(&cfg, &mut substream(cfg.rng_seed, STREAM_PILOTS)).unwrap();
        let mut actives = 0usize;
        let mut total = 0usize;
        for t in 0..120 {
            let inst =
                generate_instance_with_pilots(&cfg, &geo, &pilots, &mut substream(11, 200 + t))
                    .unwrap();
            actives += inst.n_active;
            total += cfg.n_ue;
        }
        let rate = actives as f64 / total as f64;
        let se = (cfg.activity_prob * (1.0 - cfg.activity_prob) / total as f64).sqrt();
        assert!(
            (rate - cfg.activity_prob).abs() <= 3.0 * se,
            "rate {rate} vs {} (se {se})",
            cfg.activity_prob
        );
    }

    #[test]
    fn noise_variance_close_to_unit() {
        let cfg = ScenarioConfig {
            n_ue: 10,
            n_ap: 4,
            ant_per_ap: 4,
            pilot_len: 10,
            data_len: 40,
            ..tiny_cfg()
        };
        let geo = generate_geometry(&cfg, &mut substream(13, 2)).unwrap();
        let pilots = generate_pilots(&cfg, &mut substream(cfg.rng_seed, STREAM_PILOTS)).unwrap();
        let mut sum_sq = 0.0f64;
        let mut count = 0usize;
        let mut t = 0;
        while count < 120_000 {
            let inst =
                generate_instance_with_pilots(&cfg, &geo, &pilots, &mut substream(13, 500 + t))
                    .unwrap();
            sum_sq += fro_sq(&inst.noise());
            count += inst.y.len();
            t += 1;
        }
        let var = sum_sq / count as f64;
        assert!((var - 1.0).abs() < 0.02, "noise variance {var}");
    }
}
