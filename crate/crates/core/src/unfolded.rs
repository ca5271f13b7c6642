//! Unfolded FBS detector: a fixed number of solver iterations mapped to
//! layers with trainable scalars.
//!
//! Each layer runs a momentum forward step with separate channel/data step
//! sizes, the per-layer group shrinkage on the channel, and an approximate
//! posterior-mean estimate of the data rows in place of the data prox. The
//! posterior mean under the per-entry QPSK prior factorizes into a tanh per
//! real dimension, which is what the layer evaluates; the exhaustive
//! enumeration is kept as a test oracle.

use crate::error::{CoreError, Result};
use crate::fbs::{backward_channel, momentum_forward, prox_xd_row, SolverState};
use crate::linalg::{CMat, CVec};
use crate::scenario::Instance;
use ndarray::ArrayView1;
use num_complex::Complex64;

/// Trainable scalars of one unfolded layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    /// Channel step size.
    pub tau_h: f64,
    /// Data step size.
    pub tau_x: f64,
    /// Channel momentum weight.
    pub eta_h: f64,
    /// Data momentum weight.
    pub eta_x: f64,
    /// Channel shrinkage weight for this layer; clamped to >= 0 at use.
    pub mu_h: f64,
    /// Scaling-factor slope.
    pub lambda: f64,
    /// Scaling-factor offset.
    pub nu: f64,
    /// Log of the estimation-error variance; `N_e = exp(log_ne)` stays
    /// positive for any real value.
    pub log_ne: f64,
}

impl LayerParams {
    /// Estimation-error variance `N_e`.
    pub fn ne(&self) -> f64 {
        self.log_ne.exp()
    }

    /// Channel shrinkage weight, clamped to be nonnegative.
    pub fn mu_h_eff(&self) -> f64 {
        self.mu_h.max(0.0)
    }

    /// Number of trainable scalars per layer.
    pub const COUNT: usize = 8;

    pub fn to_array(self) -> [f64; Self::COUNT] {
        [
            self.tau_h, self.tau_x, self.eta_h, self.eta_x, self.mu_h, self.lambda, self.nu,
            self.log_ne,
        ]
    }

    pub fn from_array(v: [f64; Self::COUNT]) -> Self {
        LayerParams {
            tau_h: v[0],
            tau_x: v[1],
            eta_h: v[2],
            eta_x: v[3],
            mu_h: v[4],
            lambda: v[5],
            nu: v[6],
            log_ne: v[7],
        }
    }
}

/// Default number of unfolded layers.
pub const DEFAULT_LAYERS: usize = 10;

/// Parameters of the whole unfolded network.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedParams {
    pub layers: Vec<LayerParams>,
    /// Activity prior used by the exact posterior-mean reference.
    pub p_a: f64,
}

impl UnfoldedParams {
    pub fn k(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::config("layers", "need at least one layer"));
        }
        if !(0.0..=1.0).contains(&self.p_a) {
            return Err(CoreError::config("p_a", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Total trainable scalar count (8 per layer).
    pub fn param_count(&self) -> usize {
        self.layers.len() * LayerParams::COUNT
    }

    /// Flattens all layer scalars, layer-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.to_array().into_iter())
            .collect()
    }

    /// Rebuilds parameters from a flat vector (inverse of `flatten`).
    pub fn from_flat(values: &[f64], p_a: f64) -> Result<Self> {
        if values.is_empty() || values.len() % LayerParams::COUNT != 0 {
            return Err(CoreError::config(
                "layers",
                format!("flat parameter count {} not a multiple of 8", values.len()),
            ));
        }
        let layers = values
            .chunks_exact(LayerParams::COUNT)
            .map(|c| {
                LayerParams::from_array([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
            })
            .collect();
        Ok(UnfoldedParams { layers, p_a })
    }
}

/// Momentum forward step of one layer, Eqs.-style:
/// `H <- H + tau_h (Y - H X) X^H + eta_h D_h` (and the data analogue), with
/// the buffers updated to the increment just applied.
pub fn forward_step(state: &SolverState, inst: &Instance, lp: &LayerParams) -> SolverState {
    momentum_forward(state, inst, lp.tau_h, lp.tau_x, lp.eta_h, lp.eta_x)
}

/// Per-layer channel backward step: group shrinkage with threshold
/// `tau_h * mu_h` on every (UE, AP) block.
pub fn backward_h(h_hat: &CMat, lp: &LayerParams, ant_per_ap: usize) -> CMat {
    let mut out = h_hat.clone();
    backward_channel(&mut out, ant_per_ap, lp.tau_h * lp.mu_h_eff());
    out
}

/// Exact posterior mean of a data row under the activity-aware prior:
/// QPSK vectors share mass `P_a` uniformly and the zero row carries
/// `1 - P_a`, with a Gaussian error kernel of variance `N_e`.
///
/// Exhaustive over `4^R_D + 1` hypotheses; a reference for tests only,
/// refused for rows longer than 8.
pub fn pme_exact_row(
    x_hat: ArrayView1<'_, Complex64>,
    ne: f64,
    pa: f64,
    b: f64,
) -> Result<CVec> {
    let r_d = x_hat.len();
    if r_d > 8 {
        return Err(CoreError::Domain(format!(
            "pme_exact_row enumerates 4^R_D hypotheses; R_D = {r_d} > 8 refused"
        )));
    }
    if !(ne > 0.0) {
        return Err(CoreError::Domain("N_e must be positive".into()));
    }
    let count = 4usize.pow(r_d as u32);
    let prior_q = pa / count as f64;
    let prior_zero = 1.0 - pa;

    // Stabilize the kernel by the largest exponent over all hypotheses.
    let exponent = |v: &[Complex64]| -> f64 {
        let dist: f64 = v
            .iter()
            .zip(x_hat.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        -dist / ne
    };
    let zero_vec = vec![Complex64::new(0.0, 0.0); r_d];
    let mut max_e = exponent(&zero_vec);
    let mut candidate = vec![Complex64::new(0.0, 0.0); r_d];
    for code in 0..count {
        fill_qpsk(&mut candidate, code, b);
        max_e = max_e.max(exponent(&candidate));
    }

    let mut num = vec![Complex64::new(0.0, 0.0); r_d];
    let mut den = (exponent(&zero_vec) - max_e).exp() * prior_zero;
    for code in 0..count {
        fill_qpsk(&mut candidate, code, b);
        let w = (exponent(&candidate) - max_e).exp() * prior_q;
        den += w;
        for (acc, c) in num.iter_mut().zip(candidate.iter()) {
            *acc += c * w;
        }
    }
    Ok(CVec::from_vec(
        num.into_iter().map(|z| z / den).collect(),
    ))
}

fn fill_qpsk(out: &mut [Complex64], code: usize, b: f64) {
    let mut c = code;
    for slot in out.iter_mut() {
        let re = if c & 1 == 0 { b } else { -b };
        let im = if c & 2 == 0 { b } else { -b };
        *slot = Complex64::new(re, im);
        c >>= 2;
    }
}

/// Data-conditional posterior mean of one row (no activity hypothesis).
/// The separable Gaussian kernel over the product constellation factorizes
/// into `B tanh(2 B Re / N_e) + j B tanh(2 B Im / N_e)` per entry.
pub fn pme_conditional_mean(x_hat: ArrayView1<'_, Complex64>, ne: f64, b: f64) -> CVec {
    x_hat.mapv(|z| {
        Complex64::new(
            b * (2.0 * b * z.re / ne).tanh(),
            b * (2.0 * b * z.im / ne).tanh(),
        )
    })
}

/// Approximate posterior mean of one data row: the conditional mean scaled
/// by the activity factor
/// `alpha = min(max(lambda ||x||_1 - nu, 0) / ||x||_1, 1)` (zero for a zero
/// row). Returns the scaled row and `alpha`.
pub fn pme_approx_row(
    x_hat: ArrayView1<'_, Complex64>,
    lp: &LayerParams,
    b: f64,
) -> (CVec, f64) {
    let l1: f64 = x_hat.iter().map(|z| z.norm()).sum();
    let alpha = if l1 == 0.0 {
        0.0
    } else {
        ((lp.lambda * l1 - lp.nu).max(0.0) / l1).min(1.0)
    };
    let cond = pme_conditional_mean(x_hat, lp.ne(), b);
    (cond * Complex64::new(alpha, 0.0), alpha)
}

/// Data backward step used by `run_network_with`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataBackward {
    /// The approximate posterior mean (the network's own step).
    Pme,
    /// Leave the forward output untouched.
    Identity,
    /// The baseline solver's shrink-then-clip prox with weight `mu_x`.
    ShrinkClip { mu_x: f64 },
}

/// Output of a network evaluation.
#[derive(Debug, Clone)]
pub struct NetworkRun {
    pub state: SolverState,
    /// Per-layer, per-UE activity scaling factors (PME mode only).
    pub alpha_trace: Vec<Vec<f64>>,
}

/// Runs the K unfolded layers from the given initialization
/// (pilot-estimate channel, zero data, zero momentum buffers).
pub fn run_network(
    inst: &Instance,
    params: &UnfoldedParams,
    init: SolverState,
) -> Result<NetworkRun> {
    run_network_with(inst, params, init, DataBackward::Pme)
}

/// `run_network` with a selectable data backward step; `Identity` and
/// `ShrinkClip` exist to cross-check layers against the baseline solver.
pub fn run_network_with(
    inst: &Instance,
    params: &UnfoldedParams,
    init: SolverState,
    data_step: DataBackward,
) -> Result<NetworkRun> {
    params.validate()?;
    let b = inst.qpsk_amp;
    let mut state = init;
    let mut alpha_trace = Vec::new();
    for (layer, lp) in params.layers.iter().enumerate() {
        let mut next = forward_step(&state, inst, lp);
        next.h = backward_h(&next.h, lp, state.ant_per_ap);
        match data_step {
            DataBackward::Pme => {
                let mut alphas = Vec::with_capacity(next.xd.nrows());
                for mut row in next.xd.rows_mut() {
                    let (updated, alpha) = pme_approx_row(row.view(), lp, b);
                    row.assign(&updated);
                    alphas.push(alpha);
                }
                alpha_trace.push(alphas);
            }
            DataBackward::Identity => {}
            DataBackward::ShrinkClip { mu_x } => {
                for mut row in next.xd.rows_mut() {
                    let updated = prox_xd_row(row.view(), lp.tau_x * mu_x, b);
                    row.assign(&updated);
                }
            }
        }
        let finite = next.h.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            && next.xd.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite {
            return Err(CoreError::NonFiniteLayer { layer });
        }
        state = next;
    }
    Ok(NetworkRun { state, alpha_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::tiny_instance;
    use crate::linalg::fro_sq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_layer(tau: f64, eta: f64) -> LayerParams {
        LayerParams {
            tau_h: tau,
            tau_x: tau,
            eta_h: eta,
            eta_x: eta,
            mu_h: 0.0,
            lambda: 1.0,
            nu: 0.0,
            log_ne: 0.0,
        }
    }

    #[test]
    fn zero_step_leaves_state_unchanged() {
        let inst = tiny_instance(21);
        let init = SolverState::from_channel_estimate(
            inst.h.clone(),
            inst.data_len(),
            inst.ant_per_ap,
        );
        let lp = flat_layer(0.0, 0.0);
        let out = forward_step(&init, &inst, &lp);
        assert_eq!(out.h, init.h);
        assert_eq!(out.xd, init.xd);
        assert_eq!(out.iter, 1);
    }

    #[test]
    fn momentum_buffers_match_hand_unrolled_recursion() {
        let inst = tiny_instance(22);
        let init = SolverState::from_channel_estimate(
            CMat::zeros(inst.h.dim()),
            inst.data_len(),
            inst.ant_per_ap,
        );
        let tau = 0.01;
        let eta = 0.5;
        let lp = flat_layer(tau, eta);

        let s1 = forward_step(&init, &inst, &lp);
        let s2 = forward_step(&s1, &inst, &lp);

        // Hand-unrolled: D1 = tau*g(S0); S1 = S0 + D1;
        //                D2 = tau*g(S1) + eta*D1; S2 = S1 + D2.
        let (gh0, gx0) = crate::fbs::grad_f(&init, &inst);
        let d1_h = -gh0 * Complex64::new(tau, 0.0);
        let d1_x = -gx0 * Complex64::new(tau, 0.0);
        assert!(fro_sq(&(&s1.d_h - &d1_h)) < 1e-24);
        assert!(fro_sq(&(&s1.d_x - &d1_x)) < 1e-24);

        let (gh1, gx1) = crate::fbs::grad_f(&s1, &inst);
        let d2_h = -gh1 * Complex64::new(tau, 0.0) + &d1_h * Complex64::new(eta, 0.0);
        let d2_x = -gx1 * Complex64::new(tau, 0.0) + &d1_x * Complex64::new(eta, 0.0);
        assert!(fro_sq(&(&s2.d_h - &d2_h)) < 1e-24);
        assert!(fro_sq(&(&s2.d_x - &d2_x)) < 1e-24);
        assert!(fro_sq(&(&s2.h - &(&s1.h + &d2_h))) < 1e-24);
        assert!(fro_sq(&(&s2.xd - &(&s1.xd + &d2_x))) < 1e-24);
    }

    #[test]
    fn backward_h_identity_when_weight_zero() {
        let inst = tiny_instance(23);
        let lp = flat_layer(0.1, 0.0);
        let out = backward_h(&inst.h, &lp, inst.ant_per_ap);
        assert_eq!(out, inst.h);
    }

    #[test]
    fn backward_h_zeroes_small_blocks() {
        let inst = tiny_instance(24);
        let lp = LayerParams {
            mu_h: 1e9,
            ..flat_layer(0.1, 0.0)
        };
        let out = backward_h(&inst.h, &lp, inst.ant_per_ap);
        assert_eq!(fro_sq(&out), 0.0);
    }

    #[test]
    fn backward_h_single_block_value() {
        let mut h = CMat::zeros((2, 1));
        h[(0, 0)] = Complex64::new(1.0, 0.0);
        let lp = LayerParams {
            tau_h: 0.5,
            mu_h: 0.5,
            ..flat_layer(0.5, 0.0)
        };
        // threshold tau_h * mu_h = 0.25 on a block of norm 1
        let out = backward_h(&h, &lp, 2);
        assert!((out[(0, 0)] - Complex64::new(0.75, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn pme_exact_limit_picks_nearest_constellation_point() {
        let b = 0.5f64.sqrt();
        let x_hat = CVec::from_vec(vec![
            Complex64::new(0.9 * b, -1.2 * b),
            Complex64::new(1.1 * b, 0.8 * b),
        ]);
        let out = pme_exact_row(x_hat.view(), 1e-3, 0.5, b).unwrap();
        assert!((out[0] - Complex64::new(b, -b)).norm() < 1e-9);
        assert!((out[1] - Complex64::new(b, b)).norm() < 1e-9);
    }

    #[test]
    fn pme_exact_symmetric_at_zero() {
        let b = 0.5f64.sqrt();
        let x_hat = CVec::zeros(3);
        let out = pme_exact_row(x_hat.view(), 1.0, 0.2, b).unwrap();
        for z in out.iter() {
            assert!(z.norm() < 1e-12, "symmetry should cancel, got {z}");
        }
    }

    #[test]
    fn pme_exact_matches_independent_summation() {
        // R_D = 2: 17 hypotheses; recompute with a plainly coded double loop
        // in a different order with compensated accumulation.
        let b = 0.5f64.sqrt();
        let ne = 1.0;
        let pa = 0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let x_hat = CVec::from_shape_fn(2, |_| {
                Complex64::new(2.0 * (rng.random::<f64>() - 0.5), 2.0 * (rng.random::<f64>() - 0.5))
            });
            let got = pme_exact_row(x_hat.view(), ne, pa, b).unwrap();

            let signs = [b, -b];
            let mut num = [Complex64::new(0.0, 0.0); 2];
            let mut den = 0.0f64;
            let mut den_c = 0.0f64; // Kahan compensation
            for re0 in signs {
                for im0 in signs {
                    for re1 in signs {
                        for im1 in signs {
                            let v0 = Complex64::new(re0, im0);
                            let v1 = Complex64::new(re1, im1);
                            let dist = (v0 - x_hat[0]).norm_sqr() + (v1 - x_hat[1]).norm_sqr();
                            let w = (-dist / ne).exp() * pa / 16.0;
                            let y = w - den_c;
                            let t = den + y;
                            den_c = (t - den) - y;
                            den = t;
                            num[0] += v0 * w;
                            num[1] += v1 * w;
                        }
                    }
                }
            }
            let zero_dist = x_hat[0].norm_sqr() + x_hat[1].norm_sqr();
            den += (-zero_dist / ne).exp() * (1.0 - pa);
            let want = [num[0] / den, num[1] / den];
            assert!((got[0] - want[0]).norm() < 1e-12);
            assert!((got[1] - want[1]).norm() < 1e-12);
        }
    }

    #[test]
    fn pme_exact_refuses_long_rows() {
        let x_hat = CVec::zeros(9);
        assert!(pme_exact_row(x_hat.view(), 1.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn pme_approx_zero_row_gives_zero() {
        let lp = flat_layer(0.1, 0.0);
        let (out, alpha) = pme_approx_row(CVec::zeros(4).view(), &lp, 1.0);
        assert_eq!(alpha, 0.0);
        assert!(out.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn pme_approx_saturates_to_constellation() {
        let b = 0.5f64.sqrt();
        let lp = LayerParams {
            log_ne: -60.0,
            nu: -1.0,
            ..flat_layer(0.1, 0.0)
        };
        let x_hat = CVec::from_vec(vec![
            Complex64::new(0.3, -0.2),
            Complex64::new(-0.01, 0.4),
        ]);
        let (out, alpha) = pme_approx_row(x_hat.view(), &lp, b);
        assert!((alpha - 1.0).abs() < 1e-12);
        assert!((out[0] - Complex64::new(b, -b)).norm() < 1e-9);
        assert!((out[1] - Complex64::new(-b, b)).norm() < 1e-9);
    }

    #[test]
    fn factorized_mean_matches_enumeration() {
        let b = 0.5f64.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let ne = 0.2 + rng.random::<f64>() * 3.0;
            let x_hat = CVec::from_shape_fn(3, |_| {
                Complex64::new(3.0 * (rng.random::<f64>() - 0.5), 3.0 * (rng.random::<f64>() - 0.5))
            });
            let fact = pme_conditional_mean(x_hat.view(), ne, b);

            // Eq-style enumeration of the conditional mean over Q^3.
            let signs = [b, -b];
            let mut num = vec![Complex64::new(0.0, 0.0); 3];
            let mut den = 0.0f64;
            for c0r in signs {
                for c0i in signs {
                    for c1r in signs {
                        for c1i in signs {
                            for c2r in signs {
                                for c2i in signs {
                                    let v = [
                                        Complex64::new(c0r, c0i),
                                        Complex64::new(c1r, c1i),
                                        Complex64::new(c2r, c2i),
                                    ];
                                    let dist: f64 = v
                                        .iter()
                                        .zip(x_hat.iter())
                                        .map(|(a, b)| (a - b).norm_sqr())
                                        .sum();
                                    let w = (-dist / ne).exp();
                                    den += w;
                                    for (acc, vv) in num.iter_mut().zip(v.iter()) {
                                        *acc += vv * w;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for r in 0..3 {
                let want = num[r] / den;
                assert!(
                    (fact[r] - want).norm() < 1e-9,
                    "entry {r}: {} vs {}",
                    fact[r],
                    want
                );
            }
        }
    }

    #[test]
    fn alpha_always_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5000 {
            let lp = LayerParams {
                lambda: 10.0 * (rng.random::<f64>() - 0.5),
                nu: 10.0 * (rng.random::<f64>() - 0.5),
                ..flat_layer(0.1, 0.0)
            };
            let len = 1 + (rng.random::<u32>() % 6) as usize;
            let x_hat = CVec::from_shape_fn(len, |_| {
                Complex64::new(
                    20.0 * (rng.random::<f64>() - 0.5),
                    20.0 * (rng.random::<f64>() - 0.5),
                )
            });
            let (out, alpha) = pme_approx_row(x_hat.view(), &lp, 0.5f64.sqrt());
            assert!((0.0..=1.0).contains(&alpha), "alpha {alpha}");
            let b = 0.5f64.sqrt();
            for z in out.iter() {
                assert!(z.re.abs() <= b + 1e-15 && z.im.abs() <= b + 1e-15);
            }
        }
    }

    #[test]
    fn network_is_identity_at_zero_parameters() {
        let inst = tiny_instance(25);
        let init = SolverState::from_channel_estimate(
            inst.h.clone(),
            inst.data_len(),
            inst.ant_per_ap,
        );
        let params = UnfoldedParams {
            layers: vec![flat_layer(0.0, 0.0); 3],
            p_a: 0.2,
        };
        let run = run_network(&inst, &params, init.clone()).unwrap();
        assert_eq!(run.state.h, init.h);
        assert_eq!(run.state.xd, init.xd);
    }

    #[test]
    fn default_layer_count_is_ten() {
        assert_eq!(DEFAULT_LAYERS, 10);
    }

    #[test]
    fn network_deterministic() {
        let inst = tiny_instance(26);
        let params = UnfoldedParams {
            layers: vec![flat_layer(0.02, 0.3); 4],
            p_a: 0.2,
        };
        let init = SolverState::from_channel_estimate(
            CMat::zeros(inst.h.dim()),
            inst.data_len(),
            inst.ant_per_ap,
        );
        let a = run_network(&inst, &params, init.clone()).unwrap();
        let b = run_network(&inst, &params, init).unwrap();
        assert_eq!(a.state.h, b.state.h);
        assert_eq!(a.state.xd, b.state.xd);
        assert_eq!(a.alpha_trace, b.alpha_trace);
    }

    #[test]
    fn flatten_roundtrip() {
        let params = UnfoldedParams {
            layers: (0..5)
                .map(|i| LayerParams {
                    tau_h: i as f64,
                    tau_x: 0.5,
                    eta_h: -0.25,
                    eta_x: 0.1,
                    mu_h: 2.0,
                    lambda: 1.5,
                    nu: -0.5,
                    log_ne: 0.3,
                })
                .collect(),
            p_a: 0.2,
        };
        let flat = params.flatten();
        assert_eq!(flat.len(), params.param_count());
        let back = UnfoldedParams::from_flat(&flat, 0.2).unwrap();
        assert_eq!(back, params);
    }
}
