//! Oracle and property checks runnable from the CLI (`verify`) and reused
//! by the acceptance test suite.
//!
//! Every check returns a [`Check`] with a pass flag and a human-readable
//! detail line, so callers can print one line per check and exit nonzero
//! on failure.

use crate::aud::compute_metrics;
use crate::fbs::{
    eval_f, fbs_solve_with, grad_f, pilot_only_estimate, prox_h, prox_xd_row, FbsOptions,
    ObjectiveParams, SolverState, StepRule,
};
use crate::harness::{
    parse_csv, rows_to_csv, run_experiment, ExperimentConfig, Method, Timing,
};
use crate::linalg::{CMat, CVec};
use crate::scenario::{
    generate_geometry, generate_instance_with_pilots, generate_pilots, substream, Instance,
    ScenarioConfig, STREAM_PILOTS,
};
use crate::unfolded::{
    pme_approx_row, pme_conditional_mean, run_network_with, DataBackward, LayerParams,
    UnfoldedParams,
};
use ndarray::ArrayView1;
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one verification check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn pass(name: &'static str, detail: String) -> Self {
        Check {
            name,
            passed: true,
            detail,
        }
    }
    fn fail(name: &'static str, detail: String) -> Self {
        Check {
            name,
            passed: false,
            detail,
        }
    }
}

fn random_state(rng: &mut ChaCha8Rng, inst: &Instance, scale: f64) -> SolverState {
    let h = CMat::from_shape_fn(inst.h.dim(), |_| {
        Complex64::new(
            scale * (rng.random::<f64>() - 0.5),
            scale * (rng.random::<f64>() - 0.5),
        )
    });
    let xd = CMat::from_shape_fn(inst.x_d.dim(), |_| {
        Complex64::new(
            scale * (rng.random::<f64>() - 0.5),
            scale * (rng.random::<f64>() - 0.5),
        )
    });
    SolverState::new(h, xd, inst.ant_per_ap)
}

fn small_instance(seed: u64, n_ue: usize, n_ap: usize, m: usize, r_p: usize, r_d: usize) -> Instance {
    let cfg = ScenarioConfig {
        n_ue,
        n_ap,
        ant_per_ap: m,
        pilot_len: r_p,
        data_len: r_d,
        activity_prob: 0.5,
        noise_scale: 1.0,
        rng_seed: seed,
        ..ScenarioConfig::paper_profile()
    };
    let geo = generate_geometry(&cfg, &mut substream(seed, 2)).unwrap();
    let pilots = generate_pilots(&cfg, &mut substream(seed, STREAM_PILOTS)).unwrap();
    generate_instance_with_pilots(&cfg, &geo, &pilots, &mut substream(seed, 3)).unwrap()
}

/// Central finite differences of `eval_f` against `grad_f` on seeded small
/// shapes. The objective is quadratic per coordinate, so central
/// differences are exact up to roundoff.
pub fn gradient_fd_check(shapes: usize) -> Check {
    const NAME: &str = "gradient_finite_differences";
    // (n_ue, n_ap, m, r_p, r_d) with MP <= 8, N <= 6, R <= 10
    let dims = [
        (3usize, 2usize, 2usize, 3usize, 5usize),
        (6, 2, 2, 4, 6),
        (4, 2, 4, 4, 4),
        (5, 4, 2, 5, 5),
        (6, 2, 3, 6, 4),
    ];
    let mut worst = 0.0f64;
    for s in 0..shapes {
        let (n_ue, n_ap, m, r_p, r_d) = dims[s % dims.len()];
        let inst = small_instance(1000 + s as u64, n_ue, n_ap, m, r_p, r_d);
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + s as u64);
        let state = random_state(&mut rng, &inst, 1.0);
        let (gh, gx) = grad_f(&state, &inst);

        let step = 3e-5;
        let mut fd_sq = 0.0f64;
        let mut diff_sq = 0.0f64;
        let mut probe = |matrix: fn(&mut SolverState) -> &mut CMat,
                         analytic: &CMat,
                         state: &SolverState| {
            let (rows, cols) = analytic.dim();
            for i in 0..rows {
                for j in 0..cols {
                    for part in 0..2 {
                        let mut plus = state.clone();
                        let mut minus = state.clone();
                        let bump = |s: &mut SolverState, sign: f64| {
                            let mref = matrix(s);
                            let z = mref[(i, j)];
                            mref[(i, j)] = if part == 0 {
                                Complex64::new(z.re + sign * step, z.im)
                            } else {
                                Complex64::new(z.re, z.im + sign * step)
                            };
                        };
                        bump(&mut plus, 1.0);
                        bump(&mut minus, -1.0);
                        let fd = (eval_f(&plus, &inst) - eval_f(&minus, &inst)) / (2.0 * step);
                        let got = if part == 0 {
                            analytic[(i, j)].re
                        } else {
                            analytic[(i, j)].im
                        };
                        fd_sq += fd * fd;
                        diff_sq += (fd - got) * (fd - got);
                    }
                }
            }
        };
        probe(|s| &mut s.h, &gh, &state);
        probe(|s| &mut s.xd, &gx, &state);
        let rel = (diff_sq / fd_sq.max(1e-300)).sqrt();
        worst = worst.max(rel);
    }
    let detail = format!("{shapes} shapes, worst relative error {worst:.3e} (tolerance 1e-6)");
    if worst < 1e-6 {
        Check::pass(NAME, detail)
    } else {
        Check::fail(NAME, detail)
    }
}

/// Gradient descent on `0.5 ||v - x||^2 + t ||v||`; independent of the
/// closed-form prox. Only used where the optimum is safely away from the
/// kink at zero.
fn numeric_prox_h(x: &CVec, threshold: f64) -> CVec {
    let mut v = x.clone();
    let mut lr = 0.3;
    let phi = |v: &CVec| -> f64 {
        let dist: f64 = v.iter().zip(x.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        0.5 * dist + threshold * norm
    };
    let mut cur = phi(&v);
    for _ in 0..2000 {
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-14 {
            break;
        }
        let grad: CVec = v
            .iter()
            .zip(x.iter())
            .map(|(vv, xx)| (vv - xx) + vv * (threshold / norm))
            .collect();
        let mut stepped = false;
        for _ in 0..40 {
            let cand: CVec = v
                .iter()
                .zip(grad.iter())
                .map(|(vv, g)| vv - g * lr)
                .collect();
            let c = phi(&cand);
            if c < cur {
                v = cand;
                cur = c;
                lr *= 1.2;
                stepped = true;
                break;
            }
            lr *= 0.5;
        }
        if !stepped {
            break;
        }
    }
    v
}

pub fn prox_h_oracle_check(cases: usize) -> Check {
    const NAME: &str = "prox_h_numeric_oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut zero_cases = 0usize;
    for _ in 0..cases {
        let m = 2 + (rng.random::<u32>() % 3) as usize;
        let x = CVec::from_shape_fn(m, |_| {
            Complex64::new(
                2.0 * (rng.random::<f64>() - 0.5),
                2.0 * (rng.random::<f64>() - 0.5),
            )
        });
        let norm: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let frac = rng.random::<f64>() * 1.4;
        let threshold = frac * norm;
        let ours = prox_h(x.view(), threshold);
        if norm - threshold <= 0.05 * norm {
            // at or below the kink: the prox must be exactly zero when the
            // norm does not exceed the threshold
            if norm <= threshold {
                let out_norm: f64 = ours.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if out_norm != 0.0 {
                    return Check::fail(NAME, "below-threshold block not zeroed".into());
                }
                zero_cases += 1;
            }
            continue;
        }
        let oracle = numeric_prox_h(&x, threshold);
        let dist: f64 = ours
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        worst = worst.max(dist);
    }
    let detail =
        format!("{cases} cases ({zero_cases} exact-zero), worst distance {worst:.3e} (tolerance 1e-6)");
    if worst < 1e-6 {
        Check::pass(NAME, detail)
    } else {
        Check::fail(NAME, detail)
    }
}

/// Projected gradient on the box-constrained objective with the norm
/// smoothed by 1e-9; converges to the true constrained prox well past the
/// comparison tolerance.
fn numeric_prox_box(x: &CVec, threshold: f64, b: f64) -> CVec {
    let eps = 1e-9;
    let clip = |v: Complex64| Complex64::new(v.re.clamp(-b, b), v.im.clamp(-b, b));
    let phi = |v: &CVec| -> f64 {
        let dist: f64 = v.iter().zip(x.iter()).map(|(a, c)| (a - c).norm_sqr()).sum();
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        0.5 * dist + threshold * norm
    };
    let mut v: CVec = x.iter().map(|&z| clip(z)).collect();
    let mut cur = phi(&v);
    let mut lr = 0.3;
    for _ in 0..4000 {
        let norm_eps = (v.iter().map(|z| z.norm_sqr()).sum::<f64>() + eps * eps).sqrt();
        let grad: CVec = v
            .iter()
            .zip(x.iter())
            .map(|(vv, xx)| (vv - xx) + vv * (threshold / norm_eps))
            .collect();
        let mut stepped = false;
        for _ in 0..40 {
            let cand: CVec = v
                .iter()
                .zip(grad.iter())
                .map(|(vv, g)| clip(vv - g * lr))
                .collect();
            let c = phi(&cand);
            if c < cur - 1e-16 {
                v = cand;
                cur = c;
                lr *= 1.15;
                stepped = true;
                break;
            }
            lr *= 0.5;
        }
        if !stepped {
            break;
        }
    }
    v
}

/// Compares shrink-then-clip against the numeric constrained prox. When the
/// clip binds the two can differ; those cases are logged as deviations and
/// pass as long as the numeric optimum is no worse (it is the argmin) and
/// the objective gap stays small.
pub fn prox_xd_oracle_check(cases: usize) -> Check {
    const NAME: &str = "prox_xd_constrained_oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut matched = 0usize;
    let mut deviations = 0usize;
    let mut max_dist = 0.0f64;
    let mut max_gap = 0.0f64;
    let tol = 1e-4;
    for _ in 0..cases {
        let r_d = 2 + (rng.random::<u32>() % 2) as usize;
        let x = CVec::from_shape_fn(r_d, |_| {
            Complex64::new(
                2.4 * (rng.random::<f64>() - 0.5),
                2.4 * (rng.random::<f64>() - 0.5),
            )
        });
        let norm: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let threshold = rng.random::<f64>() * 0.8 * norm;
        let b = 0.2 + rng.random::<f64>() * 1.2;
        let ours = prox_xd_row(x.view(), threshold, b);
        let oracle = numeric_prox_box(&x, threshold, b);
        let phi = |v: &CVec| -> f64 {
            let dist: f64 = v.iter().zip(x.iter()).map(|(a, c)| (a - c).norm_sqr()).sum();
            let n: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            0.5 * dist + threshold * n
        };
        let dist: f64 = ours
            .iter()
            .zip(oracle.iter())
            .map(|(a, c)| (a - c).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if dist <= tol {
            matched += 1;
        } else {
            deviations += 1;
            max_dist = max_dist.max(dist);
            let gap = phi(&ours) - phi(&oracle);
            if gap < -1e-6 {
                return Check::fail(
                    NAME,
                    format!("closed form beat the numeric argmin by {gap:.3e}; oracle broken"),
                );
            }
            max_gap = max_gap.max(gap);
        }
    }
    let bounded = max_gap <= 1.0;
    let detail = format!(
        "{matched}/{cases} matched within {tol:.0e}; {deviations} shrink-then-clip deviations (max distance {max_dist:.3e}, max objective gap {max_gap:.3e})"
    );
    if bounded {
        Check::pass(NAME, detail)
    } else {
        Check::fail(NAME, detail)
    }
}

/// Enumeration of the conditional posterior mean over the product
/// constellation, stabilized by the minimum distance.
fn enumerated_conditional_mean(x_hat: ArrayView1<'_, Complex64>, ne: f64, b: f64) -> CVec {
    let r_d = x_hat.len();
    let count = 4usize.pow(r_d as u32);
    let mut cand = vec![Complex64::new(0.0, 0.0); r_d];
    let mut min_dist = f64::INFINITY;
    let fill = |out: &mut [Complex64], code: usize| {
        let mut c = code;
        for slot in out.iter_mut() {
            let re = if c & 1 == 0 { b } else { -b };
            let im = if c & 2 == 0 { b } else { -b };
            *slot = Complex64::new(re, im);
            c >>= 2;
        }
    };
    for code in 0..count {
        fill(&mut cand, code);
        let dist: f64 = cand
            .iter()
            .zip(x_hat.iter())
            .map(|(a, c)| (a - c).norm_sqr())
            .sum();
        min_dist = min_dist.min(dist);
    }
    let mut num = vec![Complex64::new(0.0, 0.0); r_d];
    let mut den = 0.0f64;
    for code in 0..count {
        fill(&mut cand, code);
        let dist: f64 = cand
            .iter()
            .zip(x_hat.iter())
            .map(|(a, c)| (a - c).norm_sqr())
            .sum();
        let w = (-(dist - min_dist) / ne).exp();
        den += w;
        for (acc, c) in num.iter_mut().zip(cand.iter()) {
            *acc += c * w;
        }
    }
    CVec::from_vec(num.into_iter().map(|z| z / den).collect())
}

pub fn pme_factorization_check(cases_per_len: usize) -> Check {
    const NAME: &str = "pme_factorization";
    let b = 0.5f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for r_d in 1..=4usize {
        for _ in 0..cases_per_len {
            let ne = 0.05 + rng.random::<f64>() * 4.0;
            let x_hat = CVec::from_shape_fn(r_d, |_| {
                Complex64::new(
                    3.0 * (rng.random::<f64>() - 0.5),
                    3.0 * (rng.random::<f64>() - 0.5),
                )
            });
            let fact = pme_conditional_mean(x_hat.view(), ne, b);
            let enumerated = enumerated_conditional_mean(x_hat.view(), ne, b);
            for (a, c) in fact.iter().zip(enumerated.iter()) {
                worst = worst.max((a - c).norm());
            }
        }
    }
    let detail = format!(
        "lengths 1..=4, {cases_per_len} cases each, worst entry error {worst:.3e} (tolerance 1e-9)"
    );
    if worst < 1e-9 {
        Check::pass(NAME, detail)
    } else {
        Check::fail(NAME, detail)
    }
}

pub fn alpha_range_check(samples: usize) -> Check {
    const NAME: &str = "alpha_scaling_range";
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let b = 0.5f64.sqrt();
    let mut violations = 0usize;
    for _ in 0..samples {
        let lp = LayerParams {
            tau_h: 0.1,
            tau_x: 0.1,
            eta_h: 0.0,
            eta_x: 0.0,
            mu_h: 0.0,
            lambda: 40.0 * (rng.random::<f64>() - 0.5),
            nu: 40.0 * (rng.random::<f64>() - 0.5),
            log_ne: 6.0 * (rng.random::<f64>() - 0.5),
        };
        let len = 1 + (rng.random::<u32>() % 8) as usize;
        let x_hat = CVec::from_shape_fn(len, |_| {
            Complex64::new(
                50.0 * (rng.random::<f64>() - 0.5),
                50.0 * (rng.random::<f64>() - 0.5),
            )
        });
        let (scaled, alpha) = pme_approx_row(x_hat.view(), &lp, b);
        if !(0.0..=1.0).contains(&alpha) {
            violations += 1;
            continue;
        }
        if scaled
            .iter()
            .any(|z| z.re.abs() > b + 1e-12 || z.im.abs() > b + 1e-12)
        {
            violations += 1;
        }
    }
    let detail = format!("{samples} samples, {violations} violations");
    if violations == 0 {
        Check::pass(NAME, detail)
    } else {
        Check::fail(NAME, detail)
    }
}

/// One unfolded layer with momentum off, tied step sizes, and the data
/// backward disabled must reproduce one fixed-step baseline iterate.
pub fn layer_equivalence_check(instances: usize) -> Check {
    const NAME: &str = "layer_equivalence";
    let mut worst = 0.0f64;
    for s in 0..instances {
        let inst = small_instance(3000 + s as u64, 6, 2, 2, 6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + s as u64);
        let init = random_state(&mut rng, &inst, 0.5);
        let tau = 0.002 + rng.random::<f64>() * 0.01;
        let mu_h = rng.random::<f64>();

        let baseline_params = ObjectiveParams::new(mu_h, 0.0, 1e12, tau);
        let opts = FbsOptions {
            max_iter: 1,
            tol: 0.0,
            step_rule: StepRule::Fixed,
            backtracking: false,
            record_trace: false,
        };
        let base = fbs_solve_with(&inst, &baseline_params, init.clone(), &opts).unwrap();

        let layer = LayerParams {
            tau_h: tau,
            tau_x: tau,
            eta_h: 0.0,
            eta_x: 0.0,
            mu_h,
            lambda: 1.0,
            nu: -1.0,
            log_ne: 0.0,
        };
        let net_params = UnfoldedParams {
            layers: vec![layer],
            p_a: 0.5,
        };
        let net =
            run_network_with(&inst, &net_params, init.clone(), DataBackward::Identity).unwrap();

        let dh = base
            .state
            .h
            .iter()
            .zip(net.state.h.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        let dx = base
            .state
            .xd
            .iter()
            .zip(net.state.xd.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        worst = worst.max(dh).max(dx);
    }
    let detail = format!("{instances} instances, worst entry difference {worst:.3e} (tolerance 1e-12)");
    if worst <= 1e-12 {
        Check::pass(NAME, detail)
    } else {
        Check::fail(NAME, detail)
    }
}

/// Multi-layer cross-check: the network with the baseline's shrink-clip
/// data step reproduces several fixed-step baseline iterates.
pub fn multi_layer_equivalence_check(instances: usize, layers: usize) -> Check {
    const NAME: &str = "multi_layer_equivalence";
    let mut worst = 0.0f64;
    for s in 0..instances {
        let inst = small_instance(5000 + s as u64, 6, 2, 2, 6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + s as u64);
        let init = random_state(&mut rng, &inst, 0.3);
        let tau = 0.002 + rng.random::<f64>() * 0.008;
        let mu_h = rng.random::<f64>();
        let mu_x = rng.random::<f64>() * 0.5;

        let baseline_params = ObjectiveParams::new(mu_h, mu_x, inst.qpsk_amp, tau);
        let opts = FbsOptions {
            max_iter: layers,
            tol: 0.0,
            step_rule: StepRule::Fixed,
            backtracking: false,
            record_trace: false,
        };
        let base = fbs_solve_with(&inst, &baseline_params, init.clone(), &opts).unwrap();

        let layer = LayerParams {
            tau_h: tau,
            tau_x: tau,
            eta_h: 0.0,
            eta_x: 0.0,
            mu_h,
            lambda: 1.0,
            nu: 0.0,
            log_ne: 0.0,
        };
        let net_params = UnfoldedParams {
            layers: vec![layer; layers],
            p_a: 0.5,
        };
        let net = run_network_with(
            &inst,
            &net_params,
            init.clone(),
            DataBackward::ShrinkClip { mu_x },
        )
        .unwrap();

        let dh = base
            .state
            .h
            .iter()
            .zip(net.state.h.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        let dx = base
            .state
            .xd
            .iter()
            .zip(net.state.xd.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        worst = worst.max(dh).max(dx);
    }
    let detail = format!(
        "{instances} instances x {layers} layers, worst entry difference {worst:.3e} (tolerance 1e-12)"
    );
    if worst <= 1e-12 {
        Check::pass(NAME, detail)
    } else {
        Check::fail(NAME, detail)
    }
}

/// Five hand-counted UDER/ASER cases, compared exactly.
pub fn metrics_hand_check() -> Check {
    const NAME: &str = "metrics_hand_counts";
    let base = small_instance(7000, 4, 2, 2, 4, 8);
    let b = base.qpsk_amp;
    let qpsk = |re: bool, im: bool| {
        Complex64::new(if re { b } else { -b }, if im { b } else { -b })
    };

    let build = |xi: Vec<bool>| -> Instance {
        let mut inst = base.clone();
        inst.n_active = xi.iter().filter(|&&a| a).count();
        inst.x_d.fill(Complex64::new(0.0, 0.0));
        for (ue, &active) in xi.iter().enumerate() {
            if active {
                for r in 0..8 {
                    inst.x_d[(ue, r)] = qpsk(true, true);
                }
            }
        }
        inst.xi = xi;
        inst
    };

    let mut failures: Vec<String> = Vec::new();
    fn check_case(
        failures: &mut Vec<String>,
        name: &str,
        want_uder: f64,
        want_aser: f64,
        got: (f64, f64),
    ) {
        if got.0 != want_uder || got.1 != want_aser {
            failures.push(format!(
                "{name}: got ({}, {}), want ({want_uder}, {want_aser})",
                got.0, got.1
            ));
        }
    }

    // 1: perfect detection
    let inst = build(vec![true, false, true, false]);
    let m = compute_metrics(&inst, &inst.xi.clone(), &inst.x_d.clone());
    check_case(&mut failures, "perfect", 0.0, 0.0, (m.uder, m.aser));

    // 2: complemented activity decisions, symbols right
    let flipped: Vec<bool> = inst.xi.iter().map(|x| !x).collect();
    let m = compute_metrics(&inst, &flipped, &inst.x_d.clone());
    check_case(&mut failures, "complement", 1.0, 0.0, (m.uder, m.aser));

    // 3: one active UE, 2 of its 8 symbols wrong -> ASER 1/4
    let inst = build(vec![true, false, false, false]);
    let mut tilde = inst.x_d.clone();
    tilde[(0, 1)] = qpsk(false, true);
    tilde[(0, 6)] = qpsk(true, false);
    let m = compute_metrics(&inst, &inst.xi.clone(), &tilde);
    check_case(&mut failures, "quarter", 0.0, 0.25, (m.uder, m.aser));

    // 4: nobody active; one false alarm -> UDER 1/4, ASER 0 by convention
    let inst = build(vec![false, false, false, false]);
    let decisions = vec![true, false, false, false];
    let m = compute_metrics(&inst, &decisions, &inst.x_d.clone());
    check_case(&mut failures, "empty", 0.25, 0.0, (m.uder, m.aser));
    if m.aser_defined {
        failures.push("empty: aser_defined should be false".into());
    }

    // 5: two active UEs, 3 of 16 symbols wrong, one miss -> UDER 1/4,
    //    ASER 3/16 (errors counted pre-gating on truly active UEs)
    let inst = build(vec![true, true, false, false]);
    let mut tilde = inst.x_d.clone();
    tilde[(0, 0)] = qpsk(false, false);
    tilde[(1, 3)] = qpsk(false, true);
    tilde[(1, 4)] = qpsk(true, false);
    let decisions = vec![true, false, false, false];
    let m = compute_metrics(&inst, &decisions, &tilde);
    check_case(&mut failures, "three_sixteenths", 0.25, 3.0 / 16.0, (m.uder, m.aser));

    if failures.is_empty() {
        Check::pass(NAME, "5 constructed cases exact".into())
    } else {
        Check::fail(NAME, failures.join("; "))
    }
}

/// Noise-free exact recovery of the 6-UE toy scenario by the full-budget
/// joint solver.
pub fn noise_free_recovery_check(trials: usize, required: usize) -> Check {
    const NAME: &str = "noise_free_recovery";
    let cfg = ScenarioConfig {
        n_ue: 6,
        n_ap: 2,
        ant_per_ap: 2,
        pilot_len: 6,
        data_len: 8,
        activity_prob: 0.5,
        noise_scale: 0.0,
        rng_seed: 97,
        ..ScenarioConfig::paper_profile()
    };
    let params = ObjectiveParams::new(1e-3, 1e-3, cfg.qpsk_amp, 0.05);
    let pilots = generate_pilots(&cfg, &mut substream(cfg.rng_seed, STREAM_PILOTS)).unwrap();
    let t_aud = 1e-8;

    let mut successes = 0usize;
    for trial in 0..trials {
        let mut rng = substream(cfg.rng_seed, 100 + trial as u64);
        let geo = generate_geometry(&cfg, &mut rng).unwrap();
        let inst = generate_instance_with_pilots(&cfg, &geo, &pilots, &mut rng).unwrap();
        let Ok(est) = pilot_only_estimate(&inst, &params, 200, 1e-9) else {
            continue;
        };
        let init = SolverState::from_channel_estimate(est.h, inst.data_len(), inst.ant_per_ap);
        let Ok(run) = fbs_solve_with(
            &inst,
            &params,
            init,
            &FbsOptions::with_iterations(200, 1e-3),
        ) else {
            continue;
        };
        let xi_hat = crate::aud::energy_activity(&run.state.h, t_aud);
        let tilde = crate::aud::nearest_symbols(&run.state.xd, inst.qpsk_amp);
        let m = compute_metrics(&inst, &xi_hat, &tilde);
        if m.uder == 0.0 && m.aser == 0.0 {
            successes += 1;
        }
    }
    let detail = format!("{successes}/{trials} exact recoveries (required {required})");
    if successes >= required {
        Check::pass(NAME, detail)
    } else {
        Check::fail(NAME, detail)
    }
}

/// Two evaluation runs with identical config bytes must export identical
/// CSV bytes, and parsing must be idempotent.
pub fn csv_determinism_check() -> Check {
    const NAME: &str = "csv_determinism";
    let cfg = ExperimentConfig {
        scenario: ScenarioConfig {
            n_ue: 8,
            n_ap: 2,
            ant_per_ap: 2,
            pilot_len: 6,
            data_len: 8,
            activity_prob: 0.3,
            ..ScenarioConfig::paper_profile()
        },
        objective: ObjectiveParams::new(3.0, 0.5, 0.5f64.sqrt(), 1e-3),
        methods: vec![Method::Baseline1, Method::Baseline4Short],
        trials: 3,
        p_sweep: vec![2, 3],
        checkpoint: None,
        seed: 11,
        fbs_tol: 1e-3,
        init_max_iter: 60,
        init_tol: 1e-3,
        step_rule: StepRule::BarzilaiBorwein,
        t_aud: 1e-3,
        timing: Timing::None,
    };
    let a = match run_experiment(&cfg) {
        Ok(rows) => rows_to_csv(&rows),
        Err(e) => return Check::fail(NAME, format!("run failed: {e}")),
    };
    let b = match run_experiment(&cfg) {
        Ok(rows) => rows_to_csv(&rows),
        Err(e) => return Check::fail(NAME, format!("rerun failed: {e}")),
    };
    if a != b {
        return Check::fail(NAME, "two identical runs produced different bytes".into());
    }
    let parsed = match parse_csv(&a, "inline") {
        Ok(rows) => rows,
        Err(e) => return Check::fail(NAME, format!("parse failed: {e}")),
    };
    if rows_to_csv(&parsed) != a {
        return Check::fail(NAME, "csv round-trip changed bytes".into());
    }
    Check::pass(NAME, format!("{} rows byte-identical across runs", parsed.len()))
}

/// The quick battery behind `dujad verify`.
pub fn run_quick() -> Vec<Check> {
    vec![
        gradient_fd_check(3),
        prox_h_oracle_check(40),
        prox_xd_oracle_check(30),
        pme_factorization_check(25),
        alpha_range_check(20_000),
        layer_equivalence_check(3),
        multi_layer_equivalence_check(2, 3),
        metrics_hand_check(),
        noise_free_recovery_check(12, 11),
        csv_determinism_check(),
    ]
}
