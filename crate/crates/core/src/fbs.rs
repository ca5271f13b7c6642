//! Box-constrained forward-backward splitting for joint activity and data
//! detection.
//!
//! The composite objective is
//! `f(S) + g(S)` with `f(S) = 0.5 ||Y - H [X_P, X_D]||_F^2` and
//! `g(S) = mu_h sum ||h_{n,p}|| + mu_x sum ||x_{D,n}|| + indicator(X_D in box)`,
//! where the box is `|Re| <= B`, `|Im| <= B` per entry. The solver alternates
//! a gradient step on `f` with the proximal operators of `g`, using a
//! Barzilai-Borwein step size safeguarded by a backtracking line search.

use crate::error::{CoreError, Result};
use crate::linalg::{fro_sq, hcat, herm, inner_re, vec_norm, CMat, CVec};
use crate::scenario::Instance;
use ndarray::{s, ArrayView1, Axis};
use num_complex::Complex64;

/// Iterate of the joint solver: channel and data estimates plus the
/// momentum buffers used by the unfolded network.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Channel estimate, MP x N.
    pub h: CMat,
    /// Data estimate, N x R_D.
    pub xd: CMat,
    /// Channel momentum buffer, MP x N; zero at iteration 0.
    pub d_h: CMat,
    /// Data momentum buffer, N x R_D; zero at iteration 0.
    pub d_x: CMat,
    /// Iteration / layer counter.
    pub iter: usize,
    /// Antennas per AP: the channel rows group into blocks of this size.
    pub ant_per_ap: usize,
}

impl SolverState {
    /// State with zero momentum buffers.
    pub fn new(h: CMat, xd: CMat, ant_per_ap: usize) -> Self {
        assert!(ant_per_ap >= 1 && h.nrows() % ant_per_ap == 0);
        let d_h = CMat::zeros(h.dim());
        let d_x = CMat::zeros(xd.dim());
        SolverState {
            h,
            xd,
            d_h,
            d_x,
            iter: 0,
            ant_per_ap,
        }
    }

    /// Initialization used by the baselines and the unfolded network:
    /// channel from the pilot-only estimate, data all zero.
    pub fn from_channel_estimate(h: CMat, data_len: usize, ant_per_ap: usize) -> Self {
        let n = h.ncols();
        let xd = CMat::zeros((n, data_len));
        Self::new(h, xd, ant_per_ap)
    }

    /// Stacked variable `[H; X_D^H]` of shape (MP + R_D) x N.
    pub fn stacked(&self) -> CMat {
        ndarray::concatenate![Axis(0), self.h.view(), herm(&self.xd).view()]
    }
}

/// Weights of the composite objective plus the baseline step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParams {
    /// Group-sparsity weight on the per-AP channel blocks.
    pub mu_h: f64,
    /// Row-sparsity weight on the data matrix.
    pub mu_x: f64,
    /// Box half-width B (the QPSK half-amplitude).
    pub b: f64,
    /// Initial step size of the solver.
    pub tau: f64,
}

impl ObjectiveParams {
    pub fn new(mu_h: f64, mu_x: f64, b: f64, tau: f64) -> Self {
        ObjectiveParams { mu_h, mu_x, b, tau }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu_h < 0.0 {
            return Err(CoreError::config("mu_h", "must be >= 0"));
        }
        if self.mu_x < 0.0 {
            return Err(CoreError::config("mu_x", "must be >= 0"));
        }
        if !(self.b > 0.0) {
            return Err(CoreError::config("b", "must be > 0"));
        }
        if !(self.tau > 0.0) {
            return Err(CoreError::config("tau", "must be > 0"));
        }
        Ok(())
    }
}

/// Smooth part of the objective: `0.5 ||Y - H [X_P, X_D]||_F^2`.
pub fn eval_f(state: &SolverState, inst: &Instance) -> f64 {
    assert_eq!(
        state.h.dim(),
        inst.h.dim(),
        "channel estimate shape mismatch"
    );
    assert_eq!(state.xd.dim(), inst.x_d.dim(), "data estimate shape mismatch");
    let x = hcat(inst.x_p.view(), state.xd.view());
    let resid = &inst.y - &state.h.dot(&x);
    0.5 * fro_sq(&resid)
}

/// Nonsmooth part: group norms plus the box indicator (`+inf` outside).
pub fn eval_g(state: &SolverState, params: &ObjectiveParams) -> f64 {
    let mp = state.h.nrows();
    let ant_per_ap = state.ant_per_ap;
    let mut g = 0.0;
    for col in state.h.columns() {
        for block in 0..(mp / ant_per_ap) {
            let blk = col.slice(s![block * ant_per_ap..(block + 1) * ant_per_ap]);
            g += params.mu_h * vec_norm(blk);
        }
    }
    for row in state.xd.rows() {
        g += params.mu_x * vec_norm(row);
    }
    let inside = state
        .xd
        .iter()
        .all(|z| z.re.abs() <= params.b && z.im.abs() <= params.b);
    if inside {
        g
    } else {
        f64::INFINITY
    }
}

/// Gradient of `f` with respect to `(H, X_D)` in the convention verified by
/// the finite-difference oracle: `grad_H = -(Y - H X) X^H` and
/// `grad_XD = -H^H (Y_D - H X_D)`.
pub fn grad_f(state: &SolverState, inst: &Instance) -> (CMat, CMat) {
    let (_, desc_h, desc_x) = descent_terms(state, inst);
    (-desc_h, -desc_x)
}

/// Residual-based quantities shared by every solver step: the value of `f`
/// and the descent directions `(Y - H X) X^H` and `H^H (Y_D - H X_D)`
/// (the negated gradient blocks).
fn descent_terms(state: &SolverState, inst: &Instance) -> (f64, CMat, CMat) {
    let x = hcat(inst.x_p.view(), state.xd.view());
    let resid = &inst.y - &state.h.dot(&x);
    let f = 0.5 * fro_sq(&resid);
    let desc_h = resid.dot(&herm(&x));
    let r_p = inst.x_p.ncols();
    let resid_d = resid.slice(s![.., r_p..]);
    let desc_x = herm(&state.h).dot(&resid_d);
    (f, desc_h, desc_x)
}

/// Group soft-threshold of one channel block:
/// `max(||v|| - t, 0) * v / ||v||`, zero for a zero block.
pub fn prox_h(block: ArrayView1<'_, Complex64>, threshold: f64) -> CVec {
    debug_assert!(threshold >= 0.0);
    let norm = vec_norm(block);
    if norm == 0.0 {
        return CVec::zeros(block.len());
    }
    let scale = (norm - threshold).max(0.0) / norm;
    block.mapv(|z| z * scale)
}

/// Data-row backward step: group shrinkage followed by clipping the real
/// and imaginary parts to `[-B, B]`. Exact for the composite prox whenever
/// the shrunk point already lies inside the box.
pub fn prox_xd_row(row: ArrayView1<'_, Complex64>, threshold: f64, b: f64) -> CVec {
    debug_assert!(threshold >= 0.0 && b > 0.0);
    let norm = vec_norm(row);
    if norm == 0.0 {
        return CVec::zeros(row.len());
    }
    let scale = (norm - threshold).max(0.0) / norm;
    row.mapv(|z| {
        let v = z * scale;
        Complex64::new(v.re.clamp(-b, b), v.im.clamp(-b, b))
    })
}

/// Applies `prox_h` to every (UE, AP) block of the channel matrix in place.
pub fn backward_channel(h: &mut CMat, ant_per_ap: usize, threshold: f64) {
    let mp = h.nrows();
    debug_assert_eq!(mp % ant_per_ap, 0);
    for mut col in h.columns_mut() {
        for block in 0..(mp / ant_per_ap) {
            let range = block * ant_per_ap..(block + 1) * ant_per_ap;
            let updated = prox_h(col.slice(s![range.clone()]), threshold);
            col.slice_mut(s![range]).assign(&updated);
        }
    }
}

/// Applies `prox_xd_row` to every data row in place.
pub fn backward_data(xd: &mut CMat, threshold: f64, b: f64) {
    for mut row in xd.rows_mut() {
        let updated = prox_xd_row(row.view(), threshold, b);
        row.assign(&updated);
    }
}

/// Momentum forward step shared by the baseline solver (momentum off) and
/// the unfolded network. Updates the buffers as
/// `D <- tau * descent + eta * D_prev` and adds `D` to the iterate.
pub fn momentum_forward(
    state: &SolverState,
    inst: &Instance,
    tau_h: f64,
    tau_x: f64,
    eta_h: f64,
    eta_x: f64,
) -> SolverState {
    let (_, desc_h, desc_x) = descent_terms(state, inst);
    let new_dh = desc_h * Complex64::new(tau_h, 0.0) + &state.d_h * Complex64::new(eta_h, 0.0);
    let new_dx = desc_x * Complex64::new(tau_x, 0.0) + &state.d_x * Complex64::new(eta_x, 0.0);
    SolverState {
        h: &state.h + &new_dh,
        xd: &state.xd + &new_dx,
        d_h: new_dh,
        d_x: new_dx,
        iter: state.iter + 1,
        ant_per_ap: state.ant_per_ap,
    }
}

/// Step-size rule of the baseline solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// Spectral (Barzilai-Borwein) step with safeguards.
    BarzilaiBorwein,
    /// Keep the configured `tau` for every iteration.
    Fixed,
}

/// Knobs of `fbs_solve` beyond the objective itself.
#[derive(Debug, Clone)]
pub struct FbsOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub step_rule: StepRule,
    pub backtracking: bool,
    pub record_trace: bool,
}

impl FbsOptions {
    /// The baseline evaluation protocol: 200 iterations, tolerance 1e-3.
    pub fn baseline_protocol() -> Self {
        FbsOptions {
            max_iter: 200,
            tol: 1e-3,
            step_rule: StepRule::BarzilaiBorwein,
            backtracking: true,
            record_trace: false,
        }
    }

    pub fn with_iterations(max_iter: usize, tol: f64) -> Self {
        FbsOptions {
            max_iter,
            tol,
            ..Self::baseline_protocol()
        }
    }
}

/// One row of the optional solver trace.
#[derive(Debug, Clone, Copy)]
pub struct FbsTraceRow {
    pub iteration: usize,
    pub f: f64,
    pub g: f64,
    pub step: f64,
}

/// Solver output: final state plus convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct FbsRun {
    pub state: SolverState,
    pub iterations: usize,
    /// Final composite objective value f + g.
    pub objective: f64,
    pub converged: bool,
    pub trace: Vec<FbsTraceRow>,
}

/// Renders a solver trace as CSV (iteration, f, g, step).
pub fn trace_to_csv(rows: &[FbsTraceRow]) -> String {
    let mut out = String::from("iteration,f,g,step\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{:e},{:e}\n", r.iteration, r.f, r.g, r.step));
    }
    out
}

/// Joint FBS solve of the composite objective from the given state.
pub fn fbs_solve(
    inst: &Instance,
    params: &ObjectiveParams,
    init: SolverState,
    max_iter: usize,
    tol: f64,
) -> Result<FbsRun> {
    fbs_solve_with(inst, params, init, &FbsOptions::with_iterations(max_iter, tol))
}

/// `fbs_solve` with explicit step-rule and trace options.
pub fn fbs_solve_with(
    inst: &Instance,
    params: &ObjectiveParams,
    init: SolverState,
    opts: &FbsOptions,
) -> Result<FbsRun> {
    params.validate()?;
    if opts.max_iter < 1 {
        return Err(CoreError::config("max_iter", "must be >= 1"));
    }
    let ant_per_ap = init.ant_per_ap;
    let mut state = init;
    // Separate spectral steps for the channel and data blocks; their value
    // ranges differ by orders of magnitude.
    let mut tau_h = params.tau;
    let mut tau_x = params.tau;
    let mut trace = Vec::new();
    let (mut f_cur, mut desc_h, mut desc_x) = descent_terms(&state, inst);
    let mut g_cur = eval_g(&state, params);
    let mut iterations = 0;
    let mut converged = false;

    for k in 0..opts.max_iter {
        if opts.record_trace {
            trace.push(FbsTraceRow {
                iteration: k,
                f: f_cur,
                g: g_cur,
                step: tau_h,
            });
        }
        if !f_cur.is_finite() {
            return Err(CoreError::Diverged {
                iteration: k,
                objective: f_cur,
            });
        }

        let mut accepted = None;
        let mut shrink = 1.0f64;
        for _ in 0..40 {
            let th = tau_h * shrink;
            let tx = tau_x * shrink;
            let mut h_next = &state.h + &(&desc_h * Complex64::new(th, 0.0));
            let mut xd_next = &state.xd + &(&desc_x * Complex64::new(tx, 0.0));
            backward_channel(&mut h_next, ant_per_ap, th * params.mu_h);
            backward_data(&mut xd_next, tx * params.mu_x, params.b);
            let cand = SolverState {
                h: h_next,
                xd: xd_next,
                d_h: state.d_h.clone(),
                d_x: state.d_x.clone(),
                iter: state.iter + 1,
                ant_per_ap,
            };
            let (f_next, dh_next, dx_next) = descent_terms(&cand, inst);
            if !opts.backtracking {
                accepted = Some((cand, f_next, dh_next, dx_next));
                break;
            }
            let delta_h = &cand.h - &state.h;
            let delta_x = &cand.xd - &state.xd;
            // Prox-gradient sufficient decrease; <grad f, delta> equals
            // minus the inner product with the descent terms.
            let lin = -(inner_re(&desc_h, &delta_h) + inner_re(&desc_x, &delta_x));
            let quad = fro_sq(&delta_h) / (2.0 * th) + fro_sq(&delta_x) / (2.0 * tx);
            let bound = f_cur + lin + quad + 1e-12 * (1.0 + f_cur.abs());
            let sufficient = f_next.is_finite() && f_next <= bound;
            // A plain composite decrease also keeps the solve monotone and
            // admits the long spectral steps the box prox truncates.
            let monotone = f_next.is_finite() && {
                let g_next = eval_g(&cand, params);
                f_next + g_next <= f_cur + g_cur + 1e-12 * (1.0 + (f_cur + g_cur).abs())
            };
            if sufficient || monotone {
                accepted = Some((cand, f_next, dh_next, dx_next));
                break;
            }
            shrink *= 0.5;
        }
        let Some((cand, f_next, dh_next, dx_next)) = accepted else {
            // Step collapsed to nothing; report what we have.
            converged = true;
            break;
        };

        let delta_h = &cand.h - &state.h;
        let delta_x = &cand.xd - &state.xd;
        let step_sq = fro_sq(&delta_h) + fro_sq(&delta_x);
        let state_sq = fro_sq(&state.h) + fro_sq(&state.xd);

        match opts.step_rule {
            StepRule::Fixed => {
                tau_h = params.tau;
                tau_x = params.tau;
            }
            StepRule::BarzilaiBorwein => {
                // Per-block adaptive spectral steps, blending the
                // steepest-descent and minimal-residual estimates.
                let spectral = |delta: &CMat, grad_change: &CMat, fallback: f64| -> f64 {
                    let ss = fro_sq(delta);
                    let sy = inner_re(delta, grad_change);
                    let yy = fro_sq(grad_change);
                    if sy > 1e-30 && ss > 0.0 {
                        let sd = ss / sy;
                        let mr = sy / yy.max(1e-300);
                        let tau = if mr / sd > 0.5 { mr } else { sd - 0.5 * mr };
                        tau.clamp(1e-12, 1e12)
                    } else {
                        (fallback * 2.0).clamp(1e-12, 1e12)
                    }
                };
                tau_h = spectral(&delta_h, &(&desc_h - &dh_next), tau_h * shrink);
                tau_x = spectral(&delta_x, &(&desc_x - &dx_next), tau_x * shrink);
            }
        };

        state = cand;
        f_cur = f_next;
        desc_h = dh_next;
        desc_x = dx_next;
        g_cur = eval_g(&state, params);
        iterations = k + 1;

        let rel = step_sq.sqrt() / state_sq.sqrt().max(1e-12);
        if rel < opts.tol {
            converged = true;
            break;
        }
    }

    if opts.record_trace {
        trace.push(FbsTraceRow {
            iteration: iterations,
            f: f_cur,
            g: g_cur,
            step: tau_h,
        });
    }
    Ok(FbsRun {
        state,
        iterations,
        objective: f_cur + g_cur,
        converged,
        trace,
    })
}

/// Pilot-only channel estimation: FBS on
/// `0.5 ||Y_P - H X_P||^2 + mu_h sum ||h_{n,p}||` over `H` alone, from zero.
/// Used as Baseline 1's estimation stage and as the shared initialization
/// of the joint solvers.
#[derive(Debug, Clone)]
pub struct PilotEstimate {
    pub h: CMat,
    pub iterations: usize,
    pub objective: f64,
}

pub fn pilot_only_estimate(
    inst: &Instance,
    params: &ObjectiveParams,
    max_iter: usize,
    tol: f64,
) -> Result<PilotEstimate> {
    params.validate()?;
    if inst.x_p.ncols() < 1 {
        return Err(CoreError::config("pilot_len", "must be >= 1"));
    }
    let ant_per_ap = inst.ant_per_ap;
    let y_p = inst.y_pilot().to_owned();
    let xp_h = herm(&inst.x_p);
    let mp = inst.y.nrows();
    let n = inst.x_p.nrows();

    let eval = |h: &CMat| -> (f64, CMat) {
        let resid = &y_p - &h.dot(&inst.x_p);
        (0.5 * fro_sq(&resid), resid.dot(&xp_h))
    };

    let mut h = CMat::zeros((mp, n));
    let (mut f_cur, mut desc) = eval(&h);
    let mut tau = params.tau;
    let mut iterations = 0;

    for k in 0..max_iter {
        if !f_cur.is_finite() {
            return Err(CoreError::Diverged {
                iteration: k,
                objective: f_cur,
            });
        }
        let mut accepted = None;
        let mut bt_tau = tau;
        for _ in 0..40 {
            let mut cand = &h + &(&desc * Complex64::new(bt_tau, 0.0));
            backward_channel(&mut cand, ant_per_ap, bt_tau * params.mu_h);
            let (f_next, desc_next) = eval(&cand);
            let delta = &cand - &h;
            let step_sq = fro_sq(&delta);
            let lin = -inner_re(&desc, &delta);
            let bound = f_cur + lin + step_sq / (2.0 * bt_tau) + 1e-12 * (1.0 + f_cur.abs());
            if f_next.is_finite() && f_next <= bound {
                accepted = Some((cand, f_next, desc_next, step_sq));
                break;
            }
            bt_tau *= 0.5;
        }
        let Some((cand, f_next, desc_next, step_sq)) = accepted else {
            break;
        };

        let curvature = inner_re(&(&cand - &h), &(&desc - &desc_next));
        tau = if curvature > 1e-30 && step_sq > 0.0 {
            (step_sq / curvature).clamp(1e-12, 1e12)
        } else {
            (bt_tau * 2.0).clamp(1e-12, 1e12)
        };

        let h_sq = fro_sq(&h);
        h = cand;
        f_cur = f_next;
        desc = desc_next;
        iterations = k + 1;
        if step_sq.sqrt() / h_sq.sqrt().max(1e-12) < tol {
            break;
        }
    }

    let g: f64 = {
        let mut acc = 0.0;
        for col in h.columns() {
            for block in 0..(mp / ant_per_ap) {
                let blk = col.slice(s![block * ant_per_ap..(block + 1) * ant_per_ap]);
                acc += params.mu_h * vec_norm(blk);
            }
        }
        acc
    };
    Ok(PilotEstimate {
        h,
        iterations,
        objective: f_cur + g,
    })
}

/// Zero-forcing data detection given a channel estimate and activity set.
#[derive(Debug, Clone)]
pub struct ZfDetection {
    /// Detected symbols, N x R_D; rows of inactive UEs are zero and active
    /// rows hold the nearest QPSK points of the equalized estimates.
    pub symbols: CMat,
    /// True when the active channel was rank-deficient (or overloaded) and
    /// a regularized solve was used instead of plain least squares.
    pub rank_deficient: bool,
}

pub fn zf_detect(
    h_hat: &CMat,
    active: &[bool],
    y_d: &CMat,
    b: f64,
) -> Result<ZfDetection> {
    let n = h_hat.ncols();
    if active.len() != n {
        return Err(CoreError::ShapeMismatch {
            what: "activity vector",
            expected: format!("{n}"),
            got: format!("{}", active.len()),
        });
    }
    let idx: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    let r_d = y_d.ncols();
    let mut symbols = CMat::zeros((n, r_d));
    if idx.is_empty() {
        return Ok(ZfDetection {
            symbols,
            rank_deficient: false,
        });
    }

    let mp = h_hat.nrows();
    let mut h_act = CMat::zeros((mp, idx.len()));
    for (col, &i) in idx.iter().enumerate() {
        h_act.column_mut(col).assign(&h_hat.column(i));
    }
    let gram = herm(&h_act).dot(&h_act);
    let rhs = herm(&h_act).dot(y_d);

    let mut rank_deficient = idx.len() > mp;
    let solution = match crate::linalg::cholesky_solve(&gram, &rhs, 1e-12) {
        Some(x) if !rank_deficient => x,
        maybe => {
            rank_deficient = true;
            let trace: f64 = (0..gram.nrows()).map(|i| gram[(i, i)].re).sum();
            let mut ridge = 1e-10 * (trace / gram.nrows() as f64).max(f64::MIN_POSITIVE);
            let mut solved = maybe.filter(|_| false);
            for _ in 0..40 {
                let reg = &gram + &(CMat::eye(gram.nrows()) * Complex64::new(ridge, 0.0));
                if let Some(x) = crate::linalg::cholesky_solve(&reg, &rhs, 1e-14) {
                    solved = Some(x);
                    break;
                }
                ridge *= 10.0;
            }
            solved.ok_or_else(|| {
                CoreError::Domain("zero-forcing normal equations unsolvable".into())
            })?
        }
    };

    for (row, &i) in idx.iter().enumerate() {
        for r in 0..r_d {
            let v = solution[(row, r)];
            symbols[(i, r)] = Complex64::new(
                if v.re >= 0.0 { b } else { -b },
                if v.im >= 0.0 { b } else { -b },
            );
        }
    }
    Ok(ZfDetection {
        symbols,
        rank_deficient,
    })
}
