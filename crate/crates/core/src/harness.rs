//! Monte-Carlo evaluation across AP counts with paired trials and CSV
//! export.
//!
//! Every trial draws one instance per AP count and runs all requested
//! methods from the same pilot-only initialization, so method comparisons
//! are paired. Trials use independent RNG sub-streams and may run in
//! parallel; row order and therefore output bytes are fixed by (config,
//! seed) alone.

use crate::aud::{compute_metrics, detect, energy_activity, nearest_symbols};
use crate::error::{CoreError, Result};
use crate::fbs::{
    fbs_solve_with, pilot_only_estimate, zf_detect, FbsOptions, ObjectiveParams, SolverState,
    StepRule,
};
use crate::io::Checkpoint;
use crate::scenario::{
    generate_geometry, generate_instance_with_pilots, generate_pilots, substream, ScenarioConfig,
    STREAM_PILOTS,
};
use crate::unfolded::run_network;
use rayon::prelude::*;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

/// Detection methods the harness can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Pilot-only channel estimation, energy-threshold activity detection,
    /// then zero-forcing data detection.
    Baseline1,
    /// Joint box-constrained FBS, full iteration budget (200).
    Baseline4Full,
    /// Joint box-constrained FBS capped at 10 iterations.
    Baseline4Short,
    /// The trained unfolded network with the soft-output activity head.
    DuJad,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Baseline1,
        Method::Baseline4Full,
        Method::Baseline4Short,
        Method::DuJad,
    ];

    /// Joint-solver iteration cap, where applicable.
    fn fbs_iterations(self) -> Option<usize> {
        match self {
            Method::Baseline4Full => Some(200),
            Method::Baseline4Short => Some(10),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Baseline1 => "baseline1",
            Method::Baseline4Full => "baseline4_200it",
            Method::Baseline4Short => "baseline4_10it",
            Method::DuJad => "dujad",
        };
        f.write_str(name)
    }
}

impl FromStr for Method {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline1" => Ok(Method::Baseline1),
            "baseline4_200it" => Ok(Method::Baseline4Full),
            "baseline4_10it" => Ok(Method::Baseline4Short),
            "dujad" => Ok(Method::DuJad),
            other => Err(CoreError::config(
                "methods",
                format!(
                    "unknown method `{other}` (expected baseline1, baseline4_200it, baseline4_10it, dujad)"
                ),
            )),
        }
    }
}

/// Wall-clock reporting policy. `None` writes zeros so that output bytes
/// are a pure function of (config, seed); `Wall` records measured seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Timing {
    #[default]
    None,
    Wall,
}

impl FromStr for Timing {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Timing::None),
            "wall" => Ok(Timing::Wall),
            other => Err(CoreError::config(
                "timing",
                format!("unknown timing mode `{other}` (expected none or wall)"),
            )),
        }
    }
}

/// Everything a reproducible evaluation run needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub objective: ObjectiveParams,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub p_sweep: Vec<usize>,
    /// Trained model; required when `methods` contains `dujad`.
    pub checkpoint: Option<Checkpoint>,
    pub seed: u64,
    /// Stopping tolerance of the joint FBS baselines.
    pub fbs_tol: f64,
    /// Iteration budget and tolerance of the shared pilot-only
    /// initialization stage.
    pub init_max_iter: usize,
    pub init_tol: f64,
    pub step_rule: StepRule,
    /// Channel-energy activity threshold of the baselines.
    pub t_aud: f64,
    pub timing: Timing,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.objective.validate()?;
        if self.trials < 1 {
            return Err(CoreError::config("trials", "must be >= 1"));
        }
        if self.p_sweep.is_empty() {
            return Err(CoreError::config("p_sweep", "must not be empty"));
        }
        if self.methods.is_empty() {
            return Err(CoreError::config("methods", "must not be empty"));
        }
        if self.methods.contains(&Method::DuJad) && self.checkpoint.is_none() {
            return Err(CoreError::config(
                "checkpoint",
                "the dujad method needs a trained checkpoint",
            ));
        }
        Ok(())
    }
}

/// One (method, AP count, trial) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub p: usize,
    pub trial: usize,
    pub uder: f64,
    pub aser: f64,
    pub iterations: usize,
    pub wall_time: f64,
}

/// Runs the sweep; rows are ordered by (sweep position, trial, method).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.p_sweep.len() * cfg.trials * cfg.methods.len());
    for (p_index, &p) in cfg.p_sweep.iter().enumerate() {
        let scenario = ScenarioConfig {
            n_ap: p,
            rng_seed: cfg.seed,
            ..cfg.scenario.clone()
        };
        scenario.validate()?;
        let pilots = generate_pilots(&scenario, &mut substream(cfg.seed, STREAM_PILOTS))?;

        let per_trial: Result<Vec<Vec<ResultRow>>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let stream = ((p_index as u64 + 1) << 32) | trial as u64;
                let mut rng = substream(cfg.seed, stream);
                let geo = generate_geometry(&scenario, &mut rng)?;
                let inst = generate_instance_with_pilots(&scenario, &geo, &pilots, &mut rng)?;
                let shared_init =
                    pilot_only_estimate(&inst, &cfg.objective, cfg.init_max_iter, cfg.init_tol)?;

                let mut trial_rows = Vec::with_capacity(cfg.methods.len());
                for &method in &cfg.methods {
                    let started = Instant::now();
                    let (uder, aser, iterations) = match method {
                        Method::Baseline1 => {
                            let xi_hat = energy_activity(&shared_init.h, cfg.t_aud);
                            let y_d = inst.y_data().to_owned();
                            let zf = zf_detect(&shared_init.h, &xi_hat, &y_d, inst.qpsk_amp)?;
                            let m = compute_metrics(&inst, &xi_hat, &zf.symbols);
                            (m.uder, m.aser, shared_init.iterations)
                        }
                        Method::Baseline4Full | Method::Baseline4Short => {
                            let opts = FbsOptions {
                                max_iter: method.fbs_iterations().expect("joint method"),
                                tol: cfg.fbs_tol,
                                step_rule: cfg.step_rule,
                                backtracking: true,
                                record_trace: false,
                            };
                            let init = SolverState::from_channel_estimate(
                                shared_init.h.clone(),
                                inst.data_len(),
                                inst.ant_per_ap,
                            );
                            let run = fbs_solve_with(&inst, &cfg.objective, init, &opts)?;
                            let xi_hat = energy_activity(&run.state.h, cfg.t_aud);
                            let tilde = nearest_symbols(&run.state.xd, inst.qpsk_amp);
                            let m = compute_metrics(&inst, &xi_hat, &tilde);
                            (m.uder, m.aser, run.iterations)
                        }
                        Method::DuJad => {
                            let ckpt = cfg.checkpoint.as_ref().expect("validated");
                            let init = SolverState::from_channel_estimate(
                                shared_init.h.clone(),
                                inst.data_len(),
                                inst.ant_per_ap,
                            );
                            let net = run_network(&inst, &ckpt.unfolded, init)?;
                            let report = detect(&net.state, &inst, &ckpt.aud);
                            (report.uder, report.aser, ckpt.unfolded.k())
                        }
                    };
                    let wall_time = match cfg.timing {
                        Timing::None => 0.0,
                        Timing::Wall => started.elapsed().as_secs_f64(),
                    };
                    trial_rows.push(ResultRow {
                        method,
                        p,
                        trial,
                        uder,
                        aser,
                        iterations,
                        wall_time,
                    });
                }
                Ok(trial_rows)
            })
            .collect();
        for trial_rows in per_trial? {
            rows.extend(trial_rows);
        }
    }
    Ok(rows)
}

/// Mean and standard error per (method, AP count).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub p: usize,
    pub count: usize,
    pub uder_mean: f64,
    pub uder_se: f64,
    pub aser_mean: f64,
    pub aser_se: f64,
}

/// Groups rows by (method, P) in order of first appearance.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<((Method, usize), Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        let key = (row.method, row.p);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    groups
        .into_iter()
        .map(|((method, p), members)| {
            let n = members.len();
            let mean = |sel: fn(&ResultRow) -> f64| -> f64 {
                members.iter().map(|r| sel(r)).sum::<f64>() / n as f64
            };
            let se = |sel: fn(&ResultRow) -> f64, mean: f64| -> f64 {
                if n < 2 {
                    return 0.0;
                }
                let var = members
                    .iter()
                    .map(|r| {
                        let d = sel(r) - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / (n - 1) as f64;
                (var / n as f64).sqrt()
            };
            let uder_mean = mean(|r| r.uder);
            let aser_mean = mean(|r| r.aser);
            SummaryRow {
                method,
                p,
                count: n,
                uder_mean,
                uder_se: se(|r| r.uder, uder_mean),
                aser_mean,
                aser_se: se(|r| r.aser, aser_mean),
            }
        })
        .collect()
}

/// Decimal rendering with 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

const CSV_HEADER: &str = "method,p,trial,uder,aser,iterations,wall_time";

/// Renders the result table; one header row, one line per result row,
/// newline-terminated.
pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.p,
            r.trial,
            fmt_sig9(r.uder),
            fmt_sig9(r.aser),
            r.iterations,
            fmt_sig9(r.wall_time)
        ));
    }
    out
}

/// Writes the result table to `path`.
pub fn export_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    std::fs::write(path, rows_to_csv(rows))
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Parses a file produced by `export_csv`.
pub fn parse_csv(text: &str, path_for_errors: &str) -> Result<Vec<ResultRow>> {
    let err = |line: usize, reason: String| CoreError::Parse {
        path: path_for_errors.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("unexpected header `{h}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err(lineno, format!("expected 7 fields, got {}", fields.len())));
        }
        rows.push(ResultRow {
            method: fields[0].parse()?,
            p: fields[1]
                .parse()
                .map_err(|_| err(lineno, "bad p".into()))?,
            trial: fields[2]
                .parse()
                .map_err(|_| err(lineno, "bad trial".into()))?,
            uder: fields[3]
                .parse()
                .map_err(|_| err(lineno, "bad uder".into()))?,
            aser: fields[4]
                .parse()
                .map_err(|_| err(lineno, "bad aser".into()))?,
            iterations: fields[5]
                .parse()
                .map_err(|_| err(lineno, "bad iterations".into()))?,
            wall_time: fields[6]
                .parse()
                .map_err(|_| err(lineno, "bad wall_time".into()))?,
        });
    }
    Ok(rows)
}

/// Renders the per-(method, P) summary as an aligned text table.
pub fn summary_table(summaries: &[SummaryRow]) -> String {
    let mut out = String::from("method            P   trials  uder_mean    uder_se      aser_mean    aser_se\n");
    for s in summaries {
        out.push_str(&format!(
            "{:<16} {:>3} {:>7}  {:<12.6} {:<12.6} {:<12.6} {:<12.6}\n",
            s.method.to_string(),
            s.p,
            s.count,
            s.uder_mean,
            s.uder_se,
            s.aser_mean,
            s.aser_se
        ));
    }
    out
}
