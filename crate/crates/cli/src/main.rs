//! Command-line harness: dataset generation, training, Monte-Carlo
//! evaluation, and the self-check battery.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dujad_core::config::Config;
use dujad_core::fbs::FbsOptions;
use dujad_core::harness::{aggregate, export_csv, run_experiment, summary_table, Method};
use dujad_core::io::{read_instances, write_checkpoint, write_instances, Checkpoint};
use dujad_core::scenario::{
    generate_geometry, generate_instance_with_pilots, generate_pilots, substream, Instance,
    STREAM_PILOTS,
};
use dujad_core::trainer::{build_dataset, train_aud_head, train_fbs_layers, Dataset, Example};
use dujad_core::verify::run_quick;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "dujad",
    about = "Joint activity and data detection for grant-free cell-free uplink",
    long_about = "Simulates grant-free uplink in a cell-free system, trains the unfolded \
                  detector, and benchmarks it against the FBS baselines. The worker pool \
                  size follows RAYON_NUM_THREADS."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of instances and write it to a binary file.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
        /// Number of instances (defaults to experiment.gen_count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the unfolded network and AUD head, writing a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Reuse instances from a `gen` file instead of generating.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the Monte-Carlo evaluation sweep and export a CSV.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Results CSV path (defaults to experiment.output).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trained checkpoint (defaults to experiment.checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated method list.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Run the oracle and property self-checks.
    Verify,
}

fn load_config(common: &CommonArgs) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
        cfg.scenario.rng_seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn main() {
    let cli = Cli::parse();
    let status = match cli.command {
        Command::Gen { common, out, count } => cmd_gen(&common, &out, count),
        Command::Train { common, out, data } => cmd_train(&common, &out, data),
        Command::Eval {
            common,
            out,
            checkpoint,
            trials,
            methods,
        } => cmd_eval(&common, out, checkpoint, trials, methods),
        Command::Verify => cmd_verify(),
    };
    if let Err(err) = status {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn cmd_gen(common: &CommonArgs, out: &PathBuf, count: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let scenario = cfg.scenario.clone();
    let count = count.unwrap_or(cfg.experiment.gen_count);
    if count == 0 {
        bail!("instance count must be positive");
    }
    let pilots = generate_pilots(&scenario, &mut substream(scenario.rng_seed, STREAM_PILOTS))?;
    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = substream(scenario.rng_seed, (1 << 20) + i as u64);
        let geo = generate_geometry(&scenario, &mut rng)?;
        instances.push(generate_instance_with_pilots(
            &scenario, &geo, &pilots, &mut rng,
        )?);
    }
    write_instances(out, scenario.qpsk_amp, &instances)?;
    println!(
        "wrote {} instances ({} UEs, {} APs x {} antennas) to {}",
        count,
        scenario.n_ue,
        scenario.n_ap,
        scenario.ant_per_ap,
        out.display()
    );
    Ok(())
}

fn cmd_train(common: &CommonArgs, out: &PathBuf, data_path: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common)?;
    let needed = cfg.train.n_train + cfg.train.n_val;
    let init_opts = FbsOptions::with_iterations(cfg.solver.init_max_iter, cfg.solver.init_tol);

    let data: Dataset = match data_path {
        Some(path) => {
            let (_, _, instances) = read_instances(&path)?;
            if instances.len() < needed {
                bail!(
                    "dataset file has {} instances, training needs {needed}",
                    instances.len()
                );
            }
            dataset_from_instances(&cfg, instances, &init_opts)?
        }
        None => build_dataset(&cfg.scenario, &cfg.objective, needed, &init_opts)?,
    };

    println!(
        "training {} layers on {} instances (validation {})",
        cfg.train.layers, cfg.train.n_train, cfg.train.n_val
    );
    let (unfolded, trace) = train_fbs_layers(&data, &cfg.train)?;
    println!(
        "network: validation loss {:.4} -> {:.4} (best epoch {})",
        trace.init_val_loss, trace.best_val_loss, trace.best_epoch
    );
    let (aud, aud_trace) = train_aud_head(&data, &unfolded, &cfg.train)?;
    println!(
        "aud head: validation BCE {:.4} -> {:.4} (best epoch {})",
        aud_trace.init_val_loss, aud_trace.best_val_loss, aud_trace.best_epoch
    );

    write_checkpoint(out, &Checkpoint { unfolded, aud })?;
    let trace_path = out.with_extension("trace.txt");
    std::fs::write(
        &trace_path,
        format!("{}\n{}", trace.to_table(), aud_trace.to_table()),
    )
    .with_context(|| format!("writing {}", trace_path.display()))?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn dataset_from_instances(
    cfg: &Config,
    instances: Vec<Instance>,
    init_opts: &FbsOptions,
) -> Result<Dataset> {
    use rayon::prelude::*;
    let examples: dujad_core::Result<Vec<Example>> = instances
        .into_par_iter()
        .map(|inst| {
            let est = dujad_core::fbs::pilot_only_estimate(
                &inst,
                &cfg.objective,
                init_opts.max_iter,
                init_opts.tol,
            )?;
            Ok(Example {
                inst,
                init_h: est.h,
            })
        })
        .collect();
    Ok(Dataset {
        scenario: cfg.scenario.clone(),
        objective: cfg.objective.clone(),
        examples: examples?,
    })
}

fn cmd_eval(
    common: &CommonArgs,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    trials: Option<usize>,
    methods: Option<String>,
) -> Result<()> {
    if common.config.is_none() {
        bail!("eval needs --config (scenario, objective, and sweep settings)");
    }
    let mut cfg = load_config(common)?;
    if let Some(ckpt) = checkpoint {
        cfg.experiment.checkpoint = Some(ckpt);
    }
    if let Some(t) = trials {
        cfg.experiment.trials = t;
    }
    if let Some(spec) = methods {
        let parsed: dujad_core::Result<Vec<Method>> =
            spec.split(',').map(|t| t.trim().parse()).collect();
        cfg.experiment.methods = parsed?;
    }
    let out = match out.or_else(|| cfg.experiment.output.clone()) {
        Some(p) => p,
        None => bail!("eval needs --out (or experiment.output in the config)"),
    };

    let experiment = cfg.experiment_config()?;
    experiment.validate()?;
    // Fail on an unwritable output before any computation.
    std::fs::write(&out, "")
        .with_context(|| format!("output {} is not writable", out.display()))?;

    let rows = run_experiment(&experiment)?;
    export_csv(&rows, &out)?;
    let summary = aggregate(&rows);
    print!("{}", summary_table(&summary));
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_verify() -> Result<()> {
    let checks = run_quick();
    let mut failed = 0usize;
    for check in &checks {
        let status = if check.passed { "ok" } else { "FAIL" };
        println!("{:<30} {:>4}  {}", check.name, status, check.detail);
        if !check.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
