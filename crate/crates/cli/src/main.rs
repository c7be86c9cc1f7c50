use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod settings;

#[derive(Parser, Debug)]
#[command(name = "cono", version, about = "Complex fractional-Fourier neural operators on grid PDE data")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Flags every experiment command accepts.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set modes=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Pde {
    Burgers,
    Darcy,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset file.
    Gen {
        pde: Pde,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long = "dt-out")]
        dt_out: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a dataset; writes model.ck, metrics.csv and train.log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        modes: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Resample the data to this many points per dimension first.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment protocol and write one CSV row per condition.
    Protocol {
        kind: String,
        #[arg(long)]
        data: PathBuf,
        /// Extra evaluation set; keyed by its grid size or its beta.
        #[arg(long = "extra")]
        extras: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        gammas: Option<String>,
        #[arg(long)]
        betas: Option<String>,
        #[arg(long)]
        fractions: Option<String>,
        #[arg(long)]
        resolutions: Option<String>,
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        modes: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Fractional Fourier transform of a signal, or the property suite.
    Frft {
        /// Dataset file (first input field) or text with one `re [im]` per line.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the algebraic property suite instead.
        #[arg(long)]
        check: bool,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 || rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            eprintln!("error: cannot use {t} threads");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Gen {
            pde,
            n,
            nx,
            nu,
            beta,
            dt_out,
            out,
            common,
        } => {
            let mut flags = Vec::new();
            push(&mut flags, "n", n);
            push(&mut flags, "nx", nx);
            push(&mut flags, "nu", nu);
            push(&mut flags, "beta", beta);
            push(&mut flags, "dt_out", dt_out);
            commands::gen(pde, out, &common, flags)
        }
        Command::Train {
            data,
            out_dir,
            epochs,
            lr,
            batch,
            ablation,
            modes,
            common,
        } => {
            let mut flags = Vec::new();
            push(&mut flags, "epochs", epochs);
            push(&mut flags, "lr", lr);
            push(&mut flags, "batch", batch);
            push(&mut flags, "ablation", ablation);
            push(&mut flags, "modes", modes);
            commands::train(&data, &out_dir, &common, flags)
        }
        Command::Eval {
            ckpt,
            data,
            resolution,
            out,
        } => commands::eval(&ckpt, &data, resolution, out.as_deref()),
        Command::Protocol {
            kind,
            data,
            extras,
            out,
            epochs,
            repeats,
            gammas,
            betas,
            fractions,
            resolutions,
            ablation,
            modes,
            common,
        } => {
            let mut flags = Vec::new();
            push(&mut flags, "epochs", epochs);
            push(&mut flags, "repeats", repeats);
            push(&mut flags, "gammas", gammas);
            push(&mut flags, "betas", betas);
            push(&mut flags, "fractions", fractions);
            push(&mut flags, "resolutions", resolutions);
            push(&mut flags, "ablation", ablation);
            push(&mut flags, "modes", modes);
            commands::protocol(&kind, &data, &extras, out.as_deref(), &common, flags)
        }
        Command::Frft {
            input,
            alpha,
            out,
            check,
            n,
            seed,
        } => {
            if check {
                commands::frft_check(n, seed)
            } else {
                match input {
                    Some(input) => commands::frft(&input, alpha, out.as_deref()),
                    None => Err(commands::usage("frft needs --input or --check")),
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn push<T: ToString>(flags: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        flags.push((key.to_string(), v.to_string()));
    }
}
