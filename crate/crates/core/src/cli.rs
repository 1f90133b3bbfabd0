//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or config, 3 train/fused state, 4 I/O or
//! file format.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchOptions};
use crate::error::{Error, Result};
use crate::model::{analyze, build, top_k, Form, Init, Model, ModelConfig};
use crate::tensor::{rvt, Tensor};
use crate::weights_io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STATE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Seed of the first divergence probe used by `fuse`.
pub const FUSE_PROBE_SEED: u64 = 1000;

#[derive(Debug, Parser)]
#[command(
    name = "repvit",
    version,
    about = "RepViT CPU inference, re-parameterization and cost analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitArg {
    Zero,
    Constant,
    Seeded,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormArg {
    Train,
    Fused,
}

impl From<FormArg> for Form {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Train => Form::Train,
            FormArg::Fused => Form::Fused,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a model from a config and write a train-form checkpoint.
    Build {
        /// JSON config file, or `builtin:m0.9`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "seeded")]
        init: InitArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fill value for `--init constant`.
        #[arg(long, default_value_t = 0.0)]
        value: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report parameters and MACs per layer.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Square input side; defaults to the config's input_resolution.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, value_enum, default_value = "fused")]
        form: FormArg,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Convert a train-form checkpoint into fused form.
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of seeded random inputs used to measure divergence.
        #[arg(long, default_value_t = 8)]
        probes: usize,
    },
    /// Time batch forwards of a checkpoint.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        #[arg(long, default_value_t = 200)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print the top-K classes for a `.rvt` input tensor.
    Classify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        topk: usize,
    },
    /// Write a seeded uniform [-1, 1) `.rvt` tensor.
    GenInput {
        /// Comma-separated N,C,H,W.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Shape(_) | Error::Domain(_) => EXIT_CONFIG,
        Error::State(_) => EXIT_STATE,
        Error::Io(_) | Error::Format { .. } | Error::Integrity(_) => EXIT_IO,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return e.exit_code();
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e)
}

pub fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Build {
            config,
            init,
            seed,
            value,
            out: path,
        } => {
            let cfg = ModelConfig::load(&config)?;
            let init = match init {
                InitArg::Zero => Init::Zero,
                InitArg::Constant => Init::Constant(value),
                InitArg::Seeded => Init::SeededUniform(seed),
            };
            let model = build(&cfg, init)?;
            weights_io::save(&model, &path)?;
            writeln!(
                out,
                "wrote {} ({} form) to {}",
                cfg.name,
                model.form(),
                path.display()
            )
            .map_err(io)?;
        }
        Command::Analyze {
            config,
            resolution,
            form,
            json,
        } => {
            let cfg = ModelConfig::load(&config)?;
            let report = analyze(
                &cfg,
                resolution.unwrap_or(cfg.input_resolution),
                form.into(),
            )?;
            write!(out, "{}", report.to_table()).map_err(io)?;
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                fs::write(path, text)?;
            }
        }
        Command::Fuse {
            input,
            out: path,
            probes,
        } => {
            let model = weights_io::load(&input)?;
            if model.form() == Form::Fused {
                return Err(Error::State(format!(
                    "{} is already fused",
                    input.display()
                )));
            }
            let fused = model.clone().into_fused()?;
            let div = fusion_divergence(&model, &fused, probes)?;
            weights_io::save(&fused, &path)?;
            writeln!(
                out,
                "fused {} -> {}\nmax abs logit divergence over {probes} inputs: {div:.3e}",
                input.display(),
                path.display()
            )
            .map_err(io)?;
        }
        Command::Bench {
            ckpt,
            resolution,
            batch,
            warmup,
            runs,
            threads,
            json,
        } => {
            let model = weights_io::load(&ckpt)?;
            let opts = BenchOptions {
                resolution: resolution.unwrap_or(model.config().input_resolution),
                batch,
                warmup,
                runs,
                threads,
            };
            if runs < bench::MIN_PUBLISHABLE_RUNS {
                writeln!(
                    err,
                    "warning: {runs} runs is below {}; report is not publishable",
                    bench::MIN_PUBLISHABLE_RUNS
                )
                .map_err(io)?;
            }
            let report = bench::run(&model, &opts)?;
            writeln!(out, "{}", report.summary()).map_err(io)?;
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                fs::write(path, text)?;
            }
        }
        Command::Classify { ckpt, input, topk } => {
            let model = weights_io::load(&ckpt)?;
            let x = rvt::read(&input)?;
            let res = model.config().input_resolution;
            if x.c() != 3 || x.h() != res || x.w() != res {
                return Err(Error::config(
                    "input",
                    format!(
                        "tensor dims {:?} do not match config input 3x{res}x{res}",
                        x.dims()
                    ),
                ));
            }
            for (n, ranked) in classify(&model, &x, topk)?.into_iter().enumerate() {
                writeln!(out, "sample {n}").map_err(io)?;
                for (idx, logit) in ranked {
                    writeln!(out, "{idx}\t{logit}").map_err(io)?;
                }
            }
        }
        Command::GenInput {
            dims,
            seed,
            out: path,
        } => {
            let dims: [usize; 4] = dims
                .try_into()
                .map_err(|_| Error::config("dims", "expected four values N,C,H,W"))?;
            rvt::write(&path, &Tensor::random_uniform(dims, -1.0, 1.0, seed))?;
            writeln!(out, "wrote {dims:?} to {}", path.display()).map_err(io)?;
        }
    }
    Ok(())
}

/// Top-K `(class, logit)` pairs for each sample in `x`.
pub fn classify(model: &Model, x: &Tensor, k: usize) -> Result<Vec<Vec<(usize, f32)>>> {
    let logits = model.forward(x)?;
    let classes = model.num_classes();
    Ok(logits
        .data()
        .chunks(classes)
        .map(|row| top_k(row, k))
        .collect())
}

/// Largest absolute logit difference between two forms of a model over
/// `probes` seeded uniform [-1, 1) inputs at the config resolution.
pub fn fusion_divergence(a: &Model, b: &Model, probes: usize) -> Result<f32> {
    let r = a.config().input_resolution;
    let mut worst = 0.0f32;
    for i in 0..probes as u64 {
        let x = Tensor::random_uniform([1, 3, r, r], -1.0, 1.0, FUSE_PROBE_SEED + i);
        let ya = a.forward(&x)?;
        let yb = b.forward(&x)?;
        let d = ya.max_abs_diff(&yb);
        if d.is_nan() || d > worst {
            worst = d;
        }
    }
    Ok(worst)
}
