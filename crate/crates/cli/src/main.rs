use std::fs;
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sccnn::nn::{BackwardFault, Mode, Variant};
use sccnn::{grid_complex, SimplicialComplex2};
use sccnn_cli::commands::{self, default_gradcheck_options};
use sccnn_cli::experiment::{checkpoint_file, run_ablation, train_model, MnistData};
use sccnn_cli::ExperimentConfig;

#[derive(Parser)]
#[command(name = "sccnn", version, about = "Simplicial 2-complex CNNs on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonicalize a face list (file or stdin) into its closed complex.
    BuildComplex {
        input: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print operators of a complex in coordinate format.
    InspectOperators {
        /// Grid complex as HEIGHT,WIDTH,KERNEL,STRIDE.
        #[arg(long, conflicts_with = "face_list")]
        grid: Option<String>,
        #[arg(long)]
        face_list: Option<PathBuf>,
        /// Operator names, e.g. b1, l1d, atilde0u. All when omitted.
        #[arg(long = "operator")]
        operators: Vec<String>,
    },
    /// Compare analytic gradients with central differences on a 3x3 grid.
    Gradcheck {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Eval)]
        mode: ModeArg,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Train one variant for one seed.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every variant for every seed and summarize accuracies.
    Ablation {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Reuse finished runs found in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Download the MNIST IDX files from the configured mirror.
    FetchData {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Eval,
    Train,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    ReluIgnoresMask,
    SparseSkipsTranspose,
}

#[derive(Args, Default)]
struct ExperimentArgs {
    /// TOML file with experiment settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    conv_channels: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Directory holding the four standard MNIST file names.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    mirror_url: Option<String>,
}

impl ExperimentArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_toml_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(dir) = &self.data_dir {
            c.set_data_dir(dir);
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(
            variant,
            variants,
            kernel,
            stride,
            epochs,
            batch_size,
            lr,
            dropout,
            embed,
            conv_channels,
            hidden,
            seeds,
            train_per_class,
            test_per_class,
            train_images,
            train_labels,
            test_images,
            test_labels,
            output,
            mirror_url
        );
        c.validate()?;
        Ok(c)
    }
}

fn parse_grid(grid: &str) -> Result<[usize; 4]> {
    let parts = grid
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("invalid grid {grid:?}"))?;
    match parts[..] {
        [h, w, k, s] => Ok([h, w, k, s]),
        _ => bail!("grid takes HEIGHT,WIDTH,KERNEL,STRIDE, got {grid:?}"),
    }
}

fn read_input(path: Option<&PathBuf>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::BuildComplex { input, output } => {
            let text = commands::build_complex_text(&read_input(input.as_ref())?)?;
            match output {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
        Command::InspectOperators {
            grid,
            face_list,
            operators,
        } => {
            let complex = match (grid, face_list) {
                (Some(grid), _) => {
                    let [h, w, k, s] = parse_grid(&grid)?;
                    grid_complex(h, w, k, s)?.0
                }
                (None, Some(path)) => SimplicialComplex2::from_face_list(&read_input(Some(&path))?)?,
                (None, None) => bail!("pass --grid or --face-list"),
            };
            print!("{}", commands::inspect_operators(&complex, &operators)?);
        }
        Command::Gradcheck {
            exp,
            seed,
            tolerance,
            mode,
            inject_fault,
        } => {
            let variants = exp.variants.clone();
            let config = exp.resolve()?;
            let variants = variants.unwrap_or_else(|| Variant::ALL.to_vec());
            let opts = sccnn::nn::gradcheck::GradCheckOptions {
                tolerance,
                mode: match mode {
                    ModeArg::Eval => Mode::Eval,
                    ModeArg::Train => Mode::Train,
                },
                fault: inject_fault.map(|f| match f {
                    FaultArg::ReluIgnoresMask => BackwardFault::ReluIgnoresMask,
                    FaultArg::SparseSkipsTranspose => BackwardFault::SparseSkipsTranspose,
                }),
                ..default_gradcheck_options()
            };
            let checks = commands::gradcheck(&config, &variants, seed, &opts)?;
            let mut ok = true;
            for check in &checks {
                println!("{}", check.variant);
                for t in &check.tensors {
                    println!(
                        "  {:<16} {:>6}  max rel {:.3e}  max abs {:.3e}  {}",
                        t.name,
                        t.len,
                        t.max_rel_error,
                        t.max_abs_error,
                        if t.passed { "ok" } else { "FAIL" }
                    );
                }
                ok &= check.passed();
            }
            if !ok {
                eprintln!("gradient check failed (tolerance {tolerance:e})");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Train { exp, seed } => {
            let config = exp.resolve()?;
            let seed = seed.unwrap_or(config.seeds[0]);
            let data = MnistData::load(&config)?;
            let every = (config.epochs / 10).max(1);
            let (model, params, report) = train_model(&config, config.variant, seed, &data, |epoch, loss| {
                if (epoch + 1) % every == 0 {
                    eprintln!("epoch {:>4}  loss {loss:.5}", epoch + 1);
                }
            })?;
            let ckpt = checkpoint_file(&config.output, config.variant, seed);
            fs::create_dir_all(ckpt.parent().expect("checkpoint directory"))?;
            let meta = serde_json::json!({
                "variant": config.variant,
                "seed": seed,
                "model": model.config(),
                "accuracy": report.accuracy,
            });
            params.save_checkpoint(&ckpt, meta)?;
            let report_path = config.output.join(format!("train-{}-seed{seed}.json", config.variant));
            fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            println!(
                "{} seed {seed}: accuracy {:.2}%  test loss {:.4}  ({:.1}s)",
                config.variant, report.accuracy, report.test_loss, report.wall_clock_s
            );
        }
        Command::Ablation { exp, resume } => {
            let config = exp.resolve()?;
            let data = MnistData::load(&config)?;
            let summary = run_ablation(&config, &data, resume, |r, reused| {
                eprintln!(
                    "{:<17} seed {:<3} accuracy {:6.2}%  {:7.1}s{}",
                    r.variant.to_string(),
                    r.seed,
                    r.accuracy,
                    r.wall_clock_s,
                    if reused { "  (reused)" } else { "" }
                );
            })?;
            println!("{:<17} {:>5} {:>8} {:>6}", "variant", "runs", "mean", "std");
            for v in &summary.variants {
                println!(
                    "{:<17} {:>5} {:>8.2} {:>6.2}",
                    v.variant.to_string(),
                    v.runs,
                    v.mean,
                    v.std
                );
            }
            println!("results in {}", config.output.display());
        }
        Command::FetchData { exp, force } => {
            let config = exp.resolve()?;
            for line in commands::fetch_data(&config, force)? {
                println!("{line}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
