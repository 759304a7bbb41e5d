use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use subset_flow::checkpoint::Checkpoint;
use subset_flow::config::{expand_estimators, EstimatorKind, RunConfig};
use subset_flow::data::{Dataset, ToyDistribution, ToyKind};
use subset_flow::dequant::Dequantizer;
use subset_flow::flow::{MultiDmol, MultiDmolParams, SubsetFlowModel};
use subset_flow::numerics::Rng;
use subset_flow::{oracle, report, train, Error};

#[derive(Parser)]
#[command(name = "subflow", version, about = "Subset flows for ordinal discrete data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy dataset.
    GenToy(GenToyArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate likelihood estimators in bits/dim.
    Eval(EvalArgs),
    /// Draw samples into a dataset file.
    Sample(SampleArgs),
    /// Report the dequantization gap of each bound.
    Gap(GapArgs),
    /// Interpolate between two data points through latent space.
    Interpolate(InterpolateArgs),
    /// Brute-force and numerical checks.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Args)]
struct GenToyArgs {
    /// independent-categorical, markov-chain or quantized-gaussian-mixture.
    #[arg(long)]
    kind: ToyKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dims: usize,
    #[arg(long)]
    levels: usize,
    /// Softmax temperature of the generator; `inf` gives uniform data.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Seeds the generating distribution.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample stream; different splits draw independent data from the same distribution.
    #[arg(long, default_value_t = 0)]
    split: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subset of exact, elbo, iwbo. Defaults to the config.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<EstimatorKind>>,
    /// Comma-separated IWBO sample counts. Defaults to the config.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Independent bound estimates averaged per example.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    idx_a: usize,
    #[arg(long)]
    idx_b: usize,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// A randomly initialized model to run the checks on.
#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dims: usize,
    #[arg(long)]
    levels: usize,
    /// Standard deviation of the noise added to the initial parameters.
    #[arg(long, default_value_t = 0.5)]
    perturb: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn build(&self) -> Result<SubsetFlowModel> {
        let cfg = load_config(&self.config)?.0;
        let mut rng = Rng::new(self.seed);
        let mut model = SubsetFlowModel::new(&cfg.model, self.dims, self.levels, &mut rng)?;
        model.perturb(self.perturb, &mut rng);
        Ok(model)
    }
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Sum the exact probabilities of every outcome.
    Normalize(ModelArgs),
    /// Compare the autoregressive multivariate DMOL with its joint formula.
    Mvdmol {
        #[arg(long, default_value_t = 8)]
        levels: usize,
        #[arg(long, default_value_t = 3)]
        components: usize,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare reverse-mode gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Compare midpoint-rule bin masses with exact probabilities.
    Quadrature {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
}

fn load_config(path: &Path) -> Result<(RunConfig, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    Ok((RunConfig::parse(&text)?, text))
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::read(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<(RunConfig, SubsetFlowModel, Dequantizer)> {
    let ck = Checkpoint::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    Ok(ck.restore()?)
}

fn gen_toy(a: GenToyArgs) -> Result<()> {
    let root = Rng::new(a.seed);
    let toy = ToyDistribution::new(a.kind, a.dims, a.levels, a.temperature, &mut root.split(0))?;
    let rows = toy.sample(a.n, &mut root.split(1 + a.split));
    Dataset::new(a.dims, a.levels, &rows)?.write(&a.out)?;
    match toy.entropy_per_dim() {
        Some(h) => println!("entropy {:.6} bits/dim", h / std::f64::consts::LN_2),
        None => println!("entropy unavailable for this kind"),
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (cfg, text) = load_config(&a.config)?;
    let data = load_data(&a.data)?;
    let ck = train::train(&cfg, &text, &data, |log| {
        eprintln!("epoch {} loss {:.4} nats  {:.3} bits/dim", log.epoch + 1, log.loss, log.bits_per_dim);
    })?;
    ck.write(&a.out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (cfg, model, deq) = load_checkpoint(&a.checkpoint)?;
    let data = load_data(&a.data)?;
    let kinds = a.estimators.unwrap_or(cfg.eval.estimators);
    let ests = expand_estimators(&kinds, &a.k.unwrap_or(cfg.eval.k_list))?;
    let mc = a.mc_samples.unwrap_or(cfg.eval.mc_samples);
    print!("{}", report::evaluate(&model, &deq, &data, &ests, mc, a.seed)?.render());
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let (_, model, _) = load_checkpoint(&a.checkpoint)?;
    let rows: Vec<Vec<usize>> = model.sample(a.n, &mut Rng::new(a.seed))?.into_iter().map(|s| s.x).collect();
    Dataset::new(model.dims(), model.levels(), &rows)?.write(&a.out)?;
    Ok(())
}

fn cmd_gap(a: GapArgs) -> Result<()> {
    let (cfg, model, deq) = load_checkpoint(&a.checkpoint)?;
    let data = load_data(&a.data)?;
    let ests = expand_estimators(&[EstimatorKind::Elbo, EstimatorKind::Iwbo], &a.k.unwrap_or(cfg.eval.k_list))?;
    let mc = a.mc_samples.unwrap_or(cfg.eval.mc_samples);
    print!("{}", report::gap_report(&model, &deq, &data, &ests, mc, a.seed)?.render());
    Ok(())
}

fn cmd_interpolate(a: InterpolateArgs) -> Result<()> {
    let (_, model, _) = load_checkpoint(&a.checkpoint)?;
    let data = load_data(&a.data)?;
    for idx in [a.idx_a, a.idx_b] {
        if idx >= data.len() {
            return Err(Error::Config(format!("index {idx} out of range for {} examples", data.len())).into());
        }
    }
    let path = model.interpolate(&data.row(a.idx_a), &data.row(a.idx_b), a.steps, &mut Rng::new(a.seed))?;
    for (w, s) in path.weights.iter().zip(&path.samples) {
        let xs: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        println!("{w:.4}  {}", xs.join(" "));
    }
    let rows: Vec<Vec<usize>> = path.samples.into_iter().map(|s| s.x).collect();
    Dataset::new(model.dims(), model.levels(), &rows)?.write(&a.out)?;
    Ok(())
}

fn cmd_oracle(c: OracleCommand) -> Result<()> {
    match c {
        OracleCommand::Normalize(m) => {
            let total = oracle::enumerate_normalization(&m.build()?, oracle::EnumerationBudget::default())?;
            println!("sum {total:.15}  error {:.3e}", (total - 1.0).abs());
        }
        OracleCommand::Mvdmol { levels, components, draws, seed } => {
            let mut rng = Rng::new(seed);
            let mut worst = 0.0f64;
            for _ in 0..draws {
                let mut vecs = |scale: f64, shift: f64| -> Vec<Vec<f64>> {
                    (0..3).map(|_| (0..components).map(|_| shift + scale * rng.normal()).collect()).collect()
                };
                let means = vecs(levels as f64 / 4.0, levels as f64 / 2.0);
                let log_scales = vecs(0.5, 0.0);
                let coeffs = vecs(0.5, 0.0);
                let logits = (0..components).map(|_| rng.normal()).collect();
                let params = MultiDmolParams { logits, means, log_scales, coeffs, levels };
                let model = MultiDmol::new(params.clone())?;
                for x in oracle::outcomes(3, levels) {
                    let x = [x[0], x[1], x[2]];
                    let ar = model.log_prob(&x)?.exp();
                    let joint = oracle::joint_mv_dmol(&params, x);
                    worst = worst.max((ar - joint).abs() / joint.abs().max(f64::MIN_POSITIVE));
                }
            }
            println!("max relative error {worst:.3e} over {draws} draws");
        }
        OracleCommand::Gradcheck { model, batch, step } => {
            let m = model.build()?;
            let mut rng = Rng::new(model.seed).split(1);
            let xs: Vec<Vec<usize>> =
                (0..batch).map(|_| (0..model.dims).map(|_| rng.below(model.levels)).collect()).collect();
            let check = oracle::gradient_check(&m, &xs, step)?;
            println!("parameters {}  relative error {:.3e}", check.parameters, check.relative_error);
        }
        OracleCommand::Quadrature { model, grid, points } => {
            let m = model.build()?;
            let mut rng = Rng::new(model.seed).split(1);
            let mut worst = 0.0f64;
            for _ in 0..points {
                let x: Vec<usize> = (0..model.dims).map(|_| rng.below(model.levels)).collect();
                let exact = m.exact_log_likelihood(&x)?.exp();
                let quad = oracle::quadrature_bin_mass(&m, &x, grid)?;
                worst = worst.max((quad - exact).abs() / exact);
            }
            println!("max relative error {worst:.3e} over {points} points");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) {
        return match e {
            Error::Config(_) | Error::Unsupported(_) | Error::Contract(_) | Error::Domain(_) | Error::Infeasible(_) => 2,
            Error::Format(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        };
    }
    if err.chain().any(|c| c.is::<std::io::Error>()) {
        return 3;
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenToy(a) => gen_toy(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Gap(a) => cmd_gap(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::Oracle(c) => cmd_oracle(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
