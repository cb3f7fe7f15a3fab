use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use arlc_core::model::{
    canonical_programs, load_checkpoint, parse_programs, program_rules, render_rules, save_checkpoint, Checkpoint, Encoder,
    RuleProgram, RuleSet, DEFAULT_RULES, DEFAULT_TERMS,
};
use arlc_core::rpm::{
    derive_seed, generate, generate_where, ood_split, read_jsonl, write_jsonl, Attribute, Constellation, GenConfig, Puzzle,
    RuleFamily,
};
use arlc_core::train::{evaluate, gradcheck, train_from, Optimizer, RunReport, TrainConfig, TrainMode};
use arlc_core::vsa::Dims;

/// Abductive rule learning for Raven's progressive matrices.
#[derive(Debug, Parser)]
#[command(name = "arlc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate puzzles into <out>/puzzles.jsonl.
    Generate(GenerateArgs),
    /// Train a rule set; writes ckpt.json, metrics.csv and report.json.
    Train(TrainArgs),
    /// Score a checkpoint on a puzzle file; writes report.json.
    Eval(EvalArgs),
    /// Compile rule programs into a frozen checkpoint.
    Program(ProgramArgs),
    /// Print the rules of a checkpoint as symbolic expressions.
    Inspect(InspectArgs),
    /// Compare analytic and finite-difference gradients of the full loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Master seed; also read from ARLC_SEED.
    #[arg(long, env = "ARLC_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Vector dimension D.
    #[arg(long = "dim", default_value_t = 1024)]
    dim: usize,
    /// Number of blocks B.
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    /// Worker threads (default: available cores; 1 for bit-reproducible runs).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn jobs(&self) -> Result<usize> {
        match self.jobs {
            Some(0) => Err(usage("--jobs", "must be at least 1")),
            Some(j) => Ok(j),
            None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }

    fn dims(&self) -> Result<Dims> {
        Dims::new(self.dim, self.blocks).map_err(|e| usage("--dim/--blocks", e))
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("cannot create --out {}", self.out.display()))?;
        Ok(&self.out)
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// center, 2x2, 3x3, left-right, up-down, in-out-center or in-out-grid.
    #[arg(long, default_value = "center")]
    constellation: String,
    /// Number of puzzles.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Held-out rule-attribute pair `attr:rule` (repeatable).
    #[arg(long = "holdout", value_name = "ATTR:RULE")]
    holdout: Vec<String>,
    /// With --holdout, emit only puzzles containing a held-out pair.
    #[arg(long)]
    held_out_only: bool,
}

#[derive(Debug, Args)]
struct RuleArgs {
    /// `default4` or a rules file with one `name: x1 x2 | o1` program per line.
    #[arg(long, default_value = "default4")]
    rules: String,
    /// Terms per rule (even).
    #[arg(long, default_value_t = DEFAULT_TERMS)]
    terms: usize,
}

impl RuleArgs {
    fn programs(&self) -> Result<Vec<RuleProgram>> {
        if self.rules == "default4" {
            return Ok(canonical_programs(true));
        }
        let path = input_path("--rules", &self.rules)?;
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read --rules {}", path.display()))?;
        parse_programs(&text).map_err(|e| usage(&format!("--rules {}", path.display()), e))
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    rules: RuleArgs,
    /// learn, program or program-then-learn.
    #[arg(long, default_value = "learn")]
    mode: String,
    /// Number of rules (program modes use the programs plus learned extras).
    #[arg(long = "rule-count", default_value_t = DEFAULT_RULES)]
    rule_count: usize,
    /// Training puzzles: a JSONL file or a directory holding puzzles.jsonl. Generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Constellation generated when --data is omitted.
    #[arg(long, default_value = "2x2")]
    constellation: String,
    /// Puzzles generated when --data is omitted.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Held-out rule-attribute pair `attr:rule` (repeatable); training never sees it.
    #[arg(long = "holdout", value_name = "ATTR:RULE")]
    holdout: Vec<String>,
    /// Evaluation puzzles. Generated when omitted: every constellation, or the held-out pairs.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Generated evaluation puzzles per constellation.
    #[arg(long, default_value_t = 1000)]
    eval_n: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long = "batch", default_value_t = 32)]
    batch: usize,
    /// Rule selection softmax temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Average the loss over attributes instead of summing it.
    #[arg(long)]
    average: bool,
    /// Fraction of the training data held back for validation.
    #[arg(long, default_value_t = 0.0)]
    val_split: f64,
    /// Stop after this many epochs without validation gain (needs --val-split).
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    /// A JSONL file or a directory holding puzzles.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Debug, Args)]
struct ProgramArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    rules: RuleArgs,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Checkpoint to print.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, env = "ARLC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long = "dim", default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    /// Random center puzzles, each with its own random rule set.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long = "rule-count", default_value_t = DEFAULT_RULES)]
    rule_count: usize,
    #[arg(long, default_value_t = DEFAULT_TERMS)]
    terms: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// A bad flag value or input file; exits with status 1.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(flag: &str, err: impl fmt::Display) -> anyhow::Error {
    Usage(format!("{flag}: {err}")).into()
}

fn input_path(flag: &str, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(usage(flag, format!("{} does not exist", path.display())));
    }
    Ok(path.to_path_buf())
}

fn parse_flag<T: std::str::FromStr>(flag: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| usage(flag, e))
}

fn parse_holdout(values: &[String]) -> Result<Vec<(Attribute, RuleFamily)>> {
    values
        .iter()
        .map(|v| {
            let (a, r) = v.split_once(':').ok_or_else(|| usage("--holdout", format!("`{v}` is not attr:rule")))?;
            Ok((parse_flag("--holdout", a)?, parse_flag("--holdout", r)?))
        })
        .collect()
}

fn read_puzzles(flag: &str, path: &Path) -> Result<Vec<Puzzle>> {
    let path = input_path(flag, path)?;
    let file = if path.is_dir() { path.join("puzzles.jsonl") } else { path };
    let file = input_path(flag, file)?;
    read_jsonl(&file).with_context(|| format!("reading {flag} {}", file.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let c = &args.common;
    let constellation: Constellation = parse_flag("--constellation", &args.constellation)?;
    let gen = GenConfig::new(constellation);
    let holdout = parse_holdout(&args.holdout)?;
    println!(
        "generate: constellation={constellation} n={} seed={} holdout={:?} held_out_only={}",
        args.n, c.seed, args.holdout, args.held_out_only
    );
    let puzzles = if holdout.is_empty() {
        if args.held_out_only {
            return Err(usage("--held-out-only", "needs at least one --holdout"));
        }
        generate(&gen, args.n, c.seed)?
    } else {
        let split = ood_split(&holdout).map_err(|e| usage("--holdout", e))?;
        if args.held_out_only {
            generate_where(&gen, args.n, c.seed, |p| split.test(p))?
        } else {
            generate_where(&gen, args.n, c.seed, |p| split.train(p))?
        }
    };
    let path = c.out_dir()?.join("puzzles.jsonl");
    write_jsonl(&puzzles, &path)?;
    println!("wrote {} puzzles to {}", puzzles.len(), path.display());
    Ok(())
}

fn save(rules: &RuleSet, enc: &Encoder, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("ckpt.json");
    save_checkpoint(&Checkpoint { rules: rules.clone(), codebook_seeds: enc.seeds() }, &path)?;
    Ok(path)
}

fn cmd_program(args: &ProgramArgs) -> Result<()> {
    let c = &args.common;
    let programs = args.rules.programs()?;
    println!("program: rules={} terms={} seed={} D={} B={}", args.rules.rules, args.rules.terms, c.seed, c.dim, c.blocks);
    let rs = program_rules(&programs, args.rules.terms, true).map_err(|e| usage("--rules/--terms", e))?;
    let enc = Encoder::new(c.dims()?, c.seed)?;
    let path = save(&rs, &enc, c.out_dir()?)?;
    print!("{}", render_rules(&rs));
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let c = &args.common;
    let mode: TrainMode = parse_flag("--mode", &args.mode)?;
    let constellation: Constellation = parse_flag("--constellation", &args.constellation)?;
    let holdout = parse_holdout(&args.holdout)?;
    if !(0.0..1.0).contains(&args.val_split) {
        return Err(usage("--val-split", "must be in [0, 1)"));
    }
    let cfg = TrainConfig {
        optimizer: Optimizer::adam(args.lr),
        epochs: args.epochs,
        batch_size: args.batch,
        seed: c.seed,
        mode,
        temperature: args.temperature,
        rules: args.rule_count,
        terms: args.rules.terms,
        average_attributes: args.average,
        patience: args.patience,
        jobs: c.jobs()?,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| usage("train", e))?;
    println!("train: {cfg:?} rules={} D={} B={} holdout={:?}", args.rules.rules, c.dim, c.blocks, args.holdout);
    let split = if holdout.is_empty() { None } else { Some(ood_split(&holdout).map_err(|e| usage("--holdout", e))?) };

    let gen = GenConfig::new(constellation);
    let mut data = match &args.data {
        Some(path) => read_puzzles("--data", path)?,
        None => match &split {
            Some(s) => generate_where(&gen, args.n, derive_seed(c.seed, 10), |p| s.train(p))?,
            None => generate(&gen, args.n, derive_seed(c.seed, 10))?,
        },
    };
    if let Some(s) = &split {
        let before = data.len();
        data.retain(|p| s.train(p));
        if data.len() < before {
            println!("dropped {} training puzzles containing held-out pairs", before - data.len());
        }
    }
    let n_val = (data.len() as f64 * args.val_split).round() as usize;
    let val = data.split_off(data.len() - n_val);

    let eval = match &args.eval_data {
        Some(path) => read_puzzles("--eval-data", path)?,
        None => match &split {
            Some(s) => generate_where(&gen, args.eval_n, derive_seed(c.seed, 31), |p| s.test(p))?,
            None => Constellation::ALL
                .iter()
                .enumerate()
                .map(|(i, k)| generate(&GenConfig::new(*k), args.eval_n, derive_seed(c.seed, 20 + i as u64)))
                .collect::<arlc_core::Result<Vec<_>>>()?
                .concat(),
        },
    };

    let enc = Encoder::new(c.dims()?, c.seed)?;
    let initial = match mode {
        TrainMode::Learn => cfg.initial_rules()?,
        _ => {
            let programmed = program_rules(&args.rules.programs()?, cfg.terms, mode == TrainMode::Program)
                .map_err(|e| usage("--rules/--terms", e))?;
            if mode == TrainMode::Program || cfg.rules <= programmed.rules() {
                programmed
            } else {
                programmed.extend(&RuleSet::random(cfg.rules - programmed.rules(), cfg.terms, derive_seed(c.seed, 1))?)?
            }
        }
    };
    let start = std::time::Instant::now();
    let val = (!val.is_empty()).then_some(val.as_slice());
    let (rs, metrics) = train_from(initial, &data, val, &enc, &cfg)?;
    let mut report = evaluate(&eval, &rs, &enc, cfg.temperature, cfg.jobs)?;
    report.epochs = metrics;
    report.seed = c.seed;
    report.wall_clock_secs = start.elapsed().as_secs_f64();

    let dir = c.out_dir()?;
    let ckpt = save(&rs, &enc, dir)?;
    write_file(&dir.join("metrics.csv"), &report.metrics_csv())?;
    write_file(&dir.join("report.json"), &report.to_json())?;
    print!("{}", report.render_table());
    println!("wrote {}, metrics.csv and report.json", ckpt.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    let path = input_path("--model", path)?;
    load_checkpoint(&path, None).with_context(|| format!("loading --model {}", path.display()))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let c = &args.common;
    println!(
        "eval: model={} data={} temperature={} D={} B={}",
        args.model.display(),
        args.data.display(),
        args.temperature,
        c.dim,
        c.blocks
    );
    let ckpt = load_model(&args.model)?;
    let data = read_puzzles("--data", &args.data)?;
    // codebooks are rebuilt from the seeds the model was trained with
    let enc = Encoder::from_seeds(c.dims()?, &ckpt.codebook_seeds)?;
    let report: RunReport = evaluate(&data, &ckpt.rules, &enc, args.temperature, c.jobs()?)?;
    write_file(&c.out_dir()?.join("report.json"), &report.to_json())?;
    print!("{}", report.render_table());
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    println!("inspect: model={}", args.model.display());
    let ckpt = load_model(&args.model)?;
    print!("{}", render_rules(&ckpt.rules));
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    println!(
        "gradcheck: trials={} D={} B={} rules={} terms={} eps={} seed={}",
        args.trials, args.dim, args.blocks, args.rule_count, args.terms, args.eps, args.seed
    );
    let dims = Dims::new(args.dim, args.blocks).map_err(|e| usage("--dim/--blocks", e))?;
    let enc = Encoder::new(dims, args.seed)?;
    let check = gradcheck(&enc, args.trials, args.rule_count, args.terms, args.seed, args.eps)?;
    println!("max relative error {:.3e} (coordinate {})", check.max_rel_error, check.worst);
    if check.max_rel_error >= args.tolerance {
        anyhow::bail!("gradient check failed: {:.3e} >= tolerance {:.1e}", check.max_rel_error, args.tolerance);
    }
    Ok(())
}

/// 1 for bad flags, inputs and configurations; 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    use arlc_core::Error as E;
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<E>() {
        Some(E::Config(_) | E::Validation(_) | E::Range(_) | E::Parse { .. } | E::Load { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Program(a) => cmd_program(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
