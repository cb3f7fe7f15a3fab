//! Mini-batch training, evaluation and the experiment protocols.

mod report;

pub use report::{ConstellationScore, EpochMetrics, RunReport, Score};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grad::{finite_diff_check, GradCheck};
use crate::model::{
    canonical_programs, loss_and_grad, predict_answer, program_rules, Encoder, RuleSet, DEFAULT_RULES, DEFAULT_TERMS,
};
use crate::rpm::{derive_seed, generate, generate_where, ood_split, Attribute, Constellation, GenConfig, Puzzle, RuleFamily};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Random initialization, all rules trainable.
    Learn,
    /// The canonical rules, frozen; no optimizer steps.
    Program,
    /// The canonical rules plus randomly initialized ones, all trainable.
    ProgramThenLearn,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learn" => Ok(Self::Learn),
            "program" => Ok(Self::Program),
            "program-then-learn" | "program_then_learn" | "p2l" => Ok(Self::ProgramThenLearn),
            _ => Err(Error::Validation(format!("unknown mode `{s}` (learn, program, program-then-learn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub temperature: f64,
    pub rules: usize,
    pub terms: usize,
    /// Average the loss over attributes instead of summing it.
    pub average_attributes: bool,
    /// Stop after this many epochs without validation improvement. Needs a validation set.
    pub patience: Option<usize>,
    /// Worker threads; results do not depend on scheduling, only on this count.
    pub jobs: usize,
    /// Training puzzles scored per epoch for `train_acc` (0 disables it).
    pub train_acc_sample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::adam(0.01),
            epochs: 50,
            batch_size: 32,
            seed: 0,
            mode: TrainMode::Learn,
            temperature: 1.0,
            rules: DEFAULT_RULES,
            terms: DEFAULT_TERMS,
            average_attributes: false,
            patience: None,
            jobs: 1,
            train_acc_sample: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr() > 0.0 && self.optimizer.lr().is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.optimizer.lr())));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.mode == TrainMode::ProgramThenLearn && self.rules < 4 {
            return Err(Error::Config("program-then-learn needs room for the four canonical rules".into()));
        }
        Ok(())
    }

    /// The rule set training starts from.
    pub fn initial_rules(&self) -> Result<RuleSet> {
        match self.mode {
            TrainMode::Learn => RuleSet::random(self.rules, self.terms, derive_seed(self.seed, 1)),
            TrainMode::Program => program_rules(&canonical_programs(true), self.terms, true),
            TrainMode::ProgramThenLearn => {
                let programmed = program_rules(&canonical_programs(true), self.terms, false)?;
                if self.rules == programmed.rules() {
                    return Ok(programmed);
                }
                programmed.extend(&RuleSet::random(self.rules - programmed.rules(), self.terms, derive_seed(self.seed, 1))?)
            }
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(e.to_string()))
}

/// Sums loss and gradient over `batch` in a fixed order: contiguous chunks, one per job.
fn batch_gradient(batch: &[&Puzzle], rs: &RuleSet, enc: &Encoder, cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    let n = rs.logits().len();
    let chunk = batch.len().div_ceil(cfg.jobs).max(1);
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(chunk)
        .map(|ps| {
            let mut g = vec![0.0; n];
            let mut l = 0.0;
            for p in ps {
                l += loss_and_grad(p, rs, enc, cfg.temperature, cfg.average_attributes, &mut g)?;
            }
            Ok((l, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn step(rs: &mut RuleSet, grad: &[f64], opt: Optimizer, state: &mut AdamState) {
    let per_rule = rs.terms() * crate::model::K;
    let frozen = rs.frozen().to_vec();
    state.t += 1;
    let logits = rs.logits_mut();
    for (i, (x, g)) in logits.iter_mut().zip(grad).enumerate() {
        if frozen[i / per_rule] {
            continue;
        }
        match opt {
            Optimizer::Sgd { lr } => *x -= lr * g,
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let mh = state.m[i] / (1.0 - beta1.powi(state.t));
                let vh = state.v[i] / (1.0 - beta2.powi(state.t));
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

fn accuracy(data: &[Puzzle], rs: &RuleSet, enc: &Encoder, temperature: f64) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let correct: Vec<bool> = data
        .par_iter()
        .map(|p| predict_answer(p, rs, enc, temperature).map(|pr| pr.index == p.answer_index))
        .collect::<Result<_>>()?;
    Ok(100.0 * correct.iter().filter(|c| **c).count() as f64 / data.len() as f64)
}

/// Trains from `cfg.initial_rules()`; see [`train_from`].
pub fn train(data: &[Puzzle], val: Option<&[Puzzle]>, enc: &Encoder, cfg: &TrainConfig) -> Result<(RuleSet, Vec<EpochMetrics>)> {
    train_from(cfg.initial_rules()?, data, val, enc, cfg)
}

/// Mini-batch training of the non-frozen logits on the batch-mean loss.
///
/// Returns the final rule set and one [`EpochMetrics`] row per epoch. In
/// `Program` mode no step is taken and the metrics are empty.
pub fn train_from(
    mut rs: RuleSet,
    data: &[Puzzle],
    val: Option<&[Puzzle]>,
    enc: &Encoder,
    cfg: &TrainConfig,
) -> Result<(RuleSet, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.patience.is_some() && val.is_none() {
        return Err(Error::Config("early stopping needs a validation set".into()));
    }
    if cfg.mode == TrainMode::Program {
        return Ok((rs, Vec::new()));
    }
    let pool = pool(cfg.jobs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n = rs.logits().len();
    let mut state = AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 };
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let sample: Vec<Puzzle> = data.iter().take(cfg.train_acc_sample).cloned().collect();
    let (mut best, mut since_best, mut best_rules) = (f64::NEG_INFINITY, 0, rs.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Puzzle> = idx.iter().map(|&i| &data[i]).collect();
            let (loss, mut grad) = pool.install(|| batch_gradient(&batch, &rs, enc, cfg))?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b + 1, loss });
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            step(&mut rs, &grad, cfg.optimizer, &mut state);
            total += loss;
        }
        let train_acc = pool.install(|| accuracy(&sample, &rs, enc, cfg.temperature))?;
        let val_acc = match val {
            Some(v) => pool.install(|| accuracy(v, &rs, enc, cfg.temperature))?,
            None => f64::NAN,
        };
        metrics.push(EpochMetrics { epoch, loss: total / data.len() as f64, train_acc, val_acc });
        if let Some(patience) = cfg.patience {
            if val_acc > best {
                (best, since_best, best_rules) = (val_acc, 0, rs.clone());
            } else {
                since_best += 1;
                if since_best >= patience {
                    return Ok((best_rules, metrics));
                }
            }
        }
    }
    Ok((rs, metrics))
}

/// Accuracy of `rs` on `data`, grouped by constellation and by rule family.
pub fn evaluate(data: &[Puzzle], rs: &RuleSet, enc: &Encoder, temperature: f64, jobs: usize) -> Result<RunReport> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let start = Instant::now();
    let outcomes: Vec<bool> = pool(jobs)?.install(|| {
        data.par_iter()
            .map(|p| predict_answer(p, rs, enc, temperature).map(|pr| pr.index == p.answer_index))
            .collect::<Result<_>>()
    })?;
    let mut report = RunReport::from_outcomes(data, &outcomes);
    report.parameter_count = rs.trainable_parameters();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Fails unless the checkpoint's codebook seeds are the encoder's.
pub fn check_codebooks(seeds: &std::collections::BTreeMap<Attribute, u64>, enc: &Encoder) -> Result<()> {
    let ours = enc.seeds();
    if *seeds != ours {
        return Err(Error::Contract(format!("codebook seeds differ: model {seeds:?}, data encoder {ours:?}")));
    }
    Ok(())
}

/// Finite-difference check of the full loss on `trials` random center
/// puzzles, each with its own random rule set. Returns the worst trial.
pub fn gradcheck(enc: &Encoder, trials: usize, rules: usize, terms: usize, seed: u64, eps: f64) -> Result<GradCheck> {
    if trials == 0 {
        return Err(Error::Config("gradcheck needs at least one trial".into()));
    }
    let puzzles = generate(&GenConfig::new(Constellation::Center), trials, derive_seed(seed, 40))?;
    let mut worst = GradCheck { max_rel_error: 0.0, worst: 0 };
    for (i, p) in puzzles.iter().enumerate() {
        let rs = RuleSet::random(rules, terms, derive_seed(seed, 1000 + i as u64))?;
        let check = finite_diff_check(
            |x| {
                let r = RuleSet::new(rules, terms, x.to_vec(), vec![false; rules])?;
                let mut g = vec![0.0; x.len()];
                let l = loss_and_grad(p, &r, enc, 1.0, false, &mut g)?;
                Ok((l, g))
            },
            rs.logits(),
            eps,
        )?;
        if check.max_rel_error > worst.max_rel_error {
            worst = check;
        }
    }
    Ok(worst)
}

/// Generated data sizes for the protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolSizes {
    pub train: usize,
    pub eval: usize,
}

/// Train on one generated set and evaluate on fresh sets of the given constellations.
fn train_and_evaluate(
    train_set: &[Puzzle],
    eval_sets: &[Vec<Puzzle>],
    enc: &Encoder,
    cfg: &TrainConfig,
) -> Result<(RuleSet, RunReport)> {
    let start = Instant::now();
    let (rs, metrics) = train(train_set, None, enc, cfg)?;
    let data: Vec<Puzzle> = eval_sets.iter().flatten().cloned().collect();
    let mut report = evaluate(&data, &rs, enc, cfg.temperature, cfg.jobs)?;
    report.epochs = metrics;
    report.seed = cfg.seed;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((rs, report))
}

/// Trains on 2x2 puzzles only and evaluates the same rules on all seven constellations.
pub fn transfer_protocol(sizes: ProtocolSizes, enc: &Encoder, cfg: &TrainConfig) -> Result<(RuleSet, RunReport)> {
    let train_set = generate(&GenConfig::new(Constellation::Grid2x2), sizes.train, derive_seed(cfg.seed, 10))?;
    let eval_sets = Constellation::ALL
        .iter()
        .enumerate()
        .map(|(i, c)| generate(&GenConfig::new(*c), sizes.eval, derive_seed(cfg.seed, 20 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    train_and_evaluate(&train_set, &eval_sets, enc, cfg)
}

/// Trains on center puzzles free of the held-out pairs; evaluates only on puzzles that contain one.
pub fn ood_protocol(
    holdout: &[(Attribute, RuleFamily)],
    sizes: ProtocolSizes,
    enc: &Encoder,
    cfg: &TrainConfig,
) -> Result<(RuleSet, RunReport)> {
    let split = ood_split(holdout)?;
    let gen = GenConfig::new(Constellation::Center);
    let train_set = generate_where(&gen, sizes.train, derive_seed(cfg.seed, 30), |p| split.train(p))?;
    let test_set = generate_where(&gen, sizes.eval, derive_seed(cfg.seed, 31), |p| split.test(p))?;
    train_and_evaluate(&train_set, &[test_set], enc, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::puzzle_loss;
    use crate::vsa::Dims;

    fn setup(n: usize) -> (Vec<Puzzle>, Encoder) {
        let data = generate(&GenConfig::new(Constellation::Center), n, 5).unwrap();
        (data, Encoder::new(Dims::default(), 3).unwrap())
    }

    fn small(mode: TrainMode) -> TrainConfig {
        TrainConfig { epochs: 2, batch_size: 8, mode, train_acc_sample: 16, ..TrainConfig::default() }
    }

    #[test]
    fn program_mode_takes_no_steps() {
        let (data, enc) = setup(8);
        let cfg = small(TrainMode::Program);
        let (rs, metrics) = train(&data, None, &enc, &cfg).unwrap();
        assert!(metrics.is_empty());
        assert_eq!(rs, program_rules(&canonical_programs(true), cfg.terms, true).unwrap());
        assert_eq!(rs.trainable_parameters(), 0);
    }

    #[test]
    fn frozen_logits_do_not_drift() {
        let (data, enc) = setup(16);
        let cfg = small(TrainMode::Learn);
        let mut rs = RuleSet::random(3, cfg.terms, 9).unwrap();
        rs.set_frozen(1, true);
        let before = rs.clone();
        let (after, _) = train_from(rs, &data, None, &enc, &cfg).unwrap();
        let per = cfg.terms * crate::model::K;
        assert_eq!(before.logits()[per..2 * per], after.logits()[per..2 * per]);
        assert_ne!(before.logits()[..per], after.logits()[..per]);
    }

    #[test]
    fn small_steps_descend() {
        let (data, enc) = setup(80);
        let cfg = TrainConfig { optimizer: Optimizer::Sgd { lr: 1e-4 }, ..small(TrainMode::Learn) };
        let mut rs = RuleSet::random(cfg.rules, cfg.terms, 4).unwrap();
        for batch in data.chunks(8) {
            let refs: Vec<&Puzzle> = batch.iter().collect();
            let (before, mut grad) = batch_gradient(&refs, &rs, &enc, &cfg).unwrap();
            grad.iter_mut().for_each(|g| *g /= batch.len() as f64);
            let mut state = AdamState { m: vec![0.0; grad.len()], v: vec![0.0; grad.len()], t: 0 };
            step(&mut rs, &grad, cfg.optimizer, &mut state);
            let after: f64 = batch.iter().map(|p| puzzle_loss(p, &rs, &enc, cfg.temperature, false).unwrap()).sum();
            assert!(after < before, "{after} >= {before}");
        }
    }

    #[test]
    fn single_worker_runs_reproduce() {
        let (data, enc) = setup(24);
        let cfg = small(TrainMode::ProgramThenLearn);
        let a = train(&data, Some(&data[..8]), &enc, &cfg).unwrap();
        let b = train(&data, Some(&data[..8]), &enc, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(format!("{:?}", a.1), format!("{:?}", b.1));
        let c = train(&data, None, &enc, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn program_then_learn_starts_from_programs() {
        let cfg = TrainConfig { mode: TrainMode::ProgramThenLearn, ..TrainConfig::default() };
        let rs = cfg.initial_rules().unwrap();
        let programmed = program_rules(&canonical_programs(true), cfg.terms, false).unwrap();
        let n = programmed.logits().len();
        assert_eq!(rs.rules(), cfg.rules);
        assert_eq!(&rs.logits()[..n], programmed.logits());
        assert_eq!(rs.trainable_parameters(), cfg.rules * cfg.terms * crate::model::K);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (data, enc) = setup(4);
        let cfg = small(TrainMode::Learn);
        assert!(matches!(train(&[], None, &enc, &cfg), Err(Error::Config(_))));
        assert!(matches!(evaluate(&[], &cfg.initial_rules().unwrap(), &enc, 1.0, 1), Err(Error::Config(_))));
        let bad = TrainConfig { optimizer: Optimizer::adam(0.0), ..cfg.clone() };
        assert!(train(&data, None, &enc, &bad).is_err());
        let bad = TrainConfig { epochs: 0, ..cfg.clone() };
        assert!(train(&data, None, &enc, &bad).is_err());
        let bad = TrainConfig { patience: Some(3), ..cfg };
        assert!(train(&data, None, &enc, &bad).is_err());
        assert!("bogus".parse::<TrainMode>().is_err());
        assert_eq!("program-then-learn".parse::<TrainMode>().unwrap(), TrainMode::ProgramThenLearn);
    }

    #[test]
    fn gradcheck_passes_at_small_dimension() {
        let enc = Encoder::new(Dims::new(64, 2).unwrap(), 1).unwrap();
        let check = gradcheck(&enc, 2, 3, 6, 0, 1e-5).unwrap();
        assert!(check.max_rel_error < 1e-6, "{check:?}");
        assert!(gradcheck(&enc, 0, 3, 6, 0, 1e-5).is_err());
    }

    #[test]
    fn codebook_seeds_must_match() {
        let enc = Encoder::new(Dims::default(), 3).unwrap();
        assert!(check_codebooks(&enc.seeds(), &enc).is_ok());
        let other = Encoder::new(Dims::default(), 4).unwrap();
        assert!(matches!(check_codebooks(&other.seeds(), &enc), Err(Error::Contract(_))));
    }

    #[test]
    fn evaluation_report_counts() {
        let (data, enc) = setup(40);
        let rs = program_rules(&canonical_programs(true), DEFAULT_TERMS, true).unwrap();
        let report = evaluate(&data, &rs, &enc, 1.0, 1).unwrap();
        assert_eq!(report.overall.total + report.constellations.iter().map(|c| c.hard.total).sum::<usize>(), 40);
        let acc = report.accuracy_of(Constellation::Center).unwrap();
        assert!((0.0..=100.0).contains(&acc));
        assert!(report.rule_families.keys().all(|k| k.contains(':')));
        assert!(report.to_json().contains("\"constellations\""));
        assert!(report.render_table().contains("center"));
    }

    #[test]
    fn parallel_gradient_matches_sequential() {
        let (data, enc) = setup(12);
        let rs = RuleSet::random(5, 12, 1).unwrap();
        let refs: Vec<&Puzzle> = data.iter().collect();
        let one = batch_gradient(&refs, &rs, &enc, &small(TrainMode::Learn)).unwrap();
        let cfg = TrainConfig { jobs: 3, ..small(TrainMode::Learn) };
        let three = pool(3).unwrap().install(|| batch_gradient(&refs, &rs, &enc, &cfg)).unwrap();
        assert!((one.0 - three.0).abs() < 1e-9);
        assert!(one.1.iter().zip(&three.1).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
