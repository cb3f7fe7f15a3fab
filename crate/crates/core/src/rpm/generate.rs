use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::rules::{apply_rule, popcount, rotate_mask, Domain, RowContext, RuleError};
use super::{
    Assignment, Attribute, Candidate, Component, Constellation, Grid, Layout, Puzzle, RuleDescriptor, RuleFamily,
    Shift, Sign,
};
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 1000;

/// What to generate: constellation, value ranges and the allowed rule families.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub constellation: Constellation,
    /// Inclusive ranges for type, size and color. Number and position follow the layout.
    pub ranges: BTreeMap<Attribute, (i64, i64)>,
    pub allowed: BTreeMap<Attribute, Vec<RuleFamily>>,
}

impl GenConfig {
    pub fn new(constellation: Constellation) -> Self {
        let ranges = [(Attribute::Type, (1, 5)), (Attribute::Size, (1, 6)), (Attribute::Color, (0, 9))].into();
        let all = RuleFamily::ALL.to_vec();
        let allowed = [
            (Attribute::Type, vec![RuleFamily::Constant, RuleFamily::Progression, RuleFamily::DistributeThree]),
            (Attribute::Size, all.clone()),
            (Attribute::Color, all.clone()),
            (Attribute::Number, all.clone()),
            (Attribute::Position, all),
        ]
        .into();
        Self { constellation, ranges, allowed }
    }

    pub fn domain(&self, attr: Attribute, layout: Layout) -> Domain {
        let mut d = Domain::standard(attr, layout);
        if let Some(&(min, max)) = self.ranges.get(&attr) {
            d.min = min;
            d.max = max;
        }
        d
    }

    /// Rule descriptors of `attr` that admit at least one valid row.
    fn feasible_rules(&self, attr: Attribute, layout: Layout) -> Vec<RuleDescriptor> {
        let d = self.domain(attr, layout);
        let families = self.allowed.get(&attr).cloned().unwrap_or_default();
        families.into_iter().flat_map(|f| feasible_for(&d, f)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (attr, &(min, max)) in &self.ranges {
            if min > max {
                return Err(Error::Config(format!("{attr} range {min}..={max} is empty")));
            }
        }
        for layout in self.constellation.layouts() {
            for attr in [Attribute::Type, Attribute::Size, Attribute::Color] {
                if self.feasible_rules(attr, layout).is_empty() {
                    return Err(Error::Config(format!(
                        "no allowed rule for {attr} is satisfiable on range {:?}",
                        self.ranges.get(&attr)
                    )));
                }
            }
            if let Layout::Grid { .. } = layout {
                if self.feasible_rules(Attribute::Number, layout).is_empty()
                    && self.feasible_rules(Attribute::Position, layout).is_empty()
                {
                    return Err(Error::Config("neither number nor position has a satisfiable rule".into()));
                }
            }
        }
        Ok(())
    }
}

fn feasible_for(d: &Domain, family: RuleFamily) -> Vec<RuleDescriptor> {
    let span = d.max - d.min + 1;
    match family {
        RuleFamily::Constant => vec![RuleDescriptor::Constant],
        RuleFamily::Progression => [-2i64, -1, 1, 2]
            .into_iter()
            .filter(|&s| if d.is_mask() { d.slots >= 2 && s.rem_euclid(d.slots as i64) != 0 } else { 2 * s.abs() < span })
            .map(|step| RuleDescriptor::Progression { step })
            .collect(),
        RuleFamily::Arithmetic => [Sign::Plus, Sign::Minus]
            .into_iter()
            .filter(|&sign| {
                if d.is_mask() {
                    return d.slots >= 2;
                }
                let rule = RuleDescriptor::Arithmetic { sign };
                let ctx = RowContext { row: 0, first_row: [0; 3] };
                d.values().any(|a| d.values().any(|b| b != 0 && apply_rule(&rule, a, b, &ctx, d).is_ok()))
            })
            .map(|sign| RuleDescriptor::Arithmetic { sign })
            .collect(),
        RuleFamily::DistributeThree => {
            if span >= 3 {
                vec![
                    RuleDescriptor::DistributeThree { shift: Shift::Left },
                    RuleDescriptor::DistributeThree { shift: Shift::Right },
                ]
            } else {
                vec![]
            }
        }
    }
}

fn random_value(d: &Domain, rng: &mut impl Rng) -> i64 {
    rng.gen_range(d.min..=d.max)
}

fn random_mask_with(ones: usize, slots: usize, rng: &mut impl Rng) -> i64 {
    rand::seq::index::sample(rng, slots, ones).iter().fold(0i64, |m, i| m | (1 << i))
}

fn masks_with(ones: i64, slots: usize) -> impl Iterator<Item = i64> {
    (1..(1i64 << slots)).filter(move |&m| popcount(m) == ones)
}

/// First two values of a row for a non-distribute rule; may be out of range.
fn sample_pair(rule: &RuleDescriptor, d: &Domain, rng: &mut impl Rng) -> Option<(i64, i64)> {
    let a = random_value(d, rng);
    match *rule {
        RuleDescriptor::Constant => Some((a, a)),
        RuleDescriptor::Progression { step } => {
            let b = if d.is_mask() { rotate_mask(a, step, d.slots) } else { a + step };
            (b != a).then_some((a, b))
        }
        RuleDescriptor::Arithmetic { sign } => {
            let b = random_value(d, rng);
            if b == 0 {
                return None;
            }
            if d.is_mask() {
                // the second operand must change the first
                let degenerate = match sign {
                    Sign::Plus => a | b == a,
                    Sign::Minus => a & b == 0,
                };
                if degenerate {
                    return None;
                }
            }
            Some((a, b))
        }
        RuleDescriptor::DistributeThree { .. } => unreachable!("distribute-three rows come from a triple"),
    }
}

fn sample_grid(rule: &RuleDescriptor, d: &Domain, rng: &mut impl Rng) -> Result<Grid> {
    let mut grid = [[0i64; 3]; 3];
    if let RuleDescriptor::DistributeThree { shift } = *rule {
        let mut values: Vec<i64> = Vec::new();
        let mut attempts = 0;
        while values.len() < 3 {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::Config(format!("cannot draw three distinct {} values", d.attr)));
            }
            let v = random_value(d, rng);
            if !values.contains(&v) {
                values.push(v);
            }
        }
        let first_row = [values[0], values[1], values[2]];
        for (i, row) in grid.iter_mut().enumerate() {
            let at = |j: usize| match shift {
                Shift::Left => first_row[(j + i) % 3],
                Shift::Right => first_row[(j + 3 - i) % 3],
            };
            let ctx = RowContext { row: i, first_row };
            let third = apply_rule(rule, at(0), at(1), &ctx, d)
                .map_err(|e| Error::Contract(format!("distribute-three row rejected: {e:?}")))?;
            *row = [at(0), at(1), third];
        }
        return Ok(grid);
    }
    for (i, row) in grid.iter_mut().enumerate() {
        let mut attempts = 0;
        *row = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::Config(format!("{rule:?} on {} never produced an in-range row", d.attr)));
            }
            let Some((a, b)) = sample_pair(rule, d, rng) else { continue };
            if !d.contains(b) {
                continue;
            }
            let ctx = RowContext { row: i, first_row: [a, b, 0] };
            match apply_rule(rule, a, b, &ctx, d) {
                Ok(c) => break [a, b, c],
                Err(RuleError::OutOfRange(_)) | Err(RuleError::Inconsistent) => continue,
            }
        };
    }
    Ok(grid)
}

fn choose<T: Copy>(items: &[T], rng: &mut impl Rng) -> T {
    items[rng.gen_range(0..items.len())]
}

fn pick_rule(cfg: &GenConfig, attr: Attribute, layout: Layout, rng: &mut impl Rng) -> Result<RuleDescriptor> {
    let d = cfg.domain(attr, layout);
    let families: Vec<RuleFamily> = cfg
        .allowed
        .get(&attr)
        .into_iter()
        .flatten()
        .copied()
        .filter(|f| !feasible_for(&d, *f).is_empty())
        .collect();
    if families.is_empty() {
        return Err(Error::Config(format!("no satisfiable rule family for {attr}")));
    }
    let family = choose(&families, rng);
    Ok(choose(&feasible_for(&d, family), rng))
}

fn sample_component(cfg: &GenConfig, layout: Layout, rng: &mut impl Rng) -> Result<Component> {
    let mut grids = BTreeMap::new();
    let mut rules = BTreeMap::new();
    for attr in [Attribute::Type, Attribute::Size, Attribute::Color] {
        let rule = pick_rule(cfg, attr, layout, rng)?;
        grids.insert(attr, sample_grid(&rule, &cfg.domain(attr, layout), rng)?);
        rules.insert(attr, rule);
    }
    if let Layout::Grid { slots } = layout {
        let options: Vec<Attribute> = [Attribute::Number, Attribute::Position]
            .into_iter()
            .filter(|a| !cfg.feasible_rules(*a, layout).is_empty())
            .collect();
        if options.is_empty() {
            return Err(Error::Config("neither number nor position has a satisfiable rule".into()));
        }
        let governing = choose(&options, rng);
        let rule = pick_rule(cfg, governing, layout, rng)?;
        let grid = sample_grid(&rule, &cfg.domain(governing, layout), rng)?;
        let mut derived = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                derived[i][j] = match governing {
                    Attribute::Number => random_mask_with(grid[i][j] as usize, slots, rng),
                    _ => popcount(grid[i][j]),
                };
            }
        }
        let other = if governing == Attribute::Number { Attribute::Position } else { Attribute::Number };
        grids.insert(governing, grid);
        grids.insert(other, derived);
        rules.insert(governing, rule);
    }
    Ok(Component { layout, grids, rules })
}

/// Draws one puzzle; identical `(config, seed)` gives an identical puzzle.
pub fn sample_puzzle(cfg: &GenConfig, seed: u64) -> Result<Puzzle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let components = cfg
        .constellation
        .layouts()
        .into_iter()
        .map(|layout| sample_component(cfg, layout, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let (candidates, answer_index) = gen_candidates(cfg, &components, &mut rng)?;
    Ok(Puzzle { constellation: cfg.constellation, components, candidates, answer_index, seed })
}

enum Perturbation {
    Value(i64),
    /// New number together with a matching position mask.
    Number(i64, i64),
}

/// Eight candidates by attribute bisection, plus the answer's position.
///
/// Three distinct (component, attribute) pairs are drawn. Each iteration
/// duplicates the current pool and gives the copy one new value of the chosen
/// attribute, so every perturbed attribute ends up split 4/4 and no single
/// attribute value singles out the answer. Derived attributes (the
/// non-governing one of number / position) are never perturbed.
pub fn gen_candidates(
    cfg: &GenConfig,
    components: &[Component],
    rng: &mut impl Rng,
) -> Result<(Vec<Candidate>, usize)> {
    let truth = Candidate { components: components.iter().map(Component::answer).collect() };
    let mut perturbable = Vec::new();
    for (ci, comp) in components.iter().enumerate() {
        for &attr in comp.layout.attributes() {
            let d = cfg.domain(attr, comp.layout);
            let ok = match attr {
                Attribute::Number | Attribute::Position if !comp.rules.contains_key(&attr) => false,
                Attribute::Position => masks_with(popcount(truth.components[ci][&attr]), d.slots).count() > 1,
                _ => d.max > d.min,
            };
            if ok {
                perturbable.push((ci, attr));
            }
        }
    }
    if perturbable.len() < 3 {
        return Err(Error::Config(format!("only {} attributes can be perturbed, need 3", perturbable.len())));
    }
    perturbable.shuffle(rng);

    let mut pool = vec![truth.clone()];
    for &(ci, attr) in &perturbable[..3] {
        let comp = &components[ci];
        let d = cfg.domain(attr, comp.layout);
        let current = truth.components[ci][&attr];
        let change = match attr {
            Attribute::Position => {
                let alts: Vec<i64> = masks_with(popcount(current), d.slots).filter(|&m| m != current).collect();
                Perturbation::Value(choose(&alts, rng))
            }
            _ => {
                let alts: Vec<i64> = d.values().filter(|&v| v != current).collect();
                let v = choose(&alts, rng);
                if attr == Attribute::Number {
                    Perturbation::Number(v, random_mask_with(v as usize, d.slots, rng))
                } else {
                    Perturbation::Value(v)
                }
            }
        };
        let copies: Vec<Candidate> = pool
            .iter()
            .map(|c| {
                let mut c = c.clone();
                let a: &mut Assignment = &mut c.components[ci];
                match change {
                    Perturbation::Value(v) => {
                        a.insert(attr, v);
                    }
                    Perturbation::Number(n, m) => {
                        a.insert(Attribute::Number, n);
                        a.insert(Attribute::Position, m);
                    }
                }
                c
            })
            .collect();
        pool.extend(copies);
    }
    pool.shuffle(rng);
    let answer = pool.iter().position(|c| *c == truth).expect("truth stays in the pool");
    debug_assert_eq!(pool.iter().collect::<HashSet<_>>().len(), 8);
    Ok((pool, answer))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-puzzle seed stream.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

/// `n` puzzles with seeds `derive_seed(base_seed, 0..n)`.
pub fn generate(cfg: &GenConfig, n: usize, base_seed: u64) -> Result<Vec<Puzzle>> {
    cfg.validate()?;
    (0..n as u64).into_par_iter().map(|i| sample_puzzle(cfg, derive_seed(base_seed, i))).collect()
}

/// Rejection sampling: the first `n` puzzles (in seed-index order) accepted by `keep`.
pub fn generate_where(
    cfg: &GenConfig,
    n: usize,
    base_seed: u64,
    keep: impl Fn(&Puzzle) -> bool,
) -> Result<Vec<Puzzle>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n);
    let limit = (n as u64 + 10) * 1000;
    for i in 0..limit {
        if out.len() == n {
            break;
        }
        let p = sample_puzzle(cfg, derive_seed(base_seed, i))?;
        if keep(&p) {
            out.push(p);
        }
    }
    if out.len() < n {
        return Err(Error::Config(format!("filter accepted only {} of {n} requested puzzles", out.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_rows(p: &Puzzle, cfg: &GenConfig) {
        for comp in &p.components {
            for (attr, rule) in &comp.rules {
                let g = comp.grids[attr];
                let d = cfg.domain(*attr, comp.layout);
                for (i, row) in g.iter().enumerate() {
                    let ctx = RowContext { row: i, first_row: g[0] };
                    assert_eq!(apply_rule(rule, row[0], row[1], &ctx, &d), Ok(row[2]), "{attr} {rule:?} {g:?}");
                }
            }
            if let Layout::Grid { .. } = comp.layout {
                let (n, m) = (comp.grids[&Attribute::Number], comp.grids[&Attribute::Position]);
                for i in 0..3 {
                    for j in 0..3 {
                        assert_eq!(n[i][j], popcount(m[i][j]));
                    }
                }
                assert_eq!(comp.rules.keys().filter(|a| matches!(a, Attribute::Number | Attribute::Position)).count(), 1);
            }
        }
    }

    #[test]
    fn every_constellation_is_consistent() {
        for c in Constellation::ALL {
            let cfg = GenConfig::new(c);
            for seed in 0..200 {
                let p = sample_puzzle(&cfg, seed).unwrap();
                check_rows(&p, &cfg);
                assert_eq!(p.candidates.len(), 8);
                let truth = p.truth();
                assert_eq!(p.candidates.iter().filter(|c| **c == truth).count(), 1);
                assert_eq!(p.candidates[p.answer_index], truth);
                for cand in &p.candidates {
                    for (ci, comp) in p.components.iter().enumerate() {
                        if let Layout::Grid { .. } = comp.layout {
                            let a = &cand.components[ci];
                            assert_eq!(a[&Attribute::Number], popcount(a[&Attribute::Position]));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = GenConfig::new(Constellation::Center);
        assert_eq!(sample_puzzle(&cfg, 42).unwrap(), sample_puzzle(&cfg, 42).unwrap());
        assert_ne!(sample_puzzle(&cfg, 42).unwrap(), sample_puzzle(&cfg, 43).unwrap());
    }

    #[test]
    fn perturbed_attributes_split_evenly() {
        let cfg = GenConfig::new(Constellation::Center);
        for seed in 0..100 {
            let p = sample_puzzle(&cfg, seed).unwrap();
            let truth = p.truth();
            for attr in [Attribute::Type, Attribute::Size, Attribute::Color] {
                let same = p.candidates.iter().filter(|c| c.components[0][&attr] == truth.components[0][&attr]).count();
                assert_eq!(same, 4, "center has exactly three perturbable attributes");
            }
        }
    }

    #[test]
    fn type_never_gets_arithmetic() {
        let cfg = GenConfig::new(Constellation::Center);
        let ps = generate(&cfg, 300, 9).unwrap();
        assert!(ps.iter().all(|p| p.components[0].rules[&Attribute::Type].family() != RuleFamily::Arithmetic));
    }

    #[test]
    fn unsatisfiable_config() {
        let mut cfg = GenConfig::new(Constellation::Center);
        cfg.ranges.insert(Attribute::Size, (1, 1));
        cfg.allowed.insert(Attribute::Size, vec![RuleFamily::Arithmetic, RuleFamily::DistributeThree]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(matches!(generate(&cfg, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn grid_layouts_mark_hard_position_rules() {
        let cfg = GenConfig::new(Constellation::Grid2x2);
        let ps = generate(&cfg, 400, 3).unwrap();
        let hard = ps.iter().filter(|p| p.is_hard()).count();
        assert!(hard > 0 && hard < ps.len());
        for p in ps.iter().filter(|p| p.is_hard()) {
            let r = p.components[0].rules[&Attribute::Position];
            assert!(matches!(r.family(), RuleFamily::Progression | RuleFamily::Arithmetic));
        }
    }
}
