//! Synthetic corpus generation: skeleton sampling, the skeleton bank,
//! numeric realization into tabular datasets, splitting and persistence.

mod io;
mod sampler;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{evaluate, EvalError, ExprTree, Token, TokenSequence, Vocabulary, MAX_VARIABLES};
use crate::seed;
use crate::simplify::{canonical_key, simplify, validate_skeleton, RejectReason, SkeletonVerdict};

pub use io::{read_corpus, write_corpus, DATA_MAGIC, DATA_VERSION};
pub use sampler::sample_skeleton;

/// Columns of every dataset: the response `y` followed by `x1..x6`.
pub const N_COLS: usize = 1 + MAX_VARIABLES;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad corpus format: {0}")]
    Format(String),
    #[error("unsupported corpus version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub vocabulary: Vocabulary,
    pub n_raw_samples: usize,
    pub max_tokens: usize,
    pub node_budget: usize,
    pub const_range: (f64, f64),
    /// Log-uniform range of the variables.
    pub var_range: (f64, f64),
    pub n_rows: usize,
    pub n_realizations: usize,
    pub y_cap: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            vocabulary: Vocabulary::default(),
            n_raw_samples: 1_000_000,
            max_tokens: 30,
            node_budget: 30,
            const_range: (-100.0, 100.0),
            var_range: (0.1, 10.0),
            n_rows: 50,
            n_realizations: 100,
            y_cap: 1e9,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.const_range.0 > self.const_range.1 {
            return bad("const_range is not ordered");
        }
        if !(self.var_range.0 > 0.0 && self.var_range.0 <= self.var_range.1) {
            return bad("var_range must be positive and ordered");
        }
        if self.n_rows == 0 {
            return bad("n_rows must be at least 1");
        }
        if self.max_tokens == 0 || self.node_budget == 0 {
            return bad("max_tokens and node_budget must be positive");
        }
        if !(self.y_cap > 0.0) {
            return bad("y_cap must be positive");
        }
        Ok(())
    }
}

/// A unique, valid, simplified skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub id: u32,
    pub tree: ExprTree,
    pub tokens: TokenSequence,
}

impl Skeleton {
    pub fn new(id: u32, tree: ExprTree) -> Self {
        let tokens = tree.to_preorder();
        Skeleton { id, tree, tokens }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BankStats {
    pub raw: usize,
    pub valid: usize,
    pub unique: usize,
    pub single_leaf: usize,
    pub no_constant: usize,
    pub no_variable: usize,
    pub too_long: usize,
}

#[derive(Clone, Debug)]
pub struct SkeletonBank {
    pub skeletons: Vec<Skeleton>,
    pub stats: BankStats,
}

/// Samples `n_raw_samples` trees, simplifies them, applies the skeleton
/// filters and keeps the first occurrence of every canonical key.
pub fn build_skeleton_bank(config: &GenerationConfig) -> Result<SkeletonBank, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[seed::hash_str("bank")]));
    let mut stats = BankStats {
        raw: config.n_raw_samples,
        ..BankStats::default()
    };
    let mut seen = HashSet::new();
    let mut skeletons = Vec::new();
    for _ in 0..config.n_raw_samples {
        let tree = simplify(&sample_skeleton(&mut rng, config));
        let verdict = match validate_skeleton(&tree) {
            SkeletonVerdict::Valid if tree.node_count() > config.max_tokens => {
                SkeletonVerdict::Rejected(RejectReason::TooLong)
            }
            v => v,
        };
        match verdict {
            SkeletonVerdict::Valid => {}
            SkeletonVerdict::Rejected(reason) => {
                match reason {
                    RejectReason::SingleLeaf => stats.single_leaf += 1,
                    RejectReason::NoConstant => stats.no_constant += 1,
                    RejectReason::NoVariable => stats.no_variable += 1,
                    RejectReason::TooLong => stats.too_long += 1,
                }
                continue;
            }
        }
        stats.valid += 1;
        if seen.insert(canonical_key(&tree)) {
            skeletons.push(Skeleton::new(skeletons.len() as u32, tree));
        }
    }
    stats.unique = skeletons.len();
    Ok(SkeletonBank { skeletons, stats })
}

/// One numeric realization of a skeleton: `n_rows × 7` values, row-major,
/// columns `(y, x1, ..., x6)`. Columns of unused variables are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub skeleton_id: u32,
    pub seed: u64,
    pub ground_truth: TokenSequence,
    values: Vec<f32>,
}

impl TabularDataset {
    pub fn from_values(
        skeleton_id: u32,
        seed: u64,
        ground_truth: TokenSequence,
        values: Vec<f32>,
    ) -> Result<Self, DataError> {
        if values.is_empty() || values.len() % N_COLS != 0 {
            return Err(DataError::Format(format!(
                "{} values do not form rows of {N_COLS} columns",
                values.len()
            )));
        }
        Ok(TabularDataset {
            skeleton_id,
            seed,
            ground_truth,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / N_COLS
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * N_COLS..(r + 1) * N_COLS]
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * N_COLS + col]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RealizeReject {
    /// Some row hit a domain error, e.g. `log` of a negative value.
    Domain,
    /// Some row produced a non-finite value or `|y|` above the cap.
    Magnitude,
}

/// Draws one value per `C` occurrence and `n_rows` rows of log-uniform
/// variables, then evaluates `y` on every row. The seed fully determines the
/// result.
pub fn realize(
    skeleton: &Skeleton,
    seed: u64,
    config: &GenerationConfig,
) -> Result<TabularDataset, RealizeReject> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = config.const_range;
    let consts: Vec<f64> = (0..skeleton.tree.count_token(Token::C))
        .map(|_| rng.gen_range(lo..=hi))
        .collect();
    let used = skeleton.tree.variable_mask();
    let mut values = vec![0f32; config.n_rows * N_COLS];
    let mut vars = [0f64; MAX_VARIABLES];
    for row in values.chunks_exact_mut(N_COLS) {
        for (i, var) in vars.iter_mut().enumerate() {
            if used & (1 << i) != 0 {
                let x = sample_log_uniform(&mut rng, config.var_range) as f32;
                row[1 + i] = x;
                *var = x as f64;
            }
        }
        let y = evaluate(&skeleton.tree, &vars, &consts).map_err(|e| match e {
            EvalError::Domain { .. } => RealizeReject::Domain,
            _ => RealizeReject::Magnitude,
        })?;
        if y.abs() > config.y_cap {
            return Err(RealizeReject::Magnitude);
        }
        row[0] = y as f32;
    }
    Ok(TabularDataset {
        skeleton_id: skeleton.id,
        seed,
        ground_truth: skeleton.tokens.clone(),
        values,
    })
}

/// `exp(U(ln lo, ln hi))`.
pub fn sample_log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo.ln()..=hi.ln()).exp()
}

/// Seed of realization `index` of skeleton `skeleton_id`.
pub fn realization_seed(master: u64, skeleton_id: u32, index: usize) -> u64 {
    seed::derive(
        master,
        &[seed::hash_str("realize"), skeleton_id as u64, index as u64],
    )
}

/// Dataset indices of the train, validation and test subsets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl CorpusSplit {
    /// Shuffles `0..n` and cuts it 80/10/10.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (n as f64 * 0.8).round() as usize;
        let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
        let test = indices.split_off(n_train + n_val);
        let validation = indices.split_off(n_train);
        CorpusSplit {
            train: indices,
            validation,
            test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub attempted: usize,
    pub realized: usize,
    pub rejected_domain: usize,
    pub rejected_magnitude: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub skeletons: Vec<Skeleton>,
    pub datasets: Vec<TabularDataset>,
    pub split: CorpusSplit,
}

impl Corpus {
    pub fn subset(&self, indices: &[usize]) -> Vec<&TabularDataset> {
        indices.iter().map(|&i| &self.datasets[i]).collect()
    }
}

/// Realizes every skeleton `n_realizations` times (rejections are dropped,
/// not retried) and splits the datasets 80/10/10.
pub fn build_corpus(
    bank: &[Skeleton],
    config: &GenerationConfig,
) -> Result<(Corpus, CorpusStats), DataError> {
    config.validate()?;
    if bank.is_empty() {
        return Err(DataError::InvalidConfig("skeleton bank is empty".into()));
    }
    let per_skeleton: Vec<Vec<Result<TabularDataset, RealizeReject>>> = bank
        .par_iter()
        .map(|s| {
            (0..config.n_realizations)
                .map(|r| realize(s, realization_seed(config.seed, s.id, r), config))
                .collect()
        })
        .collect();
    let mut stats = CorpusStats::default();
    let mut datasets = Vec::new();
    for outcome in per_skeleton.into_iter().flatten() {
        stats.attempted += 1;
        match outcome {
            Ok(d) => datasets.push(d),
            Err(RealizeReject::Domain) => stats.rejected_domain += 1,
            Err(RealizeReject::Magnitude) => stats.rejected_magnitude += 1,
        }
    }
    stats.realized = datasets.len();
    let split = CorpusSplit::random(
        datasets.len(),
        seed::derive(config.seed, &[seed::hash_str("split")]),
    );
    Ok((
        Corpus {
            skeletons: bank.to_vec(),
            datasets,
            split,
        },
        stats,
    ))
}

/// Moves variable column `i` to column `perm[i]` and renames `x{i+1}` to
/// `x{perm[i]+1}` in the ground truth. `y` stays in column 0.
pub fn permute_columns(dataset: &TabularDataset, perm: &[usize; MAX_VARIABLES]) -> TabularDataset {
    let mut check = [false; MAX_VARIABLES];
    for &p in perm {
        assert!(p < MAX_VARIABLES && !check[p], "not a permutation: {perm:?}");
        check[p] = true;
    }
    let mut values = dataset.values.clone();
    for (src, dst) in dataset.values.chunks_exact(N_COLS).zip(values.chunks_exact_mut(N_COLS)) {
        for i in 0..MAX_VARIABLES {
            dst[1 + perm[i]] = src[1 + i];
        }
    }
    let ground_truth = TokenSequence(
        dataset
            .ground_truth
            .0
            .iter()
            .map(|t| match t.variable_index() {
                Some(i) => Token::variable(perm[i]).unwrap(),
                None => *t,
            })
            .collect(),
    );
    TabularDataset {
        values,
        ground_truth,
        ..dataset.clone()
    }
}

/// Column-permutation augmentation with a uniformly random permutation.
pub fn augment_permute_columns<R: Rng + ?Sized>(dataset: &TabularDataset, rng: &mut R) -> TabularDataset {
    let mut perm = [0, 1, 2, 3, 4, 5];
    perm.shuffle(rng);
    permute_columns(dataset, &perm)
}

/// Checks every dataset invariant and the split structure. Returns one
/// message per violation.
pub fn audit_corpus(corpus: &Corpus, y_cap: f64) -> Vec<String> {
    let mut issues = Vec::new();
    let ids: HashSet<u32> = corpus.skeletons.iter().map(|s| s.id).collect();
    for (i, d) in corpus.datasets.iter().enumerate() {
        let tree = match d.ground_truth.to_tree() {
            Ok(t) => t,
            Err(e) => {
                issues.push(format!("dataset {i}: ground truth does not parse: {e}"));
                continue;
            }
        };
        if !validate_skeleton(&tree).is_valid() {
            issues.push(format!("dataset {i}: ground truth fails the skeleton filters"));
        }
        if !ids.contains(&d.skeleton_id) {
            issues.push(format!("dataset {i}: unknown skeleton id {}", d.skeleton_id));
        }
        let used = tree.variable_mask();
        for r in 0..d.n_rows() {
            let row = d.row(r);
            if row.iter().any(|v| !v.is_finite()) {
                issues.push(format!("dataset {i} row {r}: non-finite value"));
            }
            if (row[0] as f64).abs() > y_cap {
                issues.push(format!("dataset {i} row {r}: |y| above cap"));
            }
            for v in 0..MAX_VARIABLES {
                if used & (1 << v) == 0 && row[1 + v] != 0.0 {
                    issues.push(format!("dataset {i} row {r}: unused column x{} is not zero", v + 1));
                }
            }
        }
    }
    let mut seen = vec![false; corpus.datasets.len()];
    for &i in corpus
        .split
        .train
        .iter()
        .chain(&corpus.split.validation)
        .chain(&corpus.split.test)
    {
        match seen.get_mut(i) {
            Some(s) if !*s => *s = true,
            Some(_) => issues.push(format!("split: dataset {i} listed twice")),
            None => issues.push(format!("split: index {i} out of range")),
        }
    }
    if seen.iter().any(|s| !s) {
        issues.push("split: some datasets are in no subset".into());
    }
    issues
}
