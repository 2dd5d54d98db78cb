//! Benchmark evaluation: problem loading, rescaling, the repeated 50-row
//! sampling protocol, and per-group aggregation of normalized tree edit
//! distances.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::N_COLS;
use crate::expr::{parse_infix, ExprError, ExprTree, Token, TokenSequence, MAX_VARIABLES};
use crate::model::{Model, ModelError};
use crate::seed::{derive, hash_str};
use crate::simplify::simplify;
use crate::treedist::normalized_ted;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: ground truth: {source}")]
    Truth { path: String, source: ExprError },
    #[error("problem `{0}` is unusable: {1}")]
    Unusable(String, String),
    #[error("no problems found under {0}")]
    NoProblems(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Easy,
    Medium,
    Hard,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Easy, Group::Medium, Group::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Group::Easy => "easy",
            Group::Medium => "medium",
            Group::Hard => "hard",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Group::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| format!("unknown group `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrsdProblem {
    pub name: String,
    pub group: Group,
    /// Number of input variables `k`.
    pub n_vars: usize,
    /// Rows whose entries are all finite, each `k` variables then the target.
    pub rows: Vec<Vec<f64>>,
    pub total_rows: usize,
    pub truth: ExprTree,
    pub unsupported_arity: bool,
}

/// Column holding the target; the remaining columns are `x1..xk` in order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TargetColumn {
    #[default]
    Last,
    Index(usize),
}

/// Whitespace-delimited numeric table. Returns all rows; every row must have
/// the same number of columns.
pub fn parse_table(text: &str, path: &str) -> Result<Vec<Vec<f64>>, EvalError> {
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |column: usize, message: String| EvalError::Parse {
            path: path.to_string(),
            line: i + 1,
            column,
            message,
        };
        let mut row = Vec::new();
        for (j, field) in line.split_whitespace().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(j + 1, format!("`{field}` is not a number")))?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(row.len().min(w) + 1, format!("expected {w} columns, found {}", row.len())));
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

/// A truth file holds either a pre-order token line or an infix expression.
pub fn parse_truth(text: &str) -> Result<ExprTree, ExprError> {
    let text = text.trim();
    match text.parse::<TokenSequence>() {
        Ok(seq) => seq.to_tree(),
        Err(_) => parse_infix(text),
    }
}

pub fn load_problem(
    name: &str,
    group: Group,
    data_path: &Path,
    truth_path: &Path,
    target: TargetColumn,
) -> Result<SrsdProblem, EvalError> {
    let shown = data_path.display().to_string();
    let table = parse_table(&fs::read_to_string(data_path)?, &shown)?;
    let Some(width) = table.first().map(Vec::len) else {
        return Err(EvalError::Unusable(name.into(), "empty table".into()));
    };
    if width < 2 {
        return Err(EvalError::Unusable(name.into(), "table needs a variable and a target".into()));
    }
    let target = match target {
        TargetColumn::Last => width - 1,
        TargetColumn::Index(i) if i < width => i,
        TargetColumn::Index(i) => {
            return Err(EvalError::Parse {
                path: shown,
                line: 1,
                column: i + 1,
                message: format!("target column {} beyond {width} columns", i + 1),
            })
        }
    };
    let total_rows = table.len();
    let rows = table
        .into_iter()
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .map(|mut r| {
            let y = r.remove(target);
            r.push(y);
            r
        })
        .collect();
    let truth = parse_truth(&fs::read_to_string(truth_path)?).map_err(|source| EvalError::Truth {
        path: truth_path.display().to_string(),
        source,
    })?;
    let n_vars = width - 1;
    Ok(SrsdProblem {
        name: name.into(),
        group,
        n_vars,
        rows,
        total_rows,
        truth,
        unsupported_arity: n_vars > MAX_VARIABLES,
    })
}

/// Problem rescaled to the training ranges, with the standardized truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedProblem {
    pub name: String,
    pub group: Group,
    /// Valid rows in model layout `(y, x1..x6)`, unused columns zero.
    pub rows: Vec<[f32; N_COLS]>,
    pub var_scales: Vec<f64>,
    pub y_scale: f64,
    pub truth: ExprTree,
    pub unsupported_arity: bool,
}

fn pow10_round(x: f64) -> f64 {
    10f64.powi(x.round() as i32)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Scale of a variable column: `10^round(log10(median |x|))`, or 1 for an
/// all-zero column.
pub fn column_scale(values: impl IntoIterator<Item = f64>) -> f64 {
    let m = median(values.into_iter().map(f64::abs).collect());
    if m > 0.0 {
        pow10_round(m.log10())
    } else {
        1.0
    }
}

/// Scale of the target: `10^round(mean log10 |y|)` over its non-zero values.
pub fn target_scale(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let logs: Vec<f64> = values.into_iter().filter(|v| *v != 0.0).map(|v| v.abs().log10()).collect();
    if logs.is_empty() {
        return None;
    }
    Some(pow10_round(logs.iter().sum::<f64>() / logs.len() as f64))
}

pub fn preprocess(problem: &SrsdProblem) -> Result<PreparedProblem, EvalError> {
    let k = problem.n_vars;
    let var_scales: Vec<f64> = (0..k).map(|j| column_scale(problem.rows.iter().map(|r| r[j]))).collect();
    let y_scale = target_scale(problem.rows.iter().map(|r| r[k]))
        .ok_or_else(|| EvalError::Unusable(problem.name.clone(), "target is zero everywhere".into()))?;
    let used = k.min(MAX_VARIABLES);
    let rows = problem
        .rows
        .iter()
        .map(|r| {
            let mut out = [0f32; N_COLS];
            out[0] = (r[k] / y_scale) as f32;
            for j in 0..used {
                out[j + 1] = (r[j] / var_scales[j]) as f32;
            }
            out
        })
        .collect();
    let truth = simplify(&ExprTree::binary(Token::Mul, ExprTree::constant(), problem.truth.clone()));
    Ok(PreparedProblem {
        name: problem.name.clone(),
        group: problem.group,
        rows,
        var_scales,
        y_scale,
        truth,
        unsupported_arity: problem.unsupported_arity,
    })
}

/// Maps sampled tables to expressions. `tables` holds `batch` tables of
/// `n_rows × 7` values; `None` marks an incomplete decode.
pub trait Predictor: Sync {
    fn predict(
        &self,
        problem: &PreparedProblem,
        tables: &[f32],
        batch: usize,
    ) -> Result<Vec<Option<TokenSequence>>, EvalError>;
}

/// Returns the standardized truth of the problem.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, problem: &PreparedProblem, _: &[f32], batch: usize) -> Result<Vec<Option<TokenSequence>>, EvalError> {
        Ok(vec![Some(problem.truth.to_preorder()); batch])
    }
}

/// Returns the same expression for every table.
pub struct ConstantPredictor(pub ExprTree);

impl Predictor for ConstantPredictor {
    fn predict(&self, _: &PreparedProblem, _: &[f32], batch: usize) -> Result<Vec<Option<TokenSequence>>, EvalError> {
        Ok(vec![Some(self.0.to_preorder()); batch])
    }
}

/// Greedy decoding with a trained model.
pub struct ModelPredictor(pub Model<f32>);

impl Predictor for ModelPredictor {
    fn predict(&self, _: &PreparedProblem, tables: &[f32], batch: usize) -> Result<Vec<Option<TokenSequence>>, EvalError> {
        self.0
            .greedy_decode(tables, batch)?
            .into_iter()
            .map(|r| match r {
                Ok(seq) => Ok(Some(seq)),
                Err(ModelError::IncompleteDecode(_)) => Ok(None),
                Err(e) => Err(e.into()),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalProtocolConfig {
    pub n_obs: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for EvalProtocolConfig {
    fn default() -> Self {
        EvalProtocolConfig {
            n_obs: 50,
            repeats: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ProblemFlags {
    pub unsupported_arity: bool,
    pub incomplete_decodes: usize,
    pub insufficient_rows: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemResult {
    pub name: String,
    pub group: Group,
    /// `None` when the problem was excluded.
    pub mean_nted: Option<f64>,
    pub repeats: Vec<f64>,
    pub flags: ProblemFlags,
}

/// Seed of repeat `r` of a problem.
pub fn repeat_seed(base: u64, problem: &PreparedProblem, r: usize) -> u64 {
    derive(base, &[hash_str(problem.group.name()), hash_str(&problem.name), r as u64])
}

/// Scores one problem: `repeats` times, draw `n_obs` valid rows without
/// replacement, predict, simplify and compare with the truth.
pub fn run_protocol<P: Predictor + ?Sized>(
    predictor: &P,
    problem: &PreparedProblem,
    cfg: &EvalProtocolConfig,
) -> Result<ProblemResult, EvalError> {
    let mut result = ProblemResult {
        name: problem.name.clone(),
        group: problem.group,
        mean_nted: None,
        repeats: Vec::new(),
        flags: ProblemFlags {
            unsupported_arity: problem.unsupported_arity,
            ..ProblemFlags::default()
        },
    };
    if problem.rows.len() < cfg.n_obs || cfg.n_obs == 0 {
        result.flags.insufficient_rows = true;
        return Ok(result);
    }
    if problem.unsupported_arity {
        result.repeats = vec![1.0; cfg.repeats];
    } else if cfg.repeats > 0 {
        let mut tables = Vec::with_capacity(cfg.repeats * cfg.n_obs * N_COLS);
        for r in 0..cfg.repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(repeat_seed(cfg.seed, problem, r));
            for i in sample(&mut rng, problem.rows.len(), cfg.n_obs) {
                tables.extend_from_slice(&problem.rows[i]);
            }
        }
        for pred in predictor.predict(problem, &tables, cfg.repeats)? {
            let score = match pred.map(|s| s.to_tree()) {
                Some(Ok(tree)) => normalized_ted(&simplify(&tree), &problem.truth),
                Some(Err(_)) | None => {
                    result.flags.incomplete_decodes += 1;
                    1.0
                }
            };
            result.repeats.push(score);
        }
    }
    if !result.repeats.is_empty() {
        result.mean_nted = Some(result.repeats.iter().sum::<f64>() / result.repeats.len() as f64);
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: Group,
    pub n_problems: usize,
    pub mean_nted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub problems: Vec<ProblemResult>,
    pub groups: Vec<GroupSummary>,
    /// Problems left out of the group means.
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

/// Unweighted mean of the problem means within each group. Results are
/// sorted by group and name first, so input order does not matter.
pub fn aggregate(mut problems: Vec<ProblemResult>) -> EvalReport {
    problems.sort_by(|a, b| (a.group, &a.name).cmp(&(b.group, &b.name)));
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for group in Group::ALL {
        let means: Vec<f64> = problems
            .iter()
            .filter(|p| p.group == group)
            .filter_map(|p| p.mean_nted)
            .collect();
        if means.is_empty() {
            let w = format!("group {group} has no scored problems");
            log::warn!("{w}");
            warnings.push(w);
            continue;
        }
        groups.push(GroupSummary {
            group,
            n_problems: means.len(),
            mean_nted: means.iter().sum::<f64>() / means.len() as f64,
        });
    }
    let excluded = problems
        .iter()
        .filter(|p| p.mean_nted.is_none())
        .map(|p| format!("{}/{}", p.group, p.name))
        .collect();
    EvalReport {
        problems,
        groups,
        excluded,
        warnings,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,group,mean_nted,unsupported_arity,incomplete_decodes,insufficient_rows\n");
        for p in &self.problems {
            let mean = p.mean_nted.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.name,
                p.group,
                mean,
                p.flags.unsupported_arity,
                p.flags.incomplete_decodes,
                p.flags.insufficient_rows
            ));
        }
        out
    }
}

/// `(group, name, table path, truth path)` for every `<name>.txt` with a
/// matching `<name>.truth` under `root/<group>/`.
pub fn discover_problems(root: &Path) -> Result<Vec<(Group, String, PathBuf, PathBuf)>, EvalError> {
    let mut found = Vec::new();
    for group in Group::ALL {
        let dir = root.join(group.name());
        if !dir.is_dir() {
            continue;
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for path in entries {
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let truth = path.with_extension("truth");
            if !truth.is_file() {
                log::warn!("{} has no truth file, skipped", path.display());
                continue;
            }
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            found.push((group, name, path, truth));
        }
    }
    if found.is_empty() {
        return Err(EvalError::NoProblems(root.display().to_string()));
    }
    Ok(found)
}

/// Loads, preprocesses and scores every problem under `root` in parallel.
/// Problems that cannot be prepared are listed as excluded.
pub fn evaluate_directory<P: Predictor + ?Sized>(
    root: &Path,
    predictor: &P,
    cfg: &EvalProtocolConfig,
    target: TargetColumn,
) -> Result<EvalReport, EvalError> {
    let found = discover_problems(root)?;
    let results: Vec<Result<ProblemResult, EvalError>> = found
        .par_iter()
        .map(|(group, name, data, truth)| {
            let problem = load_problem(name, *group, data, truth, target)?;
            match preprocess(&problem) {
                Ok(prepared) => run_protocol(predictor, &prepared, cfg),
                Err(EvalError::Unusable(..)) => Ok(ProblemResult {
                    name: name.clone(),
                    group: *group,
                    mean_nted: None,
                    repeats: Vec::new(),
                    flags: ProblemFlags {
                        insufficient_rows: true,
                        unsupported_arity: problem.unsupported_arity,
                        incomplete_decodes: 0,
                    },
                }),
                Err(e) => Err(e),
            }
        })
        .collect();
    Ok(aggregate(results.into_iter().collect::<Result<_, _>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prepared(name: &str, truth: &str, rows: usize) -> PreparedProblem {
        PreparedProblem {
            name: name.into(),
            group: Group::Easy,
            rows: (0..rows).map(|i| [i as f32; N_COLS]).collect(),
            var_scales: vec![1.0],
            y_scale: 1.0,
            truth: parse_truth(truth).unwrap(),
            unsupported_arity: false,
        }
    }

    #[test]
    fn table_parsing() {
        let rows = parse_table("1 2 3\n4 5 6\n", "t").unwrap();
        assert_eq!(rows.len(), 2);
        let err = parse_table("1 2 3\n4 x 6\n", "t").unwrap_err();
        assert!(matches!(err, EvalError::Parse { line: 2, column: 2, .. }), "{err}");
        assert!(matches!(parse_table("1 2\n1 2 3\n", "t"), Err(EvalError::Parse { line: 2, .. })));
        assert!(parse_table("1 inf 2\n", "t").unwrap()[0][1].is_infinite());
    }

    #[test]
    fn truth_formats() {
        let want = "add mul C x1 log x2".parse::<TokenSequence>().unwrap().to_tree().unwrap();
        assert_eq!(parse_truth("C*x1 + log(x2)").unwrap(), want);
        assert_eq!(parse_truth("add mul C x1 log x2\n").unwrap(), want);
    }

    #[test]
    fn scales() {
        assert_eq!(column_scale([3e4, 2e4, 4e4]), 1e4);
        assert_eq!(column_scale([1.0, 0.9, 1.2]), 1.0);
        assert_eq!(column_scale([0.0, 0.0]), 1.0);
        assert_eq!(target_scale([0.0, 0.0]), None);
        assert_eq!(target_scale([1e3, 1e5]), Some(1e4));
    }

    #[test]
    fn oracle_and_wrong_leaf() {
        let cfg = EvalProtocolConfig::default();
        let p = prepared("p", "mul C x1", 80);
        let r = run_protocol(&OraclePredictor, &p, &cfg).unwrap();
        assert_eq!(r.mean_nted, Some(0.0));
        assert_eq!(r.repeats.len(), 30);
        let leaf = prepared("q", "x2", 80);
        let r = run_protocol(&ConstantPredictor(ExprTree::var(0)), &leaf, &cfg).unwrap();
        assert_eq!(r.mean_nted, Some(1.0));
        let few = prepared("few", "x1", 49);
        let r = run_protocol(&OraclePredictor, &few, &cfg).unwrap();
        assert!(r.flags.insufficient_rows && r.mean_nted.is_none());
    }

    #[test]
    fn repeat_seeds_distinct() {
        let p = prepared("p", "x1", 60);
        let seeds: std::collections::HashSet<u64> = (0..30).map(|r| repeat_seed(9, &p, r)).collect();
        assert_eq!(seeds.len(), 30);
    }

    #[test]
    fn aggregation() {
        let mk = |name: &str, group, mean| ProblemResult {
            name: name.into(),
            group,
            mean_nted: mean,
            repeats: vec![],
            flags: ProblemFlags::default(),
        };
        let report = aggregate(vec![
            mk("b", Group::Easy, Some(0.2)),
            mk("a", Group::Easy, Some(0.6)),
            mk("c", Group::Hard, Some(1.0)),
            mk("d", Group::Hard, None),
        ]);
        assert_eq!(report.groups.len(), 2);
        assert!((report.groups[0].mean_nted - 0.4).abs() < 1e-12);
        assert_eq!(report.groups[1].mean_nted, 1.0);
        assert_eq!(report.excluded, vec!["hard/d".to_string()]);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.problems[0].name, "a");
        assert!(report.to_csv().lines().count() == 5);
    }
}
