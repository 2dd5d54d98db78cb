#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srforge_core::datagen::{sample_skeleton, GenerationConfig, TabularDataset};
use srforge_core::expr::{ExprTree, Token, TokenSequence, Vocabulary};
use srforge_core::model::{EncoderKind, Model, ModelConfig};
use srforge_core::nn::{Graph, ParamId, ParameterStore, Real};
use srforge_core::train::make_batch;

struct Flat {
    labels: Vec<Token>,
    sizes: Vec<usize>,
}

fn flatten(t: &ExprTree) -> Flat {
    fn walk(t: &ExprTree, f: &mut Flat) -> usize {
        let at = f.labels.len();
        f.labels.push(t.token());
        f.sizes.push(0);
        let size = 1 + t.children().iter().map(|c| walk(c, f)).sum::<usize>();
        f.sizes[at] = size;
        size
    }
    let mut f = Flat {
        labels: Vec::new(),
        sizes: Vec::new(),
    };
    walk(t, &mut f);
    f
}

fn is_ancestor(f: &Flat, a: usize, b: usize) -> bool {
    a < b && b < a + f.sizes[a]
}

/// Minimum edit cost over every valid edit mapping between `a` and `b`.
/// A mapping is a partial one-to-one matching of nodes (indexed in pre-order)
/// that preserves ancestry and pre-order between all matched pairs; its cost
/// is one per relabeled pair plus one per unmatched node on either side.
pub fn brute_force_ted(a: &ExprTree, b: &ExprTree) -> usize {
    let (fa, fb) = (flatten(a), flatten(b));
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; fb.labels.len()];
    let mut best = usize::MAX;
    search(&fa, &fb, 0, &mut pairs, &mut used, &mut best);
    best
}

fn search(fa: &Flat, fb: &Flat, i: usize, pairs: &mut Vec<(usize, usize)>, used: &mut [bool], best: &mut usize) {
    if i == fa.labels.len() {
        let relabels = pairs.iter().filter(|(x, y)| fa.labels[*x] != fb.labels[*y]).count();
        let cost = relabels + (fa.labels.len() - pairs.len()) + (fb.labels.len() - pairs.len());
        *best = (*best).min(cost);
        return;
    }
    search(fa, fb, i + 1, pairs, used, best);
    for j in 0..fb.labels.len() {
        if used[j] {
            continue;
        }
        let consistent = pairs.iter().all(|&(x, y)| {
            (x < i) == (y < j) && is_ancestor(fa, x, i) == is_ancestor(fb, y, j) && is_ancestor(fa, i, x) == is_ancestor(fb, j, y)
        });
        if consistent {
            used[j] = true;
            pairs.push((i, j));
            search(fa, fb, i + 1, pairs, used, best);
            pairs.pop();
            used[j] = false;
        }
    }
}

/// Random trees of at most `max_nodes` nodes with a mix of leaves, unary and
/// binary nodes.
pub fn small_trees(n: usize, max_nodes: usize, seed: u64) -> Vec<ExprTree> {
    let mut weights = [1.0; 18];
    weights[Token::Add.id() as usize] = 3.0;
    weights[Token::Mul.id() as usize] = 3.0;
    let config = GenerationConfig {
        vocabulary: Vocabulary::with_weights(weights).unwrap(),
        node_budget: max_nodes,
        ..GenerationConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_skeleton(&mut rng, &config)).collect()
}

/// Largest absolute difference relative to the largest magnitude of `a`.
pub fn max_rel_dev(a: &[f32], b: &[f32]) -> f64 {
    let scale = a.iter().fold(0f64, |m, x| m.max(x.abs() as f64)).max(f64::MIN_POSITIVE);
    let diff = a.iter().zip(b).fold(0f64, |m, (x, y)| m.max((*x as f64 - *y as f64).abs()));
    diff / scale
}

/// Realized tables from freshly sampled skeletons, `(values, truths)`.
pub fn sample_tables(n: usize, n_rows: usize, seed: u64) -> Vec<srforge_core::datagen::TabularDataset> {
    use srforge_core::datagen::{build_skeleton_bank, realization_seed, realize};
    let config = GenerationConfig {
        n_raw_samples: 400,
        n_rows,
        seed,
        ..GenerationConfig::default()
    };
    let bank = build_skeleton_bank(&config).unwrap();
    let mut out = Vec::new();
    for (i, sk) in bank.skeletons.iter().cycle().enumerate().take(50 * n) {
        if let Ok(ds) = realize(sk, realization_seed(seed, sk.id, i), &config) {
            out.push(ds);
        }
        if out.len() == n {
            break;
        }
    }
    assert_eq!(out.len(), n, "not enough realizable skeletons");
    out
}

/// Applies a row permutation to an `n × 7` table.
pub fn permute_rows(values: &[f32], perm: &[usize]) -> Vec<f32> {
    perm.iter().flat_map(|&r| values[r * 7..(r + 1) * 7].iter().copied()).collect()
}

/// Moves variable column `1 + perm[i]` to position `1 + i`; `y` stays first.
pub fn permute_var_columns(values: &[f32], perm: &[usize; 6]) -> Vec<f32> {
    values
        .chunks(7)
        .flat_map(|row| std::iter::once(row[0]).chain(perm.iter().map(move |&p| row[1 + p])))
        .collect()
}

pub const H: f64 = 1e-5;
/// Gradient norms below this are compared absolutely: some gradients are
/// exactly zero (attention key biases) and differences only see noise.
pub const NORM_FLOOR: f64 = 1e-3;

pub fn rel_err(ad: &[f64], fd: &[f64]) -> f64 {
    let diff = ad.iter().zip(fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let na = ad.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nf = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nf).max(NORM_FLOOR)
}

/// Central differences of `loss` with respect to every parameter value.
pub fn finite_differences(store: &ParameterStore<f64>, loss: impl Fn(&ParameterStore<f64>) -> f64) -> Vec<Vec<f64>> {
    let mut work = store.clone();
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    ids.iter()
        .map(|&id| {
            (0..store.value(id).len())
                .map(|i| {
                    let x = work.value(id).data()[i];
                    let mut at = |dx: f64| {
                        work.get_mut(id).value.data_mut()[i] = x + dx;
                        loss(&work)
                    };
                    let d = (at(H) - at(-H)) / (2.0 * H);
                    work.get_mut(id).value.data_mut()[i] = x;
                    d
                })
                .collect()
        })
        .collect()
}

fn tiny_batch() -> (Vec<TabularDataset>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truths = ["add mul C x1 sin x2", "mul C sq x1"];
    let ds = truths
        .iter()
        .map(|t| {
            let values = (0..4 * 7).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
            TabularDataset::from_values(0, 0, t.parse::<TokenSequence>().unwrap(), values).unwrap()
        })
        .collect();
    (ds, 2)
}

fn model_loss<F: Real>(model: &Model<F>, values: &[F], ids: &[usize], targets: &[usize], keep: &[bool], batch: usize) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::training(model.store(), 9);
    let x = model.table_input(&mut g, values, batch).unwrap();
    let m = model.encode(&mut g, x).unwrap();
    let logits = model.decode(&mut g, m, ids, batch).unwrap();
    let loss = g.cross_entropy(logits, targets, keep, 0.1).unwrap();
    let grads = g.backward(loss).unwrap();
    let per = model
        .store()
        .iter()
        .map(|(id, p)| match grads.get(id) {
            Some(gr) => gr.iter().map(|x| x.to_f64().unwrap()).collect(),
            None => vec![0.0; p.value.len()],
        })
        .collect();
    (g.value(loss)[0].to_f64().unwrap(), per)
}

/// `(parameter, 64-bit error, 32-bit error)` for every parameter of a tiny
/// model of each encoder kind, against 64-bit central differences.
pub fn tiny_model_gradient_errors() -> Vec<(String, f64, f64)> {
    let (datasets, batch) = tiny_batch();
    let refs: Vec<&TabularDataset> = datasets.iter().collect();
    let config = ModelConfig {
        d_model: 8,
        n_enc: 1,
        n_dec: 1,
        heads: 2,
        max_len: 8,
        n_rows: 4,
        ..ModelConfig::default()
    };
    let b = make_batch(&refs, config.max_len).unwrap();
    let ids = b.decoder_inputs();
    let mut out = Vec::new();
    for kind in EncoderKind::ALL {
        let model32 = Model::<f32>::new(config.clone().with_encoder(kind), 21).unwrap();
        let model64: Model<f64> = model32.cast();
        let v64: Vec<f64> = b.tables.iter().map(|&v| v as f64).collect();
        let fd = finite_differences(model64.store(), |s| {
            let mut m = model64.clone();
            *m.store_mut() = s.clone();
            model_loss(&m, &v64, &ids, &b.targets, &b.keep, batch).0
        });
        let (_, ad64) = model_loss(&model64, &v64, &ids, &b.targets, &b.keep, batch);
        let (_, ad32) = model_loss(&model32, &b.tables, &ids, &b.targets, &b.keep, batch);
        for (i, (_, p)) in model64.store().iter().enumerate() {
            out.push((format!("{kind} {}", p.name), rel_err(&ad64[i], &fd[i]), rel_err(&ad32[i], &fd[i])));
        }
    }
    out
}
