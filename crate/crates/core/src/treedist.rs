//! Ordered tree edit distance (Zhang–Shasha) with unit costs, and the
//! normalized distance `min(1, ted(pred, truth) / |truth|)`.

use crate::expr::{ExprTree, Token};

/// Post-order view of a tree used by the dynamic program. Node `k` (1-based)
/// is the `k`-th node in post-order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledOrderedTree {
    labels: Vec<Token>,
    /// Leftmost leaf descendant of every node, 1-based.
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl LabeledOrderedTree {
    pub fn new(tree: &ExprTree) -> Self {
        let mut labels = Vec::new();
        let mut lld = Vec::new();
        fn walk(node: &ExprTree, labels: &mut Vec<Token>, lld: &mut Vec<usize>) -> usize {
            let mut leftmost = None;
            for child in node.children() {
                let l = walk(child, labels, lld);
                leftmost.get_or_insert(l);
            }
            labels.push(node.token());
            let own = labels.len();
            let l = leftmost.unwrap_or(own);
            lld.push(l);
            l
        }
        walk(tree, &mut labels, &mut lld);
        // A keyroot is the highest node for its leftmost leaf; iterating in
        // post-order, the last node seen for each lld wins.
        let n = labels.len();
        let mut highest = vec![0usize; n + 1];
        for k in 1..=n {
            highest[lld[k - 1]] = k;
        }
        let mut keyroots: Vec<usize> = highest.into_iter().filter(|&k| k > 0).collect();
        keyroots.sort_unstable();
        LabeledOrderedTree {
            labels,
            lld,
            keyroots,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, k: usize) -> Token {
        self.labels[k - 1]
    }

    pub fn lld(&self, k: usize) -> usize {
        self.lld[k - 1]
    }

    pub fn keyroots(&self) -> &[usize] {
        &self.keyroots
    }
}

/// Minimum number of node insertions, deletions and relabelings turning `a`
/// into `b`. Labels are token kinds, so every `C` matches every other `C`.
pub fn ted(a: &ExprTree, b: &ExprTree) -> usize {
    zhang_shasha(&LabeledOrderedTree::new(a), &LabeledOrderedTree::new(b))
}

pub fn zhang_shasha(a: &LabeledOrderedTree, b: &LabeledOrderedTree) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut tree_dist = vec![vec![0usize; m + 1]; n + 1];
    let mut forest = vec![vec![0usize; m + 1]; n + 1];
    for &i in a.keyroots() {
        for &j in b.keyroots() {
            let (li, lj) = (a.lld(i), b.lld(j));
            forest[li - 1][lj - 1] = 0;
            for i1 in li..=i {
                forest[i1][lj - 1] = forest[i1 - 1][lj - 1] + 1;
            }
            for j1 in lj..=j {
                forest[li - 1][j1] = forest[li - 1][j1 - 1] + 1;
            }
            for i1 in li..=i {
                for j1 in lj..=j {
                    let delete = forest[i1 - 1][j1] + 1;
                    let insert = forest[i1][j1 - 1] + 1;
                    if a.lld(i1) == li && b.lld(j1) == lj {
                        let relabel = forest[i1 - 1][j1 - 1] + usize::from(a.label(i1) != b.label(j1));
                        forest[i1][j1] = delete.min(insert).min(relabel);
                        tree_dist[i1][j1] = forest[i1][j1];
                    } else {
                        let subtree = forest[a.lld(i1) - 1][b.lld(j1) - 1] + tree_dist[i1][j1];
                        forest[i1][j1] = delete.min(insert).min(subtree);
                    }
                }
            }
        }
    }
    tree_dist[n][m]
}

/// `min(1, ted(pred, truth) / node_count(truth))`.
pub fn normalized_ted(pred: &ExprTree, truth: &ExprTree) -> f64 {
    let d = ted(pred, truth) as f64;
    (d / truth.node_count() as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_skeleton, GenerationConfig};
    use crate::expr::TokenSequence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tree(s: &str) -> ExprTree {
        s.parse::<TokenSequence>().unwrap().to_tree().unwrap()
    }

    #[test]
    fn small_examples() {
        let t = tree("add mul C x1 mul x2 log x1");
        assert_eq!(ted(&t, &t), 0);
        assert_eq!(ted(&tree("x1"), &tree("x2")), 1);
        assert_eq!(ted(&tree("add x1 x2"), &tree("x1")), 2);
        assert_eq!(ted(&tree("C"), &tree("C")), 0);
        assert_eq!(ted(&tree("sin x1"), &tree("cos x1")), 1);
        // insert one unary node
        assert_eq!(ted(&tree("x1"), &tree("neg x1")), 1);
    }

    #[test]
    fn keyroots_of_small_tree() {
        // add(mul(C, x1), x2): post-order C x1 mul x2 add
        let lot = LabeledOrderedTree::new(&tree("add mul C x1 x2"));
        assert_eq!(lot.len(), 5);
        assert_eq!(lot.label(3), Token::Mul);
        assert_eq!(lot.lld(5), 1);
        assert_eq!(lot.lld(4), 4);
        assert_eq!(lot.keyroots(), &[2, 4, 5]);
    }

    #[test]
    fn normalized_examples() {
        let t = tree("mul C x1");
        assert_eq!(normalized_ted(&t, &t), 0.0);
        assert_eq!(normalized_ted(&tree("x2"), &tree("x1")), 1.0);
        let d = normalized_ted(&tree("x1"), &tree("add x1 x2"));
        assert!((d - 2.0 / 3.0).abs() < 1e-12);
        // clamped: distance 7 against a 3-node truth
        let big = tree("add sin cos exp x3 mul x4 x5");
        assert!(ted(&big, &tree("add x1 x2")) > 3);
        assert_eq!(normalized_ted(&big, &tree("add x1 x2")), 1.0);
    }

    fn random_pool(n: usize, seed: u64) -> Vec<ExprTree> {
        let config = GenerationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_skeleton(&mut rng, &config)).collect()
    }

    #[test]
    fn metric_properties() {
        let pool = random_pool(600, 4);
        for pair in pool.chunks_exact(2).take(500.min(pool.len() / 2)) {
            assert_eq!(ted(&pair[0], &pair[1]), ted(&pair[1], &pair[0]));
        }
        for triple in pool.chunks_exact(3).take(200) {
            let (a, b, c) = (&triple[0], &triple[1], &triple[2]);
            assert!(ted(a, c) <= ted(a, b) + ted(b, c));
        }
        for t in pool.iter().take(100) {
            assert_eq!(ted(t, t), 0);
            let s = pool[0].clone();
            let n = normalized_ted(t, &s);
            assert!((0.0..=1.0).contains(&n));
            assert_eq!(n == 0.0, *t == s);
        }
    }
}
