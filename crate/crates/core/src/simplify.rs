//! Canonical rewriting of expression trees and skeleton filters.
//!
//! The rule set, applied bottom-up until nothing changes:
//!
//! 1. constant folding: an operator whose leaves are all `C` becomes `C`;
//! 2. involutions: `neg(neg(u))` and `inv(inv(u))` become `u`;
//! 3. inverse pairs: `log(exp(u))`, `exp(log(u))` and `sq(sqrt(u))` become `u`;
//! 4. the two children of `add` and `mul` are sorted by [`canonical_cmp`];
//! 5. `neg` is hoisted out of `mul`: `mul(neg(a), b)` becomes `neg(mul(a, b))`.
//!
//! Rules 1-3 remove nodes and rule 5 moves a `neg` strictly closer to the
//! root, so the rewrite terminates. `sqrt(sq(u))` is left alone because it
//! only equals `u` for non-negative `u`.

use std::cmp::Ordering;
use std::fmt;

use crate::expr::{ExprTree, Token};

/// Longest skeleton kept in a bank, in tokens.
pub const MAX_SKELETON_TOKENS: usize = 30;

const MAX_PASSES: usize = 64;

/// Returns the canonical form of `tree`. Idempotent.
pub fn simplify(tree: &ExprTree) -> ExprTree {
    let mut current = rewrite(tree.clone());
    for _ in 0..MAX_PASSES {
        let next = rewrite(current.clone());
        if next == current {
            return current;
        }
        current = next;
    }
    debug_assert!(false, "simplify did not reach a fixpoint");
    current
}

fn rewrite(tree: ExprTree) -> ExprTree {
    let (token, children) = tree.into_parts();
    let children = children.into_iter().map(rewrite).collect();
    reduce(token, children)
}

/// Builds `token(children)` where every child is already in canonical form.
fn reduce(token: Token, mut children: Vec<ExprTree>) -> ExprTree {
    if children.is_empty() {
        return ExprTree::leaf(token);
    }
    if children.iter().all(|c| c.token() == Token::C) {
        return ExprTree::constant();
    }
    if children.len() == 1 {
        let child = children.pop().unwrap();
        let cancels = matches!(
            (token, child.token()),
            (Token::Neg, Token::Neg)
                | (Token::Inv, Token::Inv)
                | (Token::Log, Token::Exp)
                | (Token::Exp, Token::Log)
                | (Token::Sq, Token::Sqrt)
        );
        if cancels {
            let (_, mut grandchildren) = child.into_parts();
            return grandchildren.pop().unwrap();
        }
        return ExprTree::unary(token, child);
    }

    let right = children.pop().unwrap();
    let left = children.pop().unwrap();
    if token == Token::Mul {
        if left.token() == Token::Neg {
            let (_, mut inner) = left.into_parts();
            let product = reduce(Token::Mul, vec![inner.pop().unwrap(), right]);
            return reduce(Token::Neg, vec![product]);
        }
        if right.token() == Token::Neg {
            let (_, mut inner) = right.into_parts();
            let product = reduce(Token::Mul, vec![left, inner.pop().unwrap()]);
            return reduce(Token::Neg, vec![product]);
        }
    }
    if canonical_cmp(&left, &right) == Ordering::Greater {
        ExprTree::binary(token, right, left)
    } else {
        ExprTree::binary(token, left, right)
    }
}

/// Total order on trees: node count, then pre-order token ids.
pub fn canonical_cmp(a: &ExprTree, b: &ExprTree) -> Ordering {
    a.node_count()
        .cmp(&b.node_count())
        .then_with(|| a.preorder().map(|n| n.token()).cmp(b.preorder().map(|n| n.token())))
}

/// Deduplication key of a simplified tree: its pre-order token text.
pub fn canonical_key(tree: &ExprTree) -> String {
    tree.to_preorder().to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RejectReason {
    SingleLeaf,
    NoConstant,
    NoVariable,
    TooLong,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::SingleLeaf => "single-leaf",
            RejectReason::NoConstant => "no-constant",
            RejectReason::NoVariable => "no-variable",
            RejectReason::TooLong => "too-long",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkeletonVerdict {
    Valid,
    Rejected(RejectReason),
}

impl SkeletonVerdict {
    pub fn is_valid(self) -> bool {
        self == SkeletonVerdict::Valid
    }
}

/// Skeleton filters: more than one node, at least one `C`, at least one
/// variable, and at most [`MAX_SKELETON_TOKENS`] tokens.
pub fn validate_skeleton(tree: &ExprTree) -> SkeletonVerdict {
    let reason = if tree.is_leaf() {
        RejectReason::SingleLeaf
    } else if tree.count_token(Token::C) == 0 {
        RejectReason::NoConstant
    } else if tree.variable_mask() == 0 {
        RejectReason::NoVariable
    } else if tree.node_count() > MAX_SKELETON_TOKENS {
        RejectReason::TooLong
    } else {
        return SkeletonVerdict::Valid;
    };
    SkeletonVerdict::Rejected(reason)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_skeleton, GenerationConfig};
    use crate::expr::{evaluate, TokenSequence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tree(s: &str) -> ExprTree {
        s.parse::<TokenSequence>().unwrap().to_tree().unwrap()
    }

    fn simp(s: &str) -> String {
        simplify(&tree(s)).to_preorder().to_string()
    }

    #[test]
    fn rule_examples() {
        assert_eq!(simp("neg neg x1"), "x1");
        assert_eq!(simp("inv inv x3"), "x3");
        assert_eq!(simp("mul C add C C"), "C");
        assert_eq!(simp("add x2 x1"), "add x1 x2");
        assert_eq!(simp("log exp x1"), "x1");
        assert_eq!(simp("exp log x1"), "x1");
        assert_eq!(simp("sq sqrt x1"), "x1");
        assert_eq!(simp("sqrt sq x1"), "sqrt sq x1");
        assert_eq!(simp("mul neg x1 x2"), "neg mul x1 x2");
        assert_eq!(simp("mul neg x1 neg x2"), "mul x1 x2");
        assert_eq!(simp("mul x1 neg C"), "mul C x1");
        assert_eq!(simp("add sin C x1"), "add C x1");
        // larger subtrees sort after smaller ones
        assert_eq!(simp("mul log x1 C"), "mul C log x1");
    }

    #[test]
    fn canonical_keys() {
        assert_eq!(
            canonical_key(&simplify(&tree("add x1 x2"))),
            canonical_key(&simplify(&tree("add x2 x1")))
        );
        assert_ne!(canonical_key(&tree("x1")), canonical_key(&tree("x2")));
        let s = "add mul C x1 mul x2 log x1";
        assert_eq!(canonical_key(&tree(s)), s);
    }

    #[test]
    fn filters() {
        let reject = |s: &str| match validate_skeleton(&tree(s)) {
            SkeletonVerdict::Rejected(r) => Some(r),
            SkeletonVerdict::Valid => None,
        };
        assert_eq!(reject("x1"), Some(RejectReason::SingleLeaf));
        assert_eq!(reject("C"), Some(RejectReason::SingleLeaf));
        assert_eq!(reject("add x1 x2"), Some(RejectReason::NoConstant));
        assert_eq!(reject("sin C"), Some(RejectReason::NoVariable));
        assert_eq!(reject("mul C x1"), None);
        let mut long = ExprTree::binary(Token::Mul, ExprTree::constant(), ExprTree::var(0));
        while long.node_count() <= MAX_SKELETON_TOKENS {
            long = ExprTree::unary(Token::Sin, long);
        }
        assert_eq!(validate_skeleton(&long), SkeletonVerdict::Rejected(RejectReason::TooLong));
    }

    fn random_trees(n: usize, seed: u64) -> Vec<ExprTree> {
        let cfg = GenerationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_skeleton(&mut rng, &cfg)).collect()
    }

    #[test]
    fn idempotent_on_random_trees() {
        for t in random_trees(10_000, 11) {
            let once = simplify(&t);
            assert_eq!(simplify(&once), once, "not idempotent on {}", t.to_preorder());
            assert!(once.node_count() <= t.node_count());
        }
    }

    fn has_foldable_subtree(t: &ExprTree) -> bool {
        t.preorder()
            .any(|n| !n.is_leaf() && n.preorder().all(|m| !m.is_leaf() || m.token() == Token::C))
    }

    #[test]
    fn preserves_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut compared = 0;
        let mut trees = random_trees(20_000, 17).into_iter();
        while compared < 1000 {
            let t = trees.next().expect("ran out of random trees");
            if has_foldable_subtree(&t) {
                continue;
            }
            let s = simplify(&t);
            let vars: Vec<f64> = (0..6).map(|_| rng.gen_range(0.1..10.0)).collect();
            let c: f64 = rng.gen_range(-100.0..100.0);
            let consts = vec![c; t.count_token(Token::C)];
            let original = evaluate(&t, &vars, &consts);
            let simplified = evaluate(&s, &vars, &consts[..s.count_token(Token::C)]);
            match (original, simplified) {
                (Ok(a), Ok(b)) => {
                    assert!(
                        (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                        "{} = {a} but {} = {b}",
                        t.to_preorder(),
                        s.to_preorder()
                    );
                    compared += 1;
                }
                // Rewriting can only remove domain restrictions.
                (Ok(a), Err(e)) => panic!("{} = {a} but simplified form fails: {e}", t.to_preorder()),
                _ => {}
            }
        }
    }
}
