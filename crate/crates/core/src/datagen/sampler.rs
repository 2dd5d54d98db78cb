use rand::Rng;

use super::GenerationConfig;
use crate::expr::{ExprTree, Token, GENERATIVE_COUNT};

/// Draws a random expression tree by weighted pre-order token sampling.
///
/// Each draw only considers tokens whose arity still lets the finished tree
/// fit in `config.node_budget` nodes, so once the budget is reached only
/// leaves remain and sampling always terminates.
pub fn sample_skeleton<R: Rng + ?Sized>(rng: &mut R, config: &GenerationConfig) -> ExprTree {
    let weights = config.vocabulary.weights();
    let budget = config.node_budget.max(1);
    let mut tokens = Vec::new();
    let mut open = 1usize;
    while open > 0 {
        // Smallest possible final size when the next token has arity `a` is
        // `tokens.len() + open + a`.
        let slack = budget.saturating_sub(tokens.len() + open);
        let token = draw(rng, weights, slack);
        open = open - 1 + token.arity().unwrap();
        tokens.push(token);
    }
    ExprTree::from_preorder(&tokens).expect("sampler emits complete pre-order sequences")
}

fn draw<R: Rng + ?Sized>(rng: &mut R, weights: &[f64; GENERATIVE_COUNT], max_arity: usize) -> Token {
    let allowed = |t: &Token| t.arity().unwrap() <= max_arity;
    let total: f64 = Token::ALL[..GENERATIVE_COUNT]
        .iter()
        .filter(|t| allowed(t))
        .map(|t| weights[t.id() as usize])
        .sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = Token::C;
    for t in Token::ALL[..GENERATIVE_COUNT].iter().filter(|t| allowed(t)) {
        let w = weights[t.id() as usize];
        if w <= 0.0 {
            continue;
        }
        last = *t;
        if u < w {
            return *t;
        }
        u -= w;
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn budget_of_one_gives_leaves() {
        let config = GenerationConfig {
            node_budget: 1,
            ..GenerationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            assert!(sample_skeleton(&mut rng, &config).is_leaf());
        }
    }

    #[test]
    fn budget_bounds_tree_size() {
        let config = GenerationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let t = sample_skeleton(&mut rng, &config);
            assert!(t.node_count() <= config.node_budget);
            for n in t.preorder() {
                assert_eq!(n.children().len(), n.token().arity().unwrap());
            }
        }
    }

    #[test]
    fn concentrated_weight_share() {
        let mut weights = [0.0; GENERATIVE_COUNT];
        weights[Token::X1.id() as usize] = 98.0;
        weights[Token::Neg.id() as usize] = 2.0;
        let config = GenerationConfig {
            vocabulary: Vocabulary::with_weights(weights).unwrap(),
            ..GenerationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let leaves = (0..n)
            .filter(|_| sample_skeleton(&mut rng, &config) == ExprTree::var(0))
            .count();
        let share = leaves as f64 / n as f64;
        assert!((share - 0.98).abs() < 0.005, "leaf share {share}");
    }
}
