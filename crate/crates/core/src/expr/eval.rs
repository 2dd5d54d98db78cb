use thiserror::Error;

use super::{ExprTree, Token};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("{op} is undefined at {arg}")]
    Domain { op: Token, arg: f64 },
    #[error("non-finite intermediate value under {0}")]
    NonFinite(Token),
    #[error("no value bound for {0}")]
    UnboundVariable(Token),
    #[error("expression has more constants than the {0} values provided")]
    MissingConstant(usize),
}

/// Evaluates `tree` with `vars[i]` bound to `x{i+1}` and `consts[k]` bound to
/// the `k`-th `C` leaf in pre-order.
///
/// `log` is the natural logarithm. Every intermediate value must be finite.
pub fn evaluate(tree: &ExprTree, vars: &[f64], consts: &[f64]) -> Result<f64, EvalError> {
    let mut next_const = 0;
    let value = eval_node(tree, vars, consts, &mut next_const)?;
    Ok(value)
}

fn eval_node(
    node: &ExprTree,
    vars: &[f64],
    consts: &[f64],
    next_const: &mut usize,
) -> Result<f64, EvalError> {
    let token = node.token();
    let children = node.children();
    let value = match token {
        Token::C => {
            let v = *consts
                .get(*next_const)
                .ok_or(EvalError::MissingConstant(consts.len()))?;
            *next_const += 1;
            v
        }
        Token::X1 | Token::X2 | Token::X3 | Token::X4 | Token::X5 | Token::X6 => {
            let i = token.variable_index().unwrap();
            *vars.get(i).ok_or(EvalError::UnboundVariable(token))?
        }
        Token::Add | Token::Mul => {
            let a = eval_node(&children[0], vars, consts, next_const)?;
            let b = eval_node(&children[1], vars, consts, next_const)?;
            if token == Token::Add {
                a + b
            } else {
                a * b
            }
        }
        _ => {
            let u = eval_node(&children[0], vars, consts, next_const)?;
            apply_unary(token, u)?
        }
    };
    if !value.is_finite() {
        return Err(EvalError::NonFinite(token));
    }
    Ok(value)
}

fn apply_unary(op: Token, u: f64) -> Result<f64, EvalError> {
    let domain = || EvalError::Domain { op, arg: u };
    Ok(match op {
        Token::Sin => u.sin(),
        Token::Cos => u.cos(),
        Token::Log if u <= 0.0 => return Err(domain()),
        Token::Log => u.ln(),
        Token::Exp => u.exp(),
        Token::Neg => -u,
        Token::Inv if u == 0.0 => return Err(domain()),
        Token::Inv => 1.0 / u,
        Token::Sq => u * u,
        Token::Cb => u * u * u,
        Token::Sqrt if u < 0.0 => return Err(domain()),
        Token::Sqrt => u.sqrt(),
        _ => unreachable!("{op} is not unary"),
    })
}
