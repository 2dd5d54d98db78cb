use rand::Rng;

use super::{AttnMask, Graph, Init, NnError, ParamId, ParameterStore, Real, Var};

/// Affine map over the last axis, weight stored `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<F>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), &[fan_in, fan_out], Init::Uniform { fan_in }, rng);
        let b = store.add(format!("{name}.b"), &[fan_out], Init::Zeros, rng);
        Linear { w, b, fan_in, fan_out }
    }

    pub fn param_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var, NnError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParameterStore<F>, name: &str, d: usize, rng: &mut R) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), &[d], Init::Ones, rng),
            bias: store.add(format!("{name}.bias"), &[d], Init::Zeros, rng),
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var, NnError> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head attention with query, key, value and output projections.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<F>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if heads == 0 || d % heads != 0 {
            return Err(NnError::Config(format!("{heads} heads do not divide width {d}")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        })
    }

    pub fn param_count(d: usize) -> usize {
        4 * Linear::param_count(d, d)
    }

    /// `query: [B, Lq, d]` attends over `context: [B, Lk, d]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, query: Var, context: Var, mask: AttnMask) -> Result<Var, NnError> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, context)?;
        let v = self.v.forward(g, context)?;
        let a = g.attention(q, k, v, self.heads, mask)?;
        self.o.forward(g, a)
    }
}

/// Two-layer MLP with a ReLU in between.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<F>,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.0"), d_in, d_hidden, rng),
            outer: Linear::new(store, &format!("{name}.1"), d_hidden, d_out, rng),
        }
    }

    pub fn param_count(d_in: usize, d_hidden: usize, d_out: usize) -> usize {
        Linear::param_count(d_in, d_hidden) + Linear::param_count(d_hidden, d_out)
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var, NnError> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h);
        self.outer.forward(g, h)
    }
}
