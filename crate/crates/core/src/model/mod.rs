//! Encoder-decoder transformer mapping a `(n_rows, 7)` table to a pre-order
//! token sequence.

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{EncoderKind, ModelConfig};

use crate::expr::{prefix_status, PrefixStatus, Token, TokenSequence, GENERATIVE_COUNT};
use crate::nn::{
    sinusoidal_encoding, AttnMask, FeedForward, Graph, Init, LayerNorm, Linear, MultiHeadAttention, NnError, ParamId,
    ParameterStore, Real, Tensor, Var,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("decoding stopped at the length limit with an incomplete expression `{0}`")]
    IncompleteDecode(TokenSequence),
    #[error("closed-form parameter count {closed_form} differs from allocated {allocated}")]
    CountMismatch { closed_form: usize, allocated: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug)]
enum EncoderLayer {
    Mlp {
        first: FeedForward,
        second: FeedForward,
    },
    Att {
        attn: MultiHeadAttention,
        norm: LayerNorm,
    },
    Mix {
        flat: FeedForward,
        attn: MultiHeadAttention,
        norm: LayerNorm,
    },
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Model<F: Real = f32> {
    config: ModelConfig,
    store: ParameterStore<F>,
    cell: FeedForward,
    encoder: Vec<EncoderLayer>,
    last: Linear,
    embedding: ParamId,
    positions: Tensor<F>,
    decoder: Vec<DecoderLayer>,
    output: Linear,
}

/// Parameter totals of a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub closed_form: usize,
    pub allocated: usize,
}

/// Builds the model for `config` and checks the allocated parameter total
/// against the closed form.
pub fn count_params(config: &ModelConfig) -> Result<ParamCount, ModelError> {
    let model = Model::<f32>::new(config.clone(), 0)?;
    let count = ParamCount {
        closed_form: config.closed_form_params(),
        allocated: model.store.count(),
    };
    if count.closed_form != count.allocated {
        return Err(ModelError::CountMismatch {
            closed_form: count.closed_form,
            allocated: count.allocated,
        });
    }
    Ok(count)
}

impl<F: Real> Model<F> {
    /// Freshly initialized model; `seed` controls the initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let d = config.d_model;
        let h = config.heads;
        let rng = &mut rng;
        let cell = FeedForward::new(&mut store, "enc.cell", 1, d, d, rng);
        let mut encoder = Vec::with_capacity(config.n_enc);
        for i in 0..config.n_enc {
            let name = format!("enc.{i}");
            encoder.push(match config.encoder {
                EncoderKind::Mlp => EncoderLayer::Mlp {
                    first: FeedForward::new(&mut store, &format!("{name}.mlp1"), d, d / 2, d / 2, rng),
                    second: FeedForward::new(&mut store, &format!("{name}.mlp2"), d, d / 2, d / 2, rng),
                },
                EncoderKind::Att => EncoderLayer::Att {
                    attn: MultiHeadAttention::new(&mut store, &format!("{name}.attn"), d, h, rng)?,
                    norm: LayerNorm::new(&mut store, &format!("{name}.norm"), d, rng),
                },
                EncoderKind::Mix => EncoderLayer::Mix {
                    flat: FeedForward::new(&mut store, &format!("{name}.flat"), config.d_cols * d, d, d, rng),
                    attn: MultiHeadAttention::new(&mut store, &format!("{name}.attn"), d, h, rng)?,
                    norm: LayerNorm::new(&mut store, &format!("{name}.norm"), d, rng),
                },
            });
        }
        let last = Linear::new(&mut store, "enc.last", d, d, rng);
        let embedding = store.add("dec.embed", &[config.vocab, d], Init::Uniform { fan_in: 1 }, rng);
        let mut decoder = Vec::with_capacity(config.n_dec);
        for i in 0..config.n_dec {
            let name = format!("dec.{i}");
            decoder.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(&mut store, &format!("{name}.self"), d, h, rng)?,
                norm1: LayerNorm::new(&mut store, &format!("{name}.norm1"), d, rng),
                cross_attn: MultiHeadAttention::new(&mut store, &format!("{name}.cross"), d, h, rng)?,
                norm2: LayerNorm::new(&mut store, &format!("{name}.norm2"), d, rng),
                ff: FeedForward::new(&mut store, &format!("{name}.ff"), d, 2 * d, d, rng),
                norm3: LayerNorm::new(&mut store, &format!("{name}.norm3"), d, rng),
            });
        }
        let output = Linear::new(&mut store, "dec.out", d, config.vocab, rng);
        let positions = sinusoidal_encoding(config.max_len, d)?;
        Ok(Model {
            config,
            store,
            cell,
            encoder,
            last,
            embedding,
            positions,
            decoder,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<F> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Same model in another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            cell: self.cell,
            encoder: self.encoder.clone(),
            last: self.last,
            embedding: self.embedding,
            positions: self.positions.cast(),
            decoder: self.decoder.clone(),
            output: self.output,
        }
    }

    /// Adds a batch of tables, `values` holding `batch × n_rows × d_cols`
    /// numbers row-major, to the graph.
    pub fn table_input(&self, g: &mut Graph<'_, F>, values: &[F], batch: usize) -> Result<Var, ModelError> {
        let cols = self.config.d_cols;
        if batch == 0 || values.is_empty() || values.len() % (batch * cols) != 0 {
            return Err(ModelError::Input(format!(
                "{} values do not form {batch} tables of {cols} columns",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::Input(format!("non-finite value at flat index {bad}")));
        }
        let rows = values.len() / (batch * cols);
        Ok(g.input(&[batch, rows, cols], values.to_vec())?)
    }

    /// Encoder on `x: [B, n, d_cols]`; returns the memory `[B, d_cols, d]`.
    pub fn encode(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var, ModelError> {
        let (b, n, c) = match g.shape(x) {
            [b, n, c] if *c == self.config.d_cols => (*b, *n, *c),
            s => return Err(ModelError::Input(format!("encoder input shape {s:?}"))),
        };
        let d = self.config.d_model;
        let p = self.config.p_drop;
        let cells = g.reshape(x, &[b * n * c, 1])?;
        let h = self.cell.forward(g, cells)?;
        let mut h = g.reshape(h, &[b, n, c, d])?;
        for layer in &self.encoder {
            h = match *layer {
                EncoderLayer::Mlp { first, second } => {
                    let a = first.forward(g, h)?;
                    let pooled = g.max_axis(a, 1)?;
                    let tiled = g.broadcast_axis(pooled, 1, n)?;
                    let h1 = g.concat_last(a, tiled)?;
                    let a = second.forward(g, h1)?;
                    let pooled = g.max_axis(a, 2)?;
                    let tiled = g.broadcast_axis(pooled, 2, c)?;
                    g.concat_last(a, tiled)?
                }
                EncoderLayer::Att { attn, norm } => {
                    let cellwise = g.reshape(h, &[b * n, c, d])?;
                    let a = attn.forward(g, cellwise, cellwise, AttnMask::None)?;
                    let a = g.dropout(a, p);
                    let s = g.add(cellwise, a)?;
                    let s = norm.forward(g, s)?;
                    g.reshape(s, &[b, n, c, d])?
                }
                EncoderLayer::Mix { flat, attn, norm } => {
                    let rows = g.reshape(h, &[b, n, c * d])?;
                    let f = flat.forward(g, rows)?;
                    let a = attn.forward(g, f, f, AttnMask::None)?;
                    let a = g.dropout(a, p);
                    let a = g.broadcast_axis(a, 2, c)?;
                    let s = g.add(h, a)?;
                    norm.forward(g, s)?
                }
            };
        }
        let h = self.last.forward(g, h)?;
        Ok(g.max_axis(h, 1)?)
    }

    /// Decoder logits `[B * L, vocab]` for token ids `[B, L]` given memory
    /// `[B, d_cols, d]`. Position `i` only sees ids `0..=i`.
    pub fn decode(&self, g: &mut Graph<'_, F>, memory: Var, ids: &[usize], batch: usize) -> Result<Var, ModelError> {
        let d = self.config.d_model;
        if batch == 0 || ids.is_empty() || ids.len() % batch != 0 {
            return Err(ModelError::Input(format!("{} ids do not split into {batch} sequences", ids.len())));
        }
        let len = ids.len() / batch;
        if len > self.config.max_len {
            return Err(ModelError::Input(format!(
                "sequence length {len} exceeds {}",
                self.config.max_len
            )));
        }
        if g.shape(memory).first() != Some(&batch) {
            return Err(ModelError::Input("memory batch differs from token batch".into()));
        }
        let p = self.config.p_drop;
        let table = g.param(self.embedding);
        let e = g.embedding(table, ids)?;
        let e = g.reshape(e, &[batch, len, d])?;
        let e = g.add_const(e, &self.positions.data()[..len * d])?;
        let mut x = g.dropout(e, p);
        for layer in &self.decoder {
            let a = layer.self_attn.forward(g, x, x, AttnMask::Causal)?;
            let a = g.dropout(a, p);
            let s = g.add(x, a)?;
            x = layer.norm1.forward(g, s)?;
            let a = layer.cross_attn.forward(g, x, memory, AttnMask::None)?;
            let a = g.dropout(a, p);
            let s = g.add(x, a)?;
            x = layer.norm2.forward(g, s)?;
            let a = layer.ff.forward(g, x)?;
            let a = g.dropout(a, p);
            let s = g.add(x, a)?;
            x = layer.norm3.forward(g, s)?;
        }
        let x = g.reshape(x, &[batch * len, d])?;
        Ok(self.output.forward(g, x)?)
    }

    /// Encoder memory for a batch of tables, computed without dropout.
    pub fn memory(&self, values: &[F], batch: usize) -> Result<Tensor<F>, ModelError> {
        let mut g = Graph::new(&self.store);
        let x = self.table_input(&mut g, values, batch)?;
        let m = self.encode(&mut g, x)?;
        Ok(g.tensor(m))
    }

    /// Logits `[B * L, vocab]` for precomputed memory, without dropout.
    pub fn logits(&self, memory: &Tensor<F>, ids: &[usize], batch: usize) -> Result<Tensor<F>, ModelError> {
        let mut g = Graph::new(&self.store);
        let m = g.input(memory.shape(), memory.data().to_vec())?;
        let l = self.decode(&mut g, m, ids, batch)?;
        Ok(g.tensor(l))
    }

    /// Greedy autoregressive decoding for every table of the batch.
    ///
    /// Each step appends the most likely generative token; a sequence stops
    /// as soon as it forms a complete tree. A sequence still incomplete after
    /// `max_len - 1` tokens yields [`ModelError::IncompleteDecode`].
    pub fn greedy_decode(&self, values: &[F], batch: usize) -> Result<Vec<Result<TokenSequence, ModelError>>, ModelError> {
        let memory = self.memory(values, batch)?;
        let per = memory.len() / batch;
        let mut seqs: Vec<Vec<Token>> = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        let v = self.config.vocab;
        for step in 0..self.config.max_len - 1 {
            let active: Vec<usize> = (0..batch).filter(|&i| !done[i]).collect();
            if active.is_empty() {
                break;
            }
            let mut mem = Vec::with_capacity(active.len() * per);
            let mut ids = Vec::with_capacity(active.len() * (step + 1));
            for &i in &active {
                mem.extend_from_slice(&memory.data()[i * per..(i + 1) * per]);
                ids.push(Token::Sos.id() as usize);
                ids.extend(seqs[i].iter().map(|t| t.id() as usize));
            }
            let mut shape = memory.shape().to_vec();
            shape[0] = active.len();
            let logits = self.logits(&Tensor::new(&shape, mem)?, &ids, active.len())?;
            for (row, &i) in active.iter().enumerate() {
                let last = &logits.data()[(row * (step + 1) + step) * v..][..GENERATIVE_COUNT];
                let mut best = 0;
                for (j, x) in last.iter().enumerate() {
                    if *x > last[best] {
                        best = j;
                    }
                }
                seqs[i].push(Token::from_id(best).expect("generative id"));
                if prefix_status(&seqs[i]) == PrefixStatus::Complete {
                    done[i] = true;
                }
            }
        }
        Ok(seqs
            .into_iter()
            .zip(done)
            .map(|(s, ok)| {
                if ok {
                    Ok(TokenSequence(s))
                } else {
                    Err(ModelError::IncompleteDecode(TokenSequence(s)))
                }
            })
            .collect())
    }
}
