use std::fmt;
use std::str::FromStr;

use super::ModelError;
use crate::datagen::N_COLS;
use crate::expr::VOCAB_SIZE;

/// Encoder layer variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Mlp,
    Att,
    Mix,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Mlp, EncoderKind::Att, EncoderKind::Mix];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Mlp => "mlp",
            EncoderKind::Att => "att",
            EncoderKind::Mix => "mix",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(EncoderKind::Mlp),
            "att" => Ok(EncoderKind::Att),
            "mix" => Ok(EncoderKind::Mix),
            _ => Err(ModelError::Config(format!("unknown encoder kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub heads: usize,
    pub vocab: usize,
    /// Decoder positions: SOS plus the longest ground truth.
    pub max_len: usize,
    pub n_rows: usize,
    pub d_cols: usize,
    pub p_drop: f64,
    pub encoder: EncoderKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            n_enc: 4,
            n_dec: 8,
            heads: 4,
            vocab: VOCAB_SIZE,
            max_len: 31,
            n_rows: 50,
            d_cols: N_COLS,
            p_drop: 0.25,
            encoder: EncoderKind::Mlp,
        }
    }
}

impl ModelConfig {
    /// Small profile for single-machine runs.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 64,
            n_enc: 2,
            n_dec: 2,
            ..ModelConfig::default()
        }
    }

    pub fn with_encoder(mut self, encoder: EncoderKind) -> Self {
        self.encoder = encoder;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return fail(format!("d_model {} must be even and positive", self.d_model));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("{} heads do not divide d_model {}", self.heads, self.d_model));
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".into());
        }
        if self.d_cols != N_COLS {
            return fail(format!("d_cols must be {N_COLS}"));
        }
        if self.vocab != VOCAB_SIZE {
            return fail(format!("vocabulary size must be {VOCAB_SIZE}"));
        }
        if self.n_rows == 0 {
            return fail("n_rows must be positive".into());
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return fail(format!("p_drop {} outside [0, 1)", self.p_drop));
        }
        Ok(())
    }

    /// Parameter count from the per-block formulas.
    pub fn closed_form_params(&self) -> usize {
        let d = self.d_model;
        let v = self.vocab;
        let cell = d * d + 3 * d;
        let enc_layer = match self.encoder {
            EncoderKind::Mlp => 3 * d * d / 2 + 2 * d,
            EncoderKind::Att => 4 * d * d + 6 * d,
            EncoderKind::Mix => (5 + self.d_cols) * d * d + 8 * d,
        };
        let last = d * d + d;
        let embed = v * d;
        let dec_layer = 12 * d * d + 17 * d;
        let out = v * d + v;
        cell + self.n_enc * enc_layer + last + embed + self.n_dec * dec_layer + out
    }
}
