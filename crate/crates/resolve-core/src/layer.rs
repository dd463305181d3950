//! The RESOLVE layer — HD-encode objects and symbols, HD-attend, bind
//! with the symbol hypervectors, project back down — plus assembly of the
//! four pipeline variants and the matching transformer models used for
//! comparison.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::attention::hd_attention_on_tape;
use crate::baselines::{
    decoder_forward, encoder_forward, init_decoder, init_encoder, init_linear, linear,
    sinusoidal_positions, AttentionBlockConfig,
};
use crate::encoder::{encode_on_tape, EncoderConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParameterStore, Tape, Tensor, Var};

/// Pipeline selector. `a`–`d` are the RESOLVE variants; the two
/// `transformer-*` entries are the pure-attention counterparts trained
/// under the identical protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// RESOLVE → flatten → MLP head.
    A,
    /// Attentional encoder → RESOLVE → flatten → head.
    B,
    /// Attentional encoder (with batch norm) → RESOLVE → attentional decoder.
    C,
    /// As `C`, plus a skip connection: the decoder cross-attends to the
    /// concatenation of encoder and RESOLVE outputs.
    D,
    /// Attentional encoder → flatten → MLP head.
    TransformerClassifier,
    /// Standard encoder–decoder transformer.
    TransformerSeq2Seq,
}

impl Variant {
    pub fn is_seq2seq(self) -> bool {
        matches!(self, Variant::C | Variant::D | Variant::TransformerSeq2Seq)
    }

    pub fn uses_resolve(self) -> bool {
        matches!(self, Variant::A | Variant::B | Variant::C | Variant::D)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            "c" => Ok(Variant::C),
            "d" => Ok(Variant::D),
            "transformer-cls" => Ok(Variant::TransformerClassifier),
            "transformer-seq" => Ok(Variant::TransformerSeq2Seq),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::A => "a",
            Variant::B => "b",
            Variant::C => "c",
            Variant::D => "d",
            Variant::TransformerClassifier => "transformer-cls",
            Variant::TransformerSeq2Seq => "transformer-seq",
        };
        f.write_str(s)
    }
}

// ---- RESOLVE module ----

/// One RESOLVE block operating on `[B, N, F]` inputs.
#[derive(Clone, Debug)]
pub struct ResolveModule {
    pub enc: EncoderConfig,
    pub d_model: usize,
    pub dropout: f64,
    pub prefix: String,
}

/// Intermediate tensors of a RESOLVE forward pass, kept around for
/// diagnostics and tests.
pub struct ResolveOutput {
    /// Encoded object hypervectors `[B, N, D]`.
    pub h: Var,
    /// Row-normalized relation tensor `[B, N, N]`.
    pub r_bar: Var,
    /// Mixed hypervectors `R̄ · H`, `[B, N, D]`.
    pub mixed: Var,
    /// Symbol-bound hypervectors `h_S ⊗ h_E`, `[B, N, D]`.
    pub bound: Var,
    /// Down-projected output `[B, N, d_model]`.
    pub out: Var,
}

impl ResolveModule {
    pub fn new(enc: EncoderConfig, d_model: usize, dropout: f64, prefix: &str) -> Self {
        ResolveModule {
            enc,
            d_model,
            dropout,
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParameterStore<S>, rng: &mut R) -> Result<()> {
        self.enc.init_basis(store, &self.name("basis"), rng)?;
        store.insert(
            &self.name("symbols"),
            Tensor::randn(&[self.enc.n_max, self.enc.f], 1.0, rng),
        );
        store.insert(
            &self.name("w_down"),
            Tensor::randn(&[self.enc.d, self.d_model], 1.0 / (self.enc.d as f64).sqrt(), rng),
        );
        store.insert(&self.name("b_down"), Tensor::zeros(&[self.d_model]));
        Ok(())
    }

    /// Full forward: φ_HD → HD attention → bind with φ_HD(S) → W_down.
    /// Symbols stay real-valued in the binding; only the attention score
    /// path bipolarizes.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        objects: Var,
    ) -> Result<ResolveOutput> {
        let shape = tape.shape(objects).to_vec();
        let n = shape[shape.len() - 2];
        let basis = tape.param(store, &self.name("basis"))?;
        let h = encode_on_tape(&self.enc, tape, objects, basis)?;
        let (r_bar, mixed) = hd_attention_on_tape(tape, h)?;
        let symbols = tape.param(store, &self.name("symbols"))?;
        let symbols = if n < self.enc.n_max {
            tape.slice_rows(symbols, 0, n)?
        } else {
            symbols
        };
        let h_s = encode_on_tape(&self.enc, tape, symbols, basis)?;
        let bound = tape.mul(mixed, h_s)?;
        let w_down = tape.param(store, &self.name("w_down"))?;
        let b_down = tape.param(store, &self.name("b_down"))?;
        let proj = tape.matmul(bound, w_down)?;
        let proj = tape.add(proj, b_down)?;
        let out = tape.dropout(proj, self.dropout);
        Ok(ResolveOutput {
            h,
            r_bar,
            mixed,
            bound,
            out,
        })
    }
}

// ---- model assembly ----

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Object feature dimension.
    pub f: usize,
    /// Hyperdimension.
    pub d: usize,
    pub n_max: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Hidden widths of the classifier MLP head.
    pub head_hidden: Vec<usize>,
    /// Output width: classes for softmax heads and seq2seq logits, 1 for
    /// the sigmoid head.
    pub n_outputs: usize,
    /// Single-logit sigmoid/BCE head instead of softmax over classes.
    pub binary: bool,
    /// Batch-normalize the source embedding (seq2seq variants).
    pub batch_norm: bool,
    /// One HD basis kernel shared across positions instead of one per
    /// position (position identity then enters only through the symbols).
    pub shared_basis: bool,
    /// Decoder token vocabulary including the start token (seq2seq only).
    pub vocab: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variant.uses_resolve() {
            let enc_f = match self.variant {
                Variant::A => self.f,
                _ => self.d_model,
            };
            let mut enc = EncoderConfig::new(enc_f, self.d, self.n_max);
            enc.shared_basis = self.shared_basis;
            enc.validate()?;
        }
        if self.variant != Variant::A {
            AttentionBlockConfig {
                d_model: self.d_model,
                n_heads: self.n_heads,
                d_ff: self.d_ff,
                n_layers: self.n_enc_layers,
                dropout: self.dropout,
                causal: false,
            }
            .validate()?;
        }
        if self.variant.is_seq2seq() && self.vocab < 2 {
            return Err(Error::Config(
                "seq2seq variants need a vocab of at least 2 (targets + start token)".into(),
            ));
        }
        if self.n_outputs == 0 || (self.binary && self.n_outputs != 1) {
            return Err(Error::Config("invalid head output width".into()));
        }
        Ok(())
    }

    fn encoder_cfg(&self, n_layers: usize) -> AttentionBlockConfig {
        AttentionBlockConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            n_layers,
            dropout: self.dropout,
            causal: false,
        }
    }

    fn resolve_module(&self) -> ResolveModule {
        let enc_f = match self.variant {
            Variant::A => self.f,
            _ => self.d_model,
        };
        let mut enc = EncoderConfig::new(enc_f, self.d, self.n_max);
        enc.shared_basis = self.shared_basis;
        ResolveModule::new(enc, self.d_model, self.dropout, "resolve")
    }
}

/// An assembled pipeline. Parameters live in a [`ParameterStore`]; the
/// model itself is a stateless description.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
}

impl Model {
    pub fn assemble(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        Ok(Model { cfg })
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParameterStore<S>, rng: &mut R) -> Result<()> {
        let c = &self.cfg;
        if c.variant != Variant::A {
            init_linear(store, "embed", c.f, c.d_model, rng);
            if c.batch_norm {
                store.insert("embed_bn.gamma", Tensor::full(&[c.d_model], S::one()));
                store.insert("embed_bn.beta", Tensor::zeros(&[c.d_model]));
                store.insert_buffer("embed_bn.running_mean", Tensor::zeros(&[c.d_model]));
                store.insert_buffer("embed_bn.running_var", Tensor::full(&[c.d_model], S::one()));
            }
            init_encoder(store, "enc", &c.encoder_cfg(c.n_enc_layers), rng)?;
        }
        if c.variant.uses_resolve() {
            c.resolve_module().init(store, rng)?;
        }
        if c.variant.is_seq2seq() {
            store.insert(
                "tgt_embed",
                Tensor::randn(&[c.vocab, c.d_model], 1.0 / (c.d_model as f64).sqrt(), rng),
            );
            init_decoder(store, "dec", &c.encoder_cfg(c.n_dec_layers), rng)?;
            init_linear(store, "out", c.d_model, c.n_outputs, rng);
        } else {
            let mut width = c.n_max * c.d_model;
            for (i, &h) in c.head_hidden.iter().enumerate() {
                init_linear(store, &format!("head.l{i}"), width, h, rng);
                width = h;
            }
            init_linear(store, "head.out", width, c.n_outputs, rng);
        }
        Ok(())
    }

    fn embed_with_positions<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        x: Var,
    ) -> Result<Var> {
        let c = &self.cfg;
        let mut e = linear(tape, store, "embed", x)?;
        if c.batch_norm {
            let gamma = tape.param(store, "embed_bn.gamma")?;
            let beta = tape.param(store, "embed_bn.beta")?;
            let mean = store.buffer("embed_bn.running_mean")?.data().to_vec();
            let var = store.buffer("embed_bn.running_var")?.data().to_vec();
            e = tape.batch_norm(e, gamma, beta, "embed_bn", (&mean, &var))?;
        }
        let shape = tape.shape(e).to_vec();
        let n = shape[shape.len() - 2];
        let pos = tape.constant(sinusoidal_positions(n, c.d_model));
        tape.add(e, pos)
    }

    fn head<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        features: Var,
    ) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        let b = if shape.len() == 3 { shape[0] } else { 1 };
        let flat = shape[shape.len() - 2] * shape[shape.len() - 1];
        let mut x = tape.reshape(features, vec![b, flat])?;
        for i in 0..self.cfg.head_hidden.len() {
            x = linear(tape, store, &format!("head.l{i}"), x)?;
            x = tape.relu(x);
            x = tape.dropout(x, self.cfg.dropout);
        }
        linear(tape, store, "head.out", x)
    }

    /// Classifier logits `[B, n_outputs]` for variants `a`, `b`, and the
    /// transformer classifier. `objects` is `[B, N, F]` with `N = n_max`.
    pub fn forward_classifier<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        objects: Var,
    ) -> Result<Var> {
        let c = &self.cfg;
        let features = match c.variant {
            Variant::A => c.resolve_module().forward(tape, store, objects)?.out,
            Variant::B => {
                let e = self.embed_with_positions(tape, store, objects)?;
                let e = encoder_forward(tape, store, "enc", &c.encoder_cfg(c.n_enc_layers), e)?;
                c.resolve_module().forward(tape, store, e)?.out
            }
            Variant::TransformerClassifier => {
                let e = self.embed_with_positions(tape, store, objects)?;
                encoder_forward(tape, store, "enc", &c.encoder_cfg(c.n_enc_layers), e)?
            }
            _ => {
                return Err(Error::Config(format!(
                    "variant {} is not a classifier",
                    c.variant
                )))
            }
        };
        self.head(tape, store, features)
    }

    /// Cross-attention memory for the decoder: encoder output, RESOLVE
    /// output, or (variant d) their concatenation along the sequence axis.
    fn seq2seq_memory<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        src: Var,
    ) -> Result<Var> {
        let c = &self.cfg;
        let e = self.embed_with_positions(tape, store, src)?;
        let e = encoder_forward(tape, store, "enc", &c.encoder_cfg(c.n_enc_layers), e)?;
        match c.variant {
            Variant::TransformerSeq2Seq => Ok(e),
            Variant::C => Ok(c.resolve_module().forward(tape, store, e)?.out),
            Variant::D => {
                let r = c.resolve_module().forward(tape, store, e)?.out;
                let axis = tape.shape(e).len() - 2;
                tape.concat(&[e, r], axis)
            }
            _ => Err(Error::Config(format!(
                "variant {} is not seq2seq",
                c.variant
            ))),
        }
    }

    /// Teacher-forced logits `[B, T, n_outputs]`. `tgt_in` holds the
    /// decoder input tokens (start token followed by the shifted target),
    /// flattened row-major over `[B, T]`.
    pub fn forward_seq2seq<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        src: Var,
        tgt_in: &[usize],
        batch: usize,
    ) -> Result<Var> {
        let c = &self.cfg;
        let memory = self.seq2seq_memory(tape, store, src)?;
        let t = tgt_in.len() / batch;
        let table = tape.param(store, "tgt_embed")?;
        let emb = tape.gather_rows(table, tgt_in)?;
        let emb = tape.reshape(emb, vec![batch, t, c.d_model])?;
        let pos = tape.constant(sinusoidal_positions(t, c.d_model));
        let emb = tape.add(emb, pos)?;
        let dec = decoder_forward(tape, store, "dec", &c.encoder_cfg(c.n_dec_layers), emb, memory)?;
        linear(tape, store, "out", dec)
    }

    /// Greedy argmax decoding of `steps` tokens, starting from the start
    /// token `vocab - 1`. Returns `[B][steps]` predictions.
    pub fn greedy_decode<S: Scalar>(
        &self,
        store: &ParameterStore<S>,
        src: &Tensor<S>,
        steps: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let c = &self.cfg;
        let batch = src.shape()[0];
        let start = c.vocab - 1;
        let mut tokens: Vec<Vec<usize>> = vec![vec![start]; batch];
        for step in 0..steps {
            let mut tape = Tape::new(c.seed, false);
            let srcv = tape.leaf(src.clone(), false);
            let tgt_in: Vec<usize> = tokens.iter().flatten().cloned().collect();
            let logits = self.forward_seq2seq(&mut tape, store, srcv, &tgt_in, batch)?;
            let vals = tape.value(logits);
            let t = step + 1;
            for (b, seq) in tokens.iter_mut().enumerate() {
                let row = &vals.data()
                    [(b * t + step) * c.n_outputs..(b * t + step + 1) * c.n_outputs];
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                seq.push(argmax);
            }
        }
        Ok(tokens.into_iter().map(|mut s| s.split_off(1)).collect())
    }
}

/// Transformer encoder–decoder baseline under the shared model interface.
pub fn transformer_seq2seq(mut cfg: ModelConfig) -> Result<Model> {
    cfg.variant = Variant::TransformerSeq2Seq;
    Model::assemble(cfg)
}

/// Diagnostic unbinding check: bind mixed signals with bipolarized
/// symbols, unbind with the recovered signs, and report the cosine to the
/// original. High values show binding superposition is invertible.
pub fn unbinding_cosine<S: Scalar>(h_e: &[S], h_s: &[S]) -> Result<f64> {
    let s_sign = crate::vsa::bipolarize(h_s);
    let bound = crate::vsa::bind(
        &s_sign,
        &h_e.iter().cloned().collect::<Vec<_>>(),
    )?;
    let unbound = crate::vsa::bind(&crate::vsa::bipolarize(&bound), &s_sign)?;
    let c = crate::vsa::bipolar_cosine(&crate::vsa::bipolarize(&unbound), &crate::vsa::bipolarize(h_e))?;
    Ok(c.to_f64_lossy())
}
