//! Standard attention building blocks: multi-head self/cross attention,
//! encoder and decoder stacks, and the relational cross-attention
//! comparator. These serve both as baselines and as sub-blocks of the
//! pipeline variants.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParameterStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct AttentionBlockConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub causal: bool,
}

impl AttentionBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }
}

const MASK_NEG: f64 = -1e30;

// ---- linear ----

pub fn init_linear<S: Scalar, R: Rng>(
    store: &mut ParameterStore<S>,
    name: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) {
    let std = 1.0 / (d_in as f64).sqrt();
    store.insert(&format!("{name}.w"), Tensor::randn(&[d_in, d_out], std, rng));
    store.insert(&format!("{name}.b"), Tensor::zeros(&[d_out]));
}

pub fn linear<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    name: &str,
    x: Var,
) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

fn init_norm<S: Scalar>(store: &mut ParameterStore<S>, name: &str, d: usize) {
    store.insert(&format!("{name}.gamma"), Tensor::full(&[d], S::one()));
    store.insert(&format!("{name}.beta"), Tensor::zeros(&[d]));
}

fn layer_norm<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    name: &str,
    x: Var,
) -> Result<Var> {
    let gamma = tape.param(store, &format!("{name}.gamma"))?;
    let beta = tape.param(store, &format!("{name}.beta"))?;
    tape.layer_norm(x, gamma, beta)
}

// ---- multi-head attention ----

pub fn init_mha<S: Scalar, R: Rng>(
    store: &mut ParameterStore<S>,
    prefix: &str,
    cfg: &AttentionBlockConfig,
    rng: &mut R,
) {
    let dk = cfg.d_k();
    let std = 1.0 / (cfg.d_model as f64).sqrt();
    for h in 0..cfg.n_heads {
        for proj in ["wq", "wk", "wv"] {
            store.insert(
                &format!("{prefix}.h{h}.{proj}"),
                Tensor::randn(&[cfg.d_model, dk], std, rng),
            );
        }
    }
    init_linear(store, &format!("{prefix}.out"), cfg.n_heads * dk, cfg.d_model, rng);
}

/// Scaled dot-product attention with per-head projections. `queries` is
/// `[B, Nq, d_model]` and `memory` `[B, Nk, d_model]`; self-attention
/// passes the same var for both. Causal masking hides keys `j > i`.
pub fn mha<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    prefix: &str,
    cfg: &AttentionBlockConfig,
    queries: Var,
    memory: Var,
    causal: bool,
) -> Result<Var> {
    let dk = cfg.d_k();
    let scale = S::from_f64_lossy(1.0 / (dk as f64).sqrt());
    let nq = tape.shape(queries)[tape.shape(queries).len() - 2];
    let nk = tape.shape(memory)[tape.shape(memory).len() - 2];
    let mask = if causal {
        let mut m = Tensor::zeros(&[nq, nk]);
        for i in 0..nq {
            for j in 0..nk {
                if j > i {
                    m.data_mut()[i * nk + j] = S::from_f64_lossy(MASK_NEG);
                }
            }
        }
        Some(tape.constant(m))
    } else {
        None
    };
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let wq = tape.param(store, &format!("{prefix}.h{h}.wq"))?;
        let wk = tape.param(store, &format!("{prefix}.h{h}.wk"))?;
        let wv = tape.param(store, &format!("{prefix}.h{h}.wv"))?;
        let q = tape.matmul(queries, wq)?;
        let k = tape.matmul(memory, wk)?;
        let v = tape.matmul(memory, wv)?;
        let scores = tape.matmul_nt(q, k)?;
        let scores = tape.scale(scores, scale);
        let scores = match mask {
            Some(m) => tape.add(scores, m)?,
            None => scores,
        };
        let attn = tape.softmax(scores);
        heads.push(tape.matmul(attn, v)?);
    }
    let rank = tape.shape(heads[0]).len();
    let cat = tape.concat(&heads, rank - 1)?;
    linear(tape, store, &format!("{prefix}.out"), cat)
}

// ---- encoder / decoder stacks ----

pub fn init_encoder<S: Scalar, R: Rng>(
    store: &mut ParameterStore<S>,
    prefix: &str,
    cfg: &AttentionBlockConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    for l in 0..cfg.n_layers {
        init_mha(store, &format!("{prefix}.l{l}.attn"), cfg, rng);
        init_norm(store, &format!("{prefix}.l{l}.ln1"), cfg.d_model);
        init_linear(store, &format!("{prefix}.l{l}.ff1"), cfg.d_model, cfg.d_ff, rng);
        init_linear(store, &format!("{prefix}.l{l}.ff2"), cfg.d_ff, cfg.d_model, rng);
        init_norm(store, &format!("{prefix}.l{l}.ln2"), cfg.d_model);
    }
    Ok(())
}

/// Post-norm transformer encoder stack over `[B, N, d_model]`.
pub fn encoder_forward<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    prefix: &str,
    cfg: &AttentionBlockConfig,
    mut x: Var,
) -> Result<Var> {
    for l in 0..cfg.n_layers {
        let a = mha(tape, store, &format!("{prefix}.l{l}.attn"), cfg, x, x, cfg.causal)?;
        let a = tape.dropout(a, cfg.dropout);
        let r = tape.add(x, a)?;
        x = layer_norm(tape, store, &format!("{prefix}.l{l}.ln1"), r)?;
        let f = linear(tape, store, &format!("{prefix}.l{l}.ff1"), x)?;
        let f = tape.relu(f);
        let f = linear(tape, store, &format!("{prefix}.l{l}.ff2"), f)?;
        let f = tape.dropout(f, cfg.dropout);
        let r = tape.add(x, f)?;
        x = layer_norm(tape, store, &format!("{prefix}.l{l}.ln2"), r)?;
    }
    Ok(x)
}

pub fn init_decoder<S: Scalar, R: Rng>(
    store: &mut ParameterStore<S>,
    prefix: &str,
    cfg: &AttentionBlockConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    for l in 0..cfg.n_layers {
        init_mha(store, &format!("{prefix}.l{l}.self"), cfg, rng);
        init_norm(store, &format!("{prefix}.l{l}.ln1"), cfg.d_model);
        init_mha(store, &format!("{prefix}.l{l}.cross"), cfg, rng);
        init_norm(store, &format!("{prefix}.l{l}.ln2"), cfg.d_model);
        init_linear(store, &format!("{prefix}.l{l}.ff1"), cfg.d_model, cfg.d_ff, rng);
        init_linear(store, &format!("{prefix}.l{l}.ff2"), cfg.d_ff, cfg.d_model, rng);
        init_norm(store, &format!("{prefix}.l{l}.ln3"), cfg.d_model);
    }
    Ok(())
}

/// Decoder stack: causal self-attention, cross-attention into `memory`,
/// then the feedforward, each with a residual and post-norm.
pub fn decoder_forward<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    prefix: &str,
    cfg: &AttentionBlockConfig,
    mut x: Var,
    memory: Var,
) -> Result<Var> {
    for l in 0..cfg.n_layers {
        let a = mha(tape, store, &format!("{prefix}.l{l}.self"), cfg, x, x, true)?;
        let a = tape.dropout(a, cfg.dropout);
        let r = tape.add(x, a)?;
        x = layer_norm(tape, store, &format!("{prefix}.l{l}.ln1"), r)?;
        let c = mha(tape, store, &format!("{prefix}.l{l}.cross"), cfg, x, memory, false)?;
        let c = tape.dropout(c, cfg.dropout);
        let r = tape.add(x, c)?;
        x = layer_norm(tape, store, &format!("{prefix}.l{l}.ln2"), r)?;
        let f = linear(tape, store, &format!("{prefix}.l{l}.ff1"), x)?;
        let f = tape.relu(f);
        let f = linear(tape, store, &format!("{prefix}.l{l}.ff2"), f)?;
        let f = tape.dropout(f, cfg.dropout);
        let r = tape.add(x, f)?;
        x = layer_norm(tape, store, &format!("{prefix}.l{l}.ln3"), r)?;
    }
    Ok(x)
}

// ---- relational cross-attention (optional comparator) ----

pub fn init_relational_cross_attention<S: Scalar, R: Rng>(
    store: &mut ParameterStore<S>,
    prefix: &str,
    d_in: usize,
    d_model: usize,
    rng: &mut R,
) {
    let std = 1.0 / (d_in as f64).sqrt();
    for proj in ["wq", "wk", "wv"] {
        store.insert(
            &format!("{prefix}.{proj}"),
            Tensor::randn(&[d_in, d_model], std, rng),
        );
    }
}

/// Single-head relational cross-attention: scores come from the objects'
/// queries/keys while the values are projected symbols.
pub fn relational_cross_attention<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    prefix: &str,
    objects: Var,
    symbols: Var,
) -> Result<Var> {
    let wq = tape.param(store, &format!("{prefix}.wq"))?;
    let wk = tape.param(store, &format!("{prefix}.wk"))?;
    let wv = tape.param(store, &format!("{prefix}.wv"))?;
    let q = tape.matmul(objects, wq)?;
    let k = tape.matmul(objects, wk)?;
    let v = tape.matmul(symbols, wv)?;
    let dk = tape.shape(q)[tape.shape(q).len() - 1];
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, S::from_f64_lossy(1.0 / (dk as f64).sqrt()));
    let attn = tape.softmax(scores);
    tape.matmul(attn, v)
}

/// Sinusoidal position table `[n, d_model]`.
pub fn sinusoidal_positions<S: Scalar>(n: usize, d_model: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(&[n, d_model]);
    for pos in 0..n {
        for i in 0..d_model {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d_model as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.data_mut()[pos * d_model + i] = S::from_f64_lossy(v);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cfg(n_heads: usize) -> AttentionBlockConfig {
        AttentionBlockConfig {
            d_model: 8,
            n_heads,
            d_ff: 16,
            n_layers: 1,
            dropout: 0.0,
            causal: false,
        }
    }

    fn batch(rng: &mut impl Rng, b: usize, n: usize, d: usize) -> Tensor<f64> {
        Tensor::randn(&[b, n, d], 1.0, rng)
    }

    #[test]
    fn d_model_must_divide() {
        assert!(cfg(3).validate().is_err());
        assert!(cfg(2).validate().is_ok());
    }

    #[test]
    fn single_object_self_attention_is_value_projection() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let c = cfg(1);
        let mut store = ParameterStore::<f64>::new();
        init_mha(&mut store, "attn", &c, &mut rng);
        let x = batch(&mut rng, 1, 1, 8);
        let mut tape = Tape::new(0, false);
        let xv = tape.leaf(x.clone(), false);
        let y = mha(&mut tape, &store, "attn", &c, xv, xv, false).unwrap();
        // N=1: softmax over a singleton is 1, so out = (x·Wv)·Wo + b
        let wv = store.value("attn.h0.wv").unwrap();
        let mut vproj = vec![0.0; 8];
        for k in 0..8 {
            for j in 0..8 {
                vproj[j] += x.data()[k] * wv.data()[k * 8 + j];
            }
        }
        let wo = store.value("attn.out.w").unwrap();
        let bo = store.value("attn.out.b").unwrap();
        for j in 0..8 {
            let mut acc = bo.data()[j];
            for k in 0..8 {
                acc += vproj[k] * wo.data()[k * 8 + j];
            }
            assert!((tape.value(y).data()[j] - acc).abs() < 1e-10);
        }
    }

    #[test]
    fn attention_matches_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let c = cfg(1);
        let mut store = ParameterStore::<f64>::new();
        init_mha(&mut store, "attn", &c, &mut rng);
        let x = batch(&mut rng, 1, 3, 8);
        let mut tape = Tape::new(0, false);
        let xv = tape.leaf(x.clone(), false);
        let y = mha(&mut tape, &store, "attn", &c, xv, xv, false).unwrap();

        // naive oracle
        let proj = |w: &Tensor<f64>, row: &[f64]| -> Vec<f64> {
            let d_out = w.shape()[1];
            (0..d_out)
                .map(|j| (0..8).map(|k| row[k] * w.data()[k * d_out + j]).sum())
                .collect()
        };
        let wq = store.value("attn.h0.wq").unwrap().clone();
        let wk = store.value("attn.h0.wk").unwrap().clone();
        let wv = store.value("attn.h0.wv").unwrap().clone();
        let q: Vec<Vec<f64>> = (0..3).map(|i| proj(&wq, &x.data()[i * 8..(i + 1) * 8])).collect();
        let k: Vec<Vec<f64>> = (0..3).map(|i| proj(&wk, &x.data()[i * 8..(i + 1) * 8])).collect();
        let v: Vec<Vec<f64>> = (0..3).map(|i| proj(&wv, &x.data()[i * 8..(i + 1) * 8])).collect();
        let scale = 1.0 / (8f64).sqrt();
        for i in 0..3 {
            let scores: Vec<f64> = (0..3)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut ctx = vec![0.0; 8];
            for j in 0..3 {
                for d in 0..8 {
                    ctx[d] += exps[j] / z * v[j][d];
                }
            }
            let wo = store.value("attn.out.w").unwrap();
            let bo = store.value("attn.out.b").unwrap();
            for d in 0..8 {
                let mut acc = bo.data()[d];
                for t in 0..8 {
                    acc += ctx[t] * wo.data()[t * 8 + d];
                }
                assert!((tape.value(y).data()[i * 8 + d] - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn causal_mask_position_zero_attends_to_itself() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let c = cfg(2);
        let mut store = ParameterStore::<f64>::new();
        init_mha(&mut store, "attn", &c, &mut rng);
        let x = batch(&mut rng, 1, 4, 8);
        // row 0 under a causal mask only sees itself, so it must equal the
        // N=1 output on the same first object
        let mut tape = Tape::new(0, false);
        let xv = tape.leaf(x.clone(), false);
        let y = mha(&mut tape, &store, "attn", &c, xv, xv, true).unwrap();
        let x1 = Tensor::new(vec![1, 1, 8], x.data()[..8].to_vec()).unwrap();
        let mut tape1 = Tape::new(0, false);
        let x1v = tape1.leaf(x1, false);
        let y1 = mha(&mut tape1, &store, "attn", &c, x1v, x1v, false).unwrap();
        for d in 0..8 {
            assert!((tape.value(y).data()[d] - tape1.value(y1).data()[d]).abs() < 1e-10);
        }
    }

    #[test]
    fn non_causal_self_attention_is_permutation_equivariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let c = cfg(2);
        let mut store = ParameterStore::<f64>::new();
        init_mha(&mut store, "attn", &c, &mut rng);
        let x = batch(&mut rng, 1, 4, 8);
        let perm = [3usize, 1, 0, 2];
        let mut px = Tensor::zeros(&[1, 4, 8]);
        for (a, &src) in perm.iter().enumerate() {
            px.data_mut()[a * 8..(a + 1) * 8].copy_from_slice(&x.data()[src * 8..(src + 1) * 8]);
        }
        let mut t1 = Tape::new(0, false);
        let xv = t1.leaf(x, false);
        let y = mha(&mut t1, &store, "attn", &c, xv, xv, false).unwrap();
        let mut t2 = Tape::new(0, false);
        let pv = t2.leaf(px, false);
        let py = mha(&mut t2, &store, "attn", &c, pv, pv, false).unwrap();
        for (a, &src) in perm.iter().enumerate() {
            for d in 0..8 {
                let lhs = t2.value(py).data()[a * 8 + d];
                let rhs = t1.value(y).data()[src * 8 + d];
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn relational_cross_attention_examples() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut store = ParameterStore::<f64>::new();
        init_relational_cross_attention(&mut store, "rca", 6, 8, &mut rng);
        // N=1 → output is the projected first symbol
        let o = Tensor::randn(&[1, 1, 6], 1.0, &mut rng);
        let s = Tensor::randn(&[1, 1, 6], 1.0, &mut rng);
        let mut tape = Tape::new(0, false);
        let ov = tape.leaf(o, false);
        let sv = tape.leaf(s.clone(), false);
        let y = relational_cross_attention(&mut tape, &store, "rca", ov, sv).unwrap();
        let wv = store.value("rca.wv").unwrap();
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..6 {
                acc += s.data()[k] * wv.data()[k * 8 + j];
            }
            assert!((tape.value(y).data()[j] - acc).abs() < 1e-10);
        }

        // identical objects → uniform attention → every row is the mean projected symbol
        let orow = Tensor::randn(&[1, 1, 6], 1.0, &mut rng);
        let mut obj = Tensor::zeros(&[1, 3, 6]);
        for i in 0..3 {
            obj.data_mut()[i * 6..(i + 1) * 6].copy_from_slice(orow.data());
        }
        let sym = Tensor::randn(&[1, 3, 6], 1.0, &mut rng);
        let mut tape = Tape::new(0, false);
        let ov = tape.leaf(obj, false);
        let sv = tape.leaf(sym.clone(), false);
        let y = relational_cross_attention(&mut tape, &store, "rca", ov, sv).unwrap();
        for j in 0..8 {
            let mut mean = 0.0;
            for i in 0..3 {
                for k in 0..6 {
                    mean += sym.data()[i * 6 + k] * wv.data()[k * 8 + j] / 3.0;
                }
            }
            for i in 0..3 {
                assert!((tape.value(y).data()[i * 8 + j] - mean).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn encoder_layer_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let c = AttentionBlockConfig {
            d_model: 4,
            n_heads: 2,
            d_ff: 6,
            n_layers: 1,
            dropout: 0.0,
            causal: false,
        };
        let mut store = ParameterStore::<f64>::new();
        init_encoder(&mut store, "enc", &c, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 3, 4], 1.0, &mut rng);
        let report = crate::tensor::gradcheck(
            &mut store,
            |s, tape| {
                let xv = tape.constant(x.clone());
                let y = encoder_forward(tape, s, "enc", &c, xv)?;
                let sq = tape.mul(y, y)?;
                Ok(tape.mean(sq))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "err {}", report.max_rel_err);
    }
}
