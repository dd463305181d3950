//! Gradient-check suite over every differentiable primitive and the
//! variant (a) pipeline end-to-end, reused by the CLI and the test
//! suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::layer::{Model, ModelConfig, Variant};
use crate::tensor::{gradcheck, ParameterStore, Tape, Tensor, Var};

type Build = Box<dyn FnMut(&ParameterStore<f64>, &mut Tape<f64>) -> Result<Var>>;

fn scalarize(tape: &mut Tape<f64>, v: Var) -> Var {
    let sq = tape.mul(v, v).expect("same shape");
    tape.mean(sq)
}

/// Max relative gradcheck error per primitive, `instances` random cases
/// each at small dimensions. Values must stay below `1e-4`.
pub fn gradcheck_suite(instances: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut results = Vec::new();
    for inst in 0..instances as u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (inst.wrapping_mul(0x9e37_79b9)));
        let mut push = |name: &str,
                        store: &mut ParameterStore<f64>,
                        build: Build|
         -> Result<()> {
            let mut build = build;
            let report = gradcheck(store, |s, t| build(s, t), 1e-5)?;
            match results.iter_mut().find(|(n, _): &&mut (String, f64)| n == name) {
                Some((_, worst)) => *worst = worst.max(report.max_rel_err),
                None => results.push((name.to_string(), report.max_rel_err)),
            }
            Ok(())
        };

        // elementwise binary ops with suffix broadcasting
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::randn(&[2, 3, 4], 1.0, &mut rng));
        store.insert("b", Tensor::randn(&[3, 4], 1.0, &mut rng));
        for (name, which) in [("add", 0usize), ("sub", 1), ("mul", 2)] {
            push(
                name,
                &mut store.clone(),
                Box::new(move |s, t| {
                    let a = t.param(s, "a")?;
                    let b = t.param(s, "b")?;
                    let y = match which {
                        0 => t.add(a, b)?,
                        1 => t.sub(a, b)?,
                        _ => t.mul(a, b)?,
                    };
                    Ok(scalarize(t, y))
                }),
            )?;
        }
        push(
            "scale",
            &mut store.clone(),
            Box::new(|s, t| {
                let a = t.param(s, "a")?;
                let y = t.scale(a, -1.7);
                Ok(scalarize(t, y))
            }),
        )?;

        // matmuls: batched lhs against shared and batched rhs
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::randn(&[2, 3, 4], 1.0, &mut rng));
        store.insert("w", Tensor::randn(&[4, 5], 1.0, &mut rng));
        store.insert("y", Tensor::randn(&[2, 6, 4], 1.0, &mut rng));
        push(
            "matmul",
            &mut store.clone(),
            Box::new(|s, t| {
                let x = t.param(s, "x")?;
                let w = t.param(s, "w")?;
                let y = t.matmul(x, w)?;
                Ok(scalarize(t, y))
            }),
        )?;
        push(
            "matmul_nt",
            &mut store.clone(),
            Box::new(|s, t| {
                let x = t.param(s, "x")?;
                let y = t.param(s, "y")?;
                let z = t.matmul_nt(x, y)?;
                Ok(scalarize(t, z))
            }),
        )?;

        // full convolution, shared and per-position kernels
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::randn(&[2, 3, 4], 1.0, &mut rng));
        store.insert("k_shared", Tensor::randn(&[13], 1.0, &mut rng));
        store.insert("k_pos", Tensor::randn(&[3, 13], 1.0, &mut rng));
        for (name, key) in [("conv1d_full_shared", "k_shared"), ("conv1d_full_per_pos", "k_pos")] {
            push(
                name,
                &mut store.clone(),
                Box::new(move |s, t| {
                    let x = t.param(s, "x")?;
                    let k = t.param(s, key)?;
                    let y = t.conv1d_full(x, k)?;
                    Ok(scalarize(t, y))
                }),
            )?;
        }

        // activations and normalizations
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::randn(&[3, 5], 1.0, &mut rng));
        store.insert("gamma", Tensor::randn(&[5], 0.3, &mut rng));
        store.insert("beta", Tensor::randn(&[5], 0.3, &mut rng));
        for name in ["softmax", "relu", "sigmoid", "layer_norm", "batch_norm_eval"] {
            push(
                name,
                &mut store.clone(),
                Box::new(move |s, t| {
                    let x = t.param(s, "x")?;
                    let y = match name {
                        "softmax" => t.softmax(x),
                        "relu" => t.relu(x),
                        "sigmoid" => t.sigmoid(x),
                        "layer_norm" => {
                            let g = t.param(s, "gamma")?;
                            let b = t.param(s, "beta")?;
                            t.layer_norm(x, g, b)?
                        }
                        _ => {
                            let g = t.param(s, "gamma")?;
                            let b = t.param(s, "beta")?;
                            let mean = vec![0.1; 5];
                            let var = vec![1.3; 5];
                            t.batch_norm(x, g, b, "bn", (&mean, &var))?
                        }
                    };
                    Ok(scalarize(t, y))
                }),
            )?;
        }

        // shape ops
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::randn(&[4, 3], 1.0, &mut rng));
        store.insert("y", Tensor::randn(&[2, 3], 1.0, &mut rng));
        push(
            "reshape_concat_slice_gather",
            &mut store.clone(),
            Box::new(|s, t| {
                let x = t.param(s, "x")?;
                let y = t.param(s, "y")?;
                let c = t.concat(&[x, y], 0)?;
                let sl = t.slice_rows(c, 1, 5)?;
                let g = t.gather_rows(sl, &[0, 2, 2, 3])?;
                let r = t.reshape(g, vec![2, 6])?;
                Ok(scalarize(t, r))
            }),
        )?;

        // losses
        let mut store = ParameterStore::new();
        store.insert("logits", Tensor::randn(&[4, 3], 1.0, &mut rng));
        store.insert("blogits", Tensor::randn(&[4, 1], 1.0, &mut rng));
        let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let btargets: Vec<f64> = (0..4).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        push(
            "cross_entropy_logits",
            &mut store.clone(),
            Box::new(move |s, t| {
                let l = t.param(s, "logits")?;
                t.cross_entropy_logits(l, &targets)
            }),
        )?;
        push(
            "bce_logits",
            &mut store.clone(),
            Box::new(move |s, t| {
                let l = t.param(s, "blogits")?;
                t.bce_logits(l, &btargets)
            }),
        )?;

        // reductions
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::randn(&[2, 7], 1.0, &mut rng));
        push(
            "sum_mean",
            &mut store.clone(),
            Box::new(|s, t| {
                let x = t.param(s, "x")?;
                let y = t.mul(x, x)?;
                let a = t.sum(y);
                let b = t.mean(y);
                let c = t.add(a, b)?;
                Ok(t.sum(c))
            }),
        )?;

        // HD relation with the STE rule (exact gradient of the clamp
        // relaxation)
        let mut store = ParameterStore::new();
        store.insert("h", Tensor::randn(&[2, 3, 8], 1.0, &mut rng));
        push(
            "hd_relation_ste",
            &mut store.clone(),
            Box::new(|s, t| {
                t.set_ste_surrogate(true);
                let h = t.param(s, "h")?;
                let r = t.hd_relation(h)?;
                Ok(scalarize(t, r))
            }),
        )?;

        // variant (a) end-to-end at tiny dims
        let model = Model::assemble(ModelConfig {
            variant: Variant::A,
            f: 4,
            d: 16,
            n_max: 3,
            d_model: 4,
            n_heads: 1,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 8,
            dropout: 0.0,
            head_hidden: vec![8],
            n_outputs: 3,
            binary: false,
            batch_norm: false,
            shared_basis: false,
            vocab: 0,
            seed: 0,
        })?;
        let mut store = ParameterStore::new();
        model.init(&mut store, &mut rng)?;
        let x = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let targets: Vec<usize> = (0..2).map(|_| rng.gen_range(0..3)).collect();
        push(
            "variant_a_end_to_end",
            &mut store,
            Box::new(move |s, t| {
                t.set_ste_surrogate(true);
                let xv = t.constant(x.clone());
                let logits = model.forward_classifier(t, s, xv)?;
                t.cross_entropy_logits(logits, &targets)
            }),
        )?;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_primitives_and_passes() {
        let results = gradcheck_suite(2, 0).unwrap();
        assert!(results.len() >= 15);
        for (name, err) in &results {
            assert!(*err < 1e-4, "{name}: {err}");
        }
        let names: Vec<&str> = results.iter().map(|(n, _)| n.as_str()).collect();
        for expected in [
            "matmul",
            "conv1d_full_per_pos",
            "softmax",
            "hd_relation_ste",
            "variant_a_end_to_end",
        ] {
            assert!(names.contains(&expected), "missing {expected}");
        }
    }
}
