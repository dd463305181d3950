//! HD attention: the relation tensor of bipolarized bundles, its softmax
//! normalization, and mixing of object hypervectors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};
use crate::vsa;

/// N×N relation scores and their row-softmax, computed outside the tape
/// (inference/diagnostic path).
#[derive(Clone, Debug)]
pub struct RelationTensor<S> {
    pub r: Vec<Vec<S>>,
    pub r_bar: Vec<Vec<S>>,
}

/// Dense inference path:
/// `R[i][j] = cos(δ(h_i), δ(h_i ⊕ h_j))` with the 1/D normalization.
pub fn relation_tensor<S: Scalar>(hd_objects: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
    let n = hd_objects.len();
    let mut r = vec![vec![S::zero(); n]; n];
    for i in 0..n {
        let si = vsa::bipolarize(&hd_objects[i]);
        for j in 0..n {
            let bundle = vsa::bundle(&hd_objects[i], &hd_objects[j])?;
            let sb = vsa::bipolarize(&bundle);
            r[i][j] = vsa::bipolar_cosine(&si, &sb)?;
        }
    }
    Ok(r)
}

/// Same scores through the bit-packed kernel; exactly equal to the dense
/// path.
pub fn relation_tensor_packed<S: Scalar>(hd_objects: &[Vec<S>]) -> Result<Vec<Vec<f64>>> {
    let n = hd_objects.len();
    let d = hd_objects.first().map(|h| h.len()).unwrap_or(0);
    let signs: Vec<vsa::PackedBipolar> = hd_objects
        .iter()
        .map(|h| vsa::pack(&vsa::bipolarize(h)))
        .collect::<Result<_>>()?;
    let mut r = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let bundle = vsa::bundle(&hd_objects[i], &hd_objects[j])?;
            let sb = vsa::pack(&vsa::bipolarize(&bundle))?;
            r[i][j] = vsa::packed_dot(&signs[i], &sb)? as f64 / d as f64;
        }
    }
    Ok(r)
}

/// Row softmax without temperature (the 1/D factor already normalizes the
/// scores).
pub fn normalize<S: Scalar>(r: &[Vec<S>]) -> Vec<Vec<S>> {
    r.iter()
        .map(|row| {
            let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|&v| (v - m).exp()).collect();
            let sum: S = exps.iter().cloned().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mix hypervectors by the normalized relation weights: `out = R̄ · H`.
pub fn mix<S: Scalar>(r_bar: &[Vec<S>], hd_objects: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
    let n = hd_objects.len();
    let d = hd_objects.first().map(|h| h.len()).unwrap_or(0);
    if r_bar.len() != n {
        return Err(Error::DimMismatch(r_bar.len(), n));
    }
    let mut out = vec![vec![S::zero(); d]; n];
    for (row, weights) in out.iter_mut().zip(r_bar) {
        if weights.len() != n {
            return Err(Error::DimMismatch(weights.len(), n));
        }
        for (&w, h) in weights.iter().zip(hd_objects) {
            if h.len() != d {
                return Err(Error::DimMismatch(h.len(), d));
            }
            for (o, &v) in row.iter_mut().zip(h) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Differentiable path on the tape: relation scores (sign-STE), softmax,
/// and mixing for `h: [B, N, D]`. Returns `(R̄, mixed)`.
pub fn hd_attention_on_tape<S: Scalar>(tape: &mut Tape<S>, h: Var) -> Result<(Var, Var)> {
    let r = tape.hd_relation(h)?;
    let r_bar = tape.softmax(r);
    let mixed = tape.matmul(r_bar, h)?;
    Ok((r_bar, mixed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_hv(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn single_object_no_zeros_gives_one() {
        let h = vec![vec![0.5, -1.5, 2.0, -0.25]];
        let r = relation_tensor(&h).unwrap();
        assert_eq!(r, vec![vec![1.0]]);
    }

    #[test]
    fn identical_objects_all_ones() {
        let v = vec![0.7, -0.2, 1.1, -3.0];
        let r = relation_tensor(&[v.clone(), v]).unwrap();
        for row in &r {
            for &x in row {
                assert_eq!(x, 1.0);
            }
        }
    }

    #[test]
    fn opposite_objects_zero_score() {
        // bundle of h and -h is the zero vector; δ maps it to 0
        let h1 = vec![1.0, 1.0, 1.0, 1.0];
        let h2: Vec<f64> = h1.iter().map(|x| -x).collect();
        let r = relation_tensor(&[h1, h2]).unwrap();
        assert_eq!(r[0][1], 0.0);
        assert_eq!(r[1][0], 0.0);
    }

    #[test]
    fn normalize_rows() {
        let r = vec![vec![0.0, 0.0]];
        assert_eq!(normalize(&r), vec![vec![0.5, 0.5]]);
        let r = vec![vec![2.0f64.ln(), 0.0]];
        let n = normalize(&r);
        assert!((n[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((n[0][1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rows_sum_to_one_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let r: Vec<Vec<f64>> = (0..5).map(|_| random_hv(&mut rng, 5)).collect();
        for row in normalize(&r) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn mix_one_hot_and_uniform() {
        let h = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(mix(&eye, &h).unwrap(), h);
        let uniform = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let avg = mix(&uniform, &h).unwrap();
        assert_eq!(avg[0], vec![2.0, 3.0]);
        assert_eq!(avg[1], vec![2.0, 3.0]);
    }

    #[test]
    fn mix_matches_triple_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let h: Vec<Vec<f64>> = (0..4).map(|_| random_hv(&mut rng, 8)).collect();
        let r = normalize(&relation_tensor(&h).unwrap());
        let got = mix(&r, &h).unwrap();
        for i in 0..4 {
            for k in 0..8 {
                let mut acc = 0.0;
                for j in 0..4 {
                    acc += r[i][j] * h[j][k];
                }
                assert!((got[i][k] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entries_bounded_and_asymmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut saw_asymmetry = false;
        for _ in 0..20 {
            // unequal magnitudes make R_ij ≠ R_ji representable
            let h: Vec<Vec<f64>> = vec![
                random_hv(&mut rng, 64),
                random_hv(&mut rng, 64).iter().map(|x| x * 3.0).collect(),
            ];
            let r = relation_tensor(&h).unwrap();
            for row in &r {
                for &x in row {
                    assert!((-1.0..=1.0).contains(&x));
                }
            }
            if (r[0][1] - r[1][0]).abs() > 1e-9 {
                saw_asymmetry = true;
            }
        }
        assert!(saw_asymmetry);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let h: Vec<Vec<f64>> = (0..4).map(|_| random_hv(&mut rng, 32)).collect();
        let perm = [2usize, 0, 3, 1];
        let hp: Vec<Vec<f64>> = perm.iter().map(|&i| h[i].clone()).collect();
        let r = relation_tensor(&h).unwrap();
        let rp = relation_tensor(&hp).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(rp[a][b], r[perm[a]][perm[b]]);
            }
        }
        let m = mix(&normalize(&r), &h).unwrap();
        let mp = mix(&normalize(&rp), &hp).unwrap();
        for a in 0..4 {
            for k in 0..32 {
                assert!((mp[a][k] - m[perm[a]][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn packed_path_equals_dense_path_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..10 {
            let h: Vec<Vec<f64>> = (0..5).map(|_| random_hv(&mut rng, 256)).collect();
            let dense = relation_tensor(&h).unwrap();
            let packed = relation_tensor_packed(&h).unwrap();
            assert_eq!(dense, packed);
        }
    }

    #[test]
    fn diagonal_counts_nonzero_coordinates() {
        let h = vec![vec![1.0, 0.0, -2.0, 0.0]];
        let r = relation_tensor(&h).unwrap();
        // δ(h)·δ(2h)/D over nonzeros only
        assert_eq!(r[0][0], 0.5);
    }

    #[test]
    fn tape_path_matches_plain_path() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let h: Vec<Vec<f64>> = (0..3).map(|_| random_hv(&mut rng, 16)).collect();
        let plain_r = relation_tensor(&h).unwrap();
        let plain_bar = normalize(&plain_r);
        let plain_mix = mix(&plain_bar, &h).unwrap();

        let mut tape = Tape::new(0, false);
        let flat: Vec<f64> = h.iter().flatten().cloned().collect();
        let hv = tape.leaf(Tensor::new(vec![1, 3, 16], flat).unwrap(), false);
        let (r_bar, mixed) = hd_attention_on_tape(&mut tape, hv).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((tape.value(r_bar).data()[i * 3 + j] - plain_bar[i][j]).abs() < 1e-12);
            }
            for k in 0..16 {
                assert!((tape.value(mixed).data()[i * 16 + k] - plain_mix[i][k]).abs() < 1e-12);
            }
        }
    }
}
