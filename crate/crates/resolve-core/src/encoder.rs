//! HD encoder: maps F-dimensional objects (and symbols) to D-dimensional
//! hypervectors by full 1-D convolution with learnable per-position kernels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParameterStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    /// Object feature dimension.
    pub f: usize,
    /// Hyperdimension.
    pub d: usize,
    /// Maximum sequence length (= number of per-position kernels).
    pub n_max: usize,
    /// One kernel shared across positions instead of one per position.
    pub shared_basis: bool,
}

impl EncoderConfig {
    pub fn new(f: usize, d: usize, n_max: usize) -> Self {
        EncoderConfig {
            f,
            d,
            n_max,
            shared_basis: false,
        }
    }

    /// Kernel length: full convolution of an F-length object yields exactly
    /// D outputs.
    pub fn kernel_len(&self) -> usize {
        self.d - self.f + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.d <= self.f {
            return Err(Error::Config(format!(
                "hyperdimension D={} must exceed feature dim F={}",
                self.d, self.f
            )));
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        Ok(())
    }

    /// Allocate the basis kernels under `name`, Gaussian with std `1/sqrt(F)`
    /// to keep encoded variance O(1).
    pub fn init_basis<S: Scalar, R: Rng>(
        &self,
        store: &mut ParameterStore<S>,
        name: &str,
        rng: &mut R,
    ) -> Result<()> {
        self.validate()?;
        let rows = if self.shared_basis { 1 } else { self.n_max };
        let std = 1.0 / (self.f as f64).sqrt();
        store.insert(name, Tensor::randn(&[rows, self.kernel_len()], std, rng));
        Ok(())
    }
}

/// Encode one object at position `i` (non-tape path).
pub fn encode_object<S: Scalar>(
    config: &EncoderConfig,
    basis: &Tensor<S>,
    object: &[S],
    position: usize,
) -> Result<Vec<S>> {
    if position >= config.n_max {
        return Err(Error::PositionOutOfRange {
            pos: position,
            max: config.n_max,
        });
    }
    if object.len() != config.f {
        return Err(Error::DimMismatch(object.len(), config.f));
    }
    let row = if config.shared_basis { 0 } else { position };
    let kernel = basis.row(row);
    let mut out = vec![S::zero(); config.d];
    for (k, &x) in object.iter().enumerate() {
        for (y, &w) in out[k..k + kernel.len()].iter_mut().zip(kernel) {
            *y += x * w;
        }
    }
    Ok(out)
}

/// Encode a sequence of objects (non-tape path): row i of the output is
/// `encode_object(objects[i], i)`.
pub fn encode_sequence<S: Scalar>(
    config: &EncoderConfig,
    basis: &Tensor<S>,
    objects: &[Vec<S>],
) -> Result<Vec<Vec<S>>> {
    if objects.len() > config.n_max {
        return Err(Error::SequenceTooLong {
            n: objects.len(),
            n_max: config.n_max,
        });
    }
    objects
        .iter()
        .enumerate()
        .map(|(i, o)| encode_object(config, basis, o, i))
        .collect()
}

/// Tape path: `objects` is `[B, N, F]` (or `[N, F]`); sequences shorter
/// than `n_max` use the first N kernels.
pub fn encode_on_tape<S: Scalar>(
    config: &EncoderConfig,
    tape: &mut Tape<S>,
    objects: Var,
    basis: Var,
) -> Result<Var> {
    let shape = tape.shape(objects).to_vec();
    let n = shape[shape.len() - 2];
    if n > config.n_max {
        return Err(Error::SequenceTooLong {
            n,
            n_max: config.n_max,
        });
    }
    let kernels = if config.shared_basis {
        let kl = config.kernel_len();
        tape.reshape(basis, vec![kl])?
    } else if n < config.n_max {
        tape.slice_rows(basis, 0, n)?
    } else {
        basis
    };
    tape.conv1d_full(objects, kernels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cfg(f: usize, d: usize, n_max: usize) -> EncoderConfig {
        EncoderConfig::new(f, d, n_max)
    }

    /// Direct-summation convolution oracle: y[j] = Σ_k x[k]·w[j−k].
    fn conv_oracle(x: &[f64], w: &[f64]) -> Vec<f64> {
        let d = x.len() + w.len() - 1;
        (0..d)
            .map(|j| {
                x.iter()
                    .enumerate()
                    .map(|(k, &xv)| {
                        if j >= k && j - k < w.len() {
                            xv * w[j - k]
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn conv_example_from_oracle() {
        let config = cfg(2, 4, 1);
        let basis = Tensor::from_rows(&[vec![1.0, 0.0, 1.0]]).unwrap();
        let y = encode_object(&config, &basis, &[1.0, 2.0], 0).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 1.0, 2.0]);
        assert_eq!(y, conv_oracle(&[1.0, 2.0], &[1.0, 0.0, 1.0]));
    }

    #[test]
    fn single_feature_scales_kernel() {
        let config = cfg(1, 3, 1);
        let basis = Tensor::from_rows(&[vec![1.0, -1.0, 0.0]]).unwrap();
        let y = encode_object(&config, &basis, &[2.0], 0).unwrap();
        assert_eq!(y, vec![2.0, -2.0, 0.0]);
    }

    #[test]
    fn zero_object_encodes_to_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let config = cfg(4, 16, 2);
        let basis = Tensor::randn(&[2, config.kernel_len()], 1.0, &mut rng);
        let y = encode_object(&config, &basis, &[0.0; 4], 1).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn position_out_of_range() {
        let config = cfg(2, 8, 2);
        let basis = Tensor::zeros(&[2, config.kernel_len()]);
        assert!(matches!(
            encode_object(&config, &basis, &[1.0, 2.0], 2),
            Err(Error::PositionOutOfRange { .. })
        ));
    }

    #[test]
    fn sequence_matches_per_object_and_rejects_overflow() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let config = cfg(3, 12, 4);
        let basis = Tensor::randn(&[4, config.kernel_len()], 0.5, &mut rng);
        let objects: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect())
            .collect();
        let rows = encode_sequence(&config, &basis, &objects).unwrap();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row, &encode_object(&config, &basis, &objects[i], i).unwrap());
            assert_eq!(row.len(), 12);
        }
        let too_long = vec![vec![0.0; 3]; 5];
        assert!(encode_sequence(&config, &basis, &too_long).is_err());
    }

    #[test]
    fn linearity_in_object() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let config = cfg(4, 16, 1);
        let basis = Tensor::randn(&[1, config.kernel_len()], 1.0, &mut rng);
        let x: Vec<f64> = vec![0.5, -1.0, 2.0, 0.25];
        let y: Vec<f64> = vec![1.5, 0.5, -0.75, 2.0];
        let ex = encode_object(&config, &basis, &x, 0).unwrap();
        let ey = encode_object(&config, &basis, &y, 0).unwrap();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let esum = encode_object(&config, &basis, &sum, 0).unwrap();
        for ((a, b), s) in ex.iter().zip(&ey).zip(&esum) {
            assert!((a + b - s).abs() < 1e-12);
        }
        let scaled: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let escaled = encode_object(&config, &basis, &scaled, 0).unwrap();
        for (a, s) in ex.iter().zip(&escaled) {
            assert!((3.0 * a - s).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_basis_is_position_independent() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut config = cfg(3, 10, 3);
        config.shared_basis = true;
        let basis = Tensor::randn(&[1, config.kernel_len()], 1.0, &mut rng);
        let objects: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect())
            .collect();
        let rows = encode_sequence(&config, &basis, &objects).unwrap();
        let permuted = vec![objects[2].clone(), objects[0].clone(), objects[1].clone()];
        let prows = encode_sequence(&config, &basis, &permuted).unwrap();
        assert_eq!(prows[0], rows[2]);
        assert_eq!(prows[1], rows[0]);
        assert_eq!(prows[2], rows[1]);
    }

    #[test]
    fn per_position_basis_swapping_objects_changes_rows() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let config = cfg(3, 10, 2);
        let basis = Tensor::randn(&[2, config.kernel_len()], 1.0, &mut rng);
        let a: Vec<f64> = vec![1.0, 2.0, 3.0];
        let b: Vec<f64> = vec![-1.0, 0.5, 2.0];
        let fwd = encode_sequence(&config, &basis, &[a.clone(), b.clone()]).unwrap();
        let swp = encode_sequence(&config, &basis, &[b, a]).unwrap();
        assert_ne!(fwd[0], swp[0]);
        assert_ne!(fwd[1], swp[1]);
    }

    #[test]
    fn tape_path_matches_plain_path() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let config = cfg(3, 12, 3);
        let mut store = ParameterStore::<f64>::new();
        config.init_basis(&mut store, "basis", &mut rng).unwrap();
        let objects: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect())
            .collect();
        let plain = encode_sequence(&config, store.value("basis").unwrap(), &objects).unwrap();

        let mut tape = Tape::new(0, false);
        let obj = tape.leaf(Tensor::from_rows(&objects).unwrap(), false);
        let basis = tape.param(&store, "basis").unwrap();
        let out = encode_on_tape(&config, &mut tape, obj, basis).unwrap();
        assert_eq!(tape.shape(out), &[2, 12]);
        for (i, row) in plain.iter().enumerate() {
            assert_eq!(tape.value(out).row(i), row.as_slice());
        }
    }
}
