//! IDX-format digit loading and the MNIST-Math task: given two digit
//! images (a, b), predict `|3a − 2b|` as a 28-way classification.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{three_way_split, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;
pub const N_CLASSES: usize = 28;

#[derive(Clone, Debug)]
pub struct DigitData {
    /// Raw images, one `rows*cols` byte vector each.
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

fn read_exact_or_truncated(r: &mut impl Read, expected: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(expected);
    r.read_to_end(&mut buf)?;
    if buf.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: buf.len(),
        });
    }
    if buf.len() > expected {
        return Err(Error::IdxDimMismatch {
            header: expected,
            payload: buf.len(),
        });
    }
    Ok(buf)
}

pub fn load_idx_images(path: &Path) -> Result<(Vec<Vec<u8>>, usize, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let rows = r.read_u32::<BigEndian>()? as usize;
    let cols = r.read_u32::<BigEndian>()? as usize;
    let payload = read_exact_or_truncated(&mut r, n * rows * cols)?;
    let images = payload.chunks(rows * cols).map(|c| c.to_vec()).collect();
    Ok((images, rows, cols))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    read_exact_or_truncated(&mut r, n)
}

pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    w.write_u32::<BigEndian>(images.len() as u32)?;
    w.write_u32::<BigEndian>(rows as u32)?;
    w.write_u32::<BigEndian>(cols as u32)?;
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::DimMismatch(img.len(), rows * cols));
        }
        w.write_all(img)?;
    }
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)?;
    Ok(())
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<DigitData> {
    let (images, rows, cols) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::DimMismatch(images.len(), labels.len()));
    }
    Ok(DigitData {
        images,
        labels,
        rows,
        cols,
    })
}

pub fn math_label(a: u8, b: u8) -> usize {
    (3 * a as i32 - 2 * b as i32).unsigned_abs() as usize
}

#[derive(Clone, Debug)]
pub struct MnistMathDataset {
    /// Digit-image index pairs into the source data.
    pub pairs: Vec<(usize, usize)>,
    /// `|3a − 2b|` ∈ 0..=27.
    pub labels: Vec<usize>,
    pub split: Split,
    pub seed: u64,
}

pub fn gen_mnist_math(data: &DigitData, seed: u64, n_pairs: usize) -> MnistMathDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = data.images.len();
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut labels = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        pairs.push((i, j));
        labels.push(math_label(data.labels[i], data.labels[j]));
    }
    let split = three_way_split(n_pairs, 0.10, 0.20, &mut rng);
    MnistMathDataset {
        pairs,
        labels,
        split,
        seed,
    }
}

impl MnistMathDataset {
    /// Input rows for pair `k`: the two flattened images scaled to [0, 1].
    pub fn input(&self, data: &DigitData, k: usize) -> [Vec<f64>; 2] {
        let (i, j) = self.pairs[k];
        let norm = |img: &[u8]| img.iter().map(|&p| p as f64 / 255.0).collect::<Vec<f64>>();
        [norm(&data.images[i]), norm(&data.images[j])]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn synthetic() -> (Vec<Vec<u8>>, Vec<u8>) {
        let images = vec![vec![0u8, 128, 255, 7, 9, 11], vec![1, 2, 3, 4, 5, 6]];
        let labels = vec![9u8, 0];
        (images, labels)
    }

    #[test]
    fn math_label_formula() {
        assert_eq!(math_label(9, 0), 27);
        assert_eq!(math_label(2, 3), 0);
        assert_eq!(math_label(0, 9), 18);
        for a in 0..10u8 {
            for b in 0..10u8 {
                assert!(math_label(a, b) < N_CLASSES);
            }
        }
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempdir().unwrap();
        let (images, labels) = synthetic();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx_images(&ip, &images, 2, 3).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        let data = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(data.images, images);
        assert_eq!(data.labels, labels);
        assert_eq!((data.rows, data.cols), (2, 3));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let (images, labels) = synthetic();
        let ip = dir.path().join("img");
        write_idx_labels(&ip, &labels).unwrap();
        // labels magic where an images file is expected
        match load_idx_images(&ip) {
            Err(Error::BadMagic { found, expected }) => {
                assert_eq!((found, expected), (LABELS_MAGIC, IMAGES_MAGIC));
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
        let lp = dir.path().join("lab");
        write_idx_images(&lp, &images, 2, 3).unwrap();
        assert!(matches!(load_idx_labels(&lp), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_and_oversized_payloads_are_distinct_errors() {
        let dir = tempdir().unwrap();
        let (images, _) = synthetic();
        let ip = dir.path().join("img");
        write_idx_images(&ip, &images, 2, 3).unwrap();
        let bytes = std::fs::read(&ip).unwrap();
        let short = dir.path().join("short");
        std::fs::write(&short, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            load_idx_images(&short),
            Err(Error::Truncated { expected: 12, found: 10 })
        ));
        let long = dir.path().join("long");
        let mut extended = bytes.clone();
        extended.push(0);
        std::fs::write(&long, &extended).unwrap();
        assert!(matches!(
            load_idx_images(&long),
            Err(Error::IdxDimMismatch { header: 12, payload: 13 })
        ));
    }

    #[test]
    fn mnist_math_generation() {
        let (images, labels) = synthetic();
        let data = DigitData {
            images,
            labels,
            rows: 2,
            cols: 3,
        };
        let a = gen_mnist_math(&data, 0, 100);
        let b = gen_mnist_math(&data, 0, 100);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.split, b.split);
        for (k, &(i, j)) in a.pairs.iter().enumerate() {
            assert_eq!(a.labels[k], math_label(data.labels[i], data.labels[j]));
        }
        let x = a.input(&data, 0);
        assert!(x.iter().all(|row| row.iter().all(|&v| (0.0..=1.0).contains(&v))));
        assert_eq!(x[0].len(), 6);
    }
}
