//! Attention-score microbenchmark: float32 QKᵀ versus dense HD relation
//! scores versus the bit-packed XNOR/popcount path, with instrumented
//! byte counters and an exactness cross-check.
//!
//! All three paths share the same setup stage (projections / bundling /
//! packing); the timed and counted section is score computation only,
//! which is the bandwidth-bound phase being compared.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::vsa::{bipolarize, bundle, pack, packed_dot, PackedBipolar};

#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    /// Number of objects (scores form an N×N matrix).
    pub n: usize,
    /// Hyperdimension / embedding width.
    pub d: usize,
    /// Repetitions of the score phase per path.
    pub reps: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.reps == 0 {
            return Err(Error::Config("n, d and reps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub n: usize,
    pub d: usize,
    pub reps: usize,
    /// Wall time per score, nanoseconds, averaged over reps.
    pub float_ns_per_score: f64,
    pub dense_ns_per_score: f64,
    pub packed_ns_per_score: f64,
    /// Bytes read per score by the instrumented counters.
    pub float_bytes_per_score: f64,
    pub dense_bytes_per_score: f64,
    pub packed_bytes_per_score: f64,
    /// Packed relation matrix matches the dense HD path bit-for-bit.
    pub exact_match: bool,
}

impl BenchReport {
    pub fn packed_to_float_byte_ratio(&self) -> f64 {
        self.packed_bytes_per_score / self.float_bytes_per_score
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "attention score microbenchmark: N={} D={} reps={}", self.n, self.d, self.reps)?;
        writeln!(f, "path        ns/score   bytes/score")?;
        writeln!(f, "float32 QK^T  {:>10.1} {:>10.0}", self.float_ns_per_score, self.float_bytes_per_score)?;
        writeln!(f, "dense HD      {:>10.1} {:>10.0}", self.dense_ns_per_score, self.dense_bytes_per_score)?;
        writeln!(f, "packed HD     {:>10.1} {:>10.0}", self.packed_ns_per_score, self.packed_bytes_per_score)?;
        writeln!(f, "packed/float byte ratio: {:.4}", self.packed_to_float_byte_ratio())?;
        writeln!(f, "packed == dense: {}", self.exact_match)
    }
}

pub fn bench_attention(cfg: BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let (n, d) = (cfg.n, cfg.d);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let h: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
        .collect();

    // ---- setup (not timed) ----
    // float path: the same vectors as f32 queries/keys
    let qf: Vec<Vec<f32>> = h.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
    // dense HD path: δ(h_i) and δ(h_i ⊕ h_j), f64
    let signs: Vec<Vec<f64>> = h.iter().map(|r| bipolarize(r)).collect();
    let mut bundles: Vec<Vec<f64>> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            bundles.push(bipolarize(&bundle(&h[i], &h[j])?));
        }
    }
    // packed path: the same sign patterns, bit-packed
    let packed_signs: Vec<PackedBipolar> = signs.iter().map(|s| pack(s)).collect::<Result<_>>()?;
    let packed_bundles: Vec<PackedBipolar> = bundles.iter().map(|b| pack(b)).collect::<Result<_>>()?;

    let scores = n * n;
    let mut r_float = vec![0.0f32; scores];
    let mut r_dense = vec![0.0f64; scores];
    let mut r_packed = vec![0.0f64; scores];

    // ---- score phase: float32 QKᵀ ----
    let mut float_bytes = 0u64;
    let t0 = Instant::now();
    for _ in 0..cfg.reps {
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&qf[i], &qf[j]);
                float_bytes += (std::mem::size_of_val(a.as_slice())
                    + std::mem::size_of_val(b.as_slice())) as u64;
                let mut acc = 0.0f32;
                for k in 0..d {
                    acc += a[k] * b[k];
                }
                r_float[i * n + j] = acc;
            }
        }
    }
    let float_ns = t0.elapsed().as_nanos() as f64 / (cfg.reps * scores) as f64;

    // ---- score phase: dense HD (Eq. 1) ----
    let inv_d = 1.0 / d as f64;
    let mut dense_bytes = 0u64;
    let t1 = Instant::now();
    for _ in 0..cfg.reps {
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&signs[i], &bundles[i * n + j]);
                dense_bytes += (std::mem::size_of_val(a.as_slice())
                    + std::mem::size_of_val(b.as_slice())) as u64;
                let mut acc = 0.0f64;
                for k in 0..d {
                    acc += a[k] * b[k];
                }
                r_dense[i * n + j] = acc * inv_d;
            }
        }
    }
    let dense_ns = t1.elapsed().as_nanos() as f64 / (cfg.reps * scores) as f64;

    // ---- score phase: packed XNOR/popcount ----
    let mut packed_bytes = 0u64;
    let t2 = Instant::now();
    for _ in 0..cfg.reps {
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&packed_signs[i], &packed_bundles[i * n + j]);
                packed_bytes += (a.payload_bytes() + b.payload_bytes()) as u64;
                r_packed[i * n + j] = packed_dot(a, b)? as f64 * inv_d;
            }
        }
    }
    let packed_ns = t2.elapsed().as_nanos() as f64 / (cfg.reps * scores) as f64;

    let exact_match = r_dense == r_packed;
    let per_score = (cfg.reps * scores) as f64;
    Ok(BenchReport {
        n,
        d,
        reps: cfg.reps,
        float_ns_per_score: float_ns,
        dense_ns_per_score: dense_ns,
        packed_ns_per_score: packed_ns,
        float_bytes_per_score: float_bytes as f64 / per_score,
        dense_bytes_per_score: dense_bytes as f64 / per_score,
        packed_bytes_per_score: packed_bytes as f64 / per_score,
        exact_match,
    })
}
