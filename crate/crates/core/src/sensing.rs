//! Random sensing matrices, measurement, scalar quantization and an empirical
//! restricted-isometry estimate.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{DcsError, Result};
use crate::rng;

/// Gaussian matrix with unit-norm columns. With an identity sparsity basis
/// this is also the recovery operator `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub seed: u64,
    pub entries: DMatrix<f64>,
}

impl SensingMatrix {
    /// Wraps an arbitrary operator, e.g. `Phi * Psi` for a non-identity basis.
    pub fn from_entries(entries: DMatrix<f64>, seed: u64) -> Self {
        Self { seed, entries }
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }
}

pub fn gen_matrix(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m == 0 || n == 0 {
        return Err(DcsError::ZeroDimension { rows: m, cols: n });
    }
    let mut rng = rng::seeded(seed);
    let mut entries = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut col in entries.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    Ok(SensingMatrix { seed, entries })
}

pub fn measure(phi: &SensingMatrix, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != phi.cols() {
        return Err(DcsError::DimensionMismatch {
            context: "measure",
            expected: phi.cols(),
            found: x.len(),
        });
    }
    Ok(&phi.entries * x)
}

/// Uniform midrise quantizer with `2^bits` levels over `[-scale, scale]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    bits: u32,
    scale: f64,
}

impl Quantizer {
    pub fn new(bits: u32, scale: f64) -> Result<Self> {
        if !(1..=32).contains(&bits) {
            return Err(DcsError::InvalidRate(bits));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DcsError::NonpositiveScale(scale));
        }
        Ok(Self { bits, scale })
    }

    /// Quantizer whose half-range is the largest magnitude across all
    /// vectors, so only the extreme sample touches the clamp. An all-zero
    /// set falls back to unit scale.
    pub fn fit<'a>(bits: u32, vectors: impl IntoIterator<Item = &'a DVector<f64>>) -> Result<Self> {
        let peak = vectors
            .into_iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        Self::new(bits, if peak > 0.0 { peak } else { 1.0 })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn step(&self) -> f64 {
        2.0 * self.scale / self.levels() as f64
    }

    /// `step * sqrt(m) / 2`: worst-case l2 quantization error of an
    /// in-range vector of length `m`.
    pub fn noise_bound(&self, m: usize) -> f64 {
        self.step() * (m as f64).sqrt() / 2.0
    }

    pub fn encode(&self, v: f64) -> u32 {
        let max_code = (self.levels() - 1) as f64;
        let c = ((v + self.scale) / self.step()).floor();
        // NaN maps to code 0 through the clamp
        c.clamp(0.0, max_code) as u32
    }

    pub fn decode(&self, code: u32) -> f64 {
        -self.scale + (f64::from(code) + 0.5) * self.step()
    }

    pub fn quantize(&self, y: &DVector<f64>) -> Vec<u32> {
        y.iter().map(|&v| self.encode(v)).collect()
    }

    pub fn dequantize(&self, codes: &[u32]) -> DVector<f64> {
        DVector::from_iterator(codes.len(), codes.iter().map(|&c| self.decode(c)))
    }

    /// Round trip through the code domain.
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        self.dequantize(&self.quantize(y))
    }

    fn code_bytes(&self) -> usize {
        self.bits.div_ceil(8) as usize
    }
}

/// Measurements of all nodes, node 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: Vec<DVector<f64>>,
    pub quantizer: Option<Quantizer>,
}

impl MeasurementSet {
    pub fn unquantized(y: Vec<DVector<f64>>) -> Result<Self> {
        let set = Self { y, quantizer: None };
        set.check_lengths()?;
        Ok(set)
    }

    /// Quantizes every vector with `q`; returns the dequantized set together
    /// with the raw codes (one row per node).
    pub fn quantized(raw: &[DVector<f64>], q: Quantizer) -> Result<(Self, Vec<Vec<u32>>)> {
        let codes: Vec<Vec<u32>> = raw.iter().map(|y| q.quantize(y)).collect();
        let set = Self {
            y: codes.iter().map(|c| q.dequantize(c)).collect(),
            quantizer: Some(q),
        };
        set.check_lengths()?;
        Ok((set, codes))
    }

    pub fn is_quantized(&self) -> bool {
        self.quantizer.is_some()
    }

    pub fn nodes(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.y.first().map_or(0, |v| v.len())
    }

    fn check_lengths(&self) -> Result<()> {
        let m = self.m();
        match self.y.iter().find(|v| v.len() != m) {
            Some(v) => Err(DcsError::DimensionMismatch {
                context: "measurement set",
                expected: m,
                found: v.len(),
            }),
            None => Ok(()),
        }
    }
}

/// Quantized measurements as stored on disk.
///
/// Layout, all little-endian: `m: u32`, `nodes: u32`, `bits: u32`,
/// `scale: f64`, then `nodes * m` codes of `ceil(bits / 8)` bytes each,
/// node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CodesFile {
    pub m: usize,
    pub quantizer: Quantizer,
    pub codes: Vec<Vec<u32>>,
}

impl CodesFile {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| DcsError::Format(format!("{what} {v} exceeds u32")))
        };
        w.write_all(&to_u32(self.m, "m")?.to_le_bytes())?;
        w.write_all(&to_u32(self.codes.len(), "node count")?.to_le_bytes())?;
        w.write_all(&self.quantizer.bits.to_le_bytes())?;
        w.write_all(&self.quantizer.scale.to_le_bytes())?;
        let width = self.quantizer.code_bytes();
        let max_code = self.quantizer.levels() - 1;
        for row in &self.codes {
            if row.len() != self.m {
                return Err(DcsError::DimensionMismatch {
                    context: "codes file row",
                    expected: self.m,
                    found: row.len(),
                });
            }
            for &c in row {
                if u64::from(c) > max_code {
                    return Err(DcsError::Format(format!("code {c} exceeds {max_code}")));
                }
                w.write_all(&c.to_le_bytes()[..width])?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let m = read_u32(&mut r)? as usize;
        let nodes = read_u32(&mut r)? as usize;
        let bits = read_u32(&mut r)?;
        let mut scale = [0u8; 8];
        r.read_exact(&mut scale)?;
        let quantizer = Quantizer::new(bits, f64::from_le_bytes(scale))?;
        let width = quantizer.code_bytes();
        let max_code = quantizer.levels() - 1;

        let mut codes = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            let mut row = Vec::with_capacity(m);
            for _ in 0..m {
                let mut buf = [0u8; 4];
                r.read_exact(&mut buf[..width])?;
                let c = u32::from_le_bytes(buf);
                if u64::from(c) > max_code {
                    return Err(DcsError::Format(format!("code {c} exceeds {max_code}")));
                }
                row.push(c);
            }
            codes.push(row);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(DcsError::Format("trailing bytes after codes".into()));
        }
        Ok(Self {
            m,
            quantizer,
            codes,
        })
    }

    pub fn dequantize(&self) -> MeasurementSet {
        MeasurementSet {
            y: self
                .codes
                .iter()
                .map(|c| self.quantizer.dequantize(c))
                .collect(),
            quantizer: Some(self.quantizer),
        }
    }
}

/// Squared-norm distortions `| ||A t||^2 - 1 |` of `samples` random unit-norm
/// `k`-sparse vectors. The stream is prefix-stable: asking for more samples
/// with the same seed extends the same sequence.
pub fn rip_distortions(a: &SensingMatrix, k: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let n = a.cols();
    if k == 0 || k > n {
        return Err(DcsError::InvalidSparsity { k, n });
    }
    let mut rng = rng::seeded(seed);
    let mut amps = vec![0.0; k];
    let mut image = DVector::zeros(a.rows());
    let out = (0..samples)
        .map(|_| {
            let support = sample(&mut rng, n, k);
            for amp in amps.iter_mut() {
                *amp = rng.sample(StandardNormal);
            }
            let norm = amps.iter().map(|x| x * x).sum::<f64>().sqrt();
            image.fill(0.0);
            for (i, amp) in support.iter().zip(&amps) {
                image.axpy(amp / norm, &a.entries.column(i), 1.0);
            }
            (image.norm_squared() - 1.0).abs()
        })
        .collect();
    Ok(out)
}

/// Empirical lower bound on the order-`k` restricted isometry constant: the
/// worst distortion over `samples` random unit-norm `k`-sparse vectors. The
/// raw maximum is returned even when it reaches 1 or more.
pub fn estimate_rip(a: &SensingMatrix, k: usize, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(DcsError::Domain(
            "RIP estimate needs at least one sample".into(),
        ));
    }
    Ok(rip_distortions(a, k, samples, seed)?
        .into_iter()
        .fold(0.0, f64::max))
}
