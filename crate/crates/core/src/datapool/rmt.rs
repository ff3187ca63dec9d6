//! Block-wise secret random orthogonal projection of feature vectors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};

/// One Haar-random orthogonal matrix per contiguous feature block.
#[derive(Clone, Debug)]
pub struct RmtKey {
    dim: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl RmtKey {
    pub fn generate(dim: usize, block_count: usize, seed: u64) -> Result<Self> {
        if block_count == 0 || dim == 0 || !dim.is_multiple_of(block_count) {
            return Err(Error::IndivisibleDim {
                dim,
                blocks: block_count,
            });
        }
        let width = dim / block_count;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..block_count)
            .map(|_| haar_orthogonal(width, &mut rng))
            .collect();
        Ok(Self { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_width(&self) -> usize {
        self.dim / self.blocks.len()
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x, false)
    }

    pub fn decode(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x, true)
    }

    fn apply(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "feature length must match key dimension");
        let w = self.block_width();
        let mut out = Vec::with_capacity(self.dim);
        for (b, q) in self.blocks.iter().enumerate() {
            let v = DVector::from_column_slice(&x[b * w..(b + 1) * w]);
            let y = if transpose { q.tr_mul(&v) } else { q * v };
            out.extend(y.iter());
        }
        out
    }

    pub fn encode_dataset(&self, dataset: &Dataset) -> Result<Dataset> {
        self.check(dataset)?;
        dataset.map_features(format!("{}-rmt", dataset.name()), self.dim, |x| self.encode(x))
    }

    pub fn decode_dataset(&self, dataset: &Dataset) -> Result<Dataset> {
        self.check(dataset)?;
        dataset.map_features(dataset.name().trim_end_matches("-rmt"), self.dim, |x| self.decode(x))
    }

    fn check(&self, dataset: &Dataset) -> Result<()> {
        if dataset.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: dataset.dim(),
            });
        }
        Ok(())
    }
}

/// Encodes `dataset` with a fresh key derived from `seed`.
pub fn rmt_encode(dataset: &Dataset, block_count: usize, seed: u64) -> Result<Dataset> {
    RmtKey::generate(dataset.dim(), block_count, seed)?.encode_dataset(dataset)
}

/// QR of a Gaussian matrix with the diagonal of R made positive.
fn haar_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
