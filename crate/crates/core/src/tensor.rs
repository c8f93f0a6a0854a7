//! Rank-1 tensors, sums of rank-1 terms, and their dense counterparts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the number of entries of a dense tensor.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

/// Outer product of one factor vector per subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneTensor {
    pub factors: Vec<Vec<f64>>,
}

impl RankOneTensor {
    pub fn new(factors: Vec<Vec<f64>>) -> Self {
        Self { factors }
    }

    /// The all-ones tensor of the given shape.
    pub fn ones(shape: &[usize]) -> Self {
        Self {
            factors: shape.iter().map(|&n| vec![1.0; n]).collect(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Vec::len).collect()
    }

    /// Largest entry, which for nonnegative factors is the product of the
    /// factor maxima.
    pub fn max_value(&self) -> Result<f64> {
        let mut prod = 1.0;
        for f in &self.factors {
            let mut m = 0.0f64;
            for &x in f {
                if x < 0.0 {
                    return Err(Error::NegativeEntry(x));
                }
                m = m.max(x);
            }
            prod *= m;
        }
        Ok(prod)
    }

    /// Number of stored scalars.
    pub fn scalar_count(&self) -> usize {
        self.factors.iter().map(Vec::len).sum()
    }

    pub fn has_zero_factor(&self) -> bool {
        self.factors.iter().any(|f| f.iter().all(|&x| x == 0.0))
    }

    /// Entry at a joint index.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.factors.iter().zip(index).map(|(f, &k)| f[k]).product()
    }

    pub fn to_dense(&self, cap: usize) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(&self.shape(), cap)?;
        out.add_rank_one(self);
        Ok(out)
    }
}

/// Sum of absolute entries.
pub fn l1_norm_factor(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// A tensor stored as a sum of rank-1 terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdValue {
    pub shape: Vec<usize>,
    pub terms: Vec<RankOneTensor>,
}

impl CpdValue {
    pub fn empty(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            terms: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    /// `R * sum_i n_i` for `R` terms.
    pub fn scalar_count(&self) -> usize {
        self.terms.len() * self.shape.iter().sum::<usize>()
    }

    /// Concatenation of the term lists, representing the elementwise sum.
    pub fn union(&self, other: &CpdValue) -> CpdValue {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        CpdValue {
            shape: self.shape.clone(),
            terms,
        }
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.terms.iter().fold(0.0, |acc, t| acc + t.at(index))
    }

    pub fn reconstruct(&self, cap: usize) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(&self.shape, cap)?;
        for t in &self.terms {
            if t.shape() != self.shape {
                return Err(Error::Consistency("term shape differs from value shape".into()));
            }
            out.add_rank_one(t);
        }
        Ok(out)
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize], cap: usize) -> Result<Self> {
        let len = checked_len(shape, cap)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&k, &n)| acc * n + k)
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.shape.len()];
        for k in (0..self.shape.len()).rev() {
            out[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
        out
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    /// Adds the outer product of `t` in place.
    pub fn add_rank_one(&mut self, t: &RankOneTensor) {
        let mut block = vec![1.0];
        for f in &t.factors {
            let mut next = Vec::with_capacity(block.len() * f.len());
            for &b in &block {
                next.extend(f.iter().map(|&x| b * x));
            }
            block = next;
        }
        for (d, b) in self.data.iter_mut().zip(block) {
            *d += b;
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max(other - self)`: how far `self` falls below `other`.
    pub fn max_shortfall(&self, other: &DenseTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| b - a)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn checked_len(shape: &[usize], cap: usize) -> Result<usize> {
    let mut len: usize = 1;
    for &n in shape {
        len = len.saturating_mul(n);
    }
    if len > cap {
        return Err(Error::DenseCap {
            requested: len,
            cap,
        });
    }
    Ok(len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_reconstructs_to_ones() {
        let t = RankOneTensor::ones(&[2, 2]);
        assert_eq!(t.factors, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let d = t.to_dense(DEFAULT_DENSE_CAP).unwrap();
        assert!(d.data.iter().all(|&x| x == 1.0));
        assert_eq!(RankOneTensor::ones(&[3]).factors, vec![vec![1.0; 3]]);
    }

    #[test]
    fn hand_outer_product() {
        let t = RankOneTensor::new(vec![vec![0.7, 0.4], vec![0.7, 0.4]]);
        let v = CpdValue {
            shape: vec![2, 2],
            terms: vec![t.clone()],
        };
        let d = v.reconstruct(DEFAULT_DENSE_CAP).unwrap();
        let expected = [0.49, 0.28, 0.28, 0.16];
        for (a, b) in d.data.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let doubled = v.union(&v).reconstruct(DEFAULT_DENSE_CAP).unwrap();
        for (a, b) in doubled.data.iter().zip(&d.data) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_sum_is_zero() {
        let d = CpdValue::empty(&[3, 2]).reconstruct(DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(d.data, vec![0.0; 6]);
    }

    #[test]
    fn max_value_cases() {
        let t = RankOneTensor::new(vec![vec![0.5, 0.3], vec![0.6, 0.2]]);
        assert!((t.max_value().unwrap() - 0.30).abs() < 1e-15);
        assert_eq!(RankOneTensor::ones(&[4, 2, 3]).max_value().unwrap(), 1.0);
        assert_eq!(RankOneTensor::new(vec![vec![0.0], vec![0.9]]).max_value().unwrap(), 0.0);
        let neg = RankOneTensor::new(vec![vec![-0.1, 0.5]]);
        assert!(matches!(neg.max_value(), Err(Error::NegativeEntry(_))));
    }

    #[test]
    fn l1_norms() {
        assert!((l1_norm_factor(&[0.7, 0.4]) - 1.1).abs() < 1e-15);
        assert_eq!(l1_norm_factor(&[0.0; 4]), 0.0);
        assert_eq!(l1_norm_factor(&[1.0; 5]), 5.0);
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            CpdValue::empty(&[100, 100]).reconstruct(9_999),
            Err(Error::DenseCap { requested: 10_000, cap: 9_999 })
        ));
    }

    #[test]
    fn storage_accounting() {
        let v = CpdValue {
            shape: vec![3, 4],
            terms: vec![RankOneTensor::ones(&[3, 4]); 5],
        };
        assert_eq!(v.scalar_count(), 35);
    }

    #[test]
    fn index_round_trip() {
        let d = DenseTensor::zeros(&[2, 3, 4], 100).unwrap();
        for k in 0..d.len() {
            assert_eq!(d.flat_index(&d.unravel(k)), k);
        }
    }
}
