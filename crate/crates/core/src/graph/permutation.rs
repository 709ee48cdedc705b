use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A bijection on `0..n`; index `i` maps to `self.get(i)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::Validation(format!(
                    "not a permutation of 0..{}: {mapping:?}",
                    mapping.len()
                )));
            }
        }
        Ok(Permutation(mapping))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut m: Vec<usize> = (0..n).collect();
        m.shuffle(rng);
        Permutation(m)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &m) in self.0.iter().enumerate() {
            inv[m] = i;
        }
        Permutation(inv)
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Self {
        Permutation(other.0.iter().map(|&i| self.0[i]).collect())
    }

    /// Moves element `i` of `items` to position `self.get(i)`.
    pub fn apply_to_slice<T: Clone>(&self, items: &[T]) -> Vec<T> {
        let mut out = items.to_vec();
        for (i, item) in items.iter().enumerate() {
            out[self.0[i]] = item.clone();
        }
        out
    }

    /// Permutes the slices of `t` along `axis`.
    pub fn permute_axis(&self, t: &Tensor, axis: usize) -> Result<Tensor> {
        let shape = t.shape();
        if axis >= shape.len() || shape[axis] != self.len() {
            return Err(Error::Validation(format!(
                "cannot permute axis {axis} of {shape:?} with {} entries",
                self.len()
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for (i, &to) in self.0.iter().enumerate() {
                let from = (o * len + i) * inner;
                let dst = (o * len + to) * inner;
                out[dst..dst + inner].copy_from_slice(&src[from..from + inner]);
            }
        }
        Tensor::new(shape.to_vec(), out)
    }

    /// The 0/1 matrix `M` with `M[self(i)][i] = 1`, so `M·x` applies `self`.
    pub fn matrix(&self) -> Tensor {
        let n = self.len();
        let mut m = Tensor::zeros(vec![n, n]);
        for (i, &to) in self.0.iter().enumerate() {
            m.set(&[to, i], 1.0);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(Permutation::new(vec![2, 0, 1]).is_ok());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        assert_eq!(p.compose(&p.inverse()), Permutation::identity(4));
        assert_eq!(p.inverse().compose(&p), Permutation::identity(4));
    }

    #[test]
    fn permute_axis_moves_rows() {
        let p = Permutation::new(vec![1, 2, 0]).unwrap();
        let t = Tensor::new(vec![3, 2], vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]).unwrap();
        let moved = p.permute_axis(&t, 0).unwrap();
        assert_eq!(moved.data(), &[2.0, 2.5, 0.0, 0.5, 1.0, 1.5]);
        assert_eq!(p.apply_to_slice(&["a", "b", "c"]), vec!["c", "a", "b"]);
    }
}
