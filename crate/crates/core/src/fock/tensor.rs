//! Dense amplitude tensor over labelled bosonic modes with per-mode
//! occupation dimensions. Axis 0 is the most significant index.
//!
//! Unlike [`FockState`](super::FockState), the per-mode dimensions may differ:
//! exact passive transformations of two modes enlarge both to hold the total
//! photon number, which the detection code relies on.

use crate::qmath::ZERO;
use crate::C64;

#[derive(Clone, Debug)]
pub(crate) struct ModeTensor {
    pub labels: Vec<String>,
    pub dims: Vec<usize>,
    pub data: Vec<C64>,
}

fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// `coef[na][nb][k]`: amplitude on `|k, na+nb−k⟩` of the image of `|na, nb⟩`
/// under the mode transformation `b = U x`.
fn rotation_coefficients(u: &[[C64; 2]; 2], da: usize, db: usize) -> Vec<Vec<Vec<C64>>> {
    let fact: Vec<f64> = (0..da + db)
        .scan(1.0, |acc, n| {
            if n > 0 {
                *acc *= n as f64;
            }
            Some(*acc)
        })
        .collect();
    let binom = |n: usize, k: usize| fact[n] / (fact[k] * fact[n - k]);
    let mut coef = vec![vec![Vec::new(); db]; da];
    for na in 0..da {
        for nb in 0..db {
            let total = na + nb;
            let mut out = vec![ZERO; total + 1];
            // x_a† = U00 b0† + U10 b1†, x_b† = U01 b0† + U11 b1†
            for p in 0..=na {
                let ta = u[0][0].powu(p as u32) * u[1][0].powu((na - p) as u32) * binom(na, p);
                for q in 0..=nb {
                    let tb = u[0][1].powu(q as u32) * u[1][1].powu((nb - q) as u32) * binom(nb, q);
                    out[p + q] += ta * tb;
                }
            }
            let norm_in = (fact[na] * fact[nb]).sqrt();
            for (k, c) in out.iter_mut().enumerate() {
                *c *= (fact[k] * fact[total - k]).sqrt() / norm_in;
            }
            coef[na][nb] = out;
        }
    }
    coef
}

impl ModeTensor {
    pub fn new(labels: Vec<String>, dims: Vec<usize>, data: Vec<C64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        debug_assert_eq!(labels.len(), dims.len());
        ModeTensor { labels, dims, data }
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    pub fn axis(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Multiplies amplitudes by `factors[n]` where `n` is the occupation of `axis`.
    pub fn scale_axis(&mut self, axis: usize, factors: &[C64]) {
        let stride = self.strides()[axis];
        let dim = self.dims[axis];
        for (idx, z) in self.data.iter_mut().enumerate() {
            *z *= factors[(idx / stride) % dim];
        }
    }

    /// Keeps the `n`-photon slice of `axis` and removes the axis.
    pub fn slice_axis(&self, axis: usize, n: usize) -> ModeTensor {
        let stride = self.strides()[axis];
        let dim = self.dims[axis];
        let outer = self.data.len() / (stride * dim);
        let mut data = Vec::with_capacity(outer * stride);
        for o in 0..outer {
            let start = o * stride * dim + n * stride;
            data.extend_from_slice(&self.data[start..start + stride]);
        }
        let mut labels = self.labels.clone();
        let mut dims = self.dims.clone();
        labels.remove(axis);
        dims.remove(axis);
        ModeTensor { labels, dims, data }
    }

    /// Drops occupations `>= dim` on `axis`.
    pub fn truncate_axis(&self, axis: usize, dim: usize) -> ModeTensor {
        let old = self.dims[axis];
        if dim >= old {
            return self.clone();
        }
        let stride = self.strides()[axis];
        let outer = self.data.len() / (stride * old);
        let mut data = Vec::with_capacity(outer * stride * dim);
        for o in 0..outer {
            let start = o * stride * old;
            data.extend_from_slice(&self.data[start..start + stride * dim]);
        }
        let mut dims = self.dims.clone();
        dims[axis] = dim;
        ModeTensor {
            labels: self.labels.clone(),
            dims,
            data,
        }
    }

    /// Lowering map on one axis: `|n⟩ → f(n)|n−k⟩` for `n ≥ k`; the result
    /// keeps the axis dimension.
    pub fn lower_axis(&self, axis: usize, k: usize, f: impl Fn(usize) -> C64) -> ModeTensor {
        let stride = self.strides()[axis];
        let dim = self.dims[axis];
        let mut out = vec![ZERO; self.data.len()];
        let factors: Vec<C64> = (0..dim).map(|n| if n >= k { f(n) } else { ZERO }).collect();
        for (idx, z) in self.data.iter().enumerate() {
            if *z == ZERO {
                continue;
            }
            let n = (idx / stride) % dim;
            if n < k {
                continue;
            }
            out[idx - k * stride] += z * factors[n];
        }
        ModeTensor {
            labels: self.labels.clone(),
            dims: self.dims.clone(),
            data: out,
        }
    }

    /// Digits of every flat index except `skip` axes, re-expressed with `new_strides`.
    fn remap_rest(&self, skip: &[usize], new_strides: &[usize], new_pos: &[Option<usize>]) -> Vec<usize> {
        let n = self.dims.len();
        let mut digits = vec![0usize; n];
        let mut out = Vec::with_capacity(self.data.len());
        for _ in 0..self.data.len() {
            let mut rest = 0;
            for ax in 0..n {
                if skip.contains(&ax) {
                    continue;
                }
                if let Some(p) = new_pos[ax] {
                    rest += digits[ax] * new_strides[p];
                }
            }
            out.push(rest);
            // odometer increment, least significant last
            for ax in (0..n).rev() {
                digits[ax] += 1;
                if digits[ax] < self.dims[ax] {
                    break;
                }
                digits[ax] = 0;
            }
        }
        out
    }

    /// Exact passive two-mode transformation `b = U x` with `x = (axis a, axis b)`.
    /// The outputs replace the inputs in place (`b0` at `a`, `b1` at `b`) and
    /// both enlarge to `da + db − 1` so no amplitude is lost.
    pub fn rotate_pair(&self, a: usize, b: usize, u: &[[C64; 2]; 2], labels: (&str, &str)) -> ModeTensor {
        assert_ne!(a, b);
        let (da, db) = (self.dims[a], self.dims[b]);
        let big = da + db - 1;
        let mut dims = self.dims.clone();
        dims[a] = big;
        dims[b] = big;
        let new_strides = strides_of(&dims);
        let new_pos: Vec<Option<usize>> = (0..self.dims.len()).map(Some).collect();
        let rest = self.remap_rest(&[a, b], &new_strides, &new_pos);
        let old = self.strides();
        let coef = rotation_coefficients(u, da, db);
        let mut data = vec![ZERO; dims.iter().product()];
        for (idx, z) in self.data.iter().enumerate() {
            if *z == ZERO {
                continue;
            }
            let na = (idx / old[a]) % da;
            let nb = (idx / old[b]) % db;
            let total = na + nb;
            for (k, c) in coef[na][nb].iter().enumerate() {
                data[rest[idx] + k * new_strides[a] + (total - k) * new_strides[b]] += z * c;
            }
        }
        let mut new_labels = self.labels.clone();
        new_labels[a] = labels.0.to_string();
        new_labels[b] = labels.1.to_string();
        ModeTensor {
            labels: new_labels,
            dims,
            data,
        }
    }

    /// Vacuum component of `b0` after `b = U x`: the pair `(a, b)` is replaced by
    /// the single mode `b1` (at the position of `b`, dimension `da + db − 1`).
    pub fn merge_vacuum(&self, a: usize, b: usize, u: &[[C64; 2]; 2], label: &str) -> ModeTensor {
        assert_ne!(a, b);
        let (da, db) = (self.dims[a], self.dims[b]);
        let big = da + db - 1;
        let n = self.dims.len();
        // output axes: all but `a`, with `b` enlarged
        let mut labels = Vec::with_capacity(n - 1);
        let mut dims = Vec::with_capacity(n - 1);
        let mut new_pos = vec![None; n];
        for (ax, pos) in new_pos.iter_mut().enumerate() {
            if ax == a {
                continue;
            }
            *pos = Some(dims.len());
            labels.push(if ax == b { label.to_string() } else { self.labels[ax].clone() });
            dims.push(if ax == b { big } else { self.dims[ax] });
        }
        let new_strides = strides_of(&dims);
        let rest = self.remap_rest(&[a, b], &new_strides, &new_pos);
        let old = self.strides();
        let coef = rotation_coefficients(u, da, db);
        let pb = new_pos[b].expect("b kept");
        let mut data = vec![ZERO; dims.iter().product()];
        for (idx, z) in self.data.iter().enumerate() {
            if *z == ZERO {
                continue;
            }
            let na = (idx / old[a]) % da;
            let nb = (idx / old[b]) % db;
            let c = coef[na][nb][0];
            data[rest[idx] + (na + nb) * new_strides[pb]] += z * c;
        }
        ModeTensor { labels, dims, data }
    }

    /// Tensor product, `self` most significant.
    #[cfg(test)]
    pub fn kron(&self, other: &ModeTensor) -> ModeTensor {
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        let mut dims = self.dims.clone();
        dims.extend(other.dims.iter().copied());
        let data = crate::qmath::tensor_vec(&self.data, &other.data);
        ModeTensor { labels, dims, data }
    }

    /// Amplitude at the given occupation digits.
    #[cfg(test)]
    pub fn get(&self, digits: &[usize]) -> C64 {
        let s = self.strides();
        self.data[digits.iter().zip(&s).map(|(d, s)| d * s).sum::<usize>()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::ONE;

    fn single_mode(label: &str, amps: &[C64]) -> ModeTensor {
        ModeTensor::new(vec![label.into()], vec![amps.len()], amps.to_vec())
    }

    fn bs(t: f64) -> [[C64; 2]; 2] {
        let r = (1.0 - t * t).sqrt();
        [[C64::new(t, 0.0), C64::new(-r, 0.0)], [C64::new(r, 0.0), C64::new(t, 0.0)]]
    }

    #[test]
    fn rotation_preserves_norm_and_gives_hom_dip() {
        // |1,1⟩ on a balanced beamsplitter has no |1,1⟩ component
        let a = single_mode("a", &[ZERO, ONE, ZERO]);
        let b = single_mode("b", &[ZERO, ONE, ZERO]);
        let t = a.kron(&b);
        let out = t.rotate_pair(0, 1, &bs(std::f64::consts::FRAC_1_SQRT_2), ("c", "d"));
        assert!((out.norm_sqr() - 1.0).abs() < 1e-14);
        assert!(out.get(&[1, 1]).norm() < 1e-15);
        assert!((out.get(&[2, 0]).norm_sqr() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn merge_matches_full_rotation_slice() {
        let a = single_mode("a", &[C64::new(0.3, 0.1), C64::new(0.5, 0.0), C64::new(0.2, -0.4)]);
        let b = single_mode("b", &[C64::new(0.6, 0.0), C64::new(0.0, 0.2), C64::new(0.1, 0.1)]);
        let t = a.kron(&b);
        let u = bs(0.6);
        let full = t.rotate_pair(0, 1, &u, ("c", "d")).slice_axis(0, 0);
        let merged = t.merge_vacuum(0, 1, &u, "d");
        assert_eq!(full.dims, merged.dims);
        for (x, y) in full.data.iter().zip(&merged.data) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn lowering_by_one() {
        let a = single_mode("a", &[ZERO, ZERO, ONE]);
        let out = a.lower_axis(0, 1, |n| C64::new((n as f64).sqrt(), 0.0));
        assert!((out.get(&[1]) - C64::new(2f64.sqrt(), 0.0)).norm() < 1e-15);
    }
}
