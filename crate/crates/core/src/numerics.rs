//! Dense matrix arithmetic, activations, losses, seeded randomness and a
//! central-difference gradient oracle.
//!
//! Everything is `f64`. Matrices are row-major and immutable once returned
//! by a public operation; the few `*_mut` accessors exist for the trainer
//! and the optimizers, which own their parameters exclusively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp used by every log-loss in the crate.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// fixtures and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Largest absolute entry, 0 for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::contract(format!(
                "{op}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::contract(format!(
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for p in 0..a.cols {
            let aip = a.data[i * a.cols + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * b.cols..(p + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

/// `x · xᵀ`. Each off-diagonal pair is computed once and mirrored, so the
/// result is exactly symmetric.
pub fn gram(x: &Matrix) -> Matrix {
    let n = x.rows;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let ri = x.row(i);
        for j in i..n {
            let rj = x.row(j);
            let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
            out.data[i * n + j] = dot;
            out.data[j * n + i] = dot;
        }
    }
    out
}

/// Overflow-free logistic function. Saturates to within `PROB_EPS`-safe
/// bounds rather than returning exactly 0 or 1 for finite inputs below
/// |z| = 700.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy with the prediction clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce(pred: f64, label: f64) -> f64 {
    let p = clamp_prob(pred);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Derivative of `bce(sigmoid(z), label)` with respect to the logit `z`.
#[inline]
pub fn bce_grad(pred: f64, label: f64) -> f64 {
    pred - label
}

/// Central-difference gradient of `loss` at `params`.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let f_plus = loss(&theta);
        theta[i] = orig - eps;
        let f_minus = loss(&theta);
        theta[i] = orig;
        grad.push((f_plus - f_minus) / (2.0 * eps));
    }
    grad
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of SplitMix64; advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to fold string labels into seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a substream seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut s = seed ^ fnv1a(label.as_bytes()).rotate_left(17);
    splitmix64(&mut s)
}

/// xoshiro256++ seeded through SplitMix64.
///
/// Uniform floats take the top 53 bits; normals use the Box-Muller transform
/// with the second variate cached. Both are fixed so a sequence can be
/// replayed by any implementation that follows the same recipe.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
    cached_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self {
            s,
            cached_normal: None,
        }
    }

    /// Independent deterministic substream for `label`.
    pub fn split(seed: u64, label: &str) -> Self {
        Self::new(derive_seed(seed, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by multiply-shift (Lemire, without the
    /// rejection step; the bias is below 2⁻³² for the sizes used here).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Index drawn from an unnormalized categorical distribution.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        // Rounding can leave u marginally above the last cumulative weight.
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn brute_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let b = Matrix::from_rows(&[&[1.5, -2.0], &[0.25, 7.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_computed() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[5.0], &[6.0]]);
        let expected = brute_matmul(&a, &b);
        assert_eq!(expected, Matrix::from_rows(&[&[17.0], &[39.0]]));
        assert_eq!(matmul(&a, &b).unwrap(), expected);
    }

    #[test]
    fn matmul_dimension_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        assert!(matches!(matmul(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn matrix_new_rejects_bad_length() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn gram_examples() {
        assert_eq!(gram(&Matrix::identity(2)), Matrix::identity(2));
        let x = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(gram(&x), Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        let hi = sigmoid(700.0);
        assert!(hi <= 1.0 && hi > 1.0 - 1e-12);
        let lo = sigmoid(-700.0);
        assert!(lo > 0.0 && lo < 1e-300);
        assert!(sigmoid(-745.0).is_finite());
    }

    #[test]
    fn bce_values() {
        assert!((bce(0.5, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce(1.0, 1.0) <= -(1.0 - 1e-12f64).ln() + 1e-18);
        assert!(bce(0.0, 0.0) <= -(1.0 - 1e-12f64).ln() + 1e-18);
        assert!((bce(0.9, 0.0) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!(bce(0.0, 1.0).is_finite());
        assert_eq!(bce_grad(0.3, 1.0), 0.3 - 1.0);
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|t| t[0] * t[0], &[3.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], 1e-6);
        assert!(g.iter().all(|v| *v == 0.0));
        let g = finite_diff_grad(|t| bce(sigmoid(t[0]), 1.0), &[0.0], 1e-6);
        assert!((g[0] - -0.5).abs() < 1e-6);
        assert!((g[0] - bce_grad(sigmoid(0.0), 1.0)).abs() < 1e-6);
    }

    #[test]
    fn rng_replay() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::new(43);
        assert_ne!(Rng::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn rng_reference_stream() {
        // SplitMix64 seeded with 0 starts 0xe220a8397b1dcdaf, the published
        // reference value for that generator.
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn split_substreams_differ() {
        let mut a = Rng::split(7, "embeddings");
        let mut b = Rng::split(7, "attention");
        let mut a2 = Rng::split(7, "embeddings");
        let x = a.next_u64();
        assert_eq!(x, a2.next_u64());
        assert_ne!(x, b.next_u64());
    }

    #[test]
    fn rng_moments() {
        let mut rng = Rng::new(1);
        let n = 200_000;
        let (mut s, mut s2, mut u) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            s += z;
            s2 += z * z;
            u += rng.uniform();
        }
        let nf = n as f64;
        assert!((s / nf).abs() < 0.01);
        assert!((s2 / nf - 1.0).abs() < 0.02);
        assert!((u / nf - 0.5).abs() < 0.005);
    }

    #[test]
    fn categorical_respects_zero_weights() {
        let mut rng = Rng::new(5);
        for _ in 0..1000 {
            assert_eq!(rng.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }

    #[test]
    fn matmul_associativity_random() {
        let mut rng = Rng::new(99);
        for _ in 0..50 {
            let a = random_matrix(&mut rng, 4, 4);
            let b = random_matrix(&mut rng, 4, 4);
            let c = random_matrix(&mut rng, 4, 4);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            let diff = left.sub(&right).unwrap().max_abs();
            assert!(diff / scale <= 1e-12, "associativity drift {diff}");
        }
    }

    proptest! {
        #[test]
        fn gram_symmetric_psd(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
            let mut rng = Rng::new(seed);
            let x = random_matrix(&mut rng, r, c);
            let g = gram(&x);
            for i in 0..r {
                for j in 0..r {
                    prop_assert_eq!(g.get(i, j), g.get(j, i));
                }
            }
            // vᵀ G v = ‖xᵀ v‖² ≥ 0 for random probes.
            for _ in 0..8 {
                let v: Vec<f64> = (0..r).map(|_| rng.normal()).collect();
                let mut q = 0.0;
                for i in 0..r {
                    for j in 0..r {
                        q += v[i] * g.get(i, j) * v[j];
                    }
                }
                prop_assert!(q >= -1e-10 * g.max_abs().max(1.0));
            }
        }

        #[test]
        fn matmul_matches_brute_force(seed in any::<u64>(), r in 1usize..6, k in 1usize..6, c in 1usize..6) {
            let mut rng = Rng::new(seed);
            let a = random_matrix(&mut rng, r, k);
            let b = random_matrix(&mut rng, k, c);
            let fast = matmul(&a, &b).unwrap();
            let slow = brute_matmul(&a, &b);
            prop_assert!(fast.sub(&slow).unwrap().max_abs() <= 1e-12);
        }

        #[test]
        fn sigmoid_in_open_unit_interval(z in -700.0f64..700.0) {
            let p = sigmoid(z);
            prop_assert!(p > 0.0 && p <= 1.0);
            prop_assert!(bce(p, 1.0).is_finite() && bce(p, 0.0).is_finite());
        }
    }
}
