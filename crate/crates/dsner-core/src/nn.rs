//! Dense 2-D tensors with paired gradient buffers, plus the few matrix
//! primitives the model needs. Everything is `f64` row-major.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            grad: vec![0.0; rows * cols],
        }
    }

    /// Uniform init in `[-a, a]` with `a = sqrt(6 / (rows + cols))`.
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
        Tensor {
            rows,
            cols,
            data,
            grad: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn grad_row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.grad[r * self.cols..(r + 1) * self.cols]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// `out[r] = sum_c self[r, c] * x[c]` — `out` must be pre-sized to `rows`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            *o = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
    }

    /// `out[c] += sum_r self[r, c] * d[r]` (transpose matvec, accumulating).
    pub fn matvec_t_add(&self, d: &[f64], out: &mut [f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &dr) in d.iter().enumerate() {
            let row = self.row(r);
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * dr;
            }
        }
    }

    /// `grad[r, c] += d[r] * x[c]`.
    pub fn grad_outer_add(&mut self, d: &[f64], x: &[f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &dr) in d.iter().enumerate() {
            let grad_row = &mut self.grad[r * self.cols..(r + 1) * self.cols];
            for (g, xv) in grad_row.iter_mut().zip(x) {
                *g += dr * xv;
            }
        }
    }

    /// `grad[r, :] += v`.
    pub fn grad_row_add(&mut self, r: usize, v: &[f64]) {
        let grad_row = self.grad_row_mut(r);
        debug_assert_eq!(v.len(), grad_row.len());
        for (g, x) in grad_row.iter_mut().zip(v) {
            *g += x;
        }
    }
}

/// Numerically safe softmax; returns `(probs, log_partition)` where
/// `log_partition = ln(sum exp(logit))` so callers can take exact
/// `-log p[t] = log_partition - logit[t]` without going through `exp`.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (probs, sum.ln() + max)
}

pub fn tanh_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bound_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor::xavier(8, 8, &mut rng);
        let a = (6.0 / 16.0f64).sqrt();
        assert!((a - 0.6123724356957945).abs() < 1e-15);
        assert!(t.data.iter().all(|&x| (-a..=a).contains(&x)));
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let t2 = Tensor::xavier(8, 8, &mut rng2);
        assert_eq!(t.data, t2.data);
    }

    #[test]
    fn matvec_against_hand_computation() {
        let mut t = Tensor::zeros(2, 3);
        t.data.copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = [1.0, 0.5, -1.0];
        let mut out = [0.0; 2];
        t.matvec(&x, &mut out);
        assert_eq!(out, [1.0 + 1.0 - 3.0, 4.0 + 2.5 - 6.0]);

        let d = [2.0, -1.0];
        let mut back = [0.0; 3];
        t.matvec_t_add(&d, &mut back);
        assert_eq!(back, [2.0 - 4.0, 4.0 - 5.0, 6.0 - 6.0]);
    }

    #[test]
    fn grad_outer_accumulates() {
        let mut t = Tensor::zeros(2, 2);
        t.grad_outer_add(&[1.0, 2.0], &[3.0, 4.0]);
        t.grad_outer_add(&[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(t.grad, vec![4.0, 5.0, 6.0, 8.0]);
        t.zero_grad();
        assert!(t.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let logits = [0.3, -1.2, 2.5, 0.0];
        let (p, logz) = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|l| l + 7.5).collect();
        let (p2, logz2) = softmax(&shifted);
        for (a, b) in p.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((logz2 - logz - 7.5).abs() < 1e-9);
    }
}
