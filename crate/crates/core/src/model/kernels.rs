//! Inner loops shared by inference and training.

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dot product restricted to the listed coordinates of `x`.
#[inline]
pub(crate) fn sparse_dot(w: &[f64], x: &[f64], nonzero: &[usize]) -> f64 {
    let mut acc = [0.0f64; 2];
    let pairs = nonzero.len() / 2;
    for p in 0..pairs {
        let (i, j) = (nonzero[2 * p], nonzero[2 * p + 1]);
        acc[0] += w[i] * x[i];
        acc[1] += w[j] * x[j];
    }
    if nonzero.len() % 2 == 1 {
        let k = nonzero[nonzero.len() - 1];
        acc[0] += w[k] * x[k];
    }
    acc[0] + acc[1]
}

/// `y += alpha * x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_sparse_dot_agree() {
        let w: Vec<f64> = (0..11).map(|i| i as f64 * 0.5 - 2.0).collect();
        let x: Vec<f64> = (0..11)
            .map(|i| {
                if i % 3 == 0 {
                    0.0
                } else {
                    1.0 / (i as f64 + 1.0)
                }
            })
            .collect();
        let nz: Vec<usize> = (0..11).filter(|&i| x[i] != 0.0).collect();
        let naive: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((dot(&w, &x) - naive).abs() < 1e-14);
        assert!((sparse_dot(&w, &x, &nz) - naive).abs() < 1e-14);
    }
}
