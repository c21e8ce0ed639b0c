//! Scalar Cox–de Boor B-spline evaluation and its first derivative.
//!
//! For a knot vector t of length m and order (degree) k, there are
//! m − k − 1 basis functions B_{i,k}.

/// Number of basis functions for the given knots and order.
pub fn basis_count(knots: &[f64], order: usize) -> usize {
    knots.len().saturating_sub(order + 1)
}

/// Clamp x into the half-open support [t_k, t_{m-k-1}) so the boundary
/// point still lands in the last interval.
pub fn clamp_to_domain(x: f64, knots: &[f64], order: usize) -> f64 {
    let lo = knots[order];
    let hi = knots[knots.len() - order - 1];
    let eps = (hi - lo) * 1e-12;
    x.clamp(lo, hi - eps)
}

/// All basis values B_{i,order}(x), i = 0..basis_count.
pub fn eval_basis(x: f64, knots: &[f64], order: usize) -> Vec<f64> {
    let n = basis_count(knots, order);
    let x = clamp_to_domain(x, knots, order);
    // degree 0: interval indicators over all m-1 spans
    let mut b: Vec<f64> = (0..knots.len() - 1)
        .map(|i| {
            if knots[i] <= x && x < knots[i + 1] {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for k in 1..=order {
        let rows = knots.len() - 1 - k;
        for i in 0..rows {
            let d1 = knots[i + k] - knots[i];
            let d2 = knots[i + k + 1] - knots[i + 1];
            let a = if d1 > 0.0 {
                (x - knots[i]) / d1 * b[i]
            } else {
                0.0
            };
            let c = if d2 > 0.0 {
                (knots[i + k + 1] - x) / d2 * b[i + 1]
            } else {
                0.0
            };
            b[i] = a + c;
        }
        b.truncate(rows);
    }
    b.truncate(n);
    b
}

/// All derivatives B'_{i,order}(x) using
/// B'_{i,k} = k·(B_{i,k−1}/(t_{i+k}−t_i) − B_{i+1,k−1}/(t_{i+k+1}−t_{i+1})).
pub fn eval_basis_deriv(x: f64, knots: &[f64], order: usize) -> Vec<f64> {
    let n = basis_count(knots, order);
    if order == 0 {
        return vec![0.0; n];
    }
    let lower = eval_basis(x, knots, order - 1);
    let k = order as f64;
    (0..n)
        .map(|i| {
            let d1 = knots[i + order] - knots[i];
            let d2 = knots[i + order + 1] - knots[i + 1];
            let a = if d1 > 0.0 { lower[i] / d1 } else { 0.0 };
            let b = if d2 > 0.0 { lower[i + 1] / d2 } else { 0.0 };
            k * (a - b)
        })
        .collect()
}

/// Uniform knot vector on [lo, hi] with `grid` interior intervals and
/// `order` padding knots extended past each end (KAN convention).
pub fn uniform_knots(lo: f64, hi: f64, grid: usize, order: usize) -> Vec<f64> {
    let h = (hi - lo) / grid as f64;
    let total = grid + 2 * order + 1;
    (0..total)
        .map(|i| lo + h * (i as f64 - order as f64))
        .collect()
}
