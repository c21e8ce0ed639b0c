//! Dense f64 matrix kernels shared by the tape ops.

/// Rows of `b` processed per k-panel; 64 rows of width ≤512 keep the
/// panel under typical L2 sizes so it is streamed from memory only once.
const K_BLOCK: usize = 64;

/// out += a·b with a: m×k, b: k×n, out: m×n (row-major). The k dimension
/// is blocked so each panel of `b` stays cache-resident while every row
/// of `out` is updated against it; the inner loop streams contiguous
/// rows of `b`.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for k0 in (0..k).step_by(K_BLOCK) {
        let k1 = (k0 + K_BLOCK).min(k);
        for i in 0..m {
            let arow = &a[i * k + k0..i * k + k1];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b[(k0 + kk) * n..(k0 + kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// out += a·bᵀ with a: m×n, b: p×n, out: m×p (row-major). Each entry is a
/// dot product of two contiguous rows; rows of `b` are processed in
/// panels so a panel is read from memory once per panel sweep.
pub fn matmul_abt_acc(a: &[f64], b: &[f64], m: usize, n: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), p * n);
    debug_assert_eq!(out.len(), m * p);
    for p0 in (0..p).step_by(K_BLOCK) {
        let p1 = (p0 + K_BLOCK).min(p);
        for i in 0..m {
            let arow = &a[i * n..(i + 1) * n];
            let orow = &mut out[i * p + p0..i * p + p1];
            for (o, pi) in orow.iter_mut().zip(p0..p1) {
                let brow = &b[pi * n..(pi + 1) * n];
                let mut acc = [0.0f64; 4];
                let (ac, at) = arow.split_at(n - n % 4);
                let (bc, bt) = brow.split_at(n - n % 4);
                for (ax, bx) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
                    acc[0] += ax[0] * bx[0];
                    acc[1] += ax[1] * bx[1];
                    acc[2] += ax[2] * bx[2];
                    acc[3] += ax[3] * bx[3];
                }
                let tail: f64 = at.iter().zip(bt).map(|(&x, &y)| x * y).sum();
                *o += acc[0] + acc[1] + acc[2] + acc[3] + tail;
            }
        }
    }
}

/// out += aᵀ·g with a: m×k, g: m×n, out: k×n (row-major). Columns of `a`
/// become rows of the result; the accumulation runs as rank-1 updates
/// over panels of `out` so each panel stays cache-resident.
pub fn matmul_atb_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for k0 in (0..k).step_by(K_BLOCK) {
        let k1 = (k0 + K_BLOCK).min(k);
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in k0..k1 {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += av * gv;
                }
            }
        }
    }
}

/// Row-major transpose: a is m×n, result n×m.
pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}
