use crate::error::{Error, Result};

use super::tensor::Tensor;

/// `a · b` for `[m×k]·[k×n]`, accumulated in row-major order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2)?;
    b.expect_rank(2)?;
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (k2, n) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dims differ: {:?} x {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(
        vec![m, n],
        out,
        a.dtype().promote(b.dtype()),
    ))
}

/// `a · bᵀ` for `[m×k]·[n×k]ᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2)?;
    b.expect_rank(2)?;
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (n, k2) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_nt inner dims differ: {:?} x {:?}ᵀ",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out[i * n + j] = dot(ar, b.row(j));
        }
    }
    Ok(Tensor::from_parts(
        vec![m, n],
        out,
        a.dtype().promote(b.dtype()),
    ))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    a.expect_rank(2)?;
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out, a.dtype()))
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(2)?;
    let (m, n) = (x.dims()[0], x.dims()[1]);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = x.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= sum;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out, x.dtype()))
}

/// Average-pool a `[N×d]` patch map laid out as a `grid × grid` raster into
/// `(grid/block)²` rows, one per `block × block` window, in row-major order.
pub fn block_pool(frame: &Tensor, grid: usize, block: usize) -> Result<Tensor> {
    frame.expect_rank(2)?;
    let (n, d) = (frame.dims()[0], frame.dims()[1]);
    if grid == 0 || grid * grid != n {
        return Err(Error::Config(format!(
            "{n} patch rows do not form a {grid}x{grid} grid"
        )));
    }
    if block == 0 || !grid.is_multiple_of(block) {
        return Err(Error::Config(format!(
            "grid {grid} is not divisible by pool block {block}"
        )));
    }
    let out_side = grid / block;
    let scale = 1.0 / (block * block) as f64;
    let mut out = vec![0.0; out_side * out_side * d];
    for by in 0..out_side {
        for bx in 0..out_side {
            let o = &mut out[(by * out_side + bx) * d..(by * out_side + bx + 1) * d];
            for y in 0..block {
                for x in 0..block {
                    let src = (by * block + y) * grid + bx * block + x;
                    for (acc, &v) in o.iter_mut().zip(frame.row(src)) {
                        *acc += v;
                    }
                }
            }
            for v in o.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(Tensor::from_parts(
        vec![out_side * out_side, d],
        out,
        frame.dtype(),
    ))
}

/// Mean over rows of a 2-D tensor.
pub fn mean_rows(x: &Tensor) -> Result<Vec<f64>> {
    x.expect_rank(2)?;
    let (m, n) = (x.dims()[0], x.dims()[1]);
    let mut acc = vec![0.0; n];
    for i in 0..m {
        for (a, &v) in acc.iter_mut().zip(x.row(i)) {
            *a += v;
        }
    }
    let inv = 1.0 / m as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Index of the row with the largest L2 norm; ties go to the lowest index.
pub fn max_norm_row(x: &Tensor) -> Result<usize> {
    x.expect_rank(2)?;
    let mut best = 0;
    let mut best_norm = f64::NEG_INFINITY;
    for i in 0..x.dims()[0] {
        let n = dot(x.row(i), x.row(i));
        if n > best_norm {
            best = i;
            best_norm = n;
        }
    }
    Ok(best)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Cosine similarity, `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}
