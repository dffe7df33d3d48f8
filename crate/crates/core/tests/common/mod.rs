//! Brute-force reference implementations written straight from the
//! definitions, sharing no code with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidtok::{DType, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(r: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::new(dims.to_vec(), data, DType::F64).unwrap()
}

/// Small integers, so distances tie often and exercise the tie rules.
pub fn integer_tensor(r: &mut ChaCha8Rng, dims: &[usize], max: i32) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| r.random_range(-max..=max) as f64).collect();
    Tensor::new(dims.to_vec(), data, DType::F64).unwrap()
}

pub struct OracleClusters {
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub centers: Vec<usize>,
    /// Center item index for every item.
    pub owner: Vec<usize>,
    /// One flattened prototype per center, in `centers` order.
    pub prototypes: Vec<Vec<f64>>,
}

/// Density-peaks clustering by exhaustive search. `items` is
/// `[n × rows × d]`, `c` neighbours, `l` requested centers.
pub fn dpc_oracle(items: &Tensor, c: usize, l: usize) -> OracleClusters {
    let n = items.dims()[0];
    let rows = items.dims()[1] as f64;
    let item = |i: usize| items.outer(i);
    let dist = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for (a, b) in item(i).iter().zip(item(j)) {
            s += (a - b) * (a - b);
        }
        s / rows
    };

    let mut rho = Vec::with_capacity(n);
    for i in 0..n {
        if c == 0 {
            rho.push(1.0);
            continue;
        }
        // Repeatedly take the closest unused item, lower index first on ties.
        let mut used = vec![false; n];
        used[i] = true;
        let mut total = 0.0;
        for _ in 0..c {
            let mut best: Option<usize> = None;
            for (j, &u) in used.iter().enumerate() {
                if u {
                    continue;
                }
                match best {
                    None => best = Some(j),
                    Some(b) if dist(i, j) < dist(i, b) => best = Some(j),
                    _ => {}
                }
            }
            let b = best.unwrap();
            used[b] = true;
            total += dist(i, b);
        }
        rho.push((-(total / c as f64)).exp());
    }

    let delta: Vec<f64> = (0..n)
        .map(|i| {
            let denser: Vec<f64> = (0..n).filter(|&j| rho[j] > rho[i]).map(|j| dist(i, j)).collect();
            if denser.is_empty() {
                (0..n).filter(|&j| j != i).map(|j| dist(i, j)).fold(0.0, f64::max)
            } else {
                denser.into_iter().fold(f64::INFINITY, f64::min)
            }
        })
        .collect();

    let gamma: Vec<f64> = (0..n).map(|i| rho[i] * delta[i]).collect();
    let mut centers = Vec::new();
    let mut taken = vec![false; n];
    for _ in 0..l.min(n) {
        let mut best: Option<usize> = None;
        for (j, &tk) in taken.iter().enumerate() {
            if tk {
                continue;
            }
            match best {
                None => best = Some(j),
                Some(b) if gamma[j] > gamma[b] => best = Some(j),
                _ => {}
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        centers.push(b);
    }

    let owner: Vec<usize> = (0..n)
        .map(|i| {
            if centers.contains(&i) {
                return i;
            }
            let mut sorted = centers.clone();
            sorted.sort();
            let mut best = sorted[0];
            for &cc in &sorted[1..] {
                if dist(i, cc) < dist(i, best) {
                    best = cc;
                }
            }
            best
        })
        .collect();

    let width = item(0).len();
    let prototypes = centers
        .iter()
        .map(|&cc| {
            let mut num = vec![0.0; width];
            let mut den = 0.0;
            for i in (0..n).filter(|&i| owner[i] == cc) {
                let w = gamma[i].exp();
                den += w;
                for (acc, v) in num.iter_mut().zip(item(i)) {
                    *acc += w * v;
                }
            }
            num.into_iter().map(|v| v / den).collect()
        })
        .collect();

    OracleClusters { rho, delta, centers, owner, prototypes }
}

/// Total tokens when `fine` frames take the fine path.
pub fn budget_oracle(t: usize, fine: usize, p: usize, i: usize) -> usize {
    fine * (p + i + 2) + (t - fine) * 2
}

/// Ordered Top-K by repeated argmax, ties to the lower index.
pub fn topk_oracle(s: &[f64], k: usize) -> Vec<usize> {
    let mut left: Vec<usize> = (0..s.len()).collect();
    let mut out = Vec::new();
    for _ in 0..k {
        let pos = (0..left.len())
            .fold(0, |b, q| if s[left[q]] > s[left[b]] { q } else { b });
        out.push(left.remove(pos));
    }
    out
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}
