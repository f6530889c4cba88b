//! Lawson–Hanson active-set NNLS working on the normal equations `G x = r`,
//! `G = AᵀA`, `r = Aᵀb`.

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Solver output for one right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution<T> {
    pub x: Vec<T>,
    /// Active-set additions plus removals performed.
    pub swaps: usize,
}

/// Dense Cholesky factor `L` (row-major lower triangle) of an SPD matrix.
fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve<T: Real>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s = s - l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Unconstrained solve restricted to `set`, with one refinement step.
fn solve_subset<T: Real>(gram: &[T], rhs: &[T], n: usize, set: &[usize]) -> Option<Vec<T>> {
    let m = set.len();
    let mut sub = vec![T::zero(); m * m];
    for (a, &i) in set.iter().enumerate() {
        for (b, &j) in set.iter().enumerate() {
            sub[a * m + b] = gram[i * n + j];
        }
    }
    let l = cholesky(&sub, m)?;
    let mut z: Vec<T> = set.iter().map(|&i| rhs[i]).collect();
    cholesky_solve(&l, m, &mut z);
    let mut r: Vec<T> = (0..m)
        .map(|a| {
            let gz = (0..m).fold(T::zero(), |s, b| s + sub[a * m + b] * z[b]);
            rhs[set[a]] - gz
        })
        .collect();
    cholesky_solve(&l, m, &mut r);
    for (zi, ri) in z.iter_mut().zip(&r) {
        *zi = *zi + *ri;
    }
    if z.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(z)
}

/// `w = r − G x`, the negative gradient of `½‖Ax − b‖²`.
fn dual<T: Real>(gram: &[T], rhs: &[T], x: &[T], n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let row = &gram[i * n..(i + 1) * n];
            rhs[i] - row.iter().zip(x).fold(T::zero(), |s, (&g, &xj)| s + g * xj)
        })
        .collect()
}

/// `xᵀGx − 2xᵀr + ‖b‖²`, i.e. `‖Ax − b‖²` given `target_sq = ‖b‖²`.
pub fn objective<T: Real>(gram: &[T], rhs: &[T], target_sq: T, x: &[T]) -> T {
    let n = x.len();
    let mut quad = T::zero();
    for i in 0..n {
        if x[i] == T::zero() {
            continue;
        }
        let row = &gram[i * n..(i + 1) * n];
        quad = quad + x[i] * row.iter().zip(x).fold(T::zero(), |s, (&g, &xj)| s + g * xj);
    }
    let lin = x.iter().zip(rhs).fold(T::zero(), |s, (&a, &b)| s + a * b);
    quad - T::lit(2.0) * lin + target_sq
}

/// Minimizes `‖Ax − b‖²` over `x ≥ 0` given `G = AᵀA` (row-major `n × n`) and `r = Aᵀb`.
///
/// Stops once every inactive coordinate has dual value at most
/// `0.01·sqrt(ε)·‖r‖`. Gives up after `max_swaps` active-set changes.
pub fn nnls_normal<T: Real>(gram: &[T], rhs: &[T], max_swaps: usize) -> Result<NnlsSolution<T>> {
    let n = rhs.len();
    if gram.len() != n * n {
        return Err(invalid(format!("gram has {} entries, expected {}", gram.len(), n * n)));
    }
    if gram.iter().chain(rhs).any(|v| !v.is_finite()) {
        return Err(invalid("normal system contains non-finite values"));
    }
    let rhs_norm = rhs.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
    let mut x = vec![T::zero(); n];
    if rhs_norm == T::zero() {
        return Ok(NnlsSolution { x, swaps: 0 });
    }
    let tol = T::lit(0.01) * T::epsilon().sqrt() * rhs_norm;

    let mut passive = vec![false; n];
    let mut rejected = vec![false; n];
    let mut swaps = 0;

    loop {
        let w = dual(gram, rhs, &x, n);
        let entering = (0..n)
            .filter(|&j| !passive[j] && !rejected[j] && w[j] > tol)
            .max_by(|&a, &b| {
                w[a].partial_cmp(&w[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            });
        let Some(t) = entering else {
            break;
        };
        if swaps >= max_swaps {
            return Err(non_convergence(gram, rhs, &x, swaps));
        }
        passive[t] = true;
        swaps += 1;
        let x_before = x.clone();
        let passive_before = passive.clone();

        let mut first = true;
        loop {
            let set: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let Some(z) = solve_subset(gram, rhs, n, &set) else {
                // Column `t` is numerically dependent on the passive set.
                passive.copy_from_slice(&passive_before);
                passive[t] = false;
                rejected[t] = true;
                x.copy_from_slice(&x_before);
                break;
            };
            if z.iter().all(|&v| v > T::zero()) {
                for v in x.iter_mut() {
                    *v = T::zero();
                }
                for (&i, &zi) in set.iter().zip(&z) {
                    x[i] = zi;
                }
                rejected.iter_mut().for_each(|r| *r = false);
                break;
            }
            if first {
                if let Some(pos) = set.iter().position(|&i| i == t) {
                    if z[pos] <= T::zero() {
                        // In exact arithmetic w[t] > 0 forces z[t] > 0; round-off says otherwise.
                        passive[t] = false;
                        rejected[t] = true;
                        break;
                    }
                }
            }
            first = false;
            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = T::one();
            let mut blocking = None;
            for (&i, &zi) in set.iter().zip(&z) {
                if zi <= T::zero() {
                    let a = x[i] / (x[i] - zi);
                    if blocking.is_none() || a < alpha {
                        alpha = a;
                        blocking = Some(i);
                    }
                }
            }
            for (&i, &zi) in set.iter().zip(&z) {
                x[i] = x[i] + alpha * (zi - x[i]);
            }
            for &i in &set {
                if Some(i) == blocking || x[i] <= T::zero() {
                    x[i] = T::zero();
                    passive[i] = false;
                    swaps += 1;
                }
            }
            if swaps > max_swaps {
                return Err(non_convergence(gram, rhs, &x, swaps));
            }
        }
    }
    Ok(NnlsSolution { x, swaps })
}

fn non_convergence<T: Real>(gram: &[T], rhs: &[T], x: &[T], swaps: usize) -> Error {
    let w = dual(gram, rhs, x, rhs.len());
    let residual = w.iter().fold(0.0, |s, v| s + v.to_f64_lossy().powi(2)).sqrt();
    Error::NonConvergence {
        iterations: swaps,
        residual,
        best: x.iter().map(|v| v.to_f64_lossy()).collect(),
    }
}
