//! Small dense linear algebra for the Newton and refinement steps.
//!
//! Problems here are desk-scale (tens of variables), so a plain LDLᵀ
//! factorization and a textbook active-set NNLS are simpler and easier to
//! keep deterministic than a general linear-algebra dependency would be.

use crate::scalar::Real;

/// Solve `A x = b` for symmetric positive-definite `A` (row-major `n × n`),
/// with `ridge` added to the diagonal. Returns `None` when a pivot falls
/// below the breakdown threshold.
pub fn solve_spd<T: Real>(n: usize, a: &[T], b: &[T], ridge: T) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut l = vec![T::zero(); n * n];
    let mut d = vec![T::zero(); n];
    let mut diag_max = T::zero();
    for i in 0..n {
        diag_max = diag_max.max((a[i * n + i] + ridge).abs());
    }
    let pivot_floor = diag_max.max(T::one()) * T::epsilon() * T::of(1e-4);

    for j in 0..n {
        let mut dj = a[j * n + j] + ridge;
        for k in 0..j {
            dj -= l[j * n + k] * l[j * n + k] * d[k];
        }
        if !(dj > pivot_floor) || !dj.is_finite() {
            return None;
        }
        d[j] = dj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k] * d[k];
            }
            l[i * n + j] = v / dj;
        }
    }

    // L z = b
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            let xk = x[k];
            x[i] -= lik * xk;
        }
    }
    // D y = z
    for i in 0..n {
        x[i] /= d[i];
    }
    // Lᵀ x = y
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[k * n + i];
            let xk = x[k];
            x[i] -= lki * xk;
        }
    }
    Some(x)
}

/// Non-negative least squares: minimize `‖A w − b‖₂` over `w ≥ 0`.
///
/// Lawson-Hanson active-set iteration; `a` is row-major `m × n`. Finite and
/// deterministic. Intended for the dual-refinement fit, where `m` and `n`
/// are both small.
pub fn nnls<T: Real>(m: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), m);
    let mut w = vec![T::zero(); n];
    if n == 0 {
        return w;
    }
    let mut passive = vec![false; n];

    let col_dot = |j: usize, v: &[T]| -> T { (0..m).map(|i| a[i * n + j] * v[i]).sum() };
    let residual = |w: &[T]| -> Vec<T> {
        (0..m)
            .map(|i| {
                let mut r = b[i];
                for j in 0..n {
                    r -= a[i * n + j] * w[j];
                }
                r
            })
            .collect()
    };

    let scale: T = (0..n)
        .map(|j| col_dot(j, b).abs())
        .fold(T::zero(), T::max)
        .max(T::one());
    let tol = scale * T::epsilon() * T::of(1e3);

    // Unconstrained LS on the passive set via ridge-stabilized normal equations.
    let solve_passive = |passive: &[bool]| -> Option<Vec<T>> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let p = idx.len();
        if p == 0 {
            return Some(vec![T::zero(); n]);
        }
        let mut gram = vec![T::zero(); p * p];
        let mut rhs = vec![T::zero(); p];
        for (pi, &ji) in idx.iter().enumerate() {
            for (pj, &jj) in idx.iter().enumerate().skip(pi) {
                let dot: T = (0..m).map(|r| a[r * n + ji] * a[r * n + jj]).sum();
                gram[pi * p + pj] = dot;
                gram[pj * p + pi] = dot;
            }
            rhs[pi] = col_dot(ji, b);
        }
        let trace: T = (0..p).map(|i| gram[i * p + i]).sum();
        let ridge = trace.max(T::one()) * T::epsilon() * T::of(16.0);
        let sol = solve_spd(p, &gram, &rhs, ridge)?;
        let mut full = vec![T::zero(); n];
        for (pi, &j) in idx.iter().enumerate() {
            full[j] = sol[pi];
        }
        Some(full)
    };

    for _outer in 0..(3 * n + 10) {
        let r = residual(&w);
        // most-violated optimality condition among active constraints
        let mut best = tol;
        let mut best_j = None;
        for j in 0..n {
            if !passive[j] {
                let g = col_dot(j, &r);
                if g > best {
                    best = g;
                    best_j = Some(j);
                }
            }
        }
        let Some(j) = best_j else { break };
        passive[j] = true;

        loop {
            let Some(candidate) = solve_passive(&passive) else {
                // singular subproblem: drop the newest column and stop growing
                passive[j] = false;
                return w;
            };
            let mut alpha = T::one();
            let mut blocker = None;
            for i in 0..n {
                if passive[i] && candidate[i] <= T::zero() {
                    let denom = w[i] - candidate[i];
                    if denom > T::zero() {
                        let step = w[i] / denom;
                        if step < alpha {
                            alpha = step;
                            blocker = Some(i);
                        }
                    } else {
                        alpha = T::zero();
                        blocker = Some(i);
                    }
                }
            }
            for i in 0..n {
                if passive[i] {
                    w[i] = w[i] + alpha * (candidate[i] - w[i]);
                }
            }
            match blocker {
                None => break,
                Some(i) => {
                    w[i] = T::zero();
                    passive[i] = false;
                    if !passive.iter().any(|&p| p) {
                        break;
                    }
                }
            }
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spd_solve_identity() {
        let a = vec![1.0, 0.0, 0.0, 1.0];
        let x = solve_spd(2, &a, &[3.0, -4.0], 0.0).unwrap();
        assert_eq!(x, vec![3.0, -4.0]);
    }

    #[test]
    fn spd_solve_known_system() {
        // A = [[4,1],[1,3]], b = [1,2] → x = [1/11, 7/11]
        let a = vec![4.0, 1.0, 1.0, 3.0];
        let x = solve_spd(2, &a, &[1.0, 2.0], 0.0).unwrap();
        assert_relative_eq!(x[0], 1.0 / 11.0, max_relative = 1e-14);
        assert_relative_eq!(x[1], 7.0 / 11.0, max_relative = 1e-14);
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = vec![1.0, 0.0, 0.0, -1.0];
        assert!(solve_spd(2, &a, &[1.0, 1.0], 0.0).is_none());
    }

    #[test]
    fn nnls_clamps_negative_component() {
        // A = I, b = (1, -1): w = (1, 0)
        let a = vec![1.0, 0.0, 0.0, 1.0];
        let w = nnls(2, 2, &a, &[1.0, -1.0]);
        assert_relative_eq!(w[0], 1.0, max_relative = 1e-10);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn nnls_recovers_interior_solution() {
        // overdetermined consistent system with positive solution
        let a = vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let b = [3.0, 1.0, 2.0];
        let w = nnls(3, 2, &a, &b);
        assert_relative_eq!(w[0], 1.0, max_relative = 1e-8);
        assert_relative_eq!(w[1], 2.0, max_relative = 1e-8);
    }

    #[test]
    fn nnls_matches_tiny_grid_search() {
        let a = vec![2.0, 1.0, -1.0, 1.0, 0.5, 3.0];
        let b = [1.0, 0.5, -0.2];
        let w = nnls(3, 2, &a, &b);
        let obj = |w0: f64, w1: f64| {
            let r0 = 2.0 * w0 + 1.0 * w1 - 1.0;
            let r1 = -w0 + w1 - 0.5;
            let r2 = 0.5 * w0 + 3.0 * w1 + 0.2;
            r0 * r0 + r1 * r1 + r2 * r2
        };
        let best = obj(w[0], w[1]);
        let mut grid_best = f64::INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                grid_best = grid_best.min(obj(i as f64 * 0.005, j as f64 * 0.005));
            }
        }
        assert!(best <= grid_best + 1e-6, "nnls {best} vs grid {grid_best}");
    }
}
