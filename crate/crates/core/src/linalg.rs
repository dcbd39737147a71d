//! Small dense helpers shared by the chain and MDP code. Matrices are row-major `Vec<f64>`.

use crate::error::{Error, Result};

/// Solves `a · x = b` for `m` right-hand sides by Gaussian elimination with partial pivoting.
///
/// `a` is `n × n`, `b` is `n × m`, both row-major. `order`, when given, is a permutation of the
/// unknowns: column `order[k]` of `a` is eliminated at step `k`. The returned solution is in the
/// original unknown order regardless.
pub fn solve_dense(
    a: &[f64],
    n: usize,
    b: &[f64],
    m: usize,
    order: Option<&[usize]>,
) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: a.len() });
    }
    if b.len() != n * m {
        return Err(Error::DimensionMismatch { expected: n * m, got: b.len() });
    }
    let perm: Vec<usize> = match order {
        Some(o) => {
            check_permutation(o, n)?;
            o.to_vec()
        }
        None => (0..n).collect(),
    };

    let scale = a.iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut mat: Vec<f64> = Vec::with_capacity(n * n);
    for r in 0..n {
        for &c in &perm {
            mat.push(a[r * n + c]);
        }
    }
    let mut rhs = b.to_vec();

    for k in 0..n {
        let (piv_row, piv_val) = (k..n)
            .map(|r| (r, mat[r * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_val <= 1e-13 * scale {
            return Err(Error::SingularSystem { column: perm[k], pivot: piv_val });
        }
        if piv_row != k {
            for c in 0..n {
                mat.swap(k * n + c, piv_row * n + c);
            }
            for c in 0..m {
                rhs.swap(k * m + c, piv_row * m + c);
            }
        }
        let p = mat[k * n + k];
        for r in (k + 1)..n {
            let factor = mat[r * n + k] / p;
            if factor == 0.0 {
                continue;
            }
            mat[r * n + k] = 0.0;
            for c in (k + 1)..n {
                mat[r * n + c] -= factor * mat[k * n + c];
            }
            for c in 0..m {
                rhs[r * m + c] -= factor * rhs[k * m + c];
            }
        }
    }

    let mut xp = vec![0.0; n * m];
    for k in (0..n).rev() {
        for c in 0..m {
            let mut acc = rhs[k * m + c];
            for j in (k + 1)..n {
                acc -= mat[k * n + j] * xp[j * m + c];
            }
            xp[k * m + c] = acc / mat[k * n + k];
        }
    }

    let mut x = vec![0.0; n * m];
    for (k, &orig) in perm.iter().enumerate() {
        x[orig * m..(orig + 1) * m].copy_from_slice(&xp[k * m..(k + 1) * m]);
    }
    Ok(x)
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: order.len() });
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return Err(Error::param("order", "not a permutation"));
        }
        seen[i] = true;
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // [2 1; 1 3] x = [3; 5] -> x = [0.8, 1.4]
        let x = solve_dense(&[2.0, 1.0, 1.0, 3.0], 2, &[3.0, 5.0], 1, None).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15);
        assert!((x[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn ordering_does_not_change_solution() {
        let a = [4.0, -1.0, 0.5, 2.0, 5.0, 1.0, -1.0, 0.0, 3.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x1 = solve_dense(&a, 3, &b, 2, None).unwrap();
        let x2 = solve_dense(&a, 3, &b, 2, Some(&[2, 0, 1])).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_singular() {
        let err = solve_dense(&[1.0, 2.0, 2.0, 4.0], 2, &[1.0, 2.0], 1, None).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { .. }));
    }

    #[test]
    fn rejects_bad_permutation() {
        assert!(solve_dense(&[1.0, 0.0, 0.0, 1.0], 2, &[1.0, 1.0], 1, Some(&[0, 0])).is_err());
    }
}
