//! One-sided Jacobi SVD used only as a test oracle. Works on plain slices so it
//! shares no code with the library under test.
#![allow(dead_code)]

/// Singular values of a row-major `rows × cols` matrix, descending.
pub fn singular_values(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    assert_eq!(data.len(), rows * cols);
    // Work on columns of the taller orientation.
    let (n, mut a) = if rows >= cols {
        let cols_vec: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| data[i * cols + j]).collect())
            .collect();
        (cols, cols_vec)
    } else {
        let cols_vec: Vec<Vec<f64>> = (0..rows)
            .map(|i| data[i * cols..(i + 1) * cols].to_vec())
            .collect();
        (rows, cols_vec)
    };
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = a.split_at_mut(q);
                let ap = &mut left[p];
                let aq = &mut right[0];
                for (x, y) in ap.iter_mut().zip(aq.iter_mut()) {
                    let xp = *x;
                    let yq = *y;
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Eigenvalues of a symmetric positive semidefinite matrix, descending.
pub fn psd_eigenvalues(n: usize, data: &[f64]) -> Vec<f64> {
    singular_values(n, n, data)
}

#[test]
fn oracle_diag() {
    let sv = singular_values(3, 2, &[3.0, 0.0, 0.0, -2.0, 0.0, 0.0]);
    assert!((sv[0] - 3.0).abs() < 1e-15 && (sv[1] - 2.0).abs() < 1e-15);
}

#[test]
fn oracle_rotation_invariant() {
    let (c, s) = (0.6f64, 0.8f64);
    // [[c,-s],[s,c]] · diag(5,1)
    let sv = singular_values(2, 2, &[5.0 * c, -s, 5.0 * s, c]);
    assert!((sv[0] - 5.0).abs() < 1e-14 && (sv[1] - 1.0).abs() < 1e-14);
}
