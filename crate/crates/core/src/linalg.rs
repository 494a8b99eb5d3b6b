use nalgebra::DMatrix;

/// Smallest eigenvalue of a symmetric matrix given as rows.
pub fn min_eigenvalue(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    let mat = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[i][j] + m[j][i]));
    mat.symmetric_eigenvalues().min()
}

pub fn is_symmetric(m: &[Vec<f64>], tol: f64) -> bool {
    m.iter()
        .enumerate()
        .all(|(i, row)| row.len() == m.len() && row.iter().enumerate().all(|(j, x)| (x - m[j][i]).abs() <= tol))
}
