use nalgebra::DMatrix;

/// Central-difference Jacobian: entry `(r, c)` is
/// `(f(x + h e_c)_r - f(x - h e_c)_r) / 2h`.
pub fn fd_jacobian<F>(f: F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut probe = x.to_vec();
    let mut columns = Vec::with_capacity(x.len());
    let mut rows = 0;
    for c in 0..x.len() {
        probe[c] = x[c] + h;
        let plus = f(&probe);
        probe[c] = x[c] - h;
        let minus = f(&probe);
        probe[c] = x[c];
        rows = plus.len();
        columns.push(
            plus.iter()
                .zip(&minus)
                .map(|(p, m)| (p - m) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    DMatrix::from_fn(rows, x.len(), |r, c| columns[c][r])
}
