use ndarray::{Array2, Axis};

/// Canonical representative of the additive gauge class `{C + a 1^T + 1 b^T}`:
/// double-centre `C`, then add `1/n` so that every row sums to one.
///
/// Two costs with the same entropic plans (fully positive marginals) map to
/// the same matrix. Normalising row sums alone is not enough, as it leaves a
/// zero-sum column shift free.
pub fn gauge_normalize(cost: &Array2<f64>) -> Array2<f64> {
    let (m, n) = cost.dim();
    let row_mean = cost.mean_axis(Axis(1)).expect("non-empty");
    let col_mean = cost.mean_axis(Axis(0)).expect("non-empty");
    let grand = row_mean.sum() / m as f64;
    Array2::from_shape_fn((m, n), |(i, j)| {
        cost[[i, j]] - row_mean[i] - col_mean[j] + grand + 1.0 / n as f64
    })
}

/// Largest entrywise gap between the gauge-normalised forms of two costs.
pub fn gauge_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (na, nb) = (gauge_normalize(a), gauge_normalize(b));
    na.iter()
        .zip(nb.iter())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}
