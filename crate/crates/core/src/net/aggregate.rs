use super::{NetError, Statistic};

/// Per-patch features, one row of K values per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlob {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureBlob {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, NetError> {
        let cols = rows.first().map(Vec::len).ok_or(NetError::EmptyBlob)?;
        if cols == 0 {
            return Err(NetError::EmptyBlob);
        }
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(NetError::ShapeMismatch(format!("blob row of {} values, expected {cols}", r.len())));
        }
        let n = rows.len();
        Ok(Self { rows: n, cols, data: rows.into_iter().flatten().collect() })
    }

    /// Number of patches M.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Feature dimension K.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    fn at(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.cols + k]
    }
}

/// Where each aggregated value came from, for routing gradients back.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Route {
    /// Value copied from one row.
    Pick(usize),
    /// Average of two rows (even-M median).
    Pair(usize, usize),
    /// Mean over all rows.
    All,
}

/// Applies each statistic to every column T_k and concatenates the results,
/// statistic-major.
pub fn stats_aggregate(blob: &FeatureBlob, stats: &[Statistic]) -> Result<Vec<f64>, NetError> {
    Ok(aggregate_with_routes(blob, stats)?.0)
}

pub(crate) fn aggregate_with_routes(
    blob: &FeatureBlob,
    stats: &[Statistic],
) -> Result<(Vec<f64>, Vec<Route>), NetError> {
    if blob.rows == 0 {
        return Err(NetError::EmptyBlob);
    }
    let (m, k) = (blob.rows, blob.cols);
    let mut values = Vec::with_capacity(stats.len() * k);
    let mut routes = Vec::with_capacity(stats.len() * k);
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for stat in stats {
        for col in 0..k {
            match stat {
                Statistic::Max | Statistic::Min => {
                    let better = |a: f64, b: f64| if *stat == Statistic::Max { a > b } else { a < b };
                    let mut best = 0;
                    for i in 1..m {
                        if better(blob.at(i, col), blob.at(best, col)) {
                            best = i;
                        }
                    }
                    values.push(blob.at(best, col));
                    routes.push(Route::Pick(best));
                }
                Statistic::Mean => {
                    let sum: f64 = (0..m).map(|i| blob.at(i, col)).sum();
                    values.push(sum / m as f64);
                    routes.push(Route::All);
                }
                Statistic::Median => {
                    order.clear();
                    order.extend(0..m);
                    order.sort_by(|&a, &b| blob.at(a, col).total_cmp(&blob.at(b, col)).then(a.cmp(&b)));
                    if m % 2 == 1 {
                        let i = order[m / 2];
                        values.push(blob.at(i, col));
                        routes.push(Route::Pick(i));
                    } else {
                        let (a, b) = (order[m / 2 - 1], order[m / 2]);
                        values.push(0.5 * (blob.at(a, col) + blob.at(b, col)));
                        routes.push(Route::Pair(a, b));
                    }
                }
            }
        }
    }
    Ok((values, routes))
}

/// Scatters `grad` (one entry per aggregated value) back onto the blob rows.
pub(crate) fn aggregate_backward(routes: &[Route], grad: &[f64], m: usize, k: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; k]; m];
    for (idx, (route, g)) in routes.iter().zip(grad).enumerate() {
        let col = idx % k;
        match *route {
            Route::Pick(i) => out[i][col] += g,
            Route::Pair(a, b) => {
                out[a][col] += 0.5 * g;
                out[b][col] += 0.5 * g;
            }
            Route::All => {
                let share = g / m as f64;
                for row in out.iter_mut() {
                    row[col] += share;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Statistic::*;

    fn blob(rows: &[&[f64]]) -> FeatureBlob {
        FeatureBlob::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn max_mean_example() {
        let b = blob(&[&[1.0, 2.0], &[3.0, 0.0], &[2.0, 2.0]]);
        let out = stats_aggregate(&b, &[Max, Mean]).unwrap();
        assert_eq!(out, vec![3.0, 2.0, 2.0, 4.0 / 3.0]);
    }

    #[test]
    fn identical_rows() {
        let v = [0.25, -1.5, 7.0];
        let b = blob(&[&v, &v, &v, &v]);
        let out = stats_aggregate(&b, &[Max, Mean, Min, Median]).unwrap();
        for s in 0..4 {
            assert_eq!(&out[s * 3..s * 3 + 3], &v);
        }
    }

    #[test]
    fn median_even_and_odd() {
        let b = blob(&[&[4.0], &[1.0], &[3.0], &[10.0]]);
        assert_eq!(stats_aggregate(&b, &[Median]).unwrap(), vec![3.5]);
        let b = blob(&[&[4.0], &[1.0], &[3.0]]);
        assert_eq!(stats_aggregate(&b, &[Median]).unwrap(), vec![3.0]);
    }

    #[test]
    fn empty_and_ragged_blobs_rejected() {
        assert!(matches!(FeatureBlob::new(vec![]), Err(NetError::EmptyBlob)));
        assert!(matches!(FeatureBlob::new(vec![vec![1.0], vec![]]), Err(NetError::ShapeMismatch(_))));
    }

    #[test]
    fn backward_routes_gradient() {
        let b = blob(&[&[1.0, 5.0], &[3.0, 0.0]]);
        let (_, routes) = aggregate_with_routes(&b, &[Max, Mean]).unwrap();
        let g = aggregate_backward(&routes, &[1.0, 2.0, 4.0, 8.0], 2, 2);
        assert_eq!(g, vec![vec![2.0, 2.0 + 4.0], vec![1.0 + 2.0, 4.0]]);
    }
}
