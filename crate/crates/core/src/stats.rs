//! Small order-statistic helpers shared by the summary tables.

/// Nearest-rank quantile of already sorted data: the smallest value whose
/// empirical CDF reaches `level`. Commutes with monotone transforms.
pub(crate) fn sorted_quantile(sorted: &[f64], level: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (level * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub(crate) fn sort_values(values: &mut [f64]) {
    values.sort_by(|a, b| a.total_cmp(b));
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean plus 2.5 / 50 / 97.5 % nearest-rank quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub lo95: f64,
    pub median: f64,
    pub hi95: f64,
}

impl Summary {
    pub(crate) fn from_values(mut values: Vec<f64>) -> Self {
        let mean = mean(&values);
        sort_values(&mut values);
        Summary {
            mean,
            lo95: sorted_quantile(&values, 0.025),
            median: sorted_quantile(&values, 0.5),
            hi95: sorted_quantile(&values, 0.975),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(sorted_quantile(&v, 0.0), 1.0);
        assert_eq!(sorted_quantile(&v, 0.25), 1.0);
        assert_eq!(sorted_quantile(&v, 0.26), 2.0);
        assert_eq!(sorted_quantile(&v, 0.5), 2.0);
        assert_eq!(sorted_quantile(&v, 1.0), 4.0);
    }
}
