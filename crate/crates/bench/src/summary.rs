//! Error statistics of repeated estimates against a known truth.

use flowis::stats::{mean, sample_variance};

use crate::emit::Cell;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub truth: f64,
    pub estimates: Vec<f64>,
    pub n_failed: usize,
    pub first_failure: Option<String>,
}

impl ErrorSummary {
    pub fn new(truth: f64) -> Self {
        ErrorSummary {
            truth,
            estimates: Vec::new(),
            n_failed: 0,
            first_failure: None,
        }
    }

    pub fn push(&mut self, estimate: f64) {
        self.estimates.push(estimate);
    }

    pub fn fail(&mut self, message: String) {
        self.n_failed += 1;
        self.first_failure.get_or_insert(message);
    }

    fn ok(&self) -> bool {
        !self.estimates.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        self.ok().then(|| mean(&self.estimates))
    }

    pub fn bias(&self) -> Option<f64> {
        self.mean().map(|m| m - self.truth)
    }

    pub fn std(&self) -> Option<f64> {
        self.ok().then(|| sample_variance(&self.estimates).sqrt())
    }

    pub fn rmse(&self) -> Option<f64> {
        self.ok().then(|| {
            let mse = self
                .estimates
                .iter()
                .map(|e| (e - self.truth).powi(2))
                .sum::<f64>()
                / self.estimates.len() as f64;
            mse.sqrt()
        })
    }

    /// `true_value, mean_estimate, bias, std, rmse`.
    pub fn stat_cells(&self) -> Vec<Cell> {
        vec![
            Cell::Real(self.truth),
            Cell::real_opt(self.mean()),
            Cell::real_opt(self.bias()),
            Cell::real_opt(self.std()),
            Cell::real_opt(self.rmse()),
        ]
    }

    /// `n_ok, n_failed, failure`.
    pub fn status_cells(&self) -> Vec<Cell> {
        vec![
            Cell::count(self.estimates.len()),
            Cell::count(self.n_failed),
            self.first_failure.clone().map_or(Cell::Missing, Cell::Text),
        ]
    }

    pub fn row(&self, name: &str, mean_ess: Option<f64>) -> Vec<Cell> {
        let mut row = vec![Cell::text(name)];
        row.extend(self.stat_cells());
        row.push(Cell::real_opt(mean_ess));
        row.extend(self.status_cells());
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_combines_bias_and_spread() {
        let mut s = ErrorSummary::new(1.0);
        for e in [0.0, 2.0, 1.0, 3.0] {
            s.push(e);
        }
        assert_eq!(s.bias(), Some(0.5));
        let rmse = s.rmse().unwrap();
        assert!((rmse - (6.0f64 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn failures_keep_first_message() {
        let mut s = ErrorSummary::new(0.0);
        s.fail("a".into());
        s.fail("b".into());
        assert_eq!(s.first_failure.as_deref(), Some("a"));
        assert_eq!(s.rmse(), None);
        assert_eq!(s.status_cells()[1], Cell::Int(2));
    }
}
