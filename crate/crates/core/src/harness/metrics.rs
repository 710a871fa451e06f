use serde::{Deserialize, Serialize};

/// Binary classification summary; "high" is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f_measure: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_measure = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { accuracy: ratio(tp + tn, tp + fp + tn + fn_), f_measure, precision, recall, tp, fp, tn, fn_ }
    }

    /// `(predicted_high, actually_high)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Scores at or above one half are classified high.
pub fn predict_high(score: f64) -> bool {
    score >= 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = Metrics::from_pairs([(true, true), (false, false), (true, true)]);
        assert_eq!((m.accuracy, m.f_measure), (1.0, 1.0));
    }

    #[test]
    fn hand_computed_counts() {
        let m = Metrics::from_counts(2, 1, 6, 1);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f_measure - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.total(), 10);
    }

    #[test]
    fn degenerate_counts() {
        let m = Metrics::from_counts(0, 0, 4, 0);
        assert_eq!((m.accuracy, m.f_measure), (1.0, 0.0));
        assert_eq!(Metrics::from_counts(0, 0, 0, 0).accuracy, 0.0);
    }

    #[test]
    fn tie_is_high() {
        assert!(predict_high(0.5));
        assert!(!predict_high(0.4999999));
    }

    #[test]
    fn json_uses_fn_key() {
        let v = serde_json::to_value(Metrics::from_counts(1, 0, 0, 2)).unwrap();
        assert_eq!(v["fn"], 2);
    }
}
