//! Overall and per-group accuracy.

use serde::{Deserialize, Serialize};

use crate::dataset::{group_of, NUM_GROUPS};
use crate::{Error, Result};

/// Accuracy broken down by the four (label, attribute) groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` marks a group with no evaluation examples.
    pub per_group_acc: [Option<f64>; NUM_GROUPS],
    pub group_sizes: [usize; NUM_GROUPS],
    /// Minimum accuracy over the non-empty groups.
    pub wga: f64,
    pub n_eval: usize,
}

impl EvalReport {
    /// Groups that had no examples and were left out of the minimum.
    pub fn empty_groups(&self) -> impl Iterator<Item = usize> + '_ {
        self.group_sizes
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(g, _)| g)
    }
}

/// Scores binary predictions against labels, grouping by `2 * y + c`.
pub fn evaluate_predictions(pred: &[u8], y: &[u8], c: &[u8]) -> Result<EvalReport> {
    if y.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if pred.len() != y.len() || c.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs labels",
            expected: y.len(),
            actual: pred.len().min(c.len()),
        });
    }
    let mut hits = [0usize; NUM_GROUPS];
    let mut sizes = [0usize; NUM_GROUPS];
    for ((&p, &yj), &cj) in pred.iter().zip(y).zip(c) {
        let g = group_of(yj, cj);
        sizes[g] += 1;
        if p == yj {
            hits[g] += 1;
        }
    }
    let mut per_group = [None; NUM_GROUPS];
    let mut wga = f64::INFINITY;
    for g in 0..NUM_GROUPS {
        if sizes[g] > 0 {
            let acc = hits[g] as f64 / sizes[g] as f64;
            per_group[g] = Some(acc);
            wga = wga.min(acc);
        }
    }
    let total: usize = hits.iter().sum();
    Ok(EvalReport {
        accuracy: total as f64 / y.len() as f64,
        per_group_acc: per_group,
        group_sizes: sizes,
        wga,
        n_eval: y.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_wrong_in_last_group() {
        let r = evaluate_predictions(&[0, 0, 1, 0], &[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(r.per_group_acc, [Some(1.0), Some(1.0), Some(1.0), Some(0.0)]);
        assert_eq!(r.wga, 0.0);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn all_correct() {
        let r = evaluate_predictions(&[0, 1, 1], &[0, 1, 1], &[1, 0, 1]).unwrap();
        assert_eq!(r.wga, 1.0);
        assert_eq!(r.per_group_acc[0], None);
        assert_eq!(r.empty_groups().collect::<alloc::vec::Vec<_>>(), [0]);
    }

    #[test]
    fn empty_set_is_error() {
        assert_eq!(evaluate_predictions(&[], &[], &[]), Err(Error::Empty("evaluation set")));
    }
}
