// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simple accuracy, paired accuracy, yes-rate and yes-rate deviation.

use std::collections::BTreeMap;

use crate::decoder::Answer;
use crate::error::{Error, Result};

/// One model response to one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseRecord {
    pub pair_id: Option<usize>,
    pub prompt_id: usize,
    pub ground_truth: Answer,
    pub model_answer: Answer,
}

impl ResponseRecord {
    pub fn is_correct(&self) -> bool {
        self.ground_truth == self.model_answer
    }
}

/// Fraction of prompts answered correctly.
pub fn simple_accuracy(records: &[ResponseRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Fraction of prompt pairs with both members answered correctly.
///
/// Every record must carry a pair id and every pair id must occur exactly
/// twice.
pub fn paired_accuracy(records: &[ResponseRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut pairs: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let id = r.pair_id.ok_or_else(|| {
            Error::Pairing(format!("prompt {} is not grouped into a pair", r.prompt_id))
        })?;
        let entry = pairs.entry(id).or_default();
        entry.0 += 1;
        entry.1 += usize::from(r.is_correct());
    }
    let mut both = 0;
    for (id, (members, correct)) in &pairs {
        if *members != 2 {
            return Err(Error::Pairing(format!("pair {id} has {members} members")));
        }
        both += usize::from(*correct == 2);
    }
    Ok(both as f64 / pairs.len() as f64)
}

/// Fraction of responses that are "yes", ignoring correctness.
pub fn yes_rate(records: &[ResponseRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let yes = records.iter().filter(|r| r.model_answer.is_yes()).count();
    Ok(yes as f64 / records.len() as f64)
}

/// Yes-rate deviation from the ground-truth yes fraction, as
/// `(percentage points, relative percent)`.
///
/// The relative form is the bracketed convention of comparison tables:
/// `100 * (yes_rate / ground_truth - 1)`.
pub fn yes_rate_deltas(yes_rate: f64, ground_truth_yes_fraction: f64) -> Result<(f64, f64)> {
    let gt = ground_truth_yes_fraction;
    if !(gt > 0.0 && gt < 1.0) {
        return Err(Error::DegenerateGroundTruth(gt));
    }
    Ok((100.0 * (yes_rate - gt), 100.0 * (yes_rate / gt - 1.0)))
}

/// All metrics for one (dataset, intervention) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricBlock {
    pub simple_accuracy: f64,
    /// `None` for datasets without pair structure.
    pub paired_accuracy: Option<f64>,
    pub yes_rate: f64,
    pub ground_truth_yes_fraction: f64,
    pub yes_rate_delta_pp: f64,
    pub yes_rate_delta_rel: f64,
    pub n_prompts: usize,
    pub n_pairs: usize,
}

impl MetricBlock {
    /// Computes every metric. Paired accuracy is attempted only when every
    /// record has a pair id.
    pub fn from_records(records: &[ResponseRecord]) -> Result<Self> {
        let simple = simple_accuracy(records)?;
        let yes = yes_rate(records)?;
        let gt_yes = records.iter().filter(|r| r.ground_truth.is_yes()).count();
        let gt = gt_yes as f64 / records.len() as f64;
        let (pp, rel) = yes_rate_deltas(yes, gt)?;
        let paired = if records.iter().all(|r| r.pair_id.is_some()) {
            Some(paired_accuracy(records)?)
        } else {
            None
        };
        Ok(Self {
            simple_accuracy: simple,
            paired_accuracy: paired,
            yes_rate: yes,
            ground_truth_yes_fraction: gt,
            yes_rate_delta_pp: pp,
            yes_rate_delta_rel: rel,
            n_prompts: records.len(),
            n_pairs: if paired.is_some() { records.len() / 2 } else { 0 },
        })
    }

    /// Distance of the yes-rate from the ground-truth fraction.
    pub fn yes_bias(&self) -> f64 {
        (self.yes_rate - self.ground_truth_yes_fraction).abs()
    }
}

/// Renders a fraction as a percentage with two decimals.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}", 100.0 * fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Answer::{No, Yes};

    fn rec(pair: Option<usize>, id: usize, gt: Answer, ans: Answer) -> ResponseRecord {
        ResponseRecord {
            pair_id: pair,
            prompt_id: id,
            ground_truth: gt,
            model_answer: ans,
        }
    }

    #[test]
    fn simple_accuracy_cases() {
        let three_of_four = [
            rec(None, 0, Yes, Yes),
            rec(None, 1, No, No),
            rec(None, 2, Yes, Yes),
            rec(None, 3, No, Yes),
        ];
        assert_eq!(simple_accuracy(&three_of_four).unwrap(), 0.75);
        assert_eq!(simple_accuracy(&three_of_four[..3]).unwrap(), 1.0);
        assert_eq!(simple_accuracy(&three_of_four[3..]).unwrap(), 0.0);
        assert!(matches!(simple_accuracy(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn paired_accuracy_cases() {
        let half = [
            rec(Some(0), 0, Yes, Yes),
            rec(Some(0), 1, No, No),
            rec(Some(1), 2, Yes, Yes),
            rec(Some(1), 3, No, Yes),
        ];
        assert_eq!(paired_accuracy(&half).unwrap(), 0.5);
        let all = [half[0], half[1], rec(Some(1), 2, Yes, Yes), rec(Some(1), 3, No, No)];
        assert_eq!(paired_accuracy(&all).unwrap(), 1.0);
        let always_yes: Vec<_> = half.iter().map(|r| ResponseRecord { model_answer: Yes, ..*r }).collect();
        assert_eq!(paired_accuracy(&always_yes).unwrap(), 0.0);
    }

    #[test]
    fn paired_accuracy_needs_pairs() {
        assert!(matches!(
            paired_accuracy(&[rec(None, 0, Yes, Yes), rec(None, 1, No, No)]),
            Err(Error::Pairing(_))
        ));
        assert!(matches!(
            paired_accuracy(&[rec(Some(0), 0, Yes, Yes)]),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn yes_rate_cases() {
        let r = [
            rec(None, 0, Yes, Yes),
            rec(None, 1, No, Yes),
            rec(None, 2, Yes, No),
            rec(None, 3, No, No),
        ];
        assert_eq!(yes_rate(&r).unwrap(), 0.5);
        assert_eq!(yes_rate(&r[..2]).unwrap(), 1.0);
        assert_eq!(yes_rate(&r[2..]).unwrap(), 0.0);
    }

    #[test]
    fn delta_conventions() {
        let (_, rel) = yes_rate_deltas(0.8980, 0.4217).unwrap();
        assert!((rel - 112.95).abs() < 0.01, "{rel}");
        let (_, rel) = yes_rate_deltas(0.5962, 0.4217).unwrap();
        assert!((rel - 41.38).abs() < 0.01, "{rel}");
        assert_eq!(yes_rate_deltas(0.3, 0.3).unwrap(), (0.0, 0.0));
        let (pp, _) = yes_rate_deltas(0.75, 0.5).unwrap();
        assert!((pp - 25.0).abs() < 1e-12);
        assert!(matches!(yes_rate_deltas(0.5, 1.0), Err(Error::DegenerateGroundTruth(_))));
    }

    #[test]
    fn block_of_unpaired_records() {
        let r = [rec(None, 0, Yes, Yes), rec(None, 1, No, Yes)];
        let block = MetricBlock::from_records(&r).unwrap();
        assert_eq!(block.paired_accuracy, None);
        assert_eq!(block.n_pairs, 0);
        assert_eq!(block.yes_rate, 1.0);
        assert_eq!(percent(0.12345), "12.35");
    }
}
