//! Fairness and group-robustness metrics over hard predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelVector;

/// Evaluation summary. Serialized key names are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Absent when `Y` or `S` is not binary.
    pub eod: Option<f64>,
    pub avg: f64,
    pub wg: f64,
    pub gap: f64,
    /// Accuracy per `(y, s)` cell, keyed `"y=<y>,s=<s>"`.
    pub groups: BTreeMap<String, f64>,
    /// MaxSkew@k per ranking, keyed by the ranking's name.
    pub max_skew: BTreeMap<String, f64>,
    pub dep_zy: Option<f64>,
    pub dep_zs: Option<f64>,
}

impl MetricsReport {
    /// Accuracy metrics plus EOD (when defined) for the given positive class.
    pub fn from_predictions(
        yhat: &LabelVector,
        y: &LabelVector,
        s: &LabelVector,
        positive: usize,
    ) -> Result<Self> {
        let groups = group_accuracies(yhat, y, s)?;
        let eod = if y.num_classes() == 2 && s.num_classes() == 2 {
            Some(eod(yhat, y, s, positive)?)
        } else {
            None
        };
        Ok(Self {
            eod,
            avg: groups.avg,
            wg: groups.wg,
            gap: groups.gap,
            groups: groups
                .cells
                .iter()
                .map(|(&(yk, sk), &acc)| (format!("y={yk},s={sk}"), acc))
                .collect(),
            max_skew: BTreeMap::new(),
            dep_zy: None,
            dep_zs: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAccuracies {
    /// Accuracy of every nonempty `(y, s)` cell.
    pub cells: BTreeMap<(usize, usize), f64>,
    /// Overall (sample-weighted) accuracy.
    pub avg: f64,
    /// Lowest cell accuracy.
    pub wg: f64,
    pub gap: f64,
}

fn check_aligned(yhat: &LabelVector, y: &LabelVector, s: &LabelVector) -> Result<()> {
    if yhat.len() != y.len() || y.len() != s.len() {
        return Err(Error::Shape(format!(
            "predictions ({}), targets ({}) and sensitive labels ({}) differ in length",
            yhat.len(),
            y.len(),
            s.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    Ok(())
}

pub fn group_accuracies(
    yhat: &LabelVector,
    y: &LabelVector,
    s: &LabelVector,
) -> Result<GroupAccuracies> {
    check_aligned(yhat, y, s)?;
    let mut tally: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for ((&p, &t), &g) in yhat.values().iter().zip(y.values()).zip(s.values()) {
        let cell = tally.entry((t, g)).or_default();
        cell.1 += 1;
        if p == t {
            cell.0 += 1;
            correct += 1;
        }
    }
    let cells: BTreeMap<_, _> = tally
        .into_iter()
        .map(|(k, (hit, total))| (k, hit as f64 / total as f64))
        .collect();
    let avg = correct as f64 / y.len() as f64;
    let wg = cells.values().cloned().fold(f64::INFINITY, f64::min);
    Ok(GroupAccuracies {
        cells,
        avg,
        wg,
        gap: avg - wg,
    })
}

/// Equal opportunity difference `|P(Ŷ=p | Y=p, S=1) − P(Ŷ=p | Y=p, S=0)|`
/// for positive class `p`.
pub fn eod(yhat: &LabelVector, y: &LabelVector, s: &LabelVector, positive: usize) -> Result<f64> {
    check_aligned(yhat, y, s)?;
    if s.num_classes() != 2 {
        return Err(Error::InvalidInput(format!(
            "EOD needs a binary sensitive attribute, got {} classes",
            s.num_classes()
        )));
    }
    if positive >= y.num_classes() {
        return Err(Error::InvalidInput(format!(
            "positive class {positive} is outside 0..{}",
            y.num_classes()
        )));
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for ((&p, &t), &g) in yhat.values().iter().zip(y.values()).zip(s.values()) {
        if t == positive {
            totals[g] += 1;
            if p == positive {
                hits[g] += 1;
            }
        }
    }
    for g in 0..2 {
        if totals[g] == 0 {
            return Err(Error::Degenerate(format!(
                "no samples with Y={positive}, S={g}; EOD is undefined"
            )));
        }
    }
    let tpr = |g: usize| hits[g] as f64 / totals[g] as f64;
    Ok((tpr(1) - tpr(0)).abs())
}

/// Largest log-ratio between a sensitive class's share of the top-`k` ranked
/// samples and its uniform share. Samples are ranked by descending score,
/// ties by index; a class absent from the top-`k` counts as `1/(2k)`.
pub fn max_skew_at_k(scores: &[f64], s: &LabelVector, k: usize) -> Result<f64> {
    if scores.len() != s.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} sensitive labels",
            scores.len(),
            s.len()
        )));
    }
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidInput(format!(
            "k must lie in 1..={}, got {k}",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!("score {bad} is NaN")));
    }
    let counts = s.counts();
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "sensitive class {g} does not occur in the ranked set"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut top = vec![0usize; s.num_classes()];
    for &i in &order[..k] {
        top[s.values()[i]] += 1;
    }
    let desired = 1.0 / s.num_classes() as f64;
    let skew = top
        .iter()
        .map(|&count| {
            let share = if count == 0 {
                1.0 / (2.0 * k as f64)
            } else {
                count as f64 / k as f64
            };
            (share / desired).ln()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(skew)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[usize]) -> LabelVector {
        LabelVector::new(v.to_vec(), 2).unwrap()
    }

    #[test]
    fn eod_hand_values() {
        let y = lv(&[1, 1, 1, 1, 0, 0]);
        let s = lv(&[1, 1, 0, 0, 1, 0]);
        assert_eq!(eod(&y, &y, &s, 1).unwrap(), 0.0);
        assert_eq!(eod(&lv(&[1; 6]), &y, &s, 1).unwrap(), 0.0);
        let yhat = lv(&[1, 1, 1, 0, 0, 0]);
        assert_eq!(eod(&yhat, &y, &s, 1).unwrap(), 0.5);
        let no_cell = lv(&[1, 1, 1, 1, 0, 0]);
        let err = eod(&yhat, &y, &no_cell, 1).unwrap_err();
        assert!(err.to_string().contains("S=0"), "{err}");
    }

    #[test]
    fn group_hand_values() {
        let y = lv(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let s = lv(&[0, 0, 1, 1, 0, 0, 1, 1]);
        let yhat = lv(&[0, 0, 0, 0, 1, 1, 1, 0]);
        let g = group_accuracies(&yhat, &y, &s).unwrap();
        assert_eq!(g.wg, 0.5);
        assert_eq!(g.avg, 7.0 / 8.0);
        assert_eq!(g.gap, 7.0 / 8.0 - 0.5);
        assert_eq!(g.cells[&(1, 1)], 0.5);
        assert_eq!(g.cells.len(), 4);

        let one = lv(&[0, 0, 0]);
        let g = group_accuracies(&lv(&[0, 1, 0]), &one, &one).unwrap();
        assert_eq!((g.wg, g.gap), (g.avg, 0.0));
    }

    #[test]
    fn max_skew_hand_values() {
        let s = lv(&[0, 1, 0, 1]);
        assert_eq!(max_skew_at_k(&[4.0, 3.0, 2.0, 1.0], &s, 2).unwrap(), 0.0);
        assert!((max_skew_at_k(&[4.0, 1.0, 3.0, 0.0], &s, 2).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(max_skew_at_k(&[0.0; 4], &s, 5).is_err());
        assert!(max_skew_at_k(&[0.0; 4], &s, 0).is_err());
    }

    #[test]
    fn report_json_keys() {
        let y = lv(&[0, 1, 0, 1]);
        let s = lv(&[0, 0, 1, 1]);
        let report = MetricsReport::from_predictions(&y, &y, &s, 1).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["eod", "avg", "wg", "gap", "groups", "max_skew"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["groups"]["y=1,s=0"], 1.0);
    }
}
