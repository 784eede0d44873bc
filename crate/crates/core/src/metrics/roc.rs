use serde::{Deserialize, Serialize};

use super::classification::check_pairs;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Points run from `(0, 0)` at threshold `+inf` to `(1, 1)`, one point per
/// distinct score in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_pairs(scores, labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Shape("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one (positive, negative) pair.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// CSV with header `threshold,fpr,tpr` and a final `# auc=<value>` line.
pub fn roc_to_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out.push_str(&format!("# auc={}\n", curve.auc));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(pos: &[f64], neg: &[f64]) -> (Vec<f64>, Vec<u8>) {
        let mut s = pos.to_vec();
        s.extend_from_slice(neg);
        let mut l = vec![1u8; pos.len()];
        l.extend(vec![0u8; neg.len()]);
        (s, l)
    }

    #[test]
    fn reference_cases() {
        let (s, l) = split(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(roc_auc(&s, &l).unwrap().auc, 1.0);
        let (s, l) = split(&[0.8, 0.3], &[0.5, 0.1]);
        assert_eq!(roc_auc(&s, &l).unwrap().auc, 0.75);
        let (s, l) = split(&[0.4; 3], &[0.4; 5]);
        assert_eq!(roc_auc(&s, &l).unwrap().auc, 0.5);
    }

    #[test]
    fn curve_endpoints_and_monotonicity() {
        let (s, l) = split(&[0.8, 0.3, 0.3, 0.7], &[0.5, 0.1, 0.3]);
        let c = roc_auc(&s, &l).unwrap();
        let first = c.points[0];
        let last = *c.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in c.points.windows(2) {
            assert!(
                w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr && w[1].threshold < w[0].threshold
            );
        }
        // distinct scores 0.8, 0.7, 0.5, 0.3, 0.1 plus the origin
        assert_eq!(c.points.len(), 6);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedAuc)
        ));
    }

    #[test]
    fn csv_layout() {
        let (s, l) = split(&[0.8], &[0.2]);
        let csv = roc_to_csv(&roc_auc(&s, &l).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "threshold,fpr,tpr");
        assert_eq!(lines[1], "inf,0,0");
        assert_eq!(*lines.last().unwrap(), "# auc=1");
        assert_eq!(lines.len(), 5);
    }
}
