use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Equal error rate of a verification score set.
///
/// Every distinct score is tried as a threshold `t`, with
/// `FAR(t) = #{nontarget ≥ t}/N` and `FRR(t) = #{target < t}/T`, plus one
/// threshold above every score. Between the last threshold where
/// `FAR > FRR` and the first where `FAR ≤ FRR` both rates are interpolated
/// linearly and the EER is taken where they meet.
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<EerResult> {
    if scores.len() != labels.len() {
        return Err(Error::shape("eer labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Degenerate("non-finite verification score".into()));
    }
    let n_target = labels.iter().filter(|&&l| l).count();
    let n_nontarget = labels.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::Degenerate(format!(
            "EER needs both classes, got {n_target} target and {n_nontarget} nontarget trials"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let (t, n) = (n_target as f64, n_nontarget as f64);
    // walking thresholds upwards: targets below and nontargets at-or-above
    let mut targets_below = 0usize;
    let mut nontargets_below = 0usize;
    let mut prev: Option<(f64, f64, f64)> = None;
    let mut i = 0;
    loop {
        let threshold = if i < order.len() {
            scores[order[i]]
        } else {
            let (lo, hi) = (scores[order[0]], scores[order[order.len() - 1]]);
            hi + (hi - lo).max(1.0)
        };
        let far = (n_nontarget - nontargets_below) as f64 / n;
        let frr = targets_below as f64 / t;
        if far <= frr {
            let (eer, thr) = match prev {
                None => (far, threshold),
                Some((pt, pfar, pfrr)) => {
                    let d0 = pfar - pfrr;
                    let d1 = far - frr;
                    let alpha = d0 / (d0 - d1);
                    (pfar + alpha * (far - pfar), pt + alpha * (threshold - pt))
                }
            };
            return Ok(EerResult {
                eer,
                threshold: thr,
                n_target,
                n_nontarget,
            });
        }
        prev = Some((threshold, far, frr));
        if i == order.len() {
            unreachable!("FAR = 0 and FRR = 1 above every score");
        }
        // step past every score tied at this threshold
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
}
