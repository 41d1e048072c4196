//! Ranking metrics with exact tie handling.
//!
//! Both metrics sort once and walk groups of equal scores, so tied scores
//! always share one threshold. AUC gives tied positive/negative pairs half
//! credit; AP steps through the same groups.

/// Indices sorted by descending score. `total_cmp` keeps the order total.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// (positives, negatives) per group of tied scores, highest score first.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(u64, u64)> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let idx = descending(scores);
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in idx {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().expect("pushed above");
        if labels[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Area under the ROC curve as the Mann–Whitney statistic
/// `P(s+ > s-) + P(s+ = s-) / 2`. `None` when either class is absent.
pub fn compute_roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let groups = tie_groups(scores, labels);
    let pos: u64 = groups.iter().map(|g| g.0).sum();
    let neg: u64 = groups.iter().map(|g| g.1).sum();
    if pos == 0 || neg == 0 {
        return None;
    }
    // Walk from the lowest group up, counting negatives strictly below.
    // Twice the statistic stays an integer.
    let mut below: u128 = 0;
    let mut twice: u128 = 0;
    for &(p, n) in groups.iter().rev() {
        twice += p as u128 * (2 * below + n as u128);
        below += n as u128;
    }
    Some(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision `sum_k (R_k - R_{k-1}) P_k` over descending score
/// thresholds. `None` when there are no positives.
pub fn compute_average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let groups = tie_groups(scores, labels);
    let pos: u64 = groups.iter().map(|g| g.0).sum();
    if pos == 0 {
        return None;
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (p, n) in groups {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Some(ap)
}

/// ROC curve points `(fpr, tpr)` from (0,0) to (1,1), one per tie group.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Option<Vec<(f64, f64)>> {
    let groups = tie_groups(scores, labels);
    let pos: u64 = groups.iter().map(|g| g.0).sum();
    let neg: u64 = groups.iter().map(|g| g.1).sum();
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in groups {
        tp += p;
        fp += n;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Some(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // O(n^2) pairwise counting.
    fn auc_oracle(s: &[f64], l: &[bool]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    // Precision at each positive's own threshold, averaged over positives.
    fn ap_oracle(s: &[f64], l: &[bool]) -> Option<f64> {
        let pos = l.iter().filter(|&&x| x).count();
        if pos == 0 {
            return None;
        }
        let mut total = 0.0;
        for i in 0..s.len() {
            if !l[i] {
                continue;
            }
            let above = (0..s.len()).filter(|&j| s[j] >= s[i]).count();
            let tp = (0..s.len()).filter(|&j| s[j] >= s[i] && l[j]).count();
            total += tp as f64 / above as f64;
        }
        Some(total / pos as f64)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(compute_roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]), Some(1.0));
        assert_eq!(compute_roc_auc(&[0.1, 0.9], &[true, false]), Some(0.0));
        assert_eq!(compute_roc_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(compute_roc_auc(&[0.5, 0.7], &[false, false]), None);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(compute_average_precision(&[0.9, 0.1], &[true, false]), Some(1.0));
        assert_eq!(compute_average_precision(&[0.9, 0.1], &[false, true]), Some(0.5));
        assert_eq!(compute_average_precision(&[0.9, 0.1], &[false, false]), None);
    }

    #[test]
    fn roc_curve_perfect_passes_through_top_left() {
        let pts = roc_curve(&[0.9, 0.8, 0.2], &[true, true, false]).unwrap();
        assert!(pts.contains(&(0.0, 1.0)));
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..120).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise((s, l) in instance()) {
            match (compute_roc_auc(&s, &l), auc_oracle(&s, &l)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn ap_matches_oracle((s, l) in instance()) {
            match (compute_average_precision(&s, &l), ap_oracle(&s, &l)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn auc_invariant_under_monotone_transform((s, l) in instance()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(compute_roc_auc(&s, &l), compute_roc_auc(&t, &l));
        }
    }

    #[test]
    fn random_scores_ap_tracks_prevalence() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for p in [0.0181, 0.1, 0.3] {
            let labels: Vec<bool> = (0..10_000).map(|_| rng.gen_bool(p)).collect();
            let scores: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
            let ap = compute_average_precision(&scores, &labels).unwrap();
            assert!((ap - p).abs() < 0.05, "p={p} ap={ap}");
        }
    }
}
