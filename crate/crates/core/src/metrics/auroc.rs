/// Area under the ROC curve as the Mann–Whitney statistic with midranks:
/// the fraction of positive/negative pairs ranked correctly, ties counting
/// one half. `None` unless both classes are present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum of the positives, so midranks stay integral
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share the midrank (start+1+end)/2
        let pos_in_tie = order[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        rank_sum2 += pos_in_tie * (start as u128 + 1 + end as u128);
        start = end;
    }
    let p = positives as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Some(u2 as f64 / (2 * p * negatives as u128) as f64)
}
