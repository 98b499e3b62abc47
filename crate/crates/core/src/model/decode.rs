use ndarray::Array2;

use crate::corpus::{repair_bio, LabelSet, Tag};

/// Per-token argmax followed by the BIO repair pass. Ties go to the lower
/// tag index.
pub fn ner_decode(probs: &Array2<f64>, label_set: &LabelSet) -> Vec<Tag> {
    let mut tags: Vec<Tag> = probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            label_set.tag_at(best).unwrap_or(Tag::O)
        })
        .collect();
    repair_bio(&mut tags);
    tags
}

/// Pairs start and end boundaries into disjoint spans.
///
/// `start[t]` and `end[t]` are the probabilities that token `t` begins or
/// ends an answer. Candidates are all `(s, e)` with both probabilities at
/// least `threshold` and `s <= e < s + max_span_len`; they are taken greedily
/// by descending `start[s] * end[e]` (ties: smaller `s`, then smaller `e`),
/// skipping any that overlap a span already taken. Output is sorted.
pub fn mrc_decode(start: &[f64], end: &[f64], threshold: f64, max_span_len: usize) -> Vec<(usize, usize)> {
    let n = start.len().min(end.len());
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for s in (0..n).filter(|&s| start[s] >= threshold) {
        let last = (s + max_span_len).min(n);
        for e in (s..last).filter(|&e| end[e] >= threshold) {
            candidates.push((start[s] * end[e], s, e));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for (_, s, e) in candidates {
        if chosen.iter().all(|&(cs, ce)| e < cs || s > ce) {
            chosen.push((s, e));
        }
    }
    chosen.sort_unstable();
    chosen
}

/// [`mrc_decode`] over `n x 2` probability tables (column 1 = boundary).
pub fn mrc_decode_tables(
    start: &Array2<f64>,
    end: &Array2<f64>,
    threshold: f64,
    max_span_len: usize,
) -> Vec<(usize, usize)> {
    let s: Vec<f64> = start.column(1).to_vec();
    let e: Vec<f64> = end.column(1).to_vec();
    mrc_decode(&s, &e, threshold, max_span_len)
}
