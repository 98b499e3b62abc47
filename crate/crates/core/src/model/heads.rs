//! Task-head losses. Gradients are produced in `ModelState::accumulate_*`.

use ndarray::Array2;

use super::ModelError;

fn check_rows(probs: &Array2<f64>, n: usize) -> Result<(), ModelError> {
    if probs.nrows() != n {
        return Err(ModelError::LengthMismatch {
            expected: probs.nrows(),
            found: n,
        });
    }
    Ok(())
}

/// Mean over tokens of `-ln p(gold)`.
pub fn ner_loss(probs: &Array2<f64>, gold: &[usize]) -> Result<f64, ModelError> {
    check_rows(probs, gold.len())?;
    if gold.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, &g) in probs.rows().into_iter().zip(gold) {
        let p = *row.get(g).ok_or(ModelError::TagOutOfRange(g))?;
        total -= p.ln();
    }
    Ok(total / gold.len() as f64)
}

/// Per-token start and end flags for `answers` over `n` context tokens.
pub fn boundary_flags(answers: &[(usize, usize)], n: usize) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    let mut start = vec![0; n];
    let mut end = vec![0; n];
    for &(s, e) in answers {
        if s > e || e >= n {
            return Err(ModelError::AnswerOutOfRange { start: s, end: e, len: n });
        }
        start[s] = 1;
        end[e] = 1;
    }
    Ok((start, end))
}

/// Mean token cross-entropy of the start flags plus the same for the end flags.
pub fn mrc_loss(
    start: &Array2<f64>,
    end: &Array2<f64>,
    answers: &[(usize, usize)],
) -> Result<f64, ModelError> {
    let n = start.nrows();
    check_rows(end, n)?;
    let (sf, ef) = boundary_flags(answers, n)?;
    Ok(ner_loss(start, &sf)? + ner_loss(end, &ef)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ner_loss_is_ln_tags() {
        let probs = Array2::from_elem((4, 9), 1.0 / 9.0);
        let loss = ner_loss(&probs, &[0, 3, 8, 1]).unwrap();
        assert!((loss - 9f64.ln()).abs() < 1e-12);
        assert!((loss - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn one_hot_ner_loss_is_zero() {
        let mut probs = Array2::zeros((2, 3));
        probs[[0, 1]] = 1.0;
        probs[[1, 2]] = 1.0;
        assert_eq!(ner_loss(&probs, &[1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_three_token_loss() {
        let probs = Array2::from_shape_vec(
            (3, 3),
            vec![0.7, 0.2, 0.1, 0.25, 0.25, 0.5, 0.05, 0.9, 0.05],
        )
        .unwrap();
        let expected = -(0.7f64.ln() + 0.5f64.ln() + 0.9f64.ln()) / 3.0;
        assert!((ner_loss(&probs, &[0, 2, 1]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn ner_loss_length_mismatch() {
        let probs = Array2::from_elem((2, 3), 1.0 / 3.0);
        assert!(matches!(ner_loss(&probs, &[0]), Err(ModelError::LengthMismatch { .. })));
    }

    #[test]
    fn mrc_loss_examples() {
        let half = Array2::from_elem((5, 2), 0.5);
        let loss = mrc_loss(&half, &half, &[]).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);

        let mut start = Array2::zeros((3, 2));
        let mut end = Array2::zeros((3, 2));
        for t in 0..3 {
            start[[t, usize::from(t == 1)]] = 1.0;
            end[[t, usize::from(t == 2)]] = 1.0;
        }
        assert_eq!(mrc_loss(&start, &end, &[(1, 2)]).unwrap(), 0.0);
        assert!(matches!(
            mrc_loss(&start, &end, &[(1, 3)]),
            Err(ModelError::AnswerOutOfRange { .. })
        ));
    }

    #[test]
    fn mrc_loss_matches_independent_arithmetic() {
        // answer (2,4) over 6 tokens; probability of the positive class per token
        let ps: [f64; 6] = [0.1, 0.2, 0.7, 0.3, 0.2, 0.1];
        let pe: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.6, 0.15];
        let to_table = |p: &[f64]| {
            Array2::from_shape_fn((p.len(), 2), |(i, j)| if j == 1 { p[i] } else { 1.0 - p[i] })
        };
        let mut expected_start = 0.0;
        let mut expected_end = 0.0;
        for t in 0..6 {
            expected_start += if t == 2 { -ps[t].ln() } else { -(1.0 - ps[t]).ln() };
            expected_end += if t == 4 { -pe[t].ln() } else { -(1.0 - pe[t]).ln() };
        }
        let expected = expected_start / 6.0 + expected_end / 6.0;
        let loss = mrc_loss(&to_table(&ps), &to_table(&pe), &[(2, 4)]).unwrap();
        assert!((loss - expected).abs() < 1e-14);
    }
}
