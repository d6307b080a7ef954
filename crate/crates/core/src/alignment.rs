//! Bidirectional attention alignment between the two encoded
//! sequences.
//!
//! Raw scores are `tanh` of bare dot products between state vectors.
//! Each row is softmax-normalized over the *valid* positions of the
//! attended sequence; padded positions get weight exactly zero, so
//! zero-padding never leaks into the attended average. The aligned
//! vectors are average-pooled over valid query positions.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorRef};

/// One alignment direction: the pooled representation, the attention
/// matrix (rows = query positions, columns = attended positions) and
/// the raw pre-softmax scores.
pub struct Alignment {
    pub rep: TensorRef,
    pub attn: TensorRef,
    pub scores: TensorRef,
}

fn check_widths(tape: &Tape, a: TensorRef, b: TensorRef) -> Result<(usize, usize, usize)> {
    let (ra, ca) = match tape.shape(a) {
        [r, c] => (*r, *c),
        other => {
            return Err(Error::DimMismatch {
                op: "alignment",
                lhs: other.to_vec(),
                rhs: vec![],
            })
        }
    };
    let (rb, cb) = match tape.shape(b) {
        [r, c] => (*r, *c),
        other => {
            return Err(Error::DimMismatch {
                op: "alignment",
                lhs: other.to_vec(),
                rhs: vec![],
            })
        }
    };
    if ca != cb {
        return Err(Error::DimMismatch {
            op: "alignment",
            lhs: vec![ra, ca],
            rhs: vec![rb, cb],
        });
    }
    Ok((ra, rb, ca))
}

fn align(
    tape: &mut Tape,
    queries: TensorRef,
    keys: TensorRef,
    query_valid: usize,
    key_valid: usize,
) -> Result<Alignment> {
    let (n_q, n_k, _d) = check_widths(tape, queries, keys)?;
    if query_valid == 0 || key_valid == 0 {
        return Err(Error::EmptySequence { what: "alignment" });
    }
    if query_valid > n_q || key_valid > n_k {
        return Err(Error::contract(format!(
            "alignment: valid counts ({query_valid}, {key_valid}) exceed rows ({n_q}, {n_k})"
        )));
    }
    let keys_t = tape.transpose(keys)?;
    let dots = tape.matmul(queries, keys_t)?;
    let scores = tape.tanh(dots);
    let attn = tape.row_softmax_masked(scores, key_valid)?;
    let weighted = tape.matmul(attn, keys)?;
    let rep = tape.mean_valid_rows(weighted, query_valid)?;
    Ok(Alignment { rep, attn, scores })
}

/// Text-aligned speech representation: attention rows are text
/// positions, columns speech positions; `rep` averages the attended
/// speech vectors over valid text positions.
pub fn align_speech_to_text(
    tape: &mut Tape,
    speech_seq: TensorRef,
    text_seq: TensorRef,
    k_valid: usize,
    l_valid: usize,
) -> Result<Alignment> {
    align(tape, text_seq, speech_seq, l_valid, k_valid)
}

/// Speech-aligned text representation, the mirror construction.
pub fn align_text_to_speech(
    tape: &mut Tape,
    text_seq: TensorRef,
    speech_seq: TensorRef,
    l_valid: usize,
    k_valid: usize,
) -> Result<Alignment> {
    align(tape, speech_seq, text_seq, k_valid, l_valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    fn randn(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor {
        Tensor::randn(vec![rows, cols], 1.0, rng)
    }

    /// Scalar triple-loop evaluation of both directions, independent of
    /// the tape ops.
    fn loop_oracle(
        speech: &Tensor,
        text: &Tensor,
        k_valid: usize,
        l_valid: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = speech.shape()[1];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let mut a_s = vec![0.0; d];
        for j in 0..l_valid {
            let mut weights = Vec::with_capacity(k_valid);
            for i in 0..k_valid {
                weights.push(dot(speech.row(i), text.row(j)).tanh().exp());
            }
            let z: f64 = weights.iter().sum();
            for i in 0..k_valid {
                for c in 0..d {
                    a_s[c] += weights[i] / z * speech.row(i)[c] / l_valid as f64;
                }
            }
        }
        let mut a_t = vec![0.0; d];
        for i in 0..k_valid {
            let mut weights = Vec::with_capacity(l_valid);
            for j in 0..l_valid {
                weights.push(dot(text.row(j), speech.row(i)).tanh().exp());
            }
            let z: f64 = weights.iter().sum();
            for j in 0..l_valid {
                for c in 0..d {
                    a_t[c] += weights[j] / z * text.row(j)[c] / k_valid as f64;
                }
            }
        }
        (a_s, a_t)
    }

    #[test]
    fn single_key_attention_copies_the_key() {
        let mut rng = SeededRng::new(1);
        let speech = randn(1, 4, &mut rng);
        let text = randn(3, 4, &mut rng);
        let mut tape = Tape::new();
        let s = tape.constant(&speech);
        let t = tape.constant(&text);
        let out = align_speech_to_text(&mut tape, s, t, 1, 3).unwrap();
        // alpha is an all-ones column, a_s = s_1
        for r in 0..3 {
            assert_eq!(tape.value(out.attn)[r], 1.0);
        }
        for (got, want) in tape.value(out.rep).iter().zip(speech.row(0)) {
            assert!((got - want).abs() < 1e-15);
        }

        // mirror: single text vector
        let out = align_text_to_speech(&mut tape, t, s, 3, 1).unwrap();
        assert_eq!(tape.shape(out.attn), &[1, 3]);
        let text1 = randn(1, 4, &mut rng);
        let t1 = tape.constant(&text1);
        let s3 = tape.constant(&randn(3, 4, &mut rng));
        let out = align_text_to_speech(&mut tape, t1, s3, 1, 3).unwrap();
        for (got, want) in tape.value(out.rep).iter().zip(text1.row(0)) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_scores_give_uniform_attention() {
        // orthogonal rows: every dot product is 0, tanh(0) = 0
        let speech = Tensor::matrix(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let text = Tensor::matrix(2, 4, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(&speech);
        let t = tape.constant(&text);
        let out = align_speech_to_text(&mut tape, s, t, 2, 2).unwrap();
        for &w in tape.value(out.attn) {
            assert!((w - 0.5).abs() < 1e-15);
        }
        // every attended vector is mean(s), so the pooled rep is too
        for (c, got) in tape.value(out.rep).iter().enumerate() {
            let want = (speech.row(0)[c] + speech.row(1)[c]) / 2.0;
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_loop_oracle_on_small_instances() {
        let mut rng = SeededRng::new(7);
        for (k, l) in [(2usize, 3usize), (3, 2), (1, 1), (3, 3)] {
            let speech = randn(k, 4, &mut rng);
            let text = randn(l, 4, &mut rng);
            let (want_as, want_at) = loop_oracle(&speech, &text, k, l);
            let mut tape = Tape::new();
            let s = tape.constant(&speech);
            let t = tape.constant(&text);
            let a_s = align_speech_to_text(&mut tape, s, t, k, l).unwrap();
            let a_t = align_text_to_speech(&mut tape, t, s, l, k).unwrap();
            for (got, want) in tape.value(a_s.rep).iter().zip(&want_as) {
                assert!((got - want).abs() < 1e-10);
            }
            for (got, want) in tape.value(a_t.rep).iter().zip(&want_at) {
                assert!((got - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn raw_scores_satisfy_transpose_identity_exactly() {
        let mut rng = SeededRng::new(3);
        let speech = randn(4, 6, &mut rng);
        let text = randn(3, 6, &mut rng);
        let mut tape = Tape::new();
        let s = tape.constant(&speech);
        let t = tape.constant(&text);
        let fwd = align_speech_to_text(&mut tape, s, t, 4, 3).unwrap();
        let bwd = align_text_to_speech(&mut tape, t, s, 3, 4).unwrap();
        let a = tape.value(fwd.scores); // [3,4]
        let b = tape.value(bwd.scores); // [4,3]
        for j in 0..3 {
            for i in 0..4 {
                assert_eq!(a[j * 4 + i].to_bits(), b[i * 3 + j].to_bits());
            }
        }
    }

    #[test]
    fn padded_positions_get_zero_weight_and_do_not_matter() {
        let mut rng = SeededRng::new(9);
        let k_valid = 3;
        let l_valid = 2;
        let mut speech = randn(5, 4, &mut rng);
        let mut text = randn(4, 4, &mut rng);

        let run = |speech: &Tensor, text: &Tensor| {
            let mut tape = Tape::new();
            let s = tape.constant(speech);
            let t = tape.constant(text);
            let out = align_speech_to_text(&mut tape, s, t, k_valid, l_valid).unwrap();
            (tape.value(out.rep).to_vec(), tape.value(out.attn).to_vec())
        };
        let (rep1, attn1) = run(&speech, &text);
        // padded columns carry exactly zero weight; valid rows sum to 1
        for r in 0..4 {
            for c in k_valid..5 {
                assert_eq!(attn1[r * 5 + c], 0.0);
            }
            let sum: f64 = attn1[r * 5..r * 5 + k_valid].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        // scribble garbage over padded rows: nothing changes
        for r in k_valid..5 {
            for c in 0..4 {
                speech.data_mut()[r * 4 + c] = rng.normal() * 50.0;
            }
        }
        for r in l_valid..4 {
            for c in 0..4 {
                text.data_mut()[r * 4 + c] = rng.normal() * 50.0;
            }
        }
        let (rep2, _) = run(&speech, &text);
        assert_eq!(rep1, rep2);
    }

    #[test]
    fn rep_stays_in_convex_hull_of_valid_keys() {
        let mut rng = SeededRng::new(21);
        let speech = randn(4, 5, &mut rng);
        let text = randn(3, 5, &mut rng);
        let mut tape = Tape::new();
        let s = tape.constant(&speech);
        let t = tape.constant(&text);
        let out = align_speech_to_text(&mut tape, s, t, 4, 3).unwrap();
        for c in 0..5 {
            let lo = (0..4).map(|r| speech.row(r)[c]).fold(f64::INFINITY, f64::min);
            let hi = (0..4).map(|r| speech.row(r)[c]).fold(f64::NEG_INFINITY, f64::max);
            let v = tape.value(out.rep)[c];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn width_mismatch_and_empty_are_errors() {
        let mut rng = SeededRng::new(2);
        let mut tape = Tape::new();
        let s = tape.constant(&randn(2, 4, &mut rng));
        let t = tape.constant(&randn(2, 5, &mut rng));
        assert!(matches!(
            align_speech_to_text(&mut tape, s, t, 2, 2),
            Err(Error::DimMismatch { .. })
        ));
        let t4 = tape.constant(&randn(2, 4, &mut rng));
        assert!(matches!(
            align_speech_to_text(&mut tape, s, t4, 0, 2),
            Err(Error::EmptySequence { .. })
        ));
    }
}
