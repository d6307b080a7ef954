//! Group gated fusion of the four utterance representations, plus the
//! concatenation baselines.
//!
//! Group 1 mixes the aligned representations (a_s, a_t) under the
//! sigmoid gate z_p; group 2 mixes the last hidden states (h_s, h_t)
//! under z_q. The fused vector is the sum of the two gated groups. No
//! projection carries a bias term.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tape::{Tape, TensorRef};
use crate::tensor::Tensor;

/// The six projection matrices of the fusion layer. All map into the
/// shared fused dimension `dim` (= the input width).
#[derive(Debug, Clone)]
pub struct GgfLayer {
    pub w_sa: ParamId,
    pub w_ta: ParamId,
    pub w_sh: ParamId,
    pub w_th: ParamId,
    pub w_zp: ParamId,
    pub w_zq: ParamId,
    pub dim: usize,
}

pub struct GgfOut {
    pub fused: TensorRef,
    pub z_p: TensorRef,
    pub z_q: TensorRef,
}

impl GgfLayer {
    pub fn init(store: &mut ParamStore, rng: &mut SeededRng, prefix: &str, d_in: usize) -> Result<Self> {
        let proj = |store: &mut ParamStore, rng: &mut SeededRng, name: String| -> Result<ParamId> {
            Ok(store.add(name, Tensor::xavier_normal(vec![d_in, d_in], rng)?, true))
        };
        let gate = |store: &mut ParamStore, rng: &mut SeededRng, name: String| -> Result<ParamId> {
            Ok(store.add(name, Tensor::xavier_normal(vec![d_in, 2 * d_in], rng)?, true))
        };
        Ok(GgfLayer {
            w_sa: proj(store, rng, format!("{prefix}.w_sa"))?,
            w_ta: proj(store, rng, format!("{prefix}.w_ta"))?,
            w_sh: proj(store, rng, format!("{prefix}.w_sh"))?,
            w_th: proj(store, rng, format!("{prefix}.w_th"))?,
            w_zp: gate(store, rng, format!("{prefix}.w_zp"))?,
            w_zq: gate(store, rng, format!("{prefix}.w_zq"))?,
            dim: d_in,
        })
    }

    /// `h = z_p*p_s + (1-z_p)*p_t + z_q*q_s + (1-z_q)*q_t` where the
    /// p/q candidates are tanh projections and the gates are sigmoids
    /// of the concatenated group inputs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        a_s: TensorRef,
        a_t: TensorRef,
        h_s: TensorRef,
        h_t: TensorRef,
    ) -> Result<GgfOut> {
        for &r in &[a_s, a_t, h_s, h_t] {
            if tape.shape(r) != [self.dim] {
                return Err(Error::DimMismatch {
                    op: "ggf_forward",
                    lhs: tape.shape(r).to_vec(),
                    rhs: vec![self.dim],
                });
            }
        }
        let w_sa = tape.param(store, self.w_sa);
        let w_ta = tape.param(store, self.w_ta);
        let w_sh = tape.param(store, self.w_sh);
        let w_th = tape.param(store, self.w_th);
        let w_zp = tape.param(store, self.w_zp);
        let w_zq = tape.param(store, self.w_zq);

        let ps_lin = tape.matvec(w_sa, a_s)?;
        let p_s = tape.tanh(ps_lin);
        let pt_lin = tape.matvec(w_ta, a_t)?;
        let p_t = tape.tanh(pt_lin);
        let aligned_pair = tape.concat(&[a_s, a_t])?;
        let zp_lin = tape.matvec(w_zp, aligned_pair)?;
        let z_p = tape.sigmoid(zp_lin);

        let qs_lin = tape.matvec(w_sh, h_s)?;
        let q_s = tape.tanh(qs_lin);
        let qt_lin = tape.matvec(w_th, h_t)?;
        let q_t = tape.tanh(qt_lin);
        let hidden_pair = tape.concat(&[h_s, h_t])?;
        let zq_lin = tape.matvec(w_zq, hidden_pair)?;
        let z_q = tape.sigmoid(zq_lin);

        let zp_comp = tape.one_minus(z_p);
        let zq_comp = tape.one_minus(z_q);
        let g1a = tape.mul(z_p, p_s)?;
        let g1b = tape.mul(zp_comp, p_t)?;
        let g2a = tape.mul(z_q, q_s)?;
        let g2b = tape.mul(zq_comp, q_t)?;
        let fused = tape.add_n(&[g1a, g1b, g2a, g2b])?;
        Ok(GgfOut { fused, z_p, z_q })
    }
}

/// Which of the four representations a concatenation baseline uses, in
/// the fixed order (a_s, a_t, h_s, h_t).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepSubset {
    pub a_s: bool,
    pub a_t: bool,
    pub h_s: bool,
    pub h_t: bool,
}

impl RepSubset {
    /// Concat-1: the aligned pair.
    pub const ALIGNED: RepSubset = RepSubset {
        a_s: true,
        a_t: true,
        h_s: false,
        h_t: false,
    };
    /// Concat-2: all four representations.
    pub const ALL: RepSubset = RepSubset {
        a_s: true,
        a_t: true,
        h_s: true,
        h_t: true,
    };

    pub fn single(which: usize) -> RepSubset {
        let mut s = RepSubset {
            a_s: false,
            a_t: false,
            h_s: false,
            h_t: false,
        };
        match which {
            0 => s.a_s = true,
            1 => s.a_t = true,
            2 => s.h_s = true,
            _ => s.h_t = true,
        }
        s
    }

    pub fn count(&self) -> usize {
        [self.a_s, self.a_t, self.h_s, self.h_t]
            .iter()
            .filter(|&&b| b)
            .count()
    }
}

/// Concatenates the selected representations in fixed order.
pub fn concat_fusion(
    tape: &mut Tape,
    a_s: TensorRef,
    a_t: TensorRef,
    h_s: TensorRef,
    h_t: TensorRef,
    subset: RepSubset,
) -> Result<TensorRef> {
    let mut parts = Vec::new();
    if subset.a_s {
        parts.push(a_s);
    }
    if subset.a_t {
        parts.push(a_t);
    }
    if subset.h_s {
        parts.push(h_s);
    }
    if subset.h_t {
        parts.push(h_t);
    }
    if parts.is_empty() {
        return Err(Error::contract("concat_fusion: empty representation subset"));
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    tape.concat(&parts)
}

/// Mean gate activations over a batch, attributing per-representation
/// contribution weights. Within each group the two weights sum to 1
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub mean_zp: f64,
    pub mean_zq: f64,
}

impl GateReport {
    /// (representation, weight) pairs in fixed order.
    pub fn weights(&self) -> [(&'static str, f64); 4] {
        [
            ("a_s", self.mean_zp),
            ("a_t", 1.0 - self.mean_zp),
            ("h_s", self.mean_zq),
            ("h_t", 1.0 - self.mean_zq),
        ]
    }
}

/// Averages gate vectors over all elements and samples.
pub fn gate_summary(gates: &[(Vec<f64>, Vec<f64>)]) -> Result<GateReport> {
    if gates.is_empty() {
        return Err(Error::EmptySequence {
            what: "gate_summary",
        });
    }
    let mut zp_sum = 0.0;
    let mut zp_count = 0usize;
    let mut zq_sum = 0.0;
    let mut zq_count = 0usize;
    for (zp, zq) in gates {
        zp_sum += zp.iter().sum::<f64>();
        zp_count += zp.len();
        zq_sum += zq.iter().sum::<f64>();
        zq_count += zq.len();
    }
    Ok(GateReport {
        mean_zp: zp_sum / zp_count as f64,
        mean_zq: zq_sum / zq_count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(d: usize, seed: u64) -> (ParamStore, GgfLayer, SeededRng) {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed);
        let layer = GgfLayer::init(&mut store, &mut rng, "ggf", d).unwrap();
        (store, layer, rng)
    }

    fn inputs(tape: &mut Tape, d: usize, rng: &mut SeededRng) -> [TensorRef; 4] {
        [
            tape.constant(&Tensor::randn(vec![d], 1.0, rng)),
            tape.constant(&Tensor::randn(vec![d], 1.0, rng)),
            tape.constant(&Tensor::randn(vec![d], 1.0, rng)),
            tape.constant(&Tensor::randn(vec![d], 1.0, rng)),
        ]
    }

    /// Independent scalar-loop evaluation of the fused vector.
    fn loop_oracle(store: &ParamStore, d: usize, reps: &[Vec<f64>; 4]) -> Vec<f64> {
        let get = |name: &str| store.by_name(name).unwrap().value.data().to_vec();
        let (w_sa, w_ta, w_sh, w_th) = (get("ggf.w_sa"), get("ggf.w_ta"), get("ggf.w_sh"), get("ggf.w_th"));
        let (w_zp, w_zq) = (get("ggf.w_zp"), get("ggf.w_zq"));
        let matvec = |m: &[f64], v: &[f64], rows: usize| -> Vec<f64> {
            (0..rows)
                .map(|r| (0..v.len()).map(|c| m[r * v.len() + c] * v[c]).sum())
                .collect()
        };
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        let p_s: Vec<f64> = matvec(&w_sa, &reps[0], d).iter().map(|v| v.tanh()).collect();
        let p_t: Vec<f64> = matvec(&w_ta, &reps[1], d).iter().map(|v| v.tanh()).collect();
        let q_s: Vec<f64> = matvec(&w_sh, &reps[2], d).iter().map(|v| v.tanh()).collect();
        let q_t: Vec<f64> = matvec(&w_th, &reps[3], d).iter().map(|v| v.tanh()).collect();
        let cat_a: Vec<f64> = reps[0].iter().chain(&reps[1]).cloned().collect();
        let cat_h: Vec<f64> = reps[2].iter().chain(&reps[3]).cloned().collect();
        let z_p: Vec<f64> = matvec(&w_zp, &cat_a, d).iter().map(|&v| sigmoid(v)).collect();
        let z_q: Vec<f64> = matvec(&w_zq, &cat_h, d).iter().map(|&v| sigmoid(v)).collect();
        (0..d)
            .map(|i| {
                z_p[i] * p_s[i] + (1.0 - z_p[i]) * p_t[i] + z_q[i] * q_s[i] + (1.0 - z_q[i]) * q_t[i]
            })
            .collect()
    }

    #[test]
    fn zero_gate_weights_give_half_half_mix() {
        let d = 3;
        let (mut store, layer, mut rng) = setup(d, 1);
        for p in store.iter_mut() {
            if p.name.contains("w_zp") || p.name.contains("w_zq") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let [a_s, a_t, h_s, h_t] = inputs(&mut tape, d, &mut rng);
        let out = layer.forward(&mut tape, &store, a_s, a_t, h_s, h_t).unwrap();
        for &z in tape.value(out.z_p) {
            assert_eq!(z, 0.5);
        }
        for &z in tape.value(out.z_q) {
            assert_eq!(z, 0.5);
        }
        // h = (p_s + p_t + q_s + q_t) / 2
        let reps = [
            tape.value(a_s).to_vec(),
            tape.value(a_t).to_vec(),
            tape.value(h_s).to_vec(),
            tape.value(h_t).to_vec(),
        ];
        let want = loop_oracle(&store, d, &reps);
        for (got, want) in tape.value(out.fused).iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_gate_selects_one_candidate() {
        let d = 2;
        let (mut store, layer, mut rng) = setup(d, 2);
        // huge positive gate weights + positive inputs saturate z_p -> 1;
        // zero the h-side projections so the group-2 output is tanh(0)=0
        for p in store.iter_mut() {
            if p.name.contains("w_zp") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 1e4);
            }
            if p.name.contains("w_sh") || p.name.contains("w_th") || p.name.contains("w_zq") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let ones = Tensor::vector(vec![1.0; d]);
        let a_s = tape.constant(&ones);
        let a_t = tape.constant(&ones);
        let h = tape.constant(&Tensor::randn(vec![d], 1.0, &mut rng));
        let out = layer.forward(&mut tape, &store, a_s, a_t, h, h).unwrap();
        for &z in tape.value(out.z_p) {
            assert_eq!(z, 1.0);
        }
        // group 1 collapses to p_s; group 2 contributes 0
        let w_sa = store.by_name("ggf.w_sa").unwrap().value.clone();
        for i in 0..d {
            let lin: f64 = (0..d).map(|c| w_sa.data()[i * d + c]).sum();
            assert!((tape.value(out.fused)[i] - lin.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_loop_oracle_on_random_instances() {
        for seed in 0..5 {
            let d = 4;
            let (store, layer, mut rng) = setup(d, 100 + seed);
            let mut tape = Tape::new();
            let [a_s, a_t, h_s, h_t] = inputs(&mut tape, d, &mut rng);
            let out = layer.forward(&mut tape, &store, a_s, a_t, h_s, h_t).unwrap();
            let reps = [
                tape.value(a_s).to_vec(),
                tape.value(a_t).to_vec(),
                tape.value(h_s).to_vec(),
                tape.value(h_t).to_vec(),
            ];
            let want = loop_oracle(&store, d, &reps);
            for (got, want) in tape.value(out.fused).iter().zip(&want) {
                assert!((got - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn group_outputs_are_convex_mixes() {
        let d = 5;
        let (store, layer, mut rng) = setup(d, 11);
        let mut tape = Tape::new();
        let [a_s, a_t, h_s, h_t] = inputs(&mut tape, d, &mut rng);
        let out = layer.forward(&mut tape, &store, a_s, a_t, h_s, h_t).unwrap();
        // candidates are tanh values in (-1, 1); each group is a convex
        // mix, so h lies in [-2, 2] componentwise
        for &v in tape.value(out.fused) {
            assert!((-2.0..=2.0).contains(&v));
        }
    }

    #[test]
    fn gate_sign_flip_mirrors_the_mix() {
        // sigmoid(-x) = 1 - sigmoid(x): negating the gate matrices and
        // swapping the candidates within each group leaves h unchanged
        let d = 3;
        let (mut store, layer, mut rng) = setup(d, 31);
        let mut tape = Tape::new();
        let [a_s, a_t, h_s, h_t] = inputs(&mut tape, d, &mut rng);
        let out1 = layer.forward(&mut tape, &store, a_s, a_t, h_s, h_t).unwrap();
        let h1 = tape.value(out1.fused).to_vec();

        // swap the projection pairs, negate gates, swap gate input halves
        let swap = |store: &mut ParamStore, x: &str, y: &str| {
            let vx = store.by_name(x).unwrap().value.clone();
            let vy = store.by_name(y).unwrap().value.clone();
            for p in store.iter_mut() {
                if p.name == x {
                    p.value = vy.clone();
                } else if p.name == y {
                    p.value = vx.clone();
                }
            }
        };
        swap(&mut store, "ggf.w_sa", "ggf.w_ta");
        swap(&mut store, "ggf.w_sh", "ggf.w_th");
        for p in store.iter_mut() {
            if p.name.contains("w_zp") || p.name.contains("w_zq") {
                // negate and swap column halves so the gate sees the
                // swapped concat order identically
                let data = p.value.data().to_vec();
                let out = p.value.data_mut();
                for r in 0..d {
                    for c in 0..2 * d {
                        let src = if c < d { r * 2 * d + c + d } else { r * 2 * d + c - d };
                        out[r * 2 * d + c] = -data[src];
                    }
                }
            }
        }
        let mut tape2 = Tape::new();
        let a_s2 = tape2.constant(&tape.tensor(a_s));
        let a_t2 = tape2.constant(&tape.tensor(a_t));
        let h_s2 = tape2.constant(&tape.tensor(h_s));
        let h_t2 = tape2.constant(&tape.tensor(h_t));
        let out2 = layer
            .forward(&mut tape2, &store, a_t2, a_s2, h_t2, h_s2)
            .unwrap();
        for (x, y) in h1.iter().zip(tape2.value(out2.fused)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_fusion_widths_and_errors() {
        let d = 4;
        let mut tape = Tape::new();
        let mut rng = SeededRng::new(5);
        let [a_s, a_t, h_s, h_t] = inputs(&mut tape, d, &mut rng);
        let c1 = concat_fusion(&mut tape, a_s, a_t, h_s, h_t, RepSubset::ALIGNED).unwrap();
        assert_eq!(tape.shape(c1), &[2 * d]);
        let c2 = concat_fusion(&mut tape, a_s, a_t, h_s, h_t, RepSubset::ALL).unwrap();
        assert_eq!(tape.shape(c2), &[4 * d]);
        let single = concat_fusion(&mut tape, a_s, a_t, h_s, h_t, RepSubset::single(3)).unwrap();
        assert_eq!(single, h_t);
        let empty = RepSubset {
            a_s: false,
            a_t: false,
            h_s: false,
            h_t: false,
        };
        assert!(concat_fusion(&mut tape, a_s, a_t, h_s, h_t, empty).is_err());
    }

    #[test]
    fn gate_report_weights_sum_to_one() {
        let report = gate_summary(&[(vec![0.5, 0.5], vec![0.25, 0.75])]).unwrap();
        let w = report.weights();
        assert_eq!(w[0].1 + w[1].1, 1.0);
        assert_eq!(w[2].1 + w[3].1, 1.0);
        assert_eq!(report.mean_zp, 0.5);
        assert_eq!(report.mean_zq, 0.5);

        // two samples with elementwise means 0.3 and 0.5 average to 0.4
        let report = gate_summary(&[
            (vec![0.3, 0.3], vec![0.1, 0.1]),
            (vec![0.5, 0.5], vec![0.9, 0.9]),
        ])
        .unwrap();
        assert!((report.mean_zp - 0.4).abs() < 1e-15);

        assert!(matches!(
            gate_summary(&[]),
            Err(Error::EmptySequence { .. })
        ));
    }
}
