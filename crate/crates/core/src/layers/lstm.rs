use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{FpbError, Result};

/// Single LSTM cell. Gates are fused into one `(d_in + d_h) x 4 d_h` weight in
/// the order input, forget, output, candidate.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        range: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[d_in + d_hidden, 4 * d_hidden],
            range,
            rng,
        );
        let mut b = Tensor::zeros(&[4 * d_hidden]);
        // forget gate starts open
        for x in &mut b.data_mut()[d_hidden..2 * d_hidden] {
            *x = 1.0;
        }
        let bias = store.add(format!("{name}.bias"), b);
        LstmCell {
            weight,
            bias,
            d_in,
            d_hidden,
        }
    }

    /// Advances one step: returns `(h_t, c_t)`, each `[B, d_hidden]`.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let d = self.d_hidden;
        if tape.shape(x).last() != Some(&self.d_in)
            || tape.shape(h_prev).last() != Some(&d)
            || tape.shape(c_prev).last() != Some(&d)
        {
            return Err(FpbError::dim(
                "lstm_step",
                format!(
                    "x {:?}, h {:?}, c {:?} for d_in={} d_hidden={d}",
                    tape.shape(x),
                    tape.shape(h_prev),
                    tape.shape(c_prev),
                    self.d_in
                ),
            ));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xh = tape.concat(&[x, h_prev])?;
        let z = tape.matmul(xh, w)?;
        let z = tape.add_bias(z, b)?;
        let zi = tape.slice_cols(z, 0, d)?;
        let zf = tape.slice_cols(z, d, d)?;
        let zo = tape.slice_cols(z, 2 * d, d)?;
        let zg = tape.slice_cols(z, 3 * d, d)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let o = tape.sigmoid(zo);
        let g = tape.tanh(zg);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}

/// Bidirectional encoder over a padded batch.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// Encoder output: annotations `[B, n, 2 d_hidden]` and the final states
/// of both directions (`[B, d_hidden]` each).
#[derive(Debug, Clone, Copy)]
pub struct BiLstmOutput {
    pub annotations: Var,
    pub final_forward: Var,
    pub final_backward: Var,
}

impl BiLstm {
    /// `inputs[j]` is position `j` for the whole batch, `[B, d_in]`;
    /// `mask[b][j]` marks real tokens. Padded positions leave the state unchanged
    /// so the forward final state sits at the last real token and the backward
    /// pass starts from zero at each row's own end.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        mask: Option<&[Vec<bool>]>,
    ) -> Result<BiLstmOutput> {
        let n = inputs.len();
        if n == 0 {
            return Err(FpbError::contract("bilstm_encode needs a nonempty source"));
        }
        let batch = tape.shape(inputs[0])[0];
        let d = self.forward.d_hidden;
        let col_mask = |tape: &mut Tape, j: usize| -> Option<(Var, Var)> {
            let m = mask?;
            if m.iter().all(|row| row[j]) {
                return None;
            }
            let mut keep = Vec::with_capacity(batch * d);
            for row in m {
                keep.extend(std::iter::repeat_n(if row[j] { 1.0 } else { 0.0 }, d));
            }
            let inv: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
            let keep = tape.constant(Tensor::new(vec![batch, d], keep).ok()?);
            let inv = tape.constant(Tensor::new(vec![batch, d], inv).ok()?);
            Some((keep, inv))
        };
        let blend = |tape: &mut Tape, m: &Option<(Var, Var)>, new: Var, old: Var| -> Result<Var> {
            match m {
                None => Ok(new),
                Some((keep, inv)) => {
                    let a = tape.mul(*keep, new)?;
                    let b = tape.mul(*inv, old)?;
                    tape.add(a, b)
                }
            }
        };

        let zero = tape.constant(Tensor::zeros(&[batch, d]));
        let (mut h, mut c) = (zero, zero);
        let mut fwd = Vec::with_capacity(n);
        for (j, &x) in inputs.iter().enumerate() {
            let (h1, c1) = self.forward.step(tape, store, x, h, c)?;
            let m = col_mask(tape, j);
            h = blend(tape, &m, h1, h)?;
            c = blend(tape, &m, c1, c)?;
            fwd.push(h);
        }
        let final_forward = h;

        let (mut h, mut c) = (zero, zero);
        let mut bwd = vec![zero; n];
        for j in (0..n).rev() {
            let (h1, c1) = self.backward.step(tape, store, inputs[j], h, c)?;
            let m = col_mask(tape, j);
            h = blend(tape, &m, h1, h)?;
            c = blend(tape, &m, c1, c)?;
            bwd[j] = h;
        }
        let final_backward = h;

        let mut per_pos = Vec::with_capacity(n);
        for j in 0..n {
            per_pos.push(tape.concat(&[fwd[j], bwd[j]])?);
        }
        let annotations = tape.stack(&per_pos)?;
        Ok(BiLstmOutput {
            annotations,
            final_forward,
            final_backward,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::rng::stream;

    fn zero_cell(store: &mut ParamStore, d_in: usize, d: usize) -> LstmCell {
        let mut rng = stream(0, "t");
        let cell = LstmCell::new(store, "cell", d_in, d, 0.0, &mut rng);
        store.value_mut(cell.bias).data_mut().fill(0.0);
        cell
    }

    #[test]
    fn zero_params_zero_state() {
        let mut store = ParamStore::new();
        let cell = zero_cell(&mut store, 2, 3);
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 2]));
        let z = t.constant(Tensor::zeros(&[1, 3]));
        let (h, c) = cell.step(&mut t, &store, x, z, z).unwrap();
        assert_eq!(t.value(h).data(), &[0.0; 3]);
        assert_eq!(t.value(c).data(), &[0.0; 3]);
    }

    #[test]
    fn zero_params_halve_previous_cell() {
        let mut store = ParamStore::new();
        let cell = zero_cell(&mut store, 1, 1);
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 1]));
        let h0 = t.constant(Tensor::zeros(&[1, 1]));
        let c0 = t.constant(Tensor::row(&[2.0]));
        let (h, c) = cell.step(&mut t, &store, x, h0, c0).unwrap();
        assert_eq!(t.value(c).data(), &[1.0]);
        assert!((t.value(h).item() - 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((t.value(h).item() - 0.380797).abs() < 1e-6);
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let mut store = ParamStore::new();
        let mut rng = stream(0, "t");
        let cell = LstmCell::new(&mut store, "c", 2, 2, 0.08, &mut rng);
        assert_eq!(
            store.value(cell.bias).data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn dim_mismatch() {
        let mut store = ParamStore::new();
        let cell = zero_cell(&mut store, 2, 3);
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 3]));
        let z = t.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            cell.step(&mut t, &store, x, z, z),
            Err(FpbError::Dimension {
                op: "lstm_step",
                ..
            })
        ));
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = stream(3, "t");
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 3, 4, 0.5, &mut rng);
        let xs = [
            Tensor::new(vec![2, 3], vec![0.1, -0.5, 0.9, 0.3, 0.2, -0.8]).unwrap(),
            Tensor::new(vec![2, 3], vec![-0.4, 0.7, 0.1, 0.6, -0.9, 0.05]).unwrap(),
        ];
        let build = |p: &ParamStore, t: &mut Tape| -> Result<Var> {
            let mut h = t.constant(
                Tensor::new(vec![2, 4], vec![0.2, -0.4, 0.6, 0.1, -0.3, 0.5, 0.0, 0.7]).unwrap(),
            );
            let mut c = t.constant(
                Tensor::new(vec![2, 4], vec![0.9, 0.3, -0.5, 0.2, 0.4, -0.8, 0.6, -0.1]).unwrap(),
            );
            for x in &xs {
                let xv = t.constant(x.clone());
                (h, c) = cell.step(t, p, xv, h, c)?;
            }
            let s = t.add(h, c)?;
            let s2 = t.mul(s, s)?;
            Ok(t.sum(s2))
        };
        let mut t = Tape::new();
        let l = build(&store, &mut t).unwrap();
        let g = t.backward(l).unwrap();
        let report = finite_difference_check(
            |p| {
                let mut t = Tape::new();
                let l = build(p, &mut t)?;
                Ok(t.value(l).item())
            },
            &store,
            &t.param_grads(&store, &g),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    fn bilstm(store: &mut ParamStore, range: f64, seed: u64) -> BiLstm {
        let mut rng = stream(seed, "t");
        BiLstm {
            forward: LstmCell::new(store, "f", 2, 3, range, &mut rng),
            backward: LstmCell::new(store, "b", 2, 3, range, &mut rng),
        }
    }

    #[test]
    fn single_position_has_double_width() {
        let mut store = ParamStore::new();
        let enc = bilstm(&mut store, 0.1, 1);
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[0.5, -0.5]));
        let out = enc.encode(&mut t, &store, &[x], None).unwrap();
        assert_eq!(t.shape(out.annotations), &[1, 1, 6]);
    }

    #[test]
    fn empty_source_is_contract_error() {
        let mut store = ParamStore::new();
        let enc = bilstm(&mut store, 0.1, 1);
        let mut t = Tape::new();
        assert!(matches!(
            enc.encode(&mut t, &store, &[], None),
            Err(FpbError::Contract(_))
        ));
    }

    #[test]
    fn zero_params_zero_annotations() {
        let mut store = ParamStore::new();
        let enc = bilstm(&mut store, 0.0, 1);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut t = Tape::new();
        let xs: Vec<Var> = (0..3)
            .map(|i| t.constant(Tensor::row(&[i as f64, 1.0])))
            .collect();
        let out = enc.encode(&mut t, &store, &xs, None).unwrap();
        assert!(t.value(out.annotations).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut store = ParamStore::new();
        let enc = bilstm(&mut store, 0.5, 9);
        let swapped = BiLstm {
            forward: enc.backward.clone(),
            backward: enc.forward.clone(),
        };
        let seq = [[0.3, -0.2], [0.9, 0.1], [-0.6, 0.4], [0.0, 0.8]];
        let mut t = Tape::new();
        let xs: Vec<Var> = seq.iter().map(|r| t.constant(Tensor::row(r))).collect();
        let rev: Vec<Var> = xs.iter().rev().cloned().collect();
        let a = enc.encode(&mut t, &store, &xs, None).unwrap();
        let b = swapped.encode(&mut t, &store, &rev, None).unwrap();
        let (va, vb) = (t.value(a.annotations), t.value(b.annotations));
        let n = seq.len();
        for j in 0..n {
            let ra = va.row_slice(j);
            let rb = vb.row_slice(n - 1 - j);
            // forward half of a == backward half of b, and vice versa
            assert_eq!(&ra[..3], &rb[3..]);
            assert_eq!(&ra[3..], &rb[..3]);
        }
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let mut store = ParamStore::new();
        let enc = bilstm(&mut store, 0.5, 4);
        let seq = [[0.3, -0.2], [0.9, 0.1]];
        let mut t = Tape::new();
        let alone: Vec<Var> = seq.iter().map(|r| t.constant(Tensor::row(r))).collect();
        let a = enc.encode(&mut t, &store, &alone, None).unwrap();
        let padded: Vec<Var> = [seq[0], seq[1], [7.0, 7.0]]
            .iter()
            .map(|r| t.constant(Tensor::row(r)))
            .collect();
        let mask = vec![vec![true, true, false]];
        let b = enc.encode(&mut t, &store, &padded, Some(&mask)).unwrap();
        let (va, vb) = (t.value(a.annotations), t.value(b.annotations));
        for j in 0..2 {
            assert_eq!(va.row_slice(j), vb.row_slice(j));
        }
        assert_eq!(t.value(a.final_forward), t.value(b.final_forward));
        assert_eq!(t.value(a.final_backward), t.value(b.final_backward));
    }
}
