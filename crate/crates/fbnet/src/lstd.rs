//! Feature boosting: split a backbone stack into per-joint channel groups,
//! sweep the graphical recurrence across them, and reassemble the boosted
//! stack for the downstream heads.
//!
//! Channel group j occupies channels `[j*c, (j+1)*c)` of the stack, in joint
//! index order. When the incoming stack width differs from `J*c`, a trained
//! 1x1 convolution reshapes it first.

use rand::Rng;

use crate::cells::{run_direction, CellKind, DirectionParams};
use crate::graph::{pass_order, Direction, PassOrder, PassPolicy, Wiring};
use crate::params::{bias_init, conv_init, Binding, ParamId, ParamSet};
use crate::tape::{Padding, Tape, Var};
use crate::tensor::{Scalar, TensorError};

/// One boosting block: parameter ids plus the precomputed unit schedules.
/// Owns no tape state; every call works on the caller's tape and binding.
pub struct Lstd {
    joints: usize,
    c: usize,
    c_in: usize,
    omega_sq: f64,
    proj: Option<Projection>,
    forward: Pass,
    backward: Option<Pass>,
}

struct Projection {
    kernel: ParamId,
    bias: ParamId,
}

struct Pass {
    order: PassOrder,
    params: DirectionParams,
}

/// Boosted per-joint maps plus their concatenation in joint order. `pre`
/// holds the channel groups before the recurrence and `gates` the
/// forward-pass consistency gates (`None` for ungated kinds); both exist for
/// inspection dumps.
pub struct Boosted {
    pub per_joint: Vec<Var>,
    pub stack: Var,
    pub pre: Vec<Var>,
    pub gates: Vec<Option<Var>>,
}

impl Lstd {
    /// Registers all weights for one block under `scope`. `c_in` is the
    /// channel width the backbone delivers; when it differs from `J*c` a
    /// projection (`{scope}proj.*`) is registered in front of the split.
    /// Backward-direction weights exist only for bidirectional wirings.
    #[allow(clippy::too_many_arguments)]
    pub fn init<F: Scalar, R: Rng>(
        params: &mut ParamSet<F>,
        scope: &str,
        wiring: &Wiring,
        kind: CellKind,
        k: usize,
        c: usize,
        c_in: usize,
        omega_sq: f64,
        rng: &mut R,
    ) -> Result<Lstd, TensorError> {
        let joints = wiring.graph.joint_count();
        if joints == 0 || c == 0 {
            return Err(TensorError::Invalid(
                "channel grouping needs at least one joint and one channel per joint".into(),
            ));
        }
        if kind == CellKind::ConvLstmCcg && !(omega_sq > 0.0) {
            return Err(TensorError::Invalid(format!(
                "gate spread must be positive, got {omega_sq}"
            )));
        }
        let stacked = joints * c;
        let proj = if c_in == stacked {
            None
        } else {
            Some(Projection {
                kernel: params
                    .insert(format!("{scope}proj.W"), conv_init(1, c_in, stacked, rng))?,
                bias: params.insert(format!("{scope}proj.b"), bias_init(stacked, 0.0))?,
            })
        };
        let forward = Pass {
            order: pass_order(&wiring.graph, Direction::Forward),
            params: DirectionParams::init(params, scope, "fwd", kind, joints, k, c, stacked, rng)?,
        };
        let backward = match wiring.passes {
            PassPolicy::ForwardOnly => None,
            PassPolicy::Bidirectional => Some(Pass {
                order: pass_order(&wiring.graph, Direction::Backward),
                params: DirectionParams::init(
                    params, scope, "bwd", kind, joints, k, c, stacked, rng,
                )?,
            }),
        };
        Ok(Lstd { joints, c, c_in, omega_sq, proj, forward, backward })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn channels_per_joint(&self) -> usize {
        self.c
    }

    pub fn input_channels(&self) -> usize {
        self.c_in
    }

    /// Channel width of the grouped (and of the boosted) stack.
    pub fn stacked_channels(&self) -> usize {
        self.joints * self.c
    }

    pub fn kind(&self) -> CellKind {
        self.forward.params.kind()
    }

    /// The grouped stack (projected if the widths differ) and its `J`
    /// contiguous channel slices.
    pub fn split<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        stack: Var,
    ) -> Result<(Var, Vec<Var>), TensorError> {
        let shape = tape.value(stack).shape();
        if shape.len() != 3 || shape[2] != self.c_in {
            return Err(TensorError::Invalid(format!(
                "expected a feature stack with {} channels, got shape {:?}",
                self.c_in, shape
            )));
        }
        let grouped = match &self.proj {
            None => stack,
            Some(p) => tape.conv2d(stack, b.var(p.kernel), b.var(p.bias), Padding::Same)?,
        };
        let groups = (0..self.joints)
            .map(|j| tape.slice_channels(grouped, j * self.c, self.c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((grouped, groups))
    }

    /// Split, run the recurrence, and concatenate the boosted groups back in
    /// joint order. Bidirectional wirings sum the two hidden maps per joint.
    pub fn boost<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        stack: Var,
    ) -> Result<Boosted, TensorError> {
        let (grouped, groups) = self.split(tape, b, stack)?;
        let f_stack = (self.kind() == CellKind::ConvLstmCcg).then_some(grouped);
        let fwd = self.forward.params.bind(b);
        let forward =
            run_direction(tape, &self.forward.order, &groups, f_stack, &fwd, self.omega_sq)?;
        let gates = forward.gates;
        let per_joint = match &self.backward {
            None => forward.hidden,
            Some(back) => {
                let bwd = back.params.bind(b);
                let backward =
                    run_direction(tape, &back.order, &groups, f_stack, &bwd, self.omega_sq)?;
                forward
                    .hidden
                    .iter()
                    .zip(&backward.hidden)
                    .map(|(&hf, &hb)| tape.add(hf, hb))
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        let stack = tape.concat_channels(&per_joint)?;
        Ok(Boosted { per_joint, stack, pre: groups, gates })
    }

    /// Split followed directly by reassembly, skipping the recurrence.
    /// Isolates the channel plumbing when a boost result looks wrong.
    pub fn passthrough<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        stack: Var,
    ) -> Result<Boosted, TensorError> {
        let (_, groups) = self.split(tape, b, stack)?;
        let stack = tape.concat_channels(&groups)?;
        let gates = vec![None; groups.len()];
        Ok(Boosted { per_joint: groups.clone(), stack, pre: groups, gates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{aggregate, convlstm_step, convlstm_step_gated, BoundCellWeights};
    use crate::graph::{load_graph_text, shipped, variant, ConnectionKind};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn chain(n: usize) -> Wiring {
        let mut text = String::new();
        for i in 0..n {
            text.push_str(&format!("joint {i} j{i}\n"));
        }
        text.push_str("root 0\n");
        for i in 1..n {
            text.push_str(&format!("edge {} {i} physical\n", i - 1));
        }
        let g = load_graph_text(&text).unwrap();
        variant(&g, ConnectionKind::Bidirectional).unwrap()
    }

    fn lstm_weights(p: &ParamSet<f64>, b: &Binding, dir: &str) -> BoundCellWeights {
        let var = |n: &str| b.var(p.id(&format!("cell.{dir}.{n}")).unwrap());
        BoundCellWeights {
            w_fi: var("W_Fi"),
            w_hi: var("W_Hi"),
            w_ff: var("W_Ff"),
            w_hf: var("W_Hf"),
            w_fc: var("W_Fc"),
            w_hc: var("W_Hc"),
            w_fo: var("W_Fo"),
            w_ho: var("W_Ho"),
            b_i: var("b_i"),
            b_f: var("b_f"),
            b_c: var("b_c"),
            b_o: var("b_o"),
        }
    }

    #[test]
    fn split_without_projection_slices_contiguously() {
        let wiring = chain(16);
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstm,
            3,
            4,
            64,
            2.0,
            &mut rng(1),
        )
        .unwrap();
        assert!(params.id("proj.W").is_none());

        let stack = Tensor::rand_uniform(&[16, 16, 64], -1.0, 1.0, &mut rng(2));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(stack.clone());
        let (grouped, groups) = lstd.split(&mut tape, &b, x).unwrap();
        assert_eq!(grouped, x);
        assert_eq!(groups.len(), 16);
        for (j, &g) in groups.iter().enumerate() {
            let got = tape.value(g);
            assert_eq!(got.shape(), &[16, 16, 4]);
            let want = Tensor::from_fn(&[16, 16, 4], |idx| {
                let ch = idx % 4;
                let x = (idx / 4) % 16;
                let y = idx / (4 * 16);
                stack.at3(y, x, j * 4 + ch)
            });
            assert_eq!(got.data(), want.data());
        }
    }

    #[test]
    fn passthrough_reassembles_bit_exactly() {
        let wiring = chain(5);
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstm,
            3,
            3,
            15,
            2.0,
            &mut rng(3),
        )
        .unwrap();
        let stack = Tensor::rand_uniform(&[7, 9, 15], -2.0, 2.0, &mut rng(4));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(stack.clone());
        let out = lstd.passthrough(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(out.stack).data(), stack.data());
    }

    #[test]
    fn channel_mismatch_inserts_projection() {
        let wiring = chain(21);
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstm,
            3,
            16,
            256,
            2.0,
            &mut rng(5),
        )
        .unwrap();
        assert_eq!(lstd.stacked_channels(), 336);
        let w = params.id("proj.W").unwrap();
        assert_eq!(params.value(w).shape(), &[1, 1, 256, 336]);

        let stack = Tensor::rand_uniform(&[8, 8, 256], -1.0, 1.0, &mut rng(6));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(stack);
        let (grouped, groups) = lstd.split(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(grouped).shape(), &[8, 8, 336]);
        assert_eq!(groups.len(), 21);
        for &g in &groups {
            assert_eq!(tape.value(g).shape(), &[8, 8, 16]);
        }
        let out = lstd.passthrough(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(out.stack).data(), tape.value(grouped).data());
    }

    #[test]
    fn single_joint_group_is_the_whole_stack() {
        let g = load_graph_text("joint 0 solo\nroot 0\n").unwrap();
        let wiring = variant(&g, ConnectionKind::GraphicalForwardOnly).unwrap();
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstm,
            1,
            6,
            6,
            2.0,
            &mut rng(7),
        )
        .unwrap();
        let stack = Tensor::rand_uniform(&[4, 4, 6], -1.0, 1.0, &mut rng(8));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(stack.clone());
        let (_, groups) = lstd.split(&mut tape, &b, x).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(tape.value(groups[0]).data(), stack.data());
    }

    #[test]
    fn zero_group_width_rejected() {
        let wiring = chain(4);
        let mut params = ParamSet::<f64>::new();
        let err = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstm,
            3,
            0,
            12,
            2.0,
            &mut rng(9),
        )
        .map(|_| ())
        .unwrap_err();
        assert!(err.to_string().contains("channel grouping"));
    }

    #[test]
    fn wrong_stack_width_rejected() {
        let wiring = chain(3);
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstm,
            3,
            2,
            6,
            2.0,
            &mut rng(10),
        )
        .unwrap();
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(Tensor::<f64>::zeros(&[4, 4, 7]));
        let err = lstd.split(&mut tape, &b, x).unwrap_err();
        assert!(err.to_string().contains("6 channels"));
    }

    #[test]
    fn forward_only_wiring_registers_no_backward_weights() {
        let g = load_graph_text(shipped::FIGURE7).unwrap();
        let fwd_only = variant(&g, ConnectionKind::GraphicalForwardOnly).unwrap();
        let mut params = ParamSet::<f64>::new();
        Lstd::init(
            &mut params,
            "",
            &fwd_only,
            CellKind::ConvLstmCcg,
            3,
            2,
            14,
            2.0,
            &mut rng(11),
        )
        .unwrap();
        assert!(params.id("cell.fwd.W_Fi").is_some());
        assert!(params.id("ccg.fwd.unit0.W_Hp").is_some());
        assert!(params.id("cell.bwd.W_Fi").is_none());
        assert!(params.id("ccg.bwd.unit0.W_Hp").is_none());
    }

    /// fb on a chain equals stepping a plain sequential ConvLSTM down the
    /// chain and back up, summing the two hidden maps per joint.
    #[test]
    fn chain_boost_matches_sequential_reference() {
        let n = 4;
        let (h, w, c) = (5, 5, 2);
        let wiring = chain(n);
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstm,
            3,
            c,
            n * c,
            2.0,
            &mut rng(12),
        )
        .unwrap();
        let stack = Tensor::rand_uniform(&[h, w, n * c], -1.0, 1.0, &mut rng(13));

        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(stack.clone());
        let out = lstd.boost(&mut tape, &b, x).unwrap();

        let mut ref_tape = Tape::new();
        let rb = params.bind(&mut ref_tape);
        let rx = ref_tape.constant(stack);
        let (_, groups) = lstd.split(&mut ref_tape, &rb, rx).unwrap();
        let shape = [h, w, c];
        let mut sums = vec![None; n];
        for (dir, seq) in [("fwd", (0..n).collect::<Vec<_>>()), ("bwd", (0..n).rev().collect())] {
            let weights = lstm_weights(&params, &rb, dir);
            let mut prev = None;
            for &j in &seq {
                let (h_bar, c_bar) = match prev {
                    None => {
                        let z = aggregate(&mut ref_tape, &[], &shape).unwrap();
                        (z, z)
                    }
                    Some((ph, pc)) => (
                        aggregate(&mut ref_tape, &[ph], &shape).unwrap(),
                        aggregate(&mut ref_tape, &[pc], &shape).unwrap(),
                    ),
                };
                let s =
                    convlstm_step(&mut ref_tape, groups[j], h_bar, c_bar, &weights).unwrap();
                prev = Some((s.h, s.c));
                sums[j] = match sums[j] {
                    None => Some(s.h),
                    Some(acc) => Some(ref_tape.add(acc, s.h).unwrap()),
                };
            }
        }
        for j in 0..n {
            let want = ref_tape.value(sums[j].unwrap());
            assert_eq!(tape.value(out.per_joint[j]).data(), want.data(), "joint {j}");
        }
    }

    /// A spread so wide the gate saturates at exactly 1 reduces the gated
    /// update to its pure write form, on every unit of a merge-bearing graph.
    #[test]
    fn saturated_gate_boost_matches_write_only_reference() {
        let g = load_graph_text(shipped::FIGURE7).unwrap();
        let wiring = variant(&g, ConnectionKind::GraphicalForwardOnly).unwrap();
        let (h, w, c) = (4, 4, 2);
        let joints = g.joint_count();
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstmCcg,
            3,
            c,
            joints * c,
            1e30,
            &mut rng(14),
        )
        .unwrap();
        let stack = Tensor::rand_uniform(&[h, w, joints * c], -1.0, 1.0, &mut rng(15));

        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(stack.clone());
        let out = lstd.boost(&mut tape, &b, x).unwrap();

        let mut ref_tape = Tape::new();
        let rb = params.bind(&mut ref_tape);
        let rx = ref_tape.constant(stack);
        let (_, groups) = lstd.split(&mut ref_tape, &rb, rx).unwrap();
        let weights = lstm_weights(&params, &rb, "fwd");
        let ones = ref_tape.constant(Tensor::filled(&[h, w, c], 1.0));
        let shape = [h, w, c];
        let order = pass_order(&g, Direction::Forward);
        let mut hidden = vec![None; joints];
        let mut cell = vec![None; joints];
        for &j in &order.sequence {
            let ph: Vec<Var> = order.preds[j].iter().map(|&p| hidden[p].unwrap()).collect();
            let pc: Vec<Var> = order.preds[j].iter().map(|&p| cell[p].unwrap()).collect();
            let h_bar = aggregate(&mut ref_tape, &ph, &shape).unwrap();
            let c_bar = aggregate(&mut ref_tape, &pc, &shape).unwrap();
            let s = convlstm_step_gated(&mut ref_tape, groups[j], h_bar, c_bar, &weights, ones)
                .unwrap();
            hidden[j] = Some(s.h);
            cell[j] = Some(s.c);
        }
        for j in 0..joints {
            let want = ref_tape.value(hidden[j].unwrap());
            assert_eq!(tape.value(out.per_joint[j]).data(), want.data(), "joint {j}");
        }
    }

    #[test]
    fn boosted_stack_slices_back_to_per_joint_maps() {
        let g = load_graph_text(shipped::FIGURE7).unwrap();
        let wiring = variant(&g, ConnectionKind::Bidirectional).unwrap();
        let c = 3;
        let joints = g.joint_count();
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvLstmCcg,
            3,
            c,
            joints * c,
            2.0,
            &mut rng(16),
        )
        .unwrap();
        let stack = Tensor::rand_uniform(&[6, 5, joints * c], -1.0, 1.0, &mut rng(17));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(stack);
        let out = lstd.boost(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(out.stack).shape(), &[6, 5, joints * c]);
        for (j, &pj) in out.per_joint.iter().enumerate() {
            assert_eq!(tape.value(pj).shape(), &[6, 5, c]);
            let slice = tape.slice_channels(out.stack, j * c, c).unwrap();
            assert_eq!(tape.value(slice).data(), tape.value(pj).data());
        }
    }

    #[test]
    fn boost_is_deterministic_across_tapes() {
        let wiring = chain(3);
        let mut params = ParamSet::<f64>::new();
        let lstd = Lstd::init(
            &mut params,
            "",
            &wiring,
            CellKind::ConvGru,
            3,
            2,
            9,
            2.0,
            &mut rng(18),
        )
        .unwrap();
        let stack = Tensor::rand_uniform(&[4, 4, 9], -1.0, 1.0, &mut rng(19));
        let run = |stack: &Tensor<f64>| {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let x = tape.constant(stack.clone());
            let out = lstd.boost(&mut tape, &b, x).unwrap();
            tape.value(out.stack).data().to_vec()
        };
        assert_eq!(run(&stack), run(&stack));
    }
}
