//! Graph-structured recurrent units and their directional runners.
//!
//! One "unit" is one joint. A directional sweep walks a [`PassOrder`] and
//! feeds each unit the arithmetic mean of its predecessors' hidden (and for
//! LSTM kinds, cell) states; roots get zero context. Cell weights are shared
//! across units within a direction. The consistency-gated variant predicts
//! each unit's input from its linked hidden states and the whole feature
//! stack, scores the match with a Gaussian gate, and blends the cell update
//! between context and input terms by that gate.

use rand::Rng;

use crate::graph::PassOrder;
use crate::params::{bias_init, conv_init, Binding, ParamId, ParamSet};
use crate::tape::{Padding, Tape, Var};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    ConvLstm,
    ConvLstmCcg,
    ConvGru,
    ConvRnn,
}

impl CellKind {
    pub const ALL: [CellKind; 4] =
        [CellKind::ConvLstm, CellKind::ConvLstmCcg, CellKind::ConvGru, CellKind::ConvRnn];

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::ConvLstm => "convlstm",
            CellKind::ConvLstmCcg => "convlstm_ccg",
            CellKind::ConvGru => "convgru",
            CellKind::ConvRnn => "convrnn",
        }
    }

    pub fn parse(token: &str) -> Option<CellKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == token)
    }

    pub fn uses_cell_state(self) -> bool {
        matches!(self, CellKind::ConvLstm | CellKind::ConvLstmCcg)
    }
}

/// Gate and candidate weights of one direction's ConvLSTM, shared by every
/// unit in that direction.
#[derive(Debug, Clone)]
pub struct CellWeights {
    pub w_fi: ParamId,
    pub w_hi: ParamId,
    pub w_ff: ParamId,
    pub w_hf: ParamId,
    pub w_fc: ParamId,
    pub w_hc: ParamId,
    pub w_fo: ParamId,
    pub w_ho: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_c: ParamId,
    pub b_o: ParamId,
}

#[derive(Debug, Clone)]
pub struct GruWeights {
    pub w_fz: ParamId,
    pub w_hz: ParamId,
    pub w_fr: ParamId,
    pub w_hr: ParamId,
    pub w_fh: ParamId,
    pub w_hh: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

#[derive(Debug, Clone)]
pub struct RnnWeights {
    pub w_f: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

/// One unit's input-prediction parameters for the consistency gate.
#[derive(Debug, Clone)]
pub struct CcgUnit {
    pub w_hp: ParamId,
    pub w_fp: ParamId,
    pub b_p: ParamId,
}

#[derive(Debug, Clone)]
enum CellParams {
    Lstm(CellWeights),
    Gru(GruWeights),
    Rnn(RnnWeights),
}

/// Everything one direction of the recurrence owns: shared cell weights plus
/// (for the gated kind) per-unit prediction parameters.
#[derive(Debug, Clone)]
pub struct DirectionParams {
    kind: CellKind,
    cell: CellParams,
    ccg: Option<Vec<CcgUnit>>,
}

impl DirectionParams {
    /// Registers freshly initialized weights under
    /// `{scope}cell.{dir}.<name>` and `{scope}ccg.{dir}.unit<j>.<name>`.
    /// Kernels are Glorot-uniform; the forget bias starts at 1, every other
    /// bias at 0. `c_total` is the channel width of the full feature stack
    /// seen by the gate's input predictor.
    #[allow(clippy::too_many_arguments)]
    pub fn init<F: Scalar, R: Rng>(
        params: &mut ParamSet<F>,
        scope: &str,
        dir: &str,
        kind: CellKind,
        joints: usize,
        k: usize,
        c: usize,
        c_total: usize,
        rng: &mut R,
    ) -> Result<DirectionParams, TensorError> {
        let kernel = |params: &mut ParamSet<F>, name: &str, rng: &mut R| {
            params.insert(format!("{scope}cell.{dir}.{name}"), conv_init(k, c, c, rng))
        };
        let bias = |params: &mut ParamSet<F>, name: &str, v: f64| {
            params.insert(format!("{scope}cell.{dir}.{name}"), bias_init(c, v))
        };
        let cell = match kind {
            CellKind::ConvLstm | CellKind::ConvLstmCcg => CellParams::Lstm(CellWeights {
                w_fi: kernel(params, "W_Fi", rng)?,
                w_hi: kernel(params, "W_Hi", rng)?,
                w_ff: kernel(params, "W_Ff", rng)?,
                w_hf: kernel(params, "W_Hf", rng)?,
                w_fc: kernel(params, "W_Fc", rng)?,
                w_hc: kernel(params, "W_Hc", rng)?,
                w_fo: kernel(params, "W_Fo", rng)?,
                w_ho: kernel(params, "W_Ho", rng)?,
                b_i: bias(params, "b_i", 0.0)?,
                b_f: bias(params, "b_f", 1.0)?,
                b_c: bias(params, "b_c", 0.0)?,
                b_o: bias(params, "b_o", 0.0)?,
            }),
            CellKind::ConvGru => CellParams::Gru(GruWeights {
                w_fz: kernel(params, "W_Fz", rng)?,
                w_hz: kernel(params, "W_Hz", rng)?,
                w_fr: kernel(params, "W_Fr", rng)?,
                w_hr: kernel(params, "W_Hr", rng)?,
                w_fh: kernel(params, "W_Fh", rng)?,
                w_hh: kernel(params, "W_Hh", rng)?,
                b_z: bias(params, "b_z", 0.0)?,
                b_r: bias(params, "b_r", 0.0)?,
                b_h: bias(params, "b_h", 0.0)?,
            }),
            CellKind::ConvRnn => CellParams::Rnn(RnnWeights {
                w_f: kernel(params, "W_F", rng)?,
                w_h: kernel(params, "W_H", rng)?,
                b: bias(params, "b", 0.0)?,
            }),
        };
        let ccg = if kind == CellKind::ConvLstmCcg {
            let mut units = Vec::with_capacity(joints);
            for j in 0..joints {
                let prefix = format!("{scope}ccg.{dir}.unit{j}");
                units.push(CcgUnit {
                    w_hp: params.insert(format!("{prefix}.W_Hp"), conv_init(k, c, c, rng))?,
                    w_fp: params
                        .insert(format!("{prefix}.W_Fp"), conv_init(k, c_total, c, rng))?,
                    b_p: params.insert(format!("{prefix}.b_p"), bias_init(c, 0.0))?,
                });
            }
            Some(units)
        } else {
            None
        };
        Ok(DirectionParams { kind, cell, ccg })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn bind(&self, b: &Binding) -> BoundDirection {
        let cell = match &self.cell {
            CellParams::Lstm(w) => BoundCell::Lstm(BoundCellWeights {
                w_fi: b.var(w.w_fi),
                w_hi: b.var(w.w_hi),
                w_ff: b.var(w.w_ff),
                w_hf: b.var(w.w_hf),
                w_fc: b.var(w.w_fc),
                w_hc: b.var(w.w_hc),
                w_fo: b.var(w.w_fo),
                w_ho: b.var(w.w_ho),
                b_i: b.var(w.b_i),
                b_f: b.var(w.b_f),
                b_c: b.var(w.b_c),
                b_o: b.var(w.b_o),
            }),
            CellParams::Gru(w) => BoundCell::Gru(BoundGruWeights {
                w_fz: b.var(w.w_fz),
                w_hz: b.var(w.w_hz),
                w_fr: b.var(w.w_fr),
                w_hr: b.var(w.w_hr),
                w_fh: b.var(w.w_fh),
                w_hh: b.var(w.w_hh),
                b_z: b.var(w.b_z),
                b_r: b.var(w.b_r),
                b_h: b.var(w.b_h),
            }),
            CellParams::Rnn(w) => BoundCell::Rnn(BoundRnnWeights {
                w_f: b.var(w.w_f),
                w_h: b.var(w.w_h),
                b: b.var(w.b),
            }),
        };
        let ccg = self.ccg.as_ref().map(|units| {
            units
                .iter()
                .map(|u| BoundCcgUnit {
                    w_hp: b.var(u.w_hp),
                    w_fp: b.var(u.w_fp),
                    b_p: b.var(u.b_p),
                })
                .collect()
        });
        BoundDirection { kind: self.kind, cell, ccg }
    }
}

/// Tape-variable view of one direction's parameters for a single forward
/// pass.
pub struct BoundDirection {
    pub kind: CellKind,
    cell: BoundCell,
    ccg: Option<Vec<BoundCcgUnit>>,
}

pub struct BoundCellWeights {
    pub w_fi: Var,
    pub w_hi: Var,
    pub w_ff: Var,
    pub w_hf: Var,
    pub w_fc: Var,
    pub w_hc: Var,
    pub w_fo: Var,
    pub w_ho: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_c: Var,
    pub b_o: Var,
}

pub struct BoundGruWeights {
    pub w_fz: Var,
    pub w_hz: Var,
    pub w_fr: Var,
    pub w_hr: Var,
    pub w_fh: Var,
    pub w_hh: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

pub struct BoundRnnWeights {
    pub w_f: Var,
    pub w_h: Var,
    pub b: Var,
}

enum BoundCell {
    Lstm(BoundCellWeights),
    Gru(BoundGruWeights),
    Rnn(BoundRnnWeights),
}

pub struct BoundCcgUnit {
    pub w_hp: Var,
    pub w_fp: Var,
    pub b_p: Var,
}

/// Cell and hidden maps of one evaluated unit.
#[derive(Debug, Clone, Copy)]
pub struct UnitState {
    pub c: Var,
    pub h: Var,
}

/// Mean of predecessor state maps; the empty set (a root unit) contributes a
/// zero map of `shape`.
pub fn aggregate<F: Scalar>(
    tape: &mut Tape<F>,
    states: &[Var],
    shape: &[usize],
) -> Result<Var, TensorError> {
    match states {
        [] => Ok(tape.constant(Tensor::zeros(shape))),
        [first, rest @ ..] => {
            if tape.value(*first).shape() != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "aggregate",
                    lhs: tape.value(*first).shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            let mut acc = *first;
            for &s in rest {
                acc = tape.add(acc, s)?;
            }
            Ok(tape.scale(acc, F::from_f64(1.0 / states.len() as f64)))
        }
    }
}

fn gate_pre<F: Scalar>(
    tape: &mut Tape<F>,
    f_j: Var,
    h_bar: Var,
    w_f: Var,
    w_h: Var,
    b: Var,
) -> Result<Var, TensorError> {
    let from_input = tape.conv2d_nobias(f_j, w_f, Padding::Same)?;
    let from_context = tape.conv2d_nobias(h_bar, w_h, Padding::Same)?;
    let s = tape.add(from_input, from_context)?;
    tape.add_bias(s, b)
}

/// One plain ConvLSTM unit update.
pub fn convlstm_step<F: Scalar>(
    tape: &mut Tape<F>,
    f_j: Var,
    h_bar: Var,
    c_bar: Var,
    w: &BoundCellWeights,
) -> Result<UnitState, TensorError> {
    let (i, f, c_cand, o) = lstm_gates(tape, f_j, h_bar, w)?;
    let keep = tape.mul(f, c_bar)?;
    let write = tape.mul(i, c_cand)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act)?;
    Ok(UnitState { c, h })
}

/// ConvLSTM unit update with the consistency gate blending the cell terms:
/// context keeps weight `1 - G`, fresh input keeps weight `G`.
pub fn convlstm_step_gated<F: Scalar>(
    tape: &mut Tape<F>,
    f_j: Var,
    h_bar: Var,
    c_bar: Var,
    w: &BoundCellWeights,
    gate: Var,
) -> Result<UnitState, TensorError> {
    let (i, f, c_cand, o) = lstm_gates(tape, f_j, h_bar, w)?;
    let keep = tape.mul(f, c_bar)?;
    let write = tape.mul(i, c_cand)?;
    let ones = tape.constant(Tensor::filled(tape.value(gate).shape(), F::one()));
    let inv_gate = tape.sub(ones, gate)?;
    let keep_gated = tape.mul(keep, inv_gate)?;
    let write_gated = tape.mul(write, gate)?;
    let c = tape.add(keep_gated, write_gated)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act)?;
    Ok(UnitState { c, h })
}

fn lstm_gates<F: Scalar>(
    tape: &mut Tape<F>,
    f_j: Var,
    h_bar: Var,
    w: &BoundCellWeights,
) -> Result<(Var, Var, Var, Var), TensorError> {
    let pre_i = gate_pre(tape, f_j, h_bar, w.w_fi, w.w_hi, w.b_i)?;
    let i = tape.sigmoid(pre_i);
    let pre_f = gate_pre(tape, f_j, h_bar, w.w_ff, w.w_hf, w.b_f)?;
    let f = tape.sigmoid(pre_f);
    let pre_c = gate_pre(tape, f_j, h_bar, w.w_fc, w.w_hc, w.b_c)?;
    let c_cand = tape.tanh(pre_c);
    let pre_o = gate_pre(tape, f_j, h_bar, w.w_fo, w.w_ho, w.b_o)?;
    let o = tape.sigmoid(pre_o);
    Ok((i, f, c_cand, o))
}

/// Predicted input map for one unit: tanh of the mean of convolved linked
/// hidden states plus a convolution of the whole feature stack plus bias.
pub fn ccg_predict<F: Scalar>(
    tape: &mut Tape<F>,
    linked_h: &[Var],
    f_stack: Var,
    unit: &BoundCcgUnit,
    shape: &[usize],
) -> Result<Var, TensorError> {
    let convolved: Vec<Var> = linked_h
        .iter()
        .map(|&h| tape.conv2d_nobias(h, unit.w_hp, Padding::Same))
        .collect::<Result<_, _>>()?;
    let hidden_term = aggregate(tape, &convolved, shape)?;
    let stack_term = tape.conv2d_nobias(f_stack, unit.w_fp, Padding::Same)?;
    let s = tape.add(hidden_term, stack_term)?;
    let pre = tape.add_bias(s, unit.b_p)?;
    Ok(tape.tanh(pre))
}

/// Consistency gate: `exp(-(P - tanh(F))^2 / omega_sq)`, elementwise.
pub fn ccg_gate<F: Scalar>(
    tape: &mut Tape<F>,
    p_j: Var,
    f_j: Var,
    omega_sq: f64,
) -> Result<Var, TensorError> {
    if !(omega_sq > 0.0) {
        return Err(TensorError::Invalid(format!(
            "gate spread must be positive, got {omega_sq}"
        )));
    }
    let f_act = tape.tanh(f_j);
    let diff = tape.sub(p_j, f_act)?;
    let sq = tape.square(diff);
    let scaled = tape.scale(sq, F::from_f64(-1.0 / omega_sq));
    Ok(tape.exp(scaled))
}

/// One ConvGRU unit update.
pub fn convgru_step<F: Scalar>(
    tape: &mut Tape<F>,
    f_j: Var,
    h_bar: Var,
    w: &BoundGruWeights,
) -> Result<Var, TensorError> {
    let pre_z = gate_pre(tape, f_j, h_bar, w.w_fz, w.w_hz, w.b_z)?;
    let z = tape.sigmoid(pre_z);
    let pre_r = gate_pre(tape, f_j, h_bar, w.w_fr, w.w_hr, w.b_r)?;
    let r = tape.sigmoid(pre_r);
    let gated_ctx = tape.mul(r, h_bar)?;
    let pre_h = gate_pre(tape, f_j, gated_ctx, w.w_fh, w.w_hh, w.b_h)?;
    let cand = tape.tanh(pre_h);
    let ones = tape.constant(Tensor::filled(tape.value(z).shape(), F::one()));
    let keep = tape.sub(ones, z)?;
    let from_ctx = tape.mul(keep, h_bar)?;
    let from_cand = tape.mul(z, cand)?;
    tape.add(from_ctx, from_cand)
}

/// One ConvRNN unit update.
pub fn convrnn_step<F: Scalar>(
    tape: &mut Tape<F>,
    f_j: Var,
    h_bar: Var,
    w: &BoundRnnWeights,
) -> Result<Var, TensorError> {
    let pre = gate_pre(tape, f_j, h_bar, w.w_f, w.w_h, w.b)?;
    Ok(tape.tanh(pre))
}

/// Hidden (and for LSTM kinds, cell) maps of every unit after one
/// directional sweep.
pub struct DirectionRun {
    pub hidden: Vec<Var>,
    /// Empty for cell kinds without a cell state.
    pub cell: Vec<Var>,
    /// Per-unit consistency gate maps; `None` entries for ungated kinds.
    pub gates: Vec<Option<Var>>,
}

/// Evaluates all units in schedule order for one direction.
///
/// `inputs` holds F_j per joint; `f_stack` is the whole feature stack and is
/// required by the gated kind only. `omega_sq` is likewise gate-only.
pub fn run_direction<F: Scalar>(
    tape: &mut Tape<F>,
    order: &PassOrder,
    inputs: &[Var],
    f_stack: Option<Var>,
    dir: &BoundDirection,
    omega_sq: f64,
) -> Result<DirectionRun, TensorError> {
    let joints = order.preds.len();
    if inputs.len() != joints {
        return Err(TensorError::Invalid(format!(
            "graph has {joints} joints but {} unit inputs supplied",
            inputs.len()
        )));
    }
    let shape = tape.value(inputs[0]).shape().to_vec();
    let mut hidden: Vec<Option<Var>> = vec![None; joints];
    let mut cell: Vec<Option<Var>> = vec![None; joints];
    let mut gates: Vec<Option<Var>> = vec![None; joints];

    for &j in &order.sequence {
        let pred_h: Vec<Var> = order.preds[j]
            .iter()
            .map(|&p| hidden[p].expect("schedule places preds first"))
            .collect();
        let h_bar = aggregate(tape, &pred_h, &shape)?;
        match (&dir.cell, dir.kind) {
            (BoundCell::Lstm(w), kind) => {
                let pred_c: Vec<Var> = order.preds[j]
                    .iter()
                    .map(|&p| cell[p].expect("schedule places preds first"))
                    .collect();
                let c_bar = aggregate(tape, &pred_c, &shape)?;
                let state = if kind == CellKind::ConvLstmCcg {
                    let units = dir.ccg.as_ref().ok_or_else(|| {
                        TensorError::Invalid("gated cell without prediction parameters".into())
                    })?;
                    if units.len() != joints {
                        return Err(TensorError::Invalid(format!(
                            "{} prediction units for {joints} joints",
                            units.len()
                        )));
                    }
                    let stack = f_stack.ok_or_else(|| {
                        TensorError::Invalid("gated cell needs the full feature stack".into())
                    })?;
                    let p = ccg_predict(tape, &pred_h, stack, &units[j], &shape)?;
                    let g = ccg_gate(tape, p, inputs[j], omega_sq)?;
                    gates[j] = Some(g);
                    convlstm_step_gated(tape, inputs[j], h_bar, c_bar, w, g)?
                } else {
                    convlstm_step(tape, inputs[j], h_bar, c_bar, w)?
                };
                hidden[j] = Some(state.h);
                cell[j] = Some(state.c);
            }
            (BoundCell::Gru(w), _) => {
                hidden[j] = Some(convgru_step(tape, inputs[j], h_bar, w)?);
            }
            (BoundCell::Rnn(w), _) => {
                hidden[j] = Some(convrnn_step(tape, inputs[j], h_bar, w)?);
            }
        }
    }
    let hidden = hidden.into_iter().map(|h| h.expect("all units scheduled")).collect();
    let cell = if dir.kind.uses_cell_state() {
        cell.into_iter().map(|c| c.expect("all units scheduled")).collect()
    } else {
        Vec::new()
    };
    Ok(DirectionRun { hidden, cell, gates })
}

/// Forward plus backward sweep; the boosted output of joint j is the
/// elementwise sum of its two hidden maps.
#[allow(clippy::too_many_arguments)]
pub fn run_bidirectional<F: Scalar>(
    tape: &mut Tape<F>,
    forward: &PassOrder,
    backward: &PassOrder,
    inputs: &[Var],
    f_stack: Option<Var>,
    fwd: &BoundDirection,
    bwd: &BoundDirection,
    omega_sq: f64,
) -> Result<Vec<Var>, TensorError> {
    let f = run_direction(tape, forward, inputs, f_stack, fwd, omega_sq)?;
    let b = run_direction(tape, backward, inputs, f_stack, bwd, omega_sq)?;
    f.hidden
        .iter()
        .zip(&b.hidden)
        .map(|(&hf, &hb)| tape.add(hf, hb))
        .collect()
}
