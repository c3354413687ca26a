//! The full pose network: a compact encoder-decoder backbone, per-joint
//! feature boosting, heatmap heads, depth regression over an aggregated
//! representation, and sub-network stacking with intermediate supervision.
//!
//! Resolution contract: the stem reduces the input by 4x to the feature
//! extent; everything downstream of it (boosting, heatmaps, aggregation)
//! runs at that extent. Sub-network s > 0 consumes the previous aggregated
//! representation concatenated with the previous raw feature stack.

use rand::Rng;

use crate::config::{BoostMode, NetworkCfg};
use crate::graph::Wiring;
use crate::lstd::{Boosted, Lstd};
use crate::params::{bias_init, conv_init, linear_init, Binding, ParamId, ParamSet};
use crate::tape::{Padding, Tape, Var};
use crate::tensor::{Scalar, Tensor, TensorError};

struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    fn init<F: Scalar, R: Rng>(
        params: &mut ParamSet<F>,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Conv, TensorError> {
        Ok(Conv {
            w: params.insert(format!("{name}.W"), conv_init(k, cin, cout, rng))?,
            b: params.insert(format!("{name}.b"), bias_init(cout, 0.0))?,
        })
    }

    fn linear<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        x: Var,
    ) -> Result<Var, TensorError> {
        tape.conv2d(x, b.var(self.w), b.var(self.b), Padding::Same)
    }

    fn tanh<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, x: Var) -> Result<Var, TensorError> {
        let y = self.linear(tape, b, x)?;
        Ok(tape.tanh(y))
    }
}

struct SubNet {
    entry: Conv,
    down: Conv,
    bottleneck: Conv,
    out: Conv,
    lstd: Lstd,
    head_hidden: Conv,
    head_out: Conv,
    agg_heat: ParamId,
    agg_boost: ParamId,
    depth: Vec<Conv>,
    fc_w: ParamId,
    fc_b: ParamId,
}

/// Everything one sub-network emits. All maps share the feature extent.
pub struct StackOutput {
    /// Raw feature stack from this sub-network's backbone core.
    pub features: Var,
    /// First-layer map of the core, reused by the aggregation.
    pub skip: Var,
    pub boosted: Boosted,
    /// One `[h, w, 1]` map per joint.
    pub heatmaps: Vec<Var>,
    /// The same maps concatenated to `[h, w, J]`.
    pub heatmap_stack: Var,
    /// Aggregated representation feeding the depth head (and the next
    /// sub-network).
    pub agg: Var,
    /// `[J]` root-relative depths.
    pub depths: Var,
}

pub struct Network {
    cfg: NetworkCfg,
    stem0: Conv,
    stem1: Conv,
    stacks: Vec<SubNet>,
}

/// Spatial extent after the four pooled stages of the depth head.
fn pooled_extent(mut n: usize) -> usize {
    for _ in 0..4 {
        n = n.div_ceil(2);
    }
    n
}

impl Network {
    /// Registers every weight in deterministic order: stem, then per stack
    /// core, boosting block, heads, aggregation, and depth regressor.
    pub fn init<F: Scalar, R: Rng>(
        params: &mut ParamSet<F>,
        cfg: &NetworkCfg,
        wiring: &Wiring,
        rng: &mut R,
    ) -> Result<Network, TensorError> {
        if cfg.stacks < 1 {
            return Err(TensorError::Invalid("at least one sub-network required".into()));
        }
        if wiring.graph.joint_count() != cfg.joints {
            return Err(TensorError::Invalid(format!(
                "graph has {} joints but the network is configured for {}",
                wiring.graph.joint_count(),
                cfg.joints
            )));
        }
        let kind = cfg.effective_kind().map_err(|e| TensorError::Invalid(e.to_string()))?;
        let (k, a) = (cfg.kernel, cfg.agg_channels);
        let stem_mid = (a / 4).max(1);
        let stem0 = Conv::init(params, "stem.conv0", k, 3, stem_mid, rng)?;
        let stem1 = Conv::init(params, "stem.conv1", k, stem_mid, a, rng)?;

        let flat = pooled_extent(cfg.features[0]) * pooled_extent(cfg.features[1]) * a;
        let mut stacks = Vec::with_capacity(cfg.stacks);
        for s in 0..cfg.stacks {
            let scope = format!("stack{s}.");
            let core_in = if s == 0 { a } else { a + cfg.backbone_channels };
            let entry = Conv::init(params, &format!("{scope}entry"), k, core_in, a, rng)?;
            let down = Conv::init(params, &format!("{scope}down"), k, a, a, rng)?;
            let bottleneck = Conv::init(params, &format!("{scope}bottleneck"), k, a, a, rng)?;
            let out =
                Conv::init(params, &format!("{scope}out"), k, a, cfg.backbone_channels, rng)?;
            let lstd = Lstd::init(
                params,
                &scope,
                wiring,
                kind,
                k,
                cfg.channels_per_joint,
                cfg.backbone_channels,
                cfg.omega_sq,
                rng,
            )?;
            let head_hidden = Conv::init(
                params,
                &format!("{scope}head.hidden"),
                k,
                cfg.channels_per_joint,
                cfg.head_channels,
                rng,
            )?;
            let head_out =
                Conv::init(params, &format!("{scope}head.out"), 1, cfg.head_channels, 1, rng)?;
            let agg_heat =
                params.insert(format!("{scope}agg.heat.W"), conv_init(1, cfg.joints, a, rng))?;
            let agg_boost = params.insert(
                format!("{scope}agg.boost.W"),
                conv_init(1, cfg.grouped_channels(), a, rng),
            )?;
            let depth = (0..4)
                .map(|i| Conv::init(params, &format!("{scope}depth.conv{i}"), k, a, a, rng))
                .collect::<Result<Vec<_>, _>>()?;
            let fc_w =
                params.insert(format!("{scope}depth.fc.W"), linear_init(cfg.joints, flat, rng))?;
            let fc_b = params.insert(format!("{scope}depth.fc.b"), bias_init(cfg.joints, 0.0))?;
            stacks.push(SubNet {
                entry,
                down,
                bottleneck,
                out,
                lstd,
                head_hidden,
                head_out,
                agg_heat,
                agg_boost,
                depth,
                fc_w,
                fc_b,
            });
        }
        Ok(Network { cfg: cfg.clone(), stem0, stem1, stacks })
    }

    pub fn cfg(&self) -> &NetworkCfg {
        &self.cfg
    }

    /// One downsample/upsample pyramid with a residual skip add. Returns the
    /// feature stack and the first-layer map.
    fn core<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        s: &SubNet,
        input: Var,
    ) -> Result<(Var, Var), TensorError> {
        let e0 = s.entry.tanh(tape, b, input)?;
        let d = tape.avg_pool2(e0)?;
        let d = s.down.tanh(tape, b, d)?;
        let bn = s.bottleneck.tanh(tape, b, d)?;
        let up = tape.upsample2(bn)?;
        let merged = tape.add(up, e0)?;
        let features = s.out.tanh(tape, b, merged)?;
        Ok((features, e0))
    }

    /// Stem plus the first sub-network's pyramid: image in, feature stack
    /// and first-layer skip out.
    pub fn backbone_forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        image: Var,
    ) -> Result<(Var, Var), TensorError> {
        let stem = self.stem(tape, b, image)?;
        self.core(tape, b, &self.stacks[0], stem)
    }

    fn stem<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        image: Var,
    ) -> Result<Var, TensorError> {
        let want = [self.cfg.input[0], self.cfg.input[1], 3];
        if tape.value(image).shape() != want {
            return Err(TensorError::Invalid(format!(
                "expected input image of shape {:?}, got {:?}",
                want,
                tape.value(image).shape()
            )));
        }
        let x = self.stem0.tanh(tape, b, image)?;
        let x = tape.avg_pool2(x)?;
        let x = self.stem1.tanh(tape, b, x)?;
        tape.avg_pool2(x)
    }

    /// 1x1-projects the heatmap stack and the boosted stack to the
    /// aggregation width and sums them with the first-layer skip map.
    pub fn aggregate_for_depth<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        stack_index: usize,
        heatmap_stack: Var,
        boosted_stack: Var,
        skip: Var,
    ) -> Result<Var, TensorError> {
        let s = &self.stacks[stack_index];
        let hshape = tape.value(heatmap_stack).shape().to_vec();
        for v in [boosted_stack, skip] {
            let shape = tape.value(v).shape();
            if shape.len() != 3 || shape[..2] != hshape[..2] {
                return Err(TensorError::ShapeMismatch {
                    op: "aggregate_for_depth",
                    lhs: hshape,
                    rhs: shape.to_vec(),
                });
            }
        }
        let from_heat = tape.conv2d_nobias(heatmap_stack, b.var(s.agg_heat), Padding::Same)?;
        let from_boost = tape.conv2d_nobias(boosted_stack, b.var(s.agg_boost), Padding::Same)?;
        let summed = tape.add(from_heat, from_boost)?;
        tape.add(summed, skip)
    }

    fn depth_head<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        s: &SubNet,
        agg: Var,
    ) -> Result<Var, TensorError> {
        let mut x = agg;
        for conv in &s.depth {
            x = conv.tanh(tape, b, x)?;
            x = tape.avg_pool2(x)?;
        }
        let flat = tape.flatten(x)?;
        tape.linear(flat, b.var(s.fc_w), b.var(s.fc_b))
    }

    /// Runs every sub-network and returns their supervised outputs in stack
    /// order.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        image: Var,
    ) -> Result<Vec<StackOutput>, TensorError> {
        let stem = self.stem(tape, b, image)?;
        let mut outputs: Vec<StackOutput> = Vec::with_capacity(self.stacks.len());
        for (i, s) in self.stacks.iter().enumerate() {
            let input = match outputs.last() {
                None => stem,
                Some(prev) => tape.concat_channels(&[prev.agg, prev.features])?,
            };
            let (features, skip) = self.core(tape, b, s, input)?;
            let boosted = match self.cfg.mode {
                BoostMode::Baseline => s.lstd.passthrough(tape, b, features)?,
                BoostMode::Fb | BoostMode::FbPlus => s.lstd.boost(tape, b, features)?,
            };
            let heatmaps = boosted
                .per_joint
                .iter()
                .map(|&g| {
                    let hidden = s.head_hidden.tanh(tape, b, g)?;
                    s.head_out.linear(tape, b, hidden)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let heatmap_stack = tape.concat_channels(&heatmaps)?;
            let agg =
                self.aggregate_for_depth(tape, b, i, heatmap_stack, boosted.stack, skip)?;
            let depths = self.depth_head(tape, b, s, agg)?;
            outputs.push(StackOutput {
                features,
                skip,
                boosted,
                heatmaps,
                heatmap_stack,
                agg,
                depths,
            });
        }
        Ok(outputs)
    }
}

/// Loss components as plain numbers, for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub heatmap: f64,
    pub depth: f64,
    pub gamma: f64,
    pub total: f64,
}

/// Mean squared heatmap and depth errors averaged over all sub-networks,
/// combined as `l_h + gamma * l_d`. `predictions` holds one
/// `(heatmap_stack, depths)` pair per sub-network.
pub fn loss<F: Scalar>(
    tape: &mut Tape<F>,
    predictions: &[(Var, Var)],
    gt_heatmaps: Var,
    gt_depths: Var,
    gamma: f64,
) -> Result<(Var, LossTerms), TensorError> {
    if gamma < 0.0 {
        return Err(TensorError::Invalid(format!(
            "loss weight must be non-negative, got {gamma}"
        )));
    }
    if predictions.is_empty() {
        return Err(TensorError::Invalid("loss over zero sub-networks".into()));
    }
    let mut l_h: Option<Var> = None;
    let mut l_d: Option<Var> = None;
    for &(hm, d) in predictions {
        let h_term = tape.mse(hm, gt_heatmaps)?;
        let d_term = tape.mse(d, gt_depths)?;
        l_h = Some(match l_h {
            None => h_term,
            Some(acc) => tape.add(acc, h_term)?,
        });
        l_d = Some(match l_d {
            None => d_term,
            Some(acc) => tape.add(acc, d_term)?,
        });
    }
    let inv_s = F::from_f64(1.0 / predictions.len() as f64);
    let l_h = tape.scale(l_h.expect("nonempty"), inv_s);
    let l_d = tape.scale(l_d.expect("nonempty"), inv_s);
    let weighted = tape.scale(l_d, F::from_f64(gamma));
    let total = tape.add(l_h, weighted)?;
    let terms = LossTerms {
        heatmap: tape.value(l_h).item().as_f64(),
        depth: tape.value(l_d).item().as_f64(),
        gamma,
        total: tape.value(total).item().as_f64(),
    };
    Ok((total, terms))
}

/// Row-major argmax of channel `j` of a `[h, w, J]` stack; ties keep the
/// earliest element. Returns `(x, y)`.
pub fn argmax_channel<F: Scalar>(stack: &Tensor<F>, j: usize) -> (usize, usize) {
    let (h, w) = (stack.shape()[0], stack.shape()[1]);
    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for y in 0..h {
        for x in 0..w {
            let v = stack.at3(y, x, j).as_f64();
            if v > best_v {
                best_v = v;
                best = (x, y);
            }
        }
    }
    best
}

/// Peak location of each heatmap combined with its regressed depth:
/// `[x, y, d]` per joint, in heatmap pixels and normalized depth units.
pub fn decode_pose<F: Scalar>(
    heatmap_stack: &Tensor<F>,
    depths: &Tensor<F>,
) -> Result<Vec<[f64; 3]>, TensorError> {
    let shape = heatmap_stack.shape();
    if shape.len() != 3 || depths.shape() != [shape[2]] {
        return Err(TensorError::Invalid(format!(
            "decode_pose on heatmaps {:?} with depths {:?}",
            shape,
            depths.shape()
        )));
    }
    Ok((0..shape[2])
        .map(|j| {
            let (x, y) = argmax_channel(heatmap_stack, j);
            [x as f64, y as f64, depths.data()[j].as_f64()]
        })
        .collect())
}
