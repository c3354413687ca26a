//! Pose accuracy metrics: PCK over a threshold list, the width-normalized
//! variant, and mean Euclidean error, all computed after root alignment.
//!
//! Alignment subtracts the predicted root from every prediction and the
//! ground-truth root from every ground truth before distances are taken, so
//! a global translation of either side cancels. Invisible joints contribute
//! to neither numerator nor denominator.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sample {0} has mismatched joint counts (pred {1}, gt {2}, visible {3})")]
    MismatchedJoints(usize, usize, usize, usize),
    #[error("root joint {root} out of range for {joints} joints")]
    RootOutOfRange { root: usize, joints: usize },
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("no visible joints to score")]
    NoVisibleJoints,
    #[error("sample {0} has zero reference length between joints {1} and {2}")]
    ZeroReference(usize, usize, usize),
    #[error("reference joint {0} out of range for {1} joints")]
    ReferenceOutOfRange(usize, usize),
}

/// One evaluated sample: predicted and ground-truth joint positions with the
/// ground-truth visibility mask, indexed by joint.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePair {
    pub pred: Vec<[f64; 3]>,
    pub gt: Vec<[f64; 3]>,
    pub visible: Vec<bool>,
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Root-aligned error per joint; `None` marks invisible joints.
fn aligned_errors(
    index: usize,
    pair: &PosePair,
    root: usize,
) -> Result<Vec<Option<f64>>, MetricsError> {
    let j = pair.gt.len();
    if pair.pred.len() != j || pair.visible.len() != j {
        return Err(MetricsError::MismatchedJoints(
            index,
            pair.pred.len(),
            j,
            pair.visible.len(),
        ));
    }
    if root >= j {
        return Err(MetricsError::RootOutOfRange { root, joints: j });
    }
    let (pr, gr) = (pair.pred[root], pair.gt[root]);
    Ok((0..j)
        .map(|i| {
            pair.visible[i].then(|| {
                let p = [
                    pair.pred[i][0] - pr[0],
                    pair.pred[i][1] - pr[1],
                    pair.pred[i][2] - pr[2],
                ];
                let g = [
                    pair.gt[i][0] - gr[0],
                    pair.gt[i][1] - gr[1],
                    pair.gt[i][2] - gr[2],
                ];
                dist3(p, g)
            })
        })
        .collect())
}

fn fraction_within(errors: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if !(threshold > 0.0) {
        return Err(MetricsError::BadThreshold(threshold));
    }
    if errors.is_empty() {
        return Err(MetricsError::NoVisibleJoints);
    }
    let hits = errors.iter().filter(|&&e| e <= threshold).count();
    Ok(hits as f64 / errors.len() as f64)
}

fn visible_errors(pairs: &[PosePair], root: usize) -> Result<Vec<f64>, MetricsError> {
    let mut out = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        out.extend(aligned_errors(i, pair, root)?.into_iter().flatten());
    }
    Ok(out)
}

/// Fraction of visible joints whose root-aligned error is at most
/// `threshold`, pooled over all samples.
pub fn pck(pairs: &[PosePair], root: usize, threshold: f64) -> Result<f64, MetricsError> {
    fraction_within(&visible_errors(pairs, root)?, threshold)
}

/// PCK with each sample's errors divided by that sample's reference length,
/// the ground-truth distance between `reference.0` and `reference.1`.
pub fn pckf(
    pairs: &[PosePair],
    root: usize,
    reference: (usize, usize),
    threshold: f64,
) -> Result<f64, MetricsError> {
    let mut normalized = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let errors = aligned_errors(i, pair, root)?;
        for r in [reference.0, reference.1] {
            if r >= pair.gt.len() {
                return Err(MetricsError::ReferenceOutOfRange(r, pair.gt.len()));
            }
        }
        let width = dist3(pair.gt[reference.0], pair.gt[reference.1]);
        if !(width > 0.0) {
            return Err(MetricsError::ZeroReference(i, reference.0, reference.1));
        }
        normalized.extend(errors.into_iter().flatten().map(|e| e / width));
    }
    fraction_within(&normalized, threshold)
}

/// Mean root-aligned error over all visible joints of all samples.
pub fn mean_error(pairs: &[PosePair], root: usize) -> Result<f64, MetricsError> {
    let errors = visible_errors(pairs, root)?;
    if errors.is_empty() {
        return Err(MetricsError::NoVisibleJoints);
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Normalized-PCK request: the ground-truth joint pair whose distance
/// divides each sample's errors, and the threshold in widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PckfSpec {
    pub reference: (usize, usize),
    pub threshold: f64,
}

/// Scored evaluation of a prediction set. `pck` is parallel to
/// `thresholds`, which are stored ascending, so the fractions are
/// non-decreasing by construction. `per_joint` holds each joint's mean
/// error, `None` where a joint is never visible.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub thresholds: Vec<f64>,
    pub pck: Vec<f64>,
    pub mean_error: f64,
    pub pckf: Option<f64>,
    pub per_joint: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn pck_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.pck[i])
    }
}

/// Scores `pairs` at every threshold and builds the full report.
pub fn report(
    pairs: &[PosePair],
    root: usize,
    thresholds: &[f64],
    pckf_spec: Option<PckfSpec>,
) -> Result<MetricsReport, MetricsError> {
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_by(|a, b| a.total_cmp(b));
    thresholds.dedup();

    let errors = visible_errors(pairs, root)?;
    let pck = thresholds
        .iter()
        .map(|&t| fraction_within(&errors, t))
        .collect::<Result<Vec<_>, _>>()?;
    let joints = pairs.first().map_or(0, |p| p.gt.len());
    let mut sums = vec![0.0; joints];
    let mut counts = vec![0usize; joints];
    for (i, pair) in pairs.iter().enumerate() {
        for (j, e) in aligned_errors(i, pair, root)?.into_iter().enumerate() {
            if let Some(e) = e {
                sums[j] += e;
                counts[j] += 1;
            }
        }
    }
    let per_joint = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    Ok(MetricsReport {
        thresholds,
        pck,
        mean_error: mean_error(pairs, root)?,
        pckf: match pckf_spec {
            Some(spec) => Some(pckf(pairs, root, spec.reference, spec.threshold)?),
            None => None,
        },
        per_joint,
    })
}
