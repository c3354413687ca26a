//! Synthetic stick-figure data: seeded 3D pose sampling over a skeleton,
//! orthographic rendering with per-limb shading and a depth-brightness cue,
//! ground-truth heatmap encoding, similarity augmentation, and the on-disk
//! dataset format (P6 pixmaps plus line-delimited JSON annotations).
//!
//! Rendering encodes depth as brightness (nearer bones draw brighter) so the
//! depth regressor has a monocular cue, and symmetric limbs share a palette
//! color so that when one limb renders faint its partner carries the
//! localization context.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::DataCfg;
use crate::graph::{EdgeKind, SkeletonGraph};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed pixmap: {0}")]
    Pixmap(String),
    #[error("malformed annotations: {0}")]
    Annotation(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("invalid dataset: {0}")]
    Meta(String),
}

/// One rendered training example. Joint coordinates are `(x, y)` with `x`
/// the column, in image pixels; rescale with [`to_heatmap_coords`] when a
/// consumer works at heatmap resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    /// `[h, w, 3]`, values in `[0, 1]`.
    pub image: Tensor<f64>,
    pub joints_px: Vec<[f64; 2]>,
    /// Root-relative, divided by the configured depth scale.
    pub depth: Vec<f64>,
    pub visible: Vec<bool>,
}

/// Rescales image-pixel joint coordinates to heatmap resolution.
pub fn to_heatmap_coords(
    joints_px: &[[f64; 2]],
    image_hw: [usize; 2],
    heatmap_hw: [usize; 2],
) -> Vec<[f64; 2]> {
    let sx = heatmap_hw[1] as f64 / image_hw[1] as f64;
    let sy = heatmap_hw[0] as f64 / image_hw[0] as f64;
    joints_px.iter().map(|p| [p[0] * sx, p[1] * sy]).collect()
}

/// Canonical rest coordinates for a shipped skeleton, `(x, y, z)` with `y`
/// growing downward and `z` toward the camera being negative.
pub fn rest_pose(name: &str) -> Option<Vec<[f64; 3]>> {
    match name {
        "figure7" => Some(vec![
            [0.0, 0.0, 0.0],
            [0.0, -0.45, 0.0],
            [0.0, -0.85, 0.05],
            [-0.5, -0.35, 0.18],
            [0.5, -0.35, -0.12],
            [-0.28, 0.85, -0.06],
            [0.28, 0.85, 0.1],
        ]),
        _ => None,
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for sample `index` of a dataset; independent of worker layout.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(splitmix64(index)))
}

fn sym(rng: &mut impl Rng, half_range: f64) -> f64 {
    if half_range > 0.0 {
        rng.gen_range(-half_range..=half_range)
    } else {
        0.0
    }
}

/// Rz(a) then Ry(b); zero angles reproduce `v` exactly up to signed zeros.
fn swing(v: [f64; 3], a: f64, b: f64) -> [f64; 3] {
    let (sa, ca) = a.sin_cos();
    let (x1, y1, z1) = (ca * v[0] - sa * v[1], sa * v[0] + ca * v[1], v[2]);
    let (sb, cb) = b.sin_cos();
    [cb * x1 + sb * z1, y1, cb * z1 - sb * x1]
}

/// Draws one 3D pose: every bone of the physical tree is swung by two
/// uniform angles in `[-angle, angle]` while its length stays fixed. Bones
/// are visited breadth-first from the root with ascending neighbor order,
/// so the rng draw sequence is part of the format.
pub fn sample_pose(
    rng: &mut impl Rng,
    graph: &SkeletonGraph,
    rest: &[[f64; 3]],
    angle: f64,
) -> Result<Vec<[f64; 3]>, DataError> {
    let j = graph.joint_count();
    if rest.len() != j {
        return Err(DataError::Skeleton(format!(
            "rest pose has {} joints, skeleton has {j}",
            rest.len()
        )));
    }
    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); j];
    for e in graph.edges().iter().filter(|e| e.kind == EdgeKind::Physical) {
        let bone = sub3(rest[e.to], rest[e.from]);
        if norm3(bone) <= 0.0 {
            return Err(DataError::Skeleton(format!(
                "bone {} -> {} has non-positive length",
                e.from, e.to
            )));
        }
        adjacent[e.from].push(e.to);
        adjacent[e.to].push(e.from);
    }
    for list in &mut adjacent {
        list.sort_unstable();
        list.dedup();
    }
    let mut pose: Vec<Option<[f64; 3]>> = vec![None; j];
    pose[graph.root()] = Some(rest[graph.root()]);
    let mut queue = std::collections::VecDeque::from([graph.root()]);
    while let Some(u) = queue.pop_front() {
        let at = pose[u].expect("queued joints are placed");
        for &v in &adjacent[u] {
            if pose[v].is_some() {
                continue;
            }
            let bone = sub3(rest[v], rest[u]);
            let swung = swing(bone, sym(rng, angle), sym(rng, angle));
            pose[v] = Some(add3(at, swung));
            queue.push_back(v);
        }
    }
    pose.into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.ok_or_else(|| {
                DataError::Skeleton(format!("joint {i} is not connected to the root by bones"))
            })
        })
        .collect()
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// One drawable segment in pixel space, shaded and depth-annotated.
#[derive(Debug, Clone)]
pub struct Bone {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub za: f64,
    pub zb: f64,
    pub color: [f64; 3],
    pub intensity: f64,
}

const PALETTE: [[f64; 3]; 8] = [
    [0.92, 0.92, 0.92],
    [0.95, 0.80, 0.25],
    [0.30, 0.90, 0.40],
    [0.35, 0.45, 0.95],
    [0.90, 0.35, 0.30],
    [0.30, 0.85, 0.90],
    [0.85, 0.40, 0.85],
    [0.95, 0.60, 0.20],
];

/// Shared-color class per physical edge: an edge whose far joint has a
/// symmetrical partner takes the smaller of the two joint indices as its
/// palette key, so mirrored limbs render alike.
fn limb_class(graph: &SkeletonGraph, to: usize) -> usize {
    graph
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::Symmetrical)
        .find_map(|e| {
            (e.from == to)
                .then_some(e.to)
                .or_else(|| (e.to == to).then_some(e.from))
        })
        .map_or(to, |partner| to.min(partner))
}

/// Builds the drawable bones for a posed skeleton. `faint` picks one
/// physical edge (by index among physical edges) to draw at `faint_level`
/// intensity.
pub fn bones_for(
    graph: &SkeletonGraph,
    joints_px: &[[f64; 2]],
    depth: &[f64],
    faint: Option<usize>,
    faint_level: f64,
) -> Vec<Bone> {
    graph
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::Physical)
        .enumerate()
        .map(|(i, e)| Bone {
            a: joints_px[e.from],
            b: joints_px[e.to],
            za: depth[e.from],
            zb: depth[e.to],
            color: PALETTE[limb_class(graph, e.to) % PALETTE.len()],
            intensity: if faint == Some(i) { faint_level } else { 1.0 },
        })
        .collect()
}

/// Composites anti-aliased segments over `image` (max blend per channel).
/// Brightness falls off with depth: nearer ends of a bone draw brighter.
pub fn render_onto(image: &mut Tensor<f64>, bones: &[Bone]) {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let radius = (w.min(h) as f64 / 32.0).max(0.6);
    for bone in bones {
        let (x0, y0, x1, y1) = (bone.a[0], bone.a[1], bone.b[0], bone.b[1]);
        let pad = radius + 1.5;
        let ylo = ((y0.min(y1) - pad).floor().max(0.0)) as usize;
        let yhi = ((y0.max(y1) + pad).ceil().min(h as f64 - 1.0)) as usize;
        let xlo = ((x0.min(x1) - pad).floor().max(0.0)) as usize;
        let xhi = ((x0.max(x1) + pad).ceil().min(w as f64 - 1.0)) as usize;
        if y0.max(y1) < -pad || x0.max(x1) < -pad {
            continue;
        }
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len_sq = dx * dx + dy * dy;
        for y in ylo..=yhi {
            for x in xlo..=xhi {
                let (px, py) = (x as f64, y as f64);
                let t = if len_sq > 0.0 {
                    (((px - x0) * dx + (py - y0) * dy) / len_sq).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (x0 + t * dx, y0 + t * dy);
                let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let coverage = (radius + 0.5 - dist).clamp(0.0, 1.0);
                if coverage == 0.0 {
                    continue;
                }
                let z = bone.za + t * (bone.zb - bone.za);
                let brightness = (1.0 - 0.35 * z).clamp(0.35, 1.65);
                let gain = coverage * brightness * bone.intensity;
                for c in 0..3 {
                    let idx = (y * w + x) * 3 + c;
                    let v = (gain * bone.color[c]).clamp(0.0, 1.0);
                    let cell = &mut image.data_mut()[idx];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
}

/// Renders bones over a flat black background.
pub fn render(bones: &[Bone], size: [usize; 2]) -> Tensor<f64> {
    let mut image = Tensor::zeros(&[size[0], size[1], 3]);
    render_onto(&mut image, bones);
    image
}

/// Per-joint ground-truth maps stacked to `[h, w, J]`: a unit-peak Gaussian
/// centered on the nearest integer pixel of each visible joint, zero for
/// invisible joints.
pub fn make_heatmap_gt(
    joints_hm: &[[f64; 2]],
    visible: &[bool],
    sigma: f64,
    h: usize,
    w: usize,
) -> Result<Tensor<f64>, DataError> {
    if !(sigma > 0.0) {
        return Err(DataError::Meta(format!("sigma must be positive, got {sigma}")));
    }
    let j = joints_hm.len();
    let centers: Vec<Option<(f64, f64)>> = joints_hm
        .iter()
        .zip(visible)
        .map(|(p, &vis)| {
            vis.then(|| {
                (
                    p[0].round().clamp(0.0, w as f64 - 1.0),
                    p[1].round().clamp(0.0, h as f64 - 1.0),
                )
            })
        })
        .collect();
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Tensor::from_fn(&[h, w, j], |i| {
        let c = i % j;
        let x = (i / j) % w;
        let y = i / (j * w);
        match centers[c] {
            None => 0.0,
            Some((cx, cy)) => {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                (-(dx * dx + dy * dy) * inv).exp()
            }
        }
    }))
}

/// A drawn similarity transform: rotate about the image center, scale, then
/// translate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub translate: [f64; 2],
    pub scale: f64,
    pub rotate: f64,
}

impl AugmentParams {
    pub fn identity() -> AugmentParams {
        AugmentParams { translate: [0.0, 0.0], scale: 1.0, rotate: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn draw(rng: &mut impl Rng, cfg: &DataCfg) -> AugmentParams {
        AugmentParams {
            rotate: sym(rng, cfg.rotate),
            scale: 1.0 + sym(rng, cfg.scale_jitter),
            translate: [sym(rng, cfg.translate), sym(rng, cfg.translate)],
        }
    }

    fn apply(&self, p: [f64; 2], center: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotate.sin_cos();
        let (rx, ry) = (p[0] - center[0], p[1] - center[1]);
        [
            center[0] + self.scale * (c * rx - s * ry) + self.translate[0],
            center[1] + self.scale * (s * rx + c * ry) + self.translate[1],
        ]
    }

    fn invert(&self, p: [f64; 2], center: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotate.sin_cos();
        let (rx, ry) = (
            (p[0] - center[0] - self.translate[0]) / self.scale,
            (p[1] - center[1] - self.translate[1]) / self.scale,
        );
        [center[0] + c * rx + s * ry, center[1] - s * rx + c * ry]
    }
}

fn bilinear(image: &Tensor<f64>, x: f64, y: f64, c: usize) -> f64 {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let fetch = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            image.at3(yy as usize, xx as usize, c)
        }
    };
    let (v00, v01) = (fetch(y0, x0), fetch(y0, x0 + 1.0));
    let (v10, v11) = (fetch(y0 + 1.0, x0), fetch(y0 + 1.0, x0 + 1.0));
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
}

/// Applies one similarity transform to a whole sample: the image is warped
/// (inverse-mapped, bilinear, black border), joints follow the same
/// transform, depth scales with the spatial scale, and joints pushed out of
/// frame become invisible.
pub fn apply_transform(sample: &PoseSample, params: &AugmentParams) -> PoseSample {
    if params.is_identity() {
        return sample.clone();
    }
    let (h, w) = (sample.image.shape()[0], sample.image.shape()[1]);
    let center = [w as f64 / 2.0, h as f64 / 2.0];
    let image = Tensor::from_fn(&[h, w, 3], |i| {
        let c = i % 3;
        let x = (i / 3) % w;
        let y = i / (3 * w);
        let src = params.invert([x as f64, y as f64], center);
        bilinear(&sample.image, src[0], src[1], c)
    });
    let joints_px: Vec<[f64; 2]> =
        sample.joints_px.iter().map(|&p| params.apply(p, center)).collect();
    let visible = joints_px
        .iter()
        .zip(&sample.visible)
        .map(|(p, &was)| was && in_frame(*p, h, w))
        .collect();
    let depth = sample.depth.iter().map(|d| d * params.scale).collect();
    PoseSample { image, joints_px, depth, visible }
}

fn in_frame(p: [f64; 2], h: usize, w: usize) -> bool {
    p[0] >= 0.0 && p[0] < w as f64 && p[1] >= 0.0 && p[1] < h as f64
}

/// Transform drawn from the config ranges, then applied.
pub fn augment(sample: &PoseSample, rng: &mut impl Rng, cfg: &DataCfg) -> PoseSample {
    apply_transform(sample, &AugmentParams::draw(rng, cfg))
}

/// Generates one fully ground-truthed sample. Draw order: bone angles,
/// global transform, faint-limb pick, background noise.
pub fn make_sample(
    graph: &SkeletonGraph,
    rest: &[[f64; 3]],
    cfg: &DataCfg,
    image_hw: [usize; 2],
    seed: u64,
) -> Result<PoseSample, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = sample_pose(&mut rng, graph, rest, cfg.angle)?;
    let params = AugmentParams::draw(&mut rng, cfg);

    let (h, w) = (image_hw[0], image_hw[1]);
    let center = [w as f64 / 2.0, h as f64 / 2.0];
    let scale_px = cfg.scale * h.min(w) as f64;
    let root_z = pose[graph.root()][2];
    let joints_px: Vec<[f64; 2]> = pose
        .iter()
        .map(|p| params.apply([center[0] + scale_px * p[0], center[1] + scale_px * p[1]], center))
        .collect();
    let depth: Vec<f64> =
        pose.iter().map(|p| (p[2] - root_z) * params.scale / cfg.depth_scale).collect();

    let physical = graph.edges().iter().filter(|e| e.kind == EdgeKind::Physical).count();
    let faint = if physical > 0 && cfg.faint_prob > 0.0 && rng.gen_bool(cfg.faint_prob) {
        Some(rng.gen_range(0..physical))
    } else {
        None
    };

    let mut image = Tensor::zeros(&[h, w, 3]);
    if cfg.noise > 0.0 {
        for y in 0..h {
            for x in 0..w {
                let v = rng.gen::<f64>() * cfg.noise;
                for c in 0..3 {
                    image.data_mut()[(y * w + x) * 3 + c] = v;
                }
            }
        }
    }
    render_onto(&mut image, &bones_for(graph, &joints_px, &depth, faint, cfg.faint_level));

    let visible = joints_px.iter().map(|&p| in_frame(p, h, w)).collect();
    Ok(PoseSample { image, joints_px, depth, visible })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub graph: String,
    pub joints: usize,
    pub image: [usize; 2],
    pub heatmap: [usize; 2],
    pub count: usize,
    pub seed: u64,
    pub data: DataCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    id: usize,
    joints2d: Vec<[f64; 2]>,
    depth: Vec<f64>,
    visibility: Vec<bool>,
}

fn sample_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("samples").join(format!("{id:06}.ppm"))
}

/// Writes `count` samples derived from `seed` into `dir`: `meta`,
/// `samples/NNNNNN.ppm`, and `annotations.jsonl`. A pure function of its
/// arguments.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    dir: &Path,
    graph_name: &str,
    graph: &SkeletonGraph,
    rest: &[[f64; 3]],
    cfg: &DataCfg,
    image_hw: [usize; 2],
    heatmap_hw: [usize; 2],
    count: usize,
    seed: u64,
) -> Result<DatasetMeta, DataError> {
    fs::create_dir_all(dir.join("samples"))?;
    let mut annotations = BufWriter::new(fs::File::create(dir.join("annotations.jsonl"))?);
    for id in 0..count {
        let sample = make_sample(graph, rest, cfg, image_hw, sample_seed(seed, id as u64))?;
        write_ppm(&sample_path(dir, id), &sample.image)?;
        let record = Record {
            id,
            joints2d: sample.joints_px,
            depth: sample.depth,
            visibility: sample.visible,
        };
        serde_json::to_writer(&mut annotations, &record)?;
        annotations.write_all(b"\n")?;
    }
    annotations.flush()?;
    let meta = DatasetMeta {
        graph: graph_name.to_string(),
        joints: graph.joint_count(),
        image: image_hw,
        heatmap: heatmap_hw,
        count,
        seed,
        data: cfg.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| DataError::Meta(e.to_string()))?;
    fs::write(dir.join("meta"), text)?;
    Ok(meta)
}

pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<PoseSample>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let meta_text = fs::read_to_string(dir.join("meta"))?;
    let meta: DatasetMeta =
        toml::from_str(&meta_text).map_err(|e| DataError::Meta(e.to_string()))?;
    let file = fs::File::open(dir.join("annotations.jsonl"))?;
    let mut samples = Vec::with_capacity(meta.count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let record: Record = serde_json::from_str(&line?)?;
        if record.id != i {
            return Err(DataError::Annotation(format!(
                "record {i} carries id {}",
                record.id
            )));
        }
        if record.joints2d.len() != meta.joints {
            return Err(DataError::Annotation(format!(
                "record {i} has {} joints, meta says {}",
                record.joints2d.len(),
                meta.joints
            )));
        }
        let image = read_ppm(&sample_path(dir, i))?;
        if image.shape() != [meta.image[0], meta.image[1], 3] {
            return Err(DataError::Meta(format!(
                "sample {i} image shape {:?} does not match meta {:?}",
                image.shape(),
                meta.image
            )));
        }
        samples.push(PoseSample {
            image,
            joints_px: record.joints2d,
            depth: record.depth,
            visible: record.visibility,
        });
    }
    if samples.len() != meta.count {
        return Err(DataError::Meta(format!(
            "meta promises {} samples, annotations hold {}",
            meta.count,
            samples.len()
        )));
    }
    Ok(Dataset { meta, samples })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary portable pixmap, maxval 255.
pub fn write_ppm(path: &Path, image: &Tensor<f64>) -> Result<(), DataError> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(DataError::Pixmap(format!("expected [h, w, 3] image, got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

fn read_pnm_header(bytes: &[u8], magic: &str) -> Result<(usize, usize, usize), DataError> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => pos += 1,
            _ => {
                let start = pos;
                while pos < bytes.len()
                    && !bytes[pos].is_ascii_whitespace()
                    && bytes[pos] != b'#'
                {
                    pos += 1;
                }
                fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
                    DataError::Pixmap("non-ascii header field".into())
                })?);
            }
        }
    }
    if fields.len() < 4 {
        return Err(DataError::Pixmap("truncated header".into()));
    }
    if fields[0] != magic {
        return Err(DataError::Pixmap(format!("expected {magic}, got {}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|_| DataError::Pixmap(format!("bad header number `{s}`")))
    };
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(DataError::Pixmap(format!("unsupported maxval {maxval}")));
    }
    // One whitespace byte separates the header from the payload.
    Ok((w, h, pos + 1))
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f64>, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (w, h, offset) = read_pnm_header(&bytes, "P6")?;
    let want = h * w * 3;
    let payload = bytes
        .get(offset..offset + want)
        .ok_or_else(|| DataError::Pixmap("truncated pixel data".into()))?;
    if bytes.len() > offset + want {
        return Err(DataError::Pixmap("trailing bytes after pixel data".into()));
    }
    Ok(Tensor::new(
        vec![h, w, 3],
        payload.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("shape matches payload"))
}

/// Binary portable graymap, maxval 255; input `[h, w]` in `[0, 1]`.
pub fn write_pgm(path: &Path, gray: &Tensor<f64>) -> Result<(), DataError> {
    let shape = gray.shape();
    if shape.len() != 2 {
        return Err(DataError::Pixmap(format!("expected [h, w] map, got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = gray.data().iter().map(|&v| quantize(v)).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f64>, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (w, h, offset) = read_pnm_header(&bytes, "P5")?;
    let payload = bytes
        .get(offset..offset + h * w)
        .ok_or_else(|| DataError::Pixmap("truncated pixel data".into()))?;
    Ok(Tensor::new(vec![h, w], payload.iter().map(|&b| b as f64 / 255.0).collect())
        .expect("shape matches payload"))
}
