//! Dense row-major tensors over f32/f64.
//!
//! Tensors are immutable values: every operation allocates its result. All
//! shape checking is strict; the only sanctioned broadcast anywhere in the
//! crate is the per-channel bias addition in [`crate::tape::Tape::add_bias`].

use std::fmt;
use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("{op} requires a scalar (1-element) tensor, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("non-finite value encountered in parameter {param} at element {index}")]
    NonFinite { param: usize, index: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Element precision of a tensor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    /// Wire tag used by the checkpoint serialization.
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::F32 => write!(f, "f32"),
            Dtype::F64 => write!(f, "f64"),
        }
    }
}

/// Scalar element type. 32-bit is the training default; 64-bit is required
/// by the gradient-check suites, which need the extra headroom.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    /// Named to dodge `num_traits::ToPrimitive::to_f64`, which returns an
    /// `Option` and shadows an inherent method on `&F` receivers.
    fn as_f64(self) -> f64;
    fn write_le<W: io::Write>(self, w: &mut W) -> io::Result<()>;
    fn read_le<R: io::Read>(r: &mut R) -> io::Result<Self>;
    /// Payload bytes per element.
    fn width() -> usize;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le<W: io::Write>(self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.to_le_bytes())
    }
    fn read_le<R: io::Read>(r: &mut R) -> io::Result<Self> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        Ok(f32::from_le_bytes(buf))
    }
    fn width() -> usize {
        4
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le<W: io::Write>(self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.to_le_bytes())
    }
    fn read_le<R: io::Read>(r: &mut R) -> io::Result<Self> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }
    fn width() -> usize {
        8
    }
}

/// Dense N-dimensional tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    /// Builds a tensor, checking that `data` fills `shape` exactly and that
    /// every extent is positive.
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, TensorError> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::InvalidShape {
                shape,
                reason: "extents must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                shape,
                reason: format!("shape wants {} elements, data has {}", numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::filled(shape, F::zero())
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let numel: usize = shape.iter().product();
        assert!(shape.iter().all(|&e| e > 0), "extents must be positive");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a 1-element tensor.
    pub fn item(&self) -> F {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// Element at `[y, x, c]` of a rank-3 map.
    pub fn at3(&self, y: usize, x: usize, c: usize) -> F {
        debug_assert_eq!(self.shape.len(), 3);
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Lossy element cast between precisions (used when feeding f64 ground
    /// truth into an f32 model and vice versa).
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Uniform draw in `[lo, hi)`, elementwise, from the given RNG.
    pub fn rand_uniform(shape: &[usize], lo: F, hi: F, rng: &mut impl rand::Rng) -> Self {
        let span = hi - lo;
        Tensor::from_fn(shape, |_| {
            lo + span * F::from_f64(rng.gen::<f64>())
        })
    }
}

/// Strict shape-equality guard shared by the elementwise binary ops.
pub(crate) fn check_same_shape<F: Scalar>(
    op: &'static str,
    a: &Tensor<F>,
    b: &Tensor<F>,
) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}
