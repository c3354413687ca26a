//! Independent oracles for the acceptance suite. Everything here is written
//! against plain `Tensor` data with its own loop nests, deliberately sharing
//! no code with the tape or the metrics module beyond the container type.

use fbnet::metrics::PosePair;
use fbnet::params::ParamSet;
use fbnet::tensor::Tensor;

/// Same-padding convolution over `[h, w, cin]` with kernel
/// `[k, k, cin, cout]`, one scalar accumulator per output element and an
/// optional `[cout]` bias.
pub fn naive_conv_same(
    inp: &Tensor<f64>,
    ker: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
) -> Tensor<f64> {
    let (h, w, cin) = (inp.shape()[0], inp.shape()[1], inp.shape()[2]);
    let (kh, kw, cout) = (ker.shape()[0], ker.shape()[1], ker.shape()[3]);
    assert_eq!(ker.shape()[2], cin, "kernel input width");
    let (ph, pw) = (kh / 2, kw / 2);
    Tensor::from_fn(&[h, w, cout], |idx| {
        let co = idx % cout;
        let x = (idx / cout) % w;
        let y = idx / (cout * w);
        let mut acc = 0.0;
        for ky in 0..kh {
            for kx in 0..kw {
                let (iy, ix) = (y + ky, x + kx);
                if iy < ph || ix < pw || iy - ph >= h || ix - pw >= w {
                    continue;
                }
                for ci in 0..cin {
                    acc += inp.at3(iy - ph, ix - pw, ci)
                        * ker.data()[((ky * kw + kx) * cin + ci) * cout + co];
                }
            }
        }
        acc + bias.map_or(0.0, |b| b.data()[co])
    })
}

fn ew2(a: &Tensor<f64>, b: &Tensor<f64>, f: impl Fn(f64, f64) -> f64) -> Tensor<f64> {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_fn(a.shape(), |i| f(a.data()[i], b.data()[i]))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction's ConvLSTM weights pulled out of a parameter set by name.
pub struct RefLstm {
    w_fi: Tensor<f64>,
    w_hi: Tensor<f64>,
    w_ff: Tensor<f64>,
    w_hf: Tensor<f64>,
    w_fc: Tensor<f64>,
    w_hc: Tensor<f64>,
    w_fo: Tensor<f64>,
    w_ho: Tensor<f64>,
    b_i: Tensor<f64>,
    b_f: Tensor<f64>,
    b_c: Tensor<f64>,
    b_o: Tensor<f64>,
}

impl RefLstm {
    pub fn from_params(params: &ParamSet<f64>, scope: &str, dir: &str) -> RefLstm {
        let get = |name: &str| {
            let full = format!("{scope}cell.{dir}.{name}");
            params.value(params.id(&full).unwrap_or_else(|| panic!("missing {full}"))).clone()
        };
        RefLstm {
            w_fi: get("W_Fi"),
            w_hi: get("W_Hi"),
            w_ff: get("W_Ff"),
            w_hf: get("W_Hf"),
            w_fc: get("W_Fc"),
            w_hc: get("W_Hc"),
            w_fo: get("W_Fo"),
            w_ho: get("W_Ho"),
            b_i: get("b_i"),
            b_f: get("b_f"),
            b_c: get("b_c"),
            b_o: get("b_o"),
        }
    }

    fn gate(
        &self,
        f: &Tensor<f64>,
        h: &Tensor<f64>,
        w_f: &Tensor<f64>,
        w_h: &Tensor<f64>,
        b: &Tensor<f64>,
    ) -> Tensor<f64> {
        let s = ew2(
            &naive_conv_same(f, w_f, None),
            &naive_conv_same(h, w_h, None),
            |a, c| a + c,
        );
        let c = b.data().len();
        Tensor::from_fn(s.shape(), |i| s.data()[i] + b.data()[i % c])
    }

    /// One sequential step: gates from the current input and the previous
    /// hidden map, then the usual cell and hidden updates.
    pub fn step(
        &self,
        f: &Tensor<f64>,
        h_prev: &Tensor<f64>,
        c_prev: &Tensor<f64>,
    ) -> (Tensor<f64>, Tensor<f64>) {
        let i = self.gate(f, h_prev, &self.w_fi, &self.w_hi, &self.b_i).map(sigmoid);
        let fg = self.gate(f, h_prev, &self.w_ff, &self.w_hf, &self.b_f).map(sigmoid);
        let cand = self.gate(f, h_prev, &self.w_fc, &self.w_hc, &self.b_c).map(f64::tanh);
        let o = self.gate(f, h_prev, &self.w_fo, &self.w_ho, &self.b_o).map(sigmoid);
        let c = ew2(&ew2(&fg, c_prev, |a, b| a * b), &ew2(&i, &cand, |a, b| a * b), |a, b| {
            a + b
        });
        let h = ew2(&o, &c.map(f64::tanh), |a, b| a * b);
        (h, c)
    }

    /// Walks a path graph head to tail (or any fixed visit order) with the
    /// previous joint's states as context; the first joint sees zeros.
    pub fn walk(&self, inputs: &[&Tensor<f64>]) -> Vec<(Tensor<f64>, Tensor<f64>)> {
        let shape = inputs[0].shape().to_vec();
        let mut out: Vec<(Tensor<f64>, Tensor<f64>)> = Vec::with_capacity(inputs.len());
        for (t, f) in inputs.iter().enumerate() {
            let (h_prev, c_prev) = match t {
                0 => (Tensor::zeros(&shape), Tensor::zeros(&shape)),
                _ => out[t - 1].clone(),
            };
            out.push(self.step(f, &h_prev, &c_prev));
        }
        out
    }
}

/// Metrics recomputed from first principles: align to the root, take
/// Euclidean distances for visible joints, then count and average.
pub struct BruteScores {
    pub pck: Vec<f64>,
    pub mean_error: f64,
    pub per_joint: Vec<Option<f64>>,
    pub pckf: Option<f64>,
}

pub fn brute_scores(
    pairs: &[PosePair],
    root: usize,
    sorted_thresholds: &[f64],
    pckf: Option<((usize, usize), f64)>,
) -> BruteScores {
    let joints = pairs[0].gt.len();
    let mut errors: Vec<(usize, f64)> = Vec::new();
    for pair in pairs {
        for j in 0..joints {
            if !pair.visible[j] {
                continue;
            }
            let mut sq = 0.0;
            for d in 0..3 {
                let p = pair.pred[j][d] - pair.pred[root][d];
                let g = pair.gt[j][d] - pair.gt[root][d];
                sq += (p - g) * (p - g);
            }
            errors.push((j, sq.sqrt()));
        }
    }
    let n = errors.len() as f64;
    let pck = sorted_thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&(_, e)| e <= t).count() as f64 / n)
        .collect();
    let mean_error = errors.iter().map(|&(_, e)| e).sum::<f64>() / n;
    let per_joint = (0..joints)
        .map(|j| {
            let of_j: Vec<f64> =
                errors.iter().filter(|&&(jj, _)| jj == j).map(|&(_, e)| e).collect();
            (!of_j.is_empty()).then(|| of_j.iter().sum::<f64>() / of_j.len() as f64)
        })
        .collect();
    let pckf = pckf.map(|((a, b), t)| {
        let mut hits = 0usize;
        let mut total = 0usize;
        for pair in pairs {
            let mut sq = 0.0;
            for d in 0..3 {
                sq += (pair.gt[a][d] - pair.gt[b][d]) * (pair.gt[a][d] - pair.gt[b][d]);
            }
            let width = sq.sqrt();
            for j in 0..joints {
                if !pair.visible[j] {
                    continue;
                }
                let mut esq = 0.0;
                for d in 0..3 {
                    let p = pair.pred[j][d] - pair.pred[root][d];
                    let g = pair.gt[j][d] - pair.gt[root][d];
                    esq += (p - g) * (p - g);
                }
                total += 1;
                if esq.sqrt() / width <= t {
                    hits += 1;
                }
            }
        }
        hits as f64 / total as f64
    });
    BruteScores { pck, mean_error, per_joint, pckf }
}
