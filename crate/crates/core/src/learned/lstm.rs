//! Two stacked LSTM layers followed by a small rectified fully connected
//! head, sequence-to-one: the last hidden state of the second layer feeds
//! `32 -> 32 -> 16 -> 2`.
//!
//! Parameters live in one flat vector so optimiser state and gradients share
//! a layout; [`TENSORS`] names the slices. Gates are stacked `[i, f, g, o]`.

use std::io::{Read, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT: usize = 2;
pub const HIDDEN: usize = 32;
pub const FC1: usize = 32;
pub const FC2: usize = 16;
pub const OUTPUT: usize = 2;
const GATES: usize = 4 * HIDDEN;

/// Velocities (dva/s) are multiplied by this before entering the network.
pub const DEFAULT_INPUT_SCALE: f64 = 0.01;

pub const TENSORS: [(&str, &[usize]); 12] = [
    ("lstm1.w_ih", &[GATES, INPUT]),
    ("lstm1.w_hh", &[GATES, HIDDEN]),
    ("lstm1.bias", &[GATES]),
    ("lstm2.w_ih", &[GATES, HIDDEN]),
    ("lstm2.w_hh", &[GATES, HIDDEN]),
    ("lstm2.bias", &[GATES]),
    ("fc1.weight", &[FC1, HIDDEN]),
    ("fc1.bias", &[FC1]),
    ("fc2.weight", &[FC2, FC1]),
    ("fc2.bias", &[FC2]),
    ("out.weight", &[OUTPUT, FC2]),
    ("out.bias", &[OUTPUT]),
];

const W_IH1: usize = 0;
const W_HH1: usize = 1;
const B1: usize = 2;
const W_IH2: usize = 3;
const W_HH2: usize = 4;
const B2: usize = 5;
const FC1_W: usize = 6;
const FC1_B: usize = 7;
const FC2_W: usize = 8;
const FC2_B: usize = 9;
const OUT_W: usize = 10;
const OUT_B: usize = 11;

fn tensor_len(k: usize) -> usize {
    TENSORS[k].1.iter().product()
}

fn offset(k: usize) -> usize {
    (0..k).map(tensor_len).sum()
}

/// Total number of trainable scalars.
pub fn param_count() -> usize {
    (0..TENSORS.len()).map(tensor_len).sum()
}

fn mat(buf: &[f64], k: usize) -> ArrayView2<'_, f64> {
    let shape = TENSORS[k].1;
    let o = offset(k);
    ArrayView2::from_shape((shape[0], shape[1]), &buf[o..o + tensor_len(k)]).expect("tensor layout")
}

fn vector(buf: &[f64], k: usize) -> ArrayView1<'_, f64> {
    let o = offset(k);
    ArrayView1::from(&buf[o..o + tensor_len(k)])
}

fn mat_mut(buf: &mut [f64], k: usize) -> ArrayViewMut2<'_, f64> {
    let shape = TENSORS[k].1;
    let o = offset(k);
    let len = tensor_len(k);
    ArrayViewMut2::from_shape((shape[0], shape[1]), &mut buf[o..o + len]).expect("tensor layout")
}

fn vector_mut(buf: &mut [f64], k: usize) -> ArrayViewMut1<'_, f64> {
    let o = offset(k);
    let len = tensor_len(k);
    ArrayViewMut1::from(&mut buf[o..o + len])
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `tanh` through one `exp`; the libm version dominates the recurrent loop.
fn fast_tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    params: Vec<f64>,
    pub input_scale: f64,
}

/// Activations of one LSTM layer, each shaped `(T, B, HIDDEN)`.
struct LayerCache {
    i: Array3<f64>,
    f: Array3<f64>,
    g: Array3<f64>,
    o: Array3<f64>,
    c: Array3<f64>,
    tc: Array3<f64>,
    h: Array3<f64>,
}

struct HeadCache {
    a1: Array2<f64>,
    r1: Array2<f64>,
    a2: Array2<f64>,
    r2: Array2<f64>,
}

pub struct ForwardCache {
    x: Array3<f64>,
    l1: LayerCache,
    l2: LayerCache,
    head: HeadCache,
}

impl LstmModel {
    pub fn zeros() -> Self {
        LstmModel {
            params: vec![0.0; param_count()],
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }

    /// Uniform `±1/sqrt(fan)` initialisation: hidden size for the recurrent
    /// layers, input width for the dense ones.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count());
        for (k, (_, shape)) in TENSORS.iter().enumerate() {
            let fan = match k {
                0..=5 => HIDDEN,
                FC1_W | FC1_B => HIDDEN,
                FC2_W | FC2_B => FC1,
                _ => FC2,
            };
            let bound = 1.0 / (fan as f64).sqrt();
            let n: usize = shape.iter().product();
            params.extend((0..n).map(|_| rng.random_range(-bound..bound)));
        }
        LstmModel {
            params,
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }

    pub fn from_params(params: Vec<f64>, input_scale: f64) -> Result<Self> {
        if params.len() != param_count() {
            return Err(Error::Model(format!(
                "expected {} parameters, got {}",
                param_count(),
                params.len()
            )));
        }
        Ok(LstmModel {
            params,
            input_scale,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Displacement prediction for a batch shaped `(T, B, INPUT)` of raw
    /// velocities.
    pub fn forward(&self, input: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input)?.0)
    }

    /// Single window of `(vx, vy)` rows.
    pub fn forward_one(&self, window: &[[f64; 2]]) -> Result<[f64; 2]> {
        let mut x = Array3::zeros((window.len(), 1, INPUT));
        for (t, v) in window.iter().enumerate() {
            x[[t, 0, 0]] = v[0];
            x[[t, 0, 1]] = v[1];
        }
        let y = self.forward(x.view())?;
        Ok([y[[0, 0]], y[[0, 1]]])
    }

    pub fn forward_cached(&self, input: ArrayView3<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        let (t_len, b, width) = input.dim();
        if width != INPUT || t_len == 0 || b == 0 {
            return Err(Error::Model(format!(
                "input shaped ({t_len}, {b}, {width}), expected (T>0, B>0, {INPUT})"
            )));
        }
        let x = input.mapv(|v| v * self.input_scale);
        let p = &self.params;
        let l1 = layer_forward(x.view(), mat(p, W_IH1), mat(p, W_HH1), vector(p, B1));
        let l2 = layer_forward(l1.h.view(), mat(p, W_IH2), mat(p, W_HH2), vector(p, B2));
        let last = l2.h.index_axis(Axis(0), t_len - 1);
        let a1 = last.dot(&mat(p, FC1_W).t()) + vector(p, FC1_B);
        let r1 = a1.mapv(|v| v.max(0.0));
        let a2 = r1.dot(&mat(p, FC2_W).t()) + vector(p, FC2_B);
        let r2 = a2.mapv(|v| v.max(0.0));
        let y = r2.dot(&mat(p, OUT_W).t()) + vector(p, OUT_B);
        Ok((
            y,
            ForwardCache {
                x,
                l1,
                l2,
                head: HeadCache { a1, r1, a2, r2 },
            },
        ))
    }

    /// Gradient of a loss with respect to all parameters, given its
    /// gradient `dy` with respect to the outputs.
    pub fn backward(&self, cache: &ForwardCache, dy: ArrayView2<'_, f64>) -> Vec<f64> {
        let p = &self.params;
        let mut grad = vec![0.0; param_count()];
        let (t_len, b, _) = cache.x.dim();
        let last = cache.l2.h.index_axis(Axis(0), t_len - 1);
        let h = &cache.head;

        mat_mut(&mut grad, OUT_W).assign(&dy.t().dot(&h.r2));
        vector_mut(&mut grad, OUT_B).assign(&dy.sum_axis(Axis(0)));
        let mut da2 = dy.dot(&mat(p, OUT_W));
        da2.zip_mut_with(&h.a2, |d, a| {
            if *a <= 0.0 {
                *d = 0.0
            }
        });
        mat_mut(&mut grad, FC2_W).assign(&da2.t().dot(&h.r1));
        vector_mut(&mut grad, FC2_B).assign(&da2.sum_axis(Axis(0)));
        let mut da1 = da2.dot(&mat(p, FC2_W));
        da1.zip_mut_with(&h.a1, |d, a| {
            if *a <= 0.0 {
                *d = 0.0
            }
        });
        mat_mut(&mut grad, FC1_W).assign(&da1.t().dot(&last));
        vector_mut(&mut grad, FC1_B).assign(&da1.sum_axis(Axis(0)));
        let dlast = da1.dot(&mat(p, FC1_W));

        let mut dh2 = Array3::zeros((t_len, b, HIDDEN));
        dh2.index_axis_mut(Axis(0), t_len - 1).assign(&dlast);
        let (dw_ih2, dw_hh2, db2, dh1) =
            layer_backward(&cache.l2, cache.l1.h.view(), dh2.view(), mat(p, W_IH2), mat(p, W_HH2));
        mat_mut(&mut grad, W_IH2).assign(&dw_ih2);
        mat_mut(&mut grad, W_HH2).assign(&dw_hh2);
        vector_mut(&mut grad, B2).assign(&db2);
        let (dw_ih1, dw_hh1, db1, _) =
            layer_backward(&cache.l1, cache.x.view(), dh1.view(), mat(p, W_IH1), mat(p, W_HH1));
        mat_mut(&mut grad, W_IH1).assign(&dw_ih1);
        mat_mut(&mut grad, W_HH1).assign(&dw_hh1);
        vector_mut(&mut grad, B1).assign(&db1);
        grad
    }

    /// Mean Euclidean distance between predictions and `targets` (B, 2)
    /// together with its parameter gradient.
    pub fn loss_and_grad(&self, input: ArrayView3<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<(f64, Vec<f64>)> {
        let (y, cache) = self.forward_cached(input)?;
        let (loss, dy) = euclidean_loss(y.view(), targets)?;
        Ok((loss, self.backward(&cache, dy.view())))
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let tensors = TENSORS
            .iter()
            .enumerate()
            .map(|(k, (name, shape))| NamedTensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: self.params[offset(k)..offset(k) + tensor_len(k)].to_vec(),
            })
            .collect();
        let file = WeightsFile {
            input_scale: self.input_scale,
            tensors,
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let file: WeightsFile = serde_json::from_reader(reader)?;
        if file.tensors.len() != TENSORS.len() {
            return Err(Error::Model(format!("expected {} tensors, found {}", TENSORS.len(), file.tensors.len())));
        }
        let mut params = Vec::with_capacity(param_count());
        for (t, (name, shape)) in file.tensors.iter().zip(TENSORS.iter()) {
            if t.name != *name || t.shape != *shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Model(format!(
                    "tensor {} shaped {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
            params.extend_from_slice(&t.data);
        }
        LstmModel::from_params(params, file.input_scale)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    input_scale: f64,
    tensors: Vec<NamedTensor>,
}

/// Mean Euclidean distance and its gradient with respect to `y`. Rows with
/// zero distance contribute a zero subgradient.
pub fn euclidean_loss(y: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    if y.dim() != targets.dim() {
        return Err(Error::Model(format!("prediction {:?} vs target {:?}", y.dim(), targets.dim())));
    }
    let b = y.nrows() as f64;
    let mut dy = Array2::zeros(y.dim());
    let mut loss = 0.0;
    for ((yr, tr), mut dr) in y.rows().into_iter().zip(targets.rows()).zip(dy.rows_mut()) {
        let d0 = yr[0] - tr[0];
        let d1 = yr[1] - tr[1];
        let d = d0.hypot(d1);
        loss += d;
        if d > 0.0 {
            dr[0] = d0 / (b * d);
            dr[1] = d1 / (b * d);
        }
    }
    Ok((loss / b, dy))
}

fn layer_forward(
    x: ArrayView3<'_, f64>,
    w_ih: ArrayView2<'_, f64>,
    w_hh: ArrayView2<'_, f64>,
    bias: ArrayView1<'_, f64>,
) -> LayerCache {
    let (t_len, b, width) = x.dim();
    let flat = x.to_shape((t_len * b, width)).expect("contiguous input");
    let mut proj = flat.dot(&w_ih.t());
    proj += &bias;
    let zeros = || Array3::<f64>::zeros((t_len, b, HIDDEN));
    let mut cache = LayerCache {
        i: zeros(),
        f: zeros(),
        g: zeros(),
        o: zeros(),
        c: zeros(),
        tc: zeros(),
        h: zeros(),
    };
    let mut h_prev = Array2::<f64>::zeros((b, HIDDEN));
    let mut c_prev = Array2::<f64>::zeros((b, HIDDEN));
    let mut z = Array2::<f64>::zeros((b, GATES));
    for t in 0..t_len {
        z.assign(&proj.slice(s![t * b..(t + 1) * b, ..]));
        general_mat_mul(1.0, &h_prev, &w_hh.t(), 1.0, &mut z);
        let zs = z.as_slice().expect("standard layout");
        let cp = c_prev.as_slice().expect("standard layout");
        let mut ti = cache.i.index_axis_mut(Axis(0), t);
        let ti = ti.as_slice_mut().expect("standard layout");
        let mut tf = cache.f.index_axis_mut(Axis(0), t);
        let tf = tf.as_slice_mut().expect("standard layout");
        let mut tg = cache.g.index_axis_mut(Axis(0), t);
        let tg = tg.as_slice_mut().expect("standard layout");
        let mut to = cache.o.index_axis_mut(Axis(0), t);
        let to = to.as_slice_mut().expect("standard layout");
        let mut tcell = cache.c.index_axis_mut(Axis(0), t);
        let tcell = tcell.as_slice_mut().expect("standard layout");
        let mut ttc = cache.tc.index_axis_mut(Axis(0), t);
        let ttc = ttc.as_slice_mut().expect("standard layout");
        let mut th = cache.h.index_axis_mut(Axis(0), t);
        let th = th.as_slice_mut().expect("standard layout");
        for r in 0..b {
            let zr = &zs[r * GATES..(r + 1) * GATES];
            for j in 0..HIDDEN {
                let k = r * HIDDEN + j;
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[HIDDEN + j]);
                let g = fast_tanh(zr[2 * HIDDEN + j]);
                let o = sigmoid(zr[3 * HIDDEN + j]);
                let c = f * cp[k] + i * g;
                let tc = fast_tanh(c);
                ti[k] = i;
                tf[k] = f;
                tg[k] = g;
                to[k] = o;
                tcell[k] = c;
                ttc[k] = tc;
                th[k] = o * tc;
            }
        }
        c_prev.assign(&cache.c.index_axis(Axis(0), t));
        h_prev.assign(&cache.h.index_axis(Axis(0), t));
    }
    cache
}

/// Returns `(dW_ih, dW_hh, dbias, dx)` given the gradient reaching each
/// hidden state from above.
fn layer_backward(
    cache: &LayerCache,
    x: ArrayView3<'_, f64>,
    dh_above: ArrayView3<'_, f64>,
    w_ih: ArrayView2<'_, f64>,
    w_hh: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>, ndarray::Array1<f64>, Array3<f64>) {
    let (t_len, b, width) = x.dim();
    let mut dz_all = Array2::<f64>::zeros((t_len * b, GATES));
    let mut dh_next = Array2::<f64>::zeros((b, HIDDEN));
    let mut dc_next = vec![0.0; b * HIDDEN];
    for t in (0..t_len).rev() {
        let above = dh_above.index_axis(Axis(0), t);
        let above = above.as_slice().expect("standard layout");
        let dhn = dh_next.as_slice().expect("standard layout");
        let i_t = cache.i.index_axis(Axis(0), t);
        let f_t = cache.f.index_axis(Axis(0), t);
        let g_t = cache.g.index_axis(Axis(0), t);
        let o_t = cache.o.index_axis(Axis(0), t);
        let tc_t = cache.tc.index_axis(Axis(0), t);
        let (i_t, f_t, g_t, o_t, tc_t) = (
            i_t.as_slice().expect("layout"),
            f_t.as_slice().expect("layout"),
            g_t.as_slice().expect("layout"),
            o_t.as_slice().expect("layout"),
            tc_t.as_slice().expect("layout"),
        );
        let c_prev = (t > 0).then(|| cache.c.index_axis(Axis(0), t - 1));
        let c_prev = c_prev.as_ref().map(|c| c.as_slice().expect("layout"));
        let mut dz = dz_all.slice_mut(s![t * b..(t + 1) * b, ..]);
        let dz = dz.as_slice_mut().expect("standard layout");
        for r in 0..b {
            for j in 0..HIDDEN {
                let k = r * HIDDEN + j;
                let dh = above[k] + dhn[k];
                let (i, f, g, o, tc) = (i_t[k], f_t[k], g_t[k], o_t[k], tc_t[k]);
                let cp = c_prev.map_or(0.0, |c| c[k]);
                let d_o = dh * tc;
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                let di = dc * g;
                let dg = dc * i;
                let df = dc * cp;
                dc_next[k] = dc * f;
                let zr = &mut dz[r * GATES..(r + 1) * GATES];
                zr[j] = di * i * (1.0 - i);
                zr[HIDDEN + j] = df * f * (1.0 - f);
                zr[2 * HIDDEN + j] = dg * (1.0 - g * g);
                zr[3 * HIDDEN + j] = d_o * o * (1.0 - o);
            }
        }
        let dz_t = dz_all.slice(s![t * b..(t + 1) * b, ..]);
        general_mat_mul(1.0, &dz_t, &w_hh, 0.0, &mut dh_next);
    }
    let h_flat = cache.h.to_shape((t_len * b, HIDDEN)).expect("contiguous");
    let dw_hh = if t_len > 1 {
        dz_all.slice(s![b.., ..]).t().dot(&h_flat.slice(s![..(t_len - 1) * b, ..]))
    } else {
        Array2::zeros((GATES, HIDDEN))
    };
    let x_flat = x.to_shape((t_len * b, width)).expect("contiguous");
    let dw_ih = dz_all.t().dot(&x_flat);
    let db = dz_all.sum_axis(Axis(0));
    let dx = dz_all
        .dot(&w_ih)
        .into_shape_with_order((t_len, b, width))
        .expect("shape");
    (dw_ih, dw_hh, db, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line scalar forward pass, written independently of the
    /// batched implementation.
    fn scalar_forward(m: &LstmModel, window: &[[f64; 2]]) -> [f64; 2] {
        let p = m.params();
        let get = |k: usize, r: usize, c: usize| {
            let cols = TENSORS[k].1.get(1).copied().unwrap_or(1);
            p[offset(k) + r * cols + c]
        };
        let cell = |k_ih: usize, k_hh: usize, k_b: usize, x: &[f64], h: &[f64], c: &[f64]| {
            let mut hn = vec![0.0; HIDDEN];
            let mut cn = vec![0.0; HIDDEN];
            for j in 0..HIDDEN {
                let mut z = [0.0; 4];
                for (q, zq) in z.iter_mut().enumerate() {
                    let row = q * HIDDEN + j;
                    let mut acc = get(k_b, row, 0);
                    for (col, xv) in x.iter().enumerate() {
                        acc += get(k_ih, row, col) * xv;
                    }
                    for (col, hv) in h.iter().enumerate() {
                        acc += get(k_hh, row, col) * hv;
                    }
                    *zq = acc;
                }
                let i = 1.0 / (1.0 + (-z[0]).exp());
                let f = 1.0 / (1.0 + (-z[1]).exp());
                let g = z[2].tanh();
                let o = 1.0 / (1.0 + (-z[3]).exp());
                cn[j] = f * c[j] + i * g;
                hn[j] = o * cn[j].tanh();
            }
            (hn, cn)
        };
        let (mut h1, mut c1) = (vec![0.0; HIDDEN], vec![0.0; HIDDEN]);
        let (mut h2, mut c2) = (vec![0.0; HIDDEN], vec![0.0; HIDDEN]);
        for v in window {
            let x = [v[0] * m.input_scale, v[1] * m.input_scale];
            (h1, c1) = cell(W_IH1, W_HH1, B1, &x, &h1, &c1);
            (h2, c2) = cell(W_IH2, W_HH2, B2, &h1, &h2, &c2);
        }
        let dense = |k_w: usize, k_b: usize, x: &[f64], out: usize, relu: bool| {
            (0..out)
                .map(|r| {
                    let v = get(k_b, r, 0) + x.iter().enumerate().map(|(c, xv)| get(k_w, r, c) * xv).sum::<f64>();
                    if relu {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect::<Vec<f64>>()
        };
        let a = dense(FC1_W, FC1_B, &h2, FC1, true);
        let b = dense(FC2_W, FC2_B, &a, FC2, true);
        let y = dense(OUT_W, OUT_B, &b, OUTPUT, false);
        [y[0], y[1]]
    }

    fn fixture_window() -> Vec<[f64; 2]> {
        (0..100)
            .map(|t| {
                let t = t as f64;
                [300.0 * (t / 15.0).sin(), -120.0 + 2.5 * t]
            })
            .collect()
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let lstm = |inp: usize| 4 * HIDDEN * (inp + HIDDEN) + 4 * HIDDEN;
        let dense = |i: usize, o: usize| i * o + o;
        let expected = lstm(INPUT) + lstm(HIDDEN) + dense(HIDDEN, FC1) + dense(FC1, FC2) + dense(FC2, OUTPUT);
        assert_eq!(param_count(), expected);
        assert_eq!(param_count(), 14_418);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let y = LstmModel::zeros().forward_one(&fixture_window()).unwrap();
        assert_eq!(y, [0.0, 0.0]);
    }

    #[test]
    fn batched_forward_matches_scalar_reference_and_golden() {
        let m = LstmModel::seeded(42);
        let w = fixture_window();
        let fast = m.forward_one(&w).unwrap();
        let slow = scalar_forward(&m, &w);
        assert!((fast[0] - slow[0]).abs() < 1e-12 && (fast[1] - slow[1]).abs() < 1e-12);
        let golden = GOLDEN_SEED42;
        assert!((slow[0] - golden[0]).abs() < 1e-12, "{slow:?}");
        assert!((slow[1] - golden[1]).abs() < 1e-12, "{slow:?}");
    }

    /// Output of the scalar reference for seed 42 on [`fixture_window`].
    const GOLDEN_SEED42: [f64; 2] = [0.04871211293849758, 0.032750698163169306];

    #[test]
    fn shape_mismatch_is_model_error() {
        let m = LstmModel::zeros();
        let bad = Array3::<f64>::zeros((10, 4, 3));
        assert!(matches!(m.forward(bad.view()), Err(Error::Model(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut m = LstmModel::seeded(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t_len = 12;
        let x = Array3::from_shape_fn((t_len, 3, INPUT), |_| rng.random_range(-200.0..200.0));
        let y = Array2::from_shape_fn((3, OUTPUT), |_| rng.random_range(-1.0..1.0));
        let (_, grad) = m.loss_and_grad(x.view(), y.view()).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..param_count() {
            let orig = m.params[k];
            m.params[k] = orig + eps;
            let lp = euclidean_loss(m.forward(x.view()).unwrap().view(), y.view()).unwrap().0;
            m.params[k] = orig - eps;
            let lm = euclidean_loss(m.forward(x.view()).unwrap().view(), y.view()).unwrap().0;
            m.params[k] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let m = LstmModel::seeded(3);
        let mut buf = Vec::new();
        m.to_json(&mut buf).unwrap();
        let back = LstmModel::from_json(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let text = String::from_utf8(buf).unwrap().replace("\"fc2.bias\"", "\"fc2.bogus\"");
        assert!(LstmModel::from_json(text.as_bytes()).is_err());
    }

    #[test]
    fn loss_is_zero_only_at_targets() {
        let y = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(euclidean_loss(y.view(), y.view()).unwrap().0, 0.0);
        let t = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(euclidean_loss(y.view(), t.view()).unwrap().0, 2.5);
    }
}
