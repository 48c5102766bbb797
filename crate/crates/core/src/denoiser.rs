//! Conditional noise-prediction network `ε_θ(x_t, t, c)`.
//!
//! A fully connected network over the concatenation of the noisy sample, a
//! sinusoidal embedding of `t` and a learned condition embedding. The
//! condition table carries one extra row for the null (unconditional) label
//! used by classifier-free guidance. All parameters live in one flat vector so
//! that the optimizer, the checkpoint format and gradient checks can treat
//! them uniformly.

use std::path::Path;

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{arg, Error, Result};
use crate::io::write_atomic;

const CKPT_MAGIC: &[u8; 8] = b"RDIFCKPT";
const CKPT_VERSION: u8 = 1;

/// A condition label, or the null label used for unconditional prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Label(u32),
    Null,
}

impl Condition {
    pub fn is_null(self) -> bool {
        matches!(self, Condition::Null)
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub data_dim: usize,
    pub num_conditions: usize,
    pub time_embed_dim: usize,
    pub cond_embed_dim: usize,
    pub hidden_widths: Vec<usize>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            num_conditions: 8,
            time_embed_dim: 16,
            cond_embed_dim: 16,
            hidden_widths: vec![128, 128, 128],
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.num_conditions == 0 || self.cond_embed_dim == 0 {
            return arg("data_dim, num_conditions and cond_embed_dim must be positive");
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return arg("time_embed_dim must be a positive even number");
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return arg("hidden_widths must be a nonempty list of positive widths");
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed_dim + self.cond_embed_dim
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    layers: Vec<Dense>,
    len: usize,
}

impl Layout {
    fn new(cfg: &DenoiserConfig) -> Self {
        // Condition embedding table occupies the front of the vector.
        let mut off = (cfg.num_conditions + 1) * cfg.cond_embed_dim;
        let mut fan_in = cfg.input_dim();
        let mut layers = Vec::with_capacity(cfg.hidden_widths.len() + 1);
        for &fan_out in cfg.hidden_widths.iter().chain(std::iter::once(&cfg.data_dim)) {
            let w = off;
            let b = w + fan_in * fan_out;
            off = b + fan_out;
            layers.push(Dense {
                w,
                b,
                fan_in,
                fan_out,
            });
            fan_in = fan_out;
        }
        Layout { layers, len: off }
    }
}

/// Loss value and its gradient with respect to the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// A minibatch of regression rows `(x_t, t, c, ε_target)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x_t: Array2<f64>,
    pub t: Vec<f64>,
    pub cond: Vec<Condition>,
    pub target: Array2<f64>,
}

impl Batch {
    /// Builds a batch from `(x_t, t, c, ε_target)` rows.
    pub fn from_rows<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], f64, Condition, &'a [f64])>,
    {
        let (mut xs, mut ts, mut cs, mut ys) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut dim = None;
        for (x, t, c, y) in rows {
            let d = *dim.get_or_insert(x.len());
            if x.len() != d || y.len() != d {
                return arg("batch rows have inconsistent lengths");
            }
            xs.extend_from_slice(x);
            ys.extend_from_slice(y);
            ts.push(t);
            cs.push(c);
        }
        let d = dim.unwrap_or(0);
        let n = ts.len();
        Ok(Batch {
            x_t: Array2::from_shape_vec((n, d), xs).expect("shape"),
            t: ts,
            cond: cs,
            target: Array2::from_shape_vec((n, d), ys).expect("shape"),
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// The noise predictor with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    config: DenoiserConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len
    }
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

/// Activations kept from the forward pass for reverse accumulation.
struct Tape {
    /// Input to each dense layer (`inputs[0]` is the concatenated features).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl DenoiserModel {
    /// All-zero parameters; predicts 0 everywhere.
    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![0.0; layout.len];
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Fan-in scaled uniform initialization with a zero output layer.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed_len = model.layout.layers[0].w;
        for p in &mut model.params[..embed_len] {
            *p = rng.random_range(-1.0..1.0);
        }
        let n_layers = model.layout.layers.len();
        for layer in &model.layout.layers[..n_layers - 1] {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for p in &mut model.params[layer.w..layer.b + layer.fan_out] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// Replaces every parameter with a draw from `U(-scale, scale)`.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            *p = rng.random_range(-scale..scale);
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    pub fn num_conditions(&self) -> usize {
        self.config.num_conditions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn cond_row(&self, c: Condition) -> Result<usize> {
        match c {
            Condition::Null => Ok(self.config.num_conditions),
            Condition::Label(k) if (k as usize) < self.config.num_conditions => Ok(k as usize),
            Condition::Label(k) => arg(format!(
                "condition {k} out of range for {} conditions",
                self.config.num_conditions
            )),
        }
    }

    fn features(&self, x: ArrayView2<f64>, t: &[f64], cond: &[Condition]) -> Result<Array2<f64>> {
        let (n, d) = x.dim();
        if d != self.config.data_dim {
            return arg(format!(
                "sample dimension {d} does not match model dimension {}",
                self.config.data_dim
            ));
        }
        if t.len() != n || cond.len() != n {
            return arg("batch columns have mismatched lengths");
        }
        let ce = self.config.cond_embed_dim;
        let half = self.config.time_embed_dim / 2;
        let mut feats = Array2::zeros((n, self.config.input_dim()));
        feats.slice_mut(s![.., ..d]).assign(&x);
        for (i, (&ti, &ci)) in t.iter().zip(cond).enumerate() {
            let mut row = feats.row_mut(i);
            for k in 0..half {
                let angle = ti * time_frequency(k, half);
                row[d + k] = angle.sin();
                row[d + half + k] = angle.cos();
            }
            let r = self.cond_row(ci)?;
            let off = d + 2 * half;
            row.slice_mut(s![off..off + ce])
                .assign(&ndarray::aview1(&self.params[r * ce..(r + 1) * ce]));
        }
        Ok(feats)
    }

    fn weights(&self, layer: &Dense) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (layer.fan_out, layer.fan_in),
            &self.params[layer.w..layer.b],
        )
        .expect("layout")
    }

    fn forward(&self, x: ArrayView2<f64>, t: &[f64], cond: &[Condition]) -> Result<Tape> {
        let mut h = self.features(x, t, cond)?;
        let n = h.nrows();
        let last = self.layout.layers.len() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last);
        for (li, layer) in self.layout.layers.iter().enumerate() {
            let mut z = Array2::zeros((n, layer.fan_out));
            let bias = ndarray::aview1(&self.params[layer.b..layer.b + layer.fan_out]);
            z.rows_mut().into_iter().for_each(|mut r| r.assign(&bias));
            general_mat_mul(1.0, &h, &self.weights(layer).t(), 1.0, &mut z);
            inputs.push(h);
            if li == last {
                return Ok(Tape {
                    inputs,
                    pre,
                    out: z,
                });
            }
            h = z.mapv(silu);
            pre.push(z);
        }
        unreachable!("layout always has an output layer")
    }

    /// Batched prediction; row `i` of the result is `ε_θ(x_i, t_i, c_i)`.
    pub fn predict_batch(
        &self,
        x: ArrayView2<f64>,
        t: &[f64],
        cond: &[Condition],
    ) -> Result<Array2<f64>> {
        Ok(self.forward(x, t, cond)?.out)
    }

    /// `ε_θ(x, t, c)` for a single sample.
    pub fn predict_eps(&self, x: &[f64], t: f64, c: Condition) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row");
        let out = self.predict_batch(view, &[t], &[c])?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Mean squared ε-residual over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<GradientBundle> {
        if batch.is_empty() {
            return arg("loss_and_grad requires a nonempty batch");
        }
        if batch.target.dim() != batch.x_t.dim() {
            return arg("target shape does not match x_t shape");
        }
        let tape = self.forward(batch.x_t.view(), &batch.t, &batch.cond)?;
        let n = batch.len() as f64;
        let resid = &tape.out - &batch.target;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;

        let mut grads = vec![0.0; self.params.len()];
        let mut g = resid * (2.0 / n);
        for li in (0..self.layout.layers.len()).rev() {
            let layer = self.layout.layers[li];
            let input = &tape.inputs[li];
            {
                let mut gw = ArrayViewMut2::from_shape(
                    (layer.fan_out, layer.fan_in),
                    &mut grads[layer.w..layer.b],
                )
                .expect("layout");
                general_mat_mul(1.0, &g.t(), input, 1.0, &mut gw);
            }
            for (gb, col) in grads[layer.b..layer.b + layer.fan_out]
                .iter_mut()
                .zip(g.axis_iter(Axis(1)))
            {
                *gb += col.sum();
            }
            let mut g_in = g.dot(&self.weights(&layer));
            if li > 0 {
                g_in.zip_mut_with(&tape.pre[li - 1], |gi, &z| *gi *= silu_grad(z));
            }
            g = g_in;
        }

        let ce = self.config.cond_embed_dim;
        let off = self.config.data_dim + self.config.time_embed_dim;
        for (row, &c) in g.rows().into_iter().zip(&batch.cond) {
            let r = self.cond_row(c)?;
            for (acc, v) in grads[r * ce..(r + 1) * ce]
                .iter_mut()
                .zip(row.slice(s![off..off + ce]))
            {
                *acc += v;
            }
        }
        Ok(GradientBundle { loss, grads })
    }

    /// Serializes into the `RDIFCKPT` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(CKPT_MAGIC);
        out.push(CKPT_VERSION);
        for v in [
            c.data_dim,
            c.num_conditions,
            c.time_embed_dim,
            c.cond_embed_dim,
            c.hidden_widths.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &w in &c.hidden_widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::io::Reader::new(bytes);
        if r.take(8)? != CKPT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let data_dim = r.u32()? as usize;
        let num_conditions = r.u32()? as usize;
        let time_embed_dim = r.u32()? as usize;
        let cond_embed_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        let hidden_widths = (0..n_hidden)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let config = DenoiserConfig {
            data_dim,
            num_conditions,
            time_embed_dim,
            cond_embed_dim,
            hidden_widths,
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("bad architecture header: {e}")))?;
        let mut model = Self::zeros(config)?;
        let n = r.u64()? as usize;
        if n != model.params.len() {
            return Err(Error::Format(format!(
                "parameter count {n} does not match architecture ({})",
                model.params.len()
            )));
        }
        for p in &mut model.params {
            *p = r.f64()?;
        }
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn checkpoint_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// Geometric frequencies from 1 to 1000 rad per unit time.
fn time_frequency(k: usize, half: usize) -> f64 {
    if half == 1 {
        return 1.0;
    }
    (1000.0_f64.ln() * k as f64 / (half - 1) as f64).exp()
}
