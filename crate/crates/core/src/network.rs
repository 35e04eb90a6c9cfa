//! Layer graph, manifest format, tiling onto cores and the forward pass.
//!
//! Weight matrices are stored as in the manifest, `[out][in]` row-major. On a
//! crossbar the inputs drive rows and the outputs are read from columns, so
//! the mapped matrix is the transpose, `[in][out]`.

use std::collections::BTreeMap;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::reparam::Reparam;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Linear {
        in_features: usize,
        out_features: usize,
        lambda: Vec<f64>,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// `[out][in_channels * kernel * kernel]`, channel-major receptive field.
        lambda: Vec<f64>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub op: LayerOp,
}

impl LayerSpec {
    pub fn is_weight_layer(&self) -> bool {
        matches!(self.op, LayerOp::Linear { .. } | LayerOp::Conv2d { .. })
    }

    /// `(rows, cols)` of the crossbar-oriented weight matrix.
    pub fn weight_shape(&self) -> Option<(usize, usize)> {
        match &self.op {
            LayerOp::Linear {
                in_features,
                out_features,
                ..
            } => Some((*in_features, *out_features)),
            LayerOp::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel * kernel, *out_channels)),
            _ => None,
        }
    }

    pub fn lambda(&self) -> Option<&[f64]> {
        match &self.op {
            LayerOp::Linear { lambda, .. } | LayerOp::Conv2d { lambda, .. } => Some(lambda),
            _ => None,
        }
    }

    pub fn lambda_mut(&mut self) -> Option<&mut Vec<f64>> {
        match &mut self.op {
            LayerOp::Linear { lambda, .. } | LayerOp::Conv2d { lambda, .. } => Some(lambda),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    /// `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub metadata: Value,
}

/// Array encoding inside a manifest layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    List,
    /// Base64 of little-endian 32-bit floats.
    Base64F32le,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawManifest {
    format_version: u32,
    input_shape: Vec<usize>,
    layers: Vec<RawLayer>,
    #[serde(default)]
    metadata: Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLayer {
    name: String,
    kind: String,
    #[serde(default)]
    shape: BTreeMap<String, usize>,
    #[serde(default)]
    encoding: Encoding,
    #[serde(default)]
    params: BTreeMap<String, Value>,
}

fn decode_array(v: &Value, enc: Encoding, what: &str) -> Result<Vec<f64>> {
    match enc {
        Encoding::List => {
            let arr = v
                .as_array()
                .ok_or_else(|| Error::Parse(format!("{what}: expected a list")))?;
            arr.iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| Error::Parse(format!("{what}: non-numeric entry")))
                })
                .collect()
        }
        Encoding::Base64F32le => {
            let s = v
                .as_str()
                .ok_or_else(|| Error::Parse(format!("{what}: expected a base64 string")))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(s)
                .map_err(|e| Error::Parse(format!("{what}: {e}")))?;
            if bytes.len() % 4 != 0 {
                return Err(Error::Parse(format!("{what}: byte length not a multiple of 4")));
            }
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        }
    }
}

fn encode_array(v: &[f64], enc: Encoding) -> Value {
    match enc {
        Encoding::List => Value::from(v.to_vec()),
        Encoding::Base64F32le => {
            let bytes: Vec<u8> = v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
            Value::from(base64::engine::general_purpose::STANDARD.encode(bytes))
        }
    }
}

impl RawLayer {
    fn dim(&self, key: &str) -> Result<usize> {
        self.shape
            .get(key)
            .copied()
            .ok_or_else(|| Error::Parse(format!("layer {}: missing shape.{key}", self.name)))
    }

    fn array(&self, key: &str) -> Result<Vec<f64>> {
        let v = self
            .params
            .get(key)
            .ok_or_else(|| Error::Parse(format!("layer {}: missing params.{key}", self.name)))?;
        decode_array(v, self.encoding, &format!("{}.{key}", self.name))
    }
}

impl NetworkModel {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawManifest = serde_json::from_str(s)?;
        if raw.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported manifest format_version {}",
                raw.format_version
            )));
        }
        let mut layers = Vec::with_capacity(raw.layers.len());
        for l in &raw.layers {
            let op = match l.kind.as_str() {
                "linear" => LayerOp::Linear {
                    in_features: l.dim("in_features")?,
                    out_features: l.dim("out_features")?,
                    lambda: l.array("lambda")?,
                },
                "conv2d" => LayerOp::Conv2d {
                    in_channels: l.dim("in_channels")?,
                    out_channels: l.dim("out_channels")?,
                    kernel: l.dim("kernel")?,
                    stride: l.shape.get("stride").copied().unwrap_or(1),
                    padding: l.shape.get("padding").copied().unwrap_or(0),
                    lambda: l.array("lambda")?,
                },
                "batchnorm" => LayerOp::BatchNorm {
                    gamma: l.array("gamma")?,
                    beta: l.array("beta")?,
                    mean: l.array("mean")?,
                    var: l.array("var")?,
                    eps: l.params.get("eps").and_then(Value::as_f64).unwrap_or(1e-5),
                },
                "relu" => LayerOp::Relu,
                "maxpool" => LayerOp::MaxPool {
                    kernel: l.dim("kernel")?,
                    stride: l.shape.get("stride").copied().unwrap_or(l.dim("kernel")?),
                },
                other => {
                    return Err(Error::Parse(format!("layer {}: unknown kind {other}", l.name)))
                }
            };
            layers.push(LayerSpec {
                name: l.name.clone(),
                op,
            });
        }
        let net = NetworkModel {
            input_shape: raw.input_shape,
            layers,
            metadata: raw.metadata,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self, encoding: Encoding) -> Result<String> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut shape = BTreeMap::new();
                let mut params = BTreeMap::new();
                let kind = match &l.op {
                    LayerOp::Linear {
                        in_features,
                        out_features,
                        lambda,
                    } => {
                        shape.insert("in_features".into(), *in_features);
                        shape.insert("out_features".into(), *out_features);
                        params.insert("lambda".into(), encode_array(lambda, encoding));
                        "linear"
                    }
                    LayerOp::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        lambda,
                    } => {
                        shape.insert("in_channels".into(), *in_channels);
                        shape.insert("out_channels".into(), *out_channels);
                        shape.insert("kernel".into(), *kernel);
                        shape.insert("stride".into(), *stride);
                        shape.insert("padding".into(), *padding);
                        params.insert("lambda".into(), encode_array(lambda, encoding));
                        "conv2d"
                    }
                    LayerOp::BatchNorm {
                        gamma,
                        beta,
                        mean,
                        var,
                        eps,
                    } => {
                        shape.insert("channels".into(), gamma.len());
                        params.insert("gamma".into(), encode_array(gamma, encoding));
                        params.insert("beta".into(), encode_array(beta, encoding));
                        params.insert("mean".into(), encode_array(mean, encoding));
                        params.insert("var".into(), encode_array(var, encoding));
                        params.insert("eps".into(), Value::from(*eps));
                        "batchnorm"
                    }
                    LayerOp::Relu => "relu",
                    LayerOp::MaxPool { kernel, stride } => {
                        shape.insert("kernel".into(), *kernel);
                        shape.insert("stride".into(), *stride);
                        "maxpool"
                    }
                };
                RawLayer {
                    name: l.name.clone(),
                    kind: kind.into(),
                    shape,
                    encoding,
                    params,
                }
            })
            .collect();
        let raw = RawManifest {
            format_version: FORMAT_VERSION,
            input_shape: self.input_shape.clone(),
            layers,
            metadata: self.metadata.clone(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    /// Checks parameter sizes and propagates shapes through the graph.
    pub fn validate(&self) -> Result<()> {
        self.output_shapes().map(|_| ())
    }

    /// Activation shape after every layer.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::config("input_shape must be nonempty with positive dims"));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let bad = |msg: String| Error::config(format!("layer {}: {msg}", l.name));
            let numel: usize = shape.iter().product();
            shape = match &l.op {
                LayerOp::Linear {
                    in_features,
                    out_features,
                    lambda,
                } => {
                    if numel != *in_features {
                        return Err(bad(format!("expects {in_features} inputs, got {numel}")));
                    }
                    check_lambda(lambda, in_features * out_features).map_err(bad)?;
                    vec![*out_features]
                }
                LayerOp::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    lambda,
                } => {
                    if shape.len() != 3 || shape[0] != *in_channels {
                        return Err(bad(format!("expects [{in_channels}, h, w], got {shape:?}")));
                    }
                    check_lambda(lambda, out_channels * in_channels * kernel * kernel)
                        .map_err(bad)?;
                    let (oh, ow) = conv_out_dims(shape[1], shape[2], *kernel, *stride, *padding)?;
                    vec![*out_channels, oh, ow]
                }
                LayerOp::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    let c = shape[0];
                    if [gamma.len(), beta.len(), mean.len(), var.len()] != [c; 4] {
                        return Err(bad(format!("batchnorm parameters must have {c} channels")));
                    }
                    if var.iter().any(|&v| !(v + eps > 0.0)) {
                        return Err(bad("batchnorm variance must be positive".into()));
                    }
                    shape
                }
                LayerOp::Relu => shape,
                LayerOp::MaxPool { kernel, stride } => {
                    if shape.len() != 3 {
                        return Err(bad("maxpool expects [c, h, w]".into()));
                    }
                    let (oh, ow) = conv_out_dims(shape[1], shape[2], *kernel, *stride, 0)?;
                    vec![shape[0], oh, ow]
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Batch-norm channels whose gain is numerically zero, as `(layer, channel)`.
    pub fn degenerate_bn_channels(&self) -> Vec<(String, usize)> {
        let mut v = Vec::new();
        for l in &self.layers {
            if let LayerOp::BatchNorm { gamma, .. } = &l.op {
                for (c, g) in gamma.iter().enumerate() {
                    if g.abs() < 1e-12 {
                        v.push((l.name.clone(), c));
                    }
                }
            }
        }
        v
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self
            .output_shapes()?
            .last()
            .map(|s| s.iter().product())
            .unwrap_or_else(|| self.input_shape.iter().product()))
    }

    pub fn weight_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers.iter().enumerate().filter(|(_, l)| l.is_weight_layer())
    }

    /// Crossbar-oriented `[in][out]` matrices derived from lambda, one per
    /// weight layer.
    pub fn crossbar_matrices(&self, f: impl Fn(f64) -> Result<f64>) -> Result<Vec<Vec<f64>>> {
        self.weight_layers()
            .map(|(_, l)| {
                let (rows, cols) = l.weight_shape().expect("weight layer");
                let lambda = l.lambda().expect("weight layer");
                let mut m = vec![0.0; rows * cols];
                for o in 0..cols {
                    for i in 0..rows {
                        m[i * cols + o] = f(lambda[o * rows + i])?;
                    }
                }
                Ok(m)
            })
            .collect()
    }

    pub fn z_matrices(&self, reparam: &Reparam) -> Result<Vec<Vec<f64>>> {
        self.crossbar_matrices(|l| reparam.lambda_to_z(l))
    }

    /// `+/-1` weights from the sign of lambda, `sign(0) = +1`.
    pub fn sign_matrices(&self) -> Result<Vec<Vec<f64>>> {
        self.crossbar_matrices(|l| {
            if l.is_nan() {
                Err(Error::domain("natural parameter is NaN"))
            } else {
                Ok(if l >= 0.0 { 1.0 } else { -1.0 })
            }
        })
    }
}

fn check_lambda(lambda: &[f64], expected: usize) -> std::result::Result<(), String> {
    if lambda.len() != expected {
        return Err(format!("lambda has {} entries, expected {expected}", lambda.len()));
    }
    if lambda.iter().any(|x| !x.is_finite()) {
        return Err("lambda has non-finite entries".into());
    }
    Ok(())
}

fn conv_out_dims(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    if k == 0 || stride == 0 {
        return Err(Error::config("kernel and stride must be positive"));
    }
    if stride > h + 2 * pad || stride > w + 2 * pad {
        return Err(Error::config(format!("stride {stride} exceeds the {h}x{w} input")));
    }
    if k > h + 2 * pad || k > w + 2 * pad {
        return Err(Error::config(format!("kernel {k} exceeds the {h}x{w} input")));
    }
    Ok(((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1))
}

/// Lowers a `[c, h, w]` tensor to receptive fields. Returns
/// `(fields, oh, ow)` where `fields` holds `oh * ow` consecutive vectors of
/// length `c * k * k` (channel-major, then kernel row, then kernel column).
pub fn im2col(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Vec<f64>, usize, usize)> {
    if input.len() != c * h * w {
        return Err(Error::config(format!(
            "im2col: input has {} values, shape implies {}",
            input.len(),
            c * h * w
        )));
    }
    let (oh, ow) = conv_out_dims(h, w, k, stride, pad)?;
    let field = c * k * k;
    let mut out = vec![0.0; oh * ow * field];
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * field;
            for ch in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            out[base + (ch * k + ky) * k + kx] =
                                input[(ch * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok((out, oh, ow))
}

/// One tile: the block of the `[in][out]` matrix held by one core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub core: usize,
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileMapping {
    pub rows: usize,
    pub cols: usize,
    pub core_rows: usize,
    pub core_cols: usize,
    /// Ordered column block by column block, row blocks inside.
    pub tiles: Vec<Tile>,
}

impl TileMapping {
    pub fn num_cores(&self) -> usize {
        self.tiles.len()
    }

    pub fn padded_rows(&self) -> usize {
        self.tiles.iter().map(|t| self.core_rows - (t.row_end - t.row_start)).sum()
    }

    pub fn padded_cols(&self) -> usize {
        self.tiles.iter().map(|t| self.core_cols - (t.col_end - t.col_start)).sum()
    }
}

pub fn partition_layer(rows: usize, cols: usize, core_rows: usize, core_cols: usize) -> Result<TileMapping> {
    if rows == 0 || cols == 0 || core_rows == 0 || core_cols == 0 {
        return Err(Error::config("partition needs positive dimensions"));
    }
    let mut tiles = Vec::new();
    for cb in 0..cols.div_ceil(core_cols) {
        for rb in 0..rows.div_ceil(core_rows) {
            tiles.push(Tile {
                core: tiles.len(),
                row_start: rb * core_rows,
                row_end: ((rb + 1) * core_rows).min(rows),
                col_start: cb * core_cols,
                col_end: ((cb + 1) * core_cols).min(cols),
            });
        }
    }
    Ok(TileMapping {
        rows,
        cols,
        core_rows,
        core_cols,
        tiles,
    })
}

/// `round(x / scale)` clamped to the int8 range.
pub fn quantize_input(x: &[f64], scale: f64, out: &mut Vec<i8>) -> Result<()> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::domain(format!("quantization scale must be positive, got {scale}")));
    }
    out.clear();
    out.extend(x.iter().map(|&v| (v / scale).round().clamp(-128.0, 127.0) as i8));
    Ok(())
}

/// Source of binary weights for the integer forward pass.
pub trait WeightSource {
    /// `y[o] = sum_i w[i][o] * x[i]` for weight layer `wl`, drawing fresh
    /// weight samples where the source is stochastic.
    fn mvm(&mut self, wl: usize, x: &[i8], y: &mut [i32]) -> Result<()>;
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

impl NetworkModel {
    /// Walks the graph, delegating each weight-layer product of one receptive
    /// field to `lin(weight_layer_index, input, output)`.
    fn walk<F>(&self, x: &[f64], mut lin: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, &[f64], &mut [f64]) -> Result<()>,
    {
        let numel: usize = self.input_shape.iter().product();
        if x.len() != numel {
            return Err(Error::domain(format!("input has {} values, expected {numel}", x.len())));
        }
        let mut shape = self.input_shape.clone();
        let mut act = x.to_vec();
        let mut wl = 0usize;
        for l in &self.layers {
            match &l.op {
                LayerOp::Linear { out_features, .. } => {
                    let mut out = vec![0.0; *out_features];
                    lin(wl, &act, &mut out)?;
                    wl += 1;
                    act = out;
                    shape = vec![*out_features];
                }
                LayerOp::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let (fields, oh, ow) =
                        im2col(&act, *in_channels, shape[1], shape[2], *kernel, *stride, *padding)?;
                    let field = in_channels * kernel * kernel;
                    let mut out = vec![0.0; out_channels * oh * ow];
                    let mut y = vec![0.0; *out_channels];
                    for p in 0..oh * ow {
                        lin(wl, &fields[p * field..(p + 1) * field], &mut y)?;
                        for (o, &v) in y.iter().enumerate() {
                            out[o * oh * ow + p] = v;
                        }
                    }
                    wl += 1;
                    act = out;
                    shape = vec![*out_channels, oh, ow];
                }
                LayerOp::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    let per = act.len() / gamma.len();
                    for (c, chunk) in act.chunks_mut(per).enumerate() {
                        let sd = (var[c] + eps).sqrt();
                        for v in chunk {
                            *v = gamma[c] * (*v - mean[c]) / sd + beta[c];
                        }
                    }
                }
                LayerOp::Relu => relu_inplace(&mut act),
                LayerOp::MaxPool { kernel, stride } => {
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = conv_out_dims(h, w, *kernel, *stride, 0)?;
                    let mut out = vec![f64::NEG_INFINITY; c * oh * ow];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let o = &mut out[(ch * oh + oy) * ow + ox];
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        let v = act[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                                        if v > *o {
                                            *o = v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    act = out;
                    shape = vec![c, oh, ow];
                }
            }
        }
        Ok(act)
    }

    /// Floating-point forward pass with real-valued `[in][out]` weights.
    /// Also records `max |input|` seen by each weight layer into `input_max`.
    pub fn forward_float(
        &self,
        x: &[f64],
        weights: &[Vec<f64>],
        input_max: &mut [f64],
    ) -> Result<Vec<f64>> {
        let shapes: Vec<(usize, usize)> =
            self.weight_layers().map(|(_, l)| l.weight_shape().unwrap()).collect();
        self.walk(x, |wl, input, out| {
            let (rows, cols) = shapes[wl];
            let m = input.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if let Some(slot) = input_max.get_mut(wl) {
                *slot = slot.max(m);
            }
            out.iter_mut().for_each(|o| *o = 0.0);
            for (i, &xi) in input.iter().enumerate().take(rows) {
                if xi == 0.0 {
                    continue;
                }
                let row = &weights[wl][i * cols..(i + 1) * cols];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += w * xi;
                }
            }
            Ok(())
        })
    }

    /// Fixed-point forward pass: each weight-layer input is quantized to int8
    /// with that layer's scale, multiplied by binary weights from `source`
    /// with integer accumulation, and dequantized before batch norm.
    pub fn forward_quantized<S: WeightSource + ?Sized>(
        &self,
        x: &[f64],
        scales: &[f64],
        source: &mut S,
    ) -> Result<Vec<f64>> {
        let mut xq = Vec::new();
        let mut yi = Vec::new();
        self.walk(x, |wl, input, out| {
            let scale = *scales
                .get(wl)
                .ok_or_else(|| Error::config("missing quantization scale"))?;
            quantize_input(input, scale, &mut xq)?;
            yi.clear();
            yi.resize(out.len(), 0);
            source.mvm(wl, &xq, &mut yi)?;
            for (o, &v) in out.iter_mut().zip(&yi) {
                *o = v as f64 * scale;
            }
            Ok(())
        })
    }

    /// Per-layer int8 scales `max|x| / 127` from a float pass with the
    /// deterministic (mode) weights over a calibration batch.
    pub fn calibrate_scales(&self, inputs: &[Vec<f64>], reparam: &Reparam) -> Result<Vec<f64>> {
        let w: Vec<Vec<f64>> = self
            .z_matrices(reparam)?
            .into_iter()
            .map(|m| m.into_iter().map(|z| if z >= 0.0 { 1.0 } else { -1.0 }).collect())
            .collect();
        let mut maxes = vec![0.0; w.len()];
        for x in inputs {
            self.forward_float(x, &w, &mut maxes)?;
        }
        Ok(maxes
            .into_iter()
            .map(|m| if m > 0.0 && m.is_finite() { m / 127.0 } else { 1.0 })
            .collect())
    }
}

/// Deterministic `+/-1` weights held in memory (`[in][out]` per layer).
pub struct FixedWeights {
    pub matrices: Vec<Vec<i8>>,
    pub shapes: Vec<(usize, usize)>,
}

impl FixedWeights {
    pub fn from_signs(net: &NetworkModel, signs: &[Vec<f64>]) -> Self {
        FixedWeights {
            matrices: signs
                .iter()
                .map(|m| m.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect())
                .collect(),
            shapes: net.weight_layers().map(|(_, l)| l.weight_shape().unwrap()).collect(),
        }
    }
}

impl FixedWeights {
    pub fn apply(&self, wl: usize, x: &[i8], y: &mut [i32]) {
        let (_, cols) = self.shapes[wl];
        let m = &self.matrices[wl];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0 {
                continue;
            }
            let row = &m[i * cols..(i + 1) * cols];
            for (o, &w) in y.iter_mut().zip(row) {
                *o = o.saturating_add(w as i32 * xi as i32);
            }
        }
    }
}

impl WeightSource for FixedWeights {
    fn mvm(&mut self, wl: usize, x: &[i8], y: &mut [i32]) -> Result<()> {
        self.apply(wl, x, y);
        Ok(())
    }
}
