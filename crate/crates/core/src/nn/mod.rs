//! Layers, models and hand-written reverse-mode gradients.
//!
//! Every routine works on a batch: a tensor whose leading axis indexes
//! samples and whose remaining axes equal the model's input shape. A tensor
//! of exactly the input shape is treated as a batch of one.

mod conv;
pub mod gradcheck;
mod io;
mod loss;
mod presets;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

pub use conv::conv2d_forward;
pub use io::{load_model, peek_dtype, read_model, save_model, write_model};
pub use loss::{cross_entropy_rows, softmax_cross_entropy};
pub use presets::{mlp_specs, mnist_cnn_specs, Activation, MNIST_INPUT};

use crate::error::{shape, Error, Result};
use crate::kwta::{self, ActivationPattern};
use crate::par;
use crate::tensor::{gemm, MatRef, Real, Rng, Tensor};
use conv::ConvGeom;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Kwta {
        gamma: f64,
    },
    Flatten,
}

impl LayerSpec {
    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn is_activation(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::Kwta { .. })
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if input != [in_dim] {
                    return Err(format!("dense layer expects [{in_dim}], got {input:?}"));
                }
                if out_dim == 0 {
                    return Err("dense layer with zero outputs".into());
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                if input.first() != Some(&in_channels) {
                    return Err(format!("conv2d expects {in_channels} input channels, got {input:?}"));
                }
                let g = ConvGeom::new(input, out_channels, kernel_size, stride, padding)?;
                Ok(vec![g.c_out, g.h_out, g.w_out])
            }
            LayerSpec::Kwta { gamma } => {
                kwta::k_from_gamma(gamma, 1).map_err(|e| e.to_string())?;
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of the weight and bias tensors of a parametric layer.
    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => Some((vec![out_dim, in_dim], vec![out_dim])),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel_size, kernel_size],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    /// Variance of the Gaussian weight initialization, `1 / fan_out`.
    fn init_variance(&self) -> Option<f64> {
        match *self {
            LayerSpec::Dense { out_dim, .. } => Some(1.0 / out_dim as f64),
            LayerSpec::Conv2d {
                out_channels,
                kernel_size,
                ..
            } => Some(1.0 / (out_channels * kernel_size * kernel_size) as f64),
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { in_dim, out_dim } => write!(f, "dense {in_dim} {out_dim}"),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                write!(
                    f,
                    "conv2d {in_channels} {out_channels} {kernel_size} {stride} {padding}"
                )
            }
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Kwta { gamma } => write!(f, "kwta {gamma:?}"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

/// Weight and bias of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Layer<T: Real> {
    spec: LayerSpec,
    params: Option<Params<T>>,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

impl<T: Real> Layer<T> {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> Option<&Params<T>> {
        self.params.as_ref()
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    fn conv_geom(&self) -> Option<ConvGeom> {
        match self.spec {
            LayerSpec::Conv2d {
                out_channels,
                kernel_size,
                stride,
                padding,
                ..
            } => ConvGeom::new(&self.in_shape, out_channels, kernel_size, stride, padding).ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMeta {
    pub name: String,
    pub seed: u64,
    pub tags: Vec<String>,
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// A feed-forward network: an ordered list of layers plus their parameters.
pub struct Model<T: Real = f64> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    meta: ModelMeta,
    version: u64,
    grad_calls: AtomicU64,
}

impl<T: Real> Clone for Model<T> {
    fn clone(&self) -> Self {
        Model {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            meta: self.meta.clone(),
            version: fresh_version(),
            grad_calls: AtomicU64::new(0),
        }
    }
}

impl<T: Real> fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("input_shape", &self.input_shape)
            .field("specs", &self.specs())
            .field("meta", &self.meta)
            .finish()
    }
}

/// Builds a model with `N(0, 1/fan_out)` weights and zero biases.
pub fn build_model<T: Real>(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut Rng) -> Result<Model<T>> {
    Model::build(input_shape, specs, rng)
}

impl<T: Real> Model<T> {
    pub fn build(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let shapes = Self::infer_shapes(input_shape, &specs)?;
        let layers = specs
            .into_iter()
            .zip(shapes.windows(2))
            .map(|(spec, io)| {
                let params = match (spec.param_shapes(), spec.init_variance()) {
                    (Some((ws, bs)), Some(var)) => {
                        let std = var.sqrt();
                        let n: usize = ws.iter().product();
                        let w = (0..n).map(|_| T::of(std * rng.standard_normal())).collect();
                        Some(Params {
                            weight: Tensor::new(ws, w)?,
                            bias: Tensor::zeros(&bs)?,
                        })
                    }
                    _ => None,
                };
                Ok(Layer {
                    spec,
                    params,
                    in_shape: io[0].clone(),
                    out_shape: io[1].clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            input_shape: input_shape.to_vec(),
            layers,
            meta: ModelMeta {
                seed: rng.seed(),
                ..ModelMeta::default()
            },
            version: fresh_version(),
            grad_calls: AtomicU64::new(0),
        })
    }

    /// Assembles a model from explicit parameters, one entry per parametric layer.
    pub fn from_params(
        input_shape: &[usize],
        specs: Vec<LayerSpec>,
        params: Vec<Params<T>>,
        meta: ModelMeta,
    ) -> Result<Self> {
        let shapes = Self::infer_shapes(input_shape, &specs)?;
        let mut params = params.into_iter();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, (spec, io)) in specs.into_iter().zip(shapes.windows(2)).enumerate() {
            let p = match spec.param_shapes() {
                Some((ws, bs)) => {
                    let p = params
                        .next()
                        .ok_or_else(|| Error::Build(format!("missing parameters for layer {i} ({spec})")))?;
                    if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
                        return Err(Error::Build(format!(
                            "layer {i} ({spec}) expects weight {ws:?} and bias {bs:?}, got {:?} and {:?}",
                            p.weight.shape(),
                            p.bias.shape()
                        )));
                    }
                    Some(p)
                }
                None => None,
            };
            layers.push(Layer {
                spec,
                params: p,
                in_shape: io[0].clone(),
                out_shape: io[1].clone(),
            });
        }
        if params.next().is_some() {
            return Err(Error::Build("more parameter blocks than parametric layers".into()));
        }
        Ok(Model {
            input_shape: input_shape.to_vec(),
            layers,
            meta,
            version: fresh_version(),
            grad_calls: AtomicU64::new(0),
        })
    }

    fn infer_shapes(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Build(format!("invalid input shape {input_shape:?}")));
        }
        if specs.is_empty() {
            return Err(Error::Build("model has no layers".into()));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for (i, spec) in specs.iter().enumerate() {
            let prev = shapes.last().unwrap();
            let next = spec.output_shape(prev).map_err(|msg| {
                let before = if i == 0 {
                    "input".to_string()
                } else {
                    format!("layer {} ({})", i - 1, specs[i - 1])
                };
                Error::Build(format!("{before} -> layer {i} ({spec}): {msg}"))
            })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers.last().expect("model has layers").out_shape
    }

    pub fn classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    /// Changes whenever parameters or sparsity ratios are mutated.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of backward passes run against this model.
    pub fn gradient_calls(&self) -> u64 {
        self.grad_calls.load(Ordering::Relaxed)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Params<T>> {
        self.layers.iter().filter_map(|l| l.params.as_ref())
    }

    /// Mutable parameters of every parametric layer, in layer order.
    pub fn params_mut(&mut self) -> Vec<&mut Params<T>> {
        self.version = fresh_version();
        self.layers.iter_mut().filter_map(|l| l.params.as_mut()).collect()
    }

    pub fn set_params(&mut self, layer: usize, params: Params<T>) -> Result<()> {
        let l = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::Argument(format!("no layer {layer}")))?;
        let Some((ws, bs)) = l.spec.param_shapes() else {
            return Err(Error::Argument(format!("layer {layer} ({}) has no parameters", l.spec)));
        };
        if params.weight.shape() != ws.as_slice() || params.bias.shape() != bs.as_slice() {
            return Err(shape(format!("layer {layer} expects weight {ws:?} and bias {bs:?}")));
        }
        l.params = Some(params);
        self.version = fresh_version();
        Ok(())
    }

    /// Sparsity ratios of all k-WTA layers, in order.
    pub fn kwta_gammas(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| match l.spec {
                LayerSpec::Kwta { gamma } => Some(gamma),
                _ => None,
            })
            .collect()
    }

    /// Sets every k-WTA layer to the same sparsity ratio.
    pub fn set_kwta_gamma(&mut self, gamma: f64) -> Result<()> {
        kwta::k_from_gamma(gamma, 1)?;
        let mut found = false;
        for l in &mut self.layers {
            if let LayerSpec::Kwta { gamma: g } = &mut l.spec {
                *g = gamma;
                found = true;
            }
        }
        if !found {
            return Err(Error::Usage("model has no k-WTA layers".into()));
        }
        self.version = fresh_version();
        Ok(())
    }

    /// The same network in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l.params.as_ref().map(|p| Params {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    }),
                    in_shape: l.in_shape.clone(),
                    out_shape: l.out_shape.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
            version: fresh_version(),
            grad_calls: AtomicU64::new(0),
        }
    }

    /// Same parameters with every activation layer replaced by `act`.
    pub fn with_activation(&self, act: Activation) -> Model<T> {
        let mut twin = self.clone();
        for l in &mut twin.layers {
            if l.spec.is_activation() {
                l.spec = act.spec();
            }
        }
        twin
    }

    fn batch_size(&self, x: &Tensor<T>) -> Result<usize> {
        if x.shape() == self.input_shape.as_slice() {
            Ok(1)
        } else if x.rank() == self.input_shape.len() + 1 && &x.shape()[1..] == self.input_shape.as_slice() {
            Ok(x.shape()[0])
        } else {
            Err(shape(format!(
                "input of shape {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape
            )))
        }
    }

    /// Forward pass recording everything backward needs.
    pub fn forward(&self, x: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.run(x, true, None)
    }

    /// Logits `[B, classes]` without keeping a trace.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false, None)?.logits)
    }

    /// Forward pass with every activation layer replaced by a fixed mask.
    ///
    /// `masks[b]` is the region signature of sample `b`; inside the region it
    /// belongs to this is exactly [`Model::forward`], and everywhere it is the
    /// affine map of that region.
    pub fn forward_masked(&self, x: &Tensor<T>, masks: &[RegionSignature]) -> Result<Tensor<T>> {
        Ok(self.run(x, false, Some(masks))?.logits)
    }

    /// Argmax class per sample.
    pub fn classify(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.predict(x)?;
        Ok(argmax_rows(&logits))
    }

    fn run(&self, x: &Tensor<T>, record: bool, masks: Option<&[RegionSignature]>) -> Result<ForwardTrace<T>> {
        let batch = self.batch_size(x)?;
        if let Some(m) = masks {
            if m.len() != batch {
                return Err(shape(format!("{} masks for a batch of {batch}", m.len())));
            }
        }
        let mut cur: Vec<T> = x.data().to_vec();
        let mut inputs = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        let mut patterns = Vec::with_capacity(self.layers.len());
        let mut act_index = 0;
        for layer in &self.layers {
            let (out, pats) = match &layer.spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let p = layer.params.as_ref().expect("dense params");
                    (dense_forward(&cur, batch, *in_dim, *out_dim, p), None)
                }
                LayerSpec::Conv2d { .. } => {
                    let p = layer.params.as_ref().expect("conv params");
                    let g = layer.conv_geom().expect("validated geometry");
                    (
                        conv::forward_batch(&cur, batch, &g, p.weight.data(), p.bias.data()),
                        None,
                    )
                }
                LayerSpec::Flatten => (cur.clone(), None),
                LayerSpec::Relu | LayerSpec::Kwta { .. } => {
                    let per = layer.in_len();
                    let pats: Vec<ActivationPattern> = match masks {
                        Some(m) => m.iter().map(|s| s.0[act_index].clone()).collect(),
                        None => active_sets(&layer.spec, &cur, batch, per)?,
                    };
                    act_index += 1;
                    let mut out = vec![T::zero(); cur.len()];
                    for (b, p) in pats.iter().enumerate() {
                        if p.width() != per {
                            return Err(shape(format!("mask width {} for layer width {per}", p.width())));
                        }
                        for &j in p.indices() {
                            out[b * per + j] = cur[b * per + j];
                        }
                    }
                    (out, Some(pats))
                }
            };
            if record {
                inputs.push(std::mem::replace(&mut cur, out));
            } else {
                cur = out;
            }
            patterns.push(pats);
        }
        let logits = Tensor::new(vec![batch, self.classes()], cur)?;
        Ok(ForwardTrace {
            inputs,
            patterns,
            logits,
            batch,
            input_shape: x.shape().to_vec(),
            version: self.version,
        })
    }

    /// Gradients of `sum_b <loss_grad[b], logits[b]>` with respect to every
    /// parameter and the input.
    pub fn backward(&self, trace: &ForwardTrace<T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        self.reverse(trace, loss_grad, true)
    }

    /// Like [`Model::backward`] but only the input gradient.
    pub fn input_gradient(&self, trace: &ForwardTrace<T>, loss_grad: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.reverse(trace, loss_grad, false)?.input)
    }

    fn reverse(&self, trace: &ForwardTrace<T>, loss_grad: &Tensor<T>, want_params: bool) -> Result<Gradients<T>> {
        if trace.version != self.version {
            return Err(Error::Usage(
                "stale trace: the model changed after this forward pass".into(),
            ));
        }
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::Usage("trace was recorded without layer inputs".into()));
        }
        let batch = trace.batch;
        if loss_grad.len() != batch * self.classes() {
            return Err(shape(format!(
                "loss gradient of shape {:?} for {batch} x {} logits",
                loss_grad.shape(),
                self.classes()
            )));
        }
        self.grad_calls.fetch_add(1, Ordering::Relaxed);
        let mut grads: Vec<Option<Params<T>>> = vec![None; self.layers.len()];
        let mut g: Vec<T> = loss_grad.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = trace.inputs[i].as_slice();
            g = match &layer.spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let p = layer.params.as_ref().expect("dense params");
                    let (dx, dp) = dense_backward(x, &g, batch, *in_dim, *out_dim, p, want_params)?;
                    grads[i] = dp;
                    dx
                }
                LayerSpec::Conv2d { .. } => {
                    let p = layer.params.as_ref().expect("conv params");
                    let geom = layer.conv_geom().expect("validated geometry");
                    let r = conv::backward_batch(x, &g, batch, &geom, p.weight.data(), want_params);
                    if let Some((dw, db)) = r.params {
                        grads[i] = Some(Params {
                            weight: Tensor::new(p.weight.shape().to_vec(), dw)?,
                            bias: Tensor::new(p.bias.shape().to_vec(), db)?,
                        });
                    }
                    r.input
                }
                LayerSpec::Flatten => g,
                LayerSpec::Relu | LayerSpec::Kwta { .. } => {
                    let per = layer.in_len();
                    let pats = trace.patterns[i].as_ref().expect("activation patterns recorded");
                    let mut dx = vec![T::zero(); g.len()];
                    for (b, p) in pats.iter().enumerate() {
                        for &j in p.indices() {
                            dx[b * per + j] = g[b * per + j];
                        }
                    }
                    dx
                }
            };
        }
        Ok(Gradients {
            params: grads,
            input: Tensor::new(trace.input_shape.clone(), g)?,
        })
    }
}

/// Winners of each sample for one activation layer (positive entries for ReLU).
fn active_sets<T: Real>(spec: &LayerSpec, x: &[T], batch: usize, per: usize) -> Result<Vec<ActivationPattern>> {
    match *spec {
        LayerSpec::Kwta { gamma } => {
            let k = kwta::k_from_gamma(gamma, per)?;
            par::map_indexed(batch, |b| {
                let w = kwta::winners(&x[b * per..(b + 1) * per], k)?;
                ActivationPattern::new(w, per)
            })
            .into_iter()
            .collect()
        }
        LayerSpec::Relu => Ok((0..batch)
            .map(|b| {
                let on: Vec<usize> = (0..per).filter(|&j| x[b * per + j] > T::zero()).collect();
                ActivationPattern::from_sorted_unchecked(on, per)
            })
            .collect()),
        _ => unreachable!("not an activation layer"),
    }
}

fn dense_forward<T: Real>(x: &[T], batch: usize, in_dim: usize, out_dim: usize, p: &Params<T>) -> Vec<T> {
    let mut out = vec![T::zero(); batch * out_dim];
    for row in out.chunks_exact_mut(out_dim) {
        row.copy_from_slice(p.bias.data());
    }
    gemm(
        MatRef::new(x, batch, in_dim),
        MatRef::transposed(p.weight.data(), out_dim, in_dim),
        T::one(),
        &mut out,
    );
    out
}

type DenseGrads<T> = (Vec<T>, Option<Params<T>>);

fn dense_backward<T: Real>(
    x: &[T],
    dy: &[T],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    p: &Params<T>,
    want_params: bool,
) -> Result<DenseGrads<T>> {
    let mut dx = vec![T::zero(); batch * in_dim];
    gemm(
        MatRef::new(dy, batch, out_dim),
        MatRef::new(p.weight.data(), out_dim, in_dim),
        T::zero(),
        &mut dx,
    );
    if !want_params {
        return Ok((dx, None));
    }
    let mut dw = vec![T::zero(); out_dim * in_dim];
    gemm(
        MatRef::transposed(dy, batch, out_dim),
        MatRef::new(x, batch, in_dim),
        T::zero(),
        &mut dw,
    );
    let mut db = vec![T::zero(); out_dim];
    for row in dy.chunks_exact(out_dim) {
        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
    }
    Ok((
        dx,
        Some(Params {
            weight: Tensor::new(vec![out_dim, in_dim], dw)?,
            bias: Tensor::new(vec![out_dim], db)?,
        }),
    ))
}

pub(crate) fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                )
                .0
        })
        .collect()
}

/// Active index sets of every activation layer for one sample, in layer order.
///
/// For k-WTA layers these are the activation patterns; for ReLU layers the
/// strictly positive units. Equal signatures mean the same linear region.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionSignature(pub Vec<ActivationPattern>);

/// Everything recorded by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Real> {
    inputs: Vec<Vec<T>>,
    patterns: Vec<Option<Vec<ActivationPattern>>>,
    logits: Tensor<T>,
    batch: usize,
    input_shape: Vec<usize>,
    version: u64,
}

impl<T: Real> ForwardTrace<T> {
    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Flattened batch input of layer `i`; for activation layers, the pre-activations.
    pub fn layer_input(&self, i: usize) -> &[T] {
        &self.inputs[i]
    }

    /// k-WTA activation patterns of layer `i`, one per sample; `None` for other layers.
    pub fn kwta_patterns(&self, layer: usize, model: &Model<T>) -> Option<&[ActivationPattern]> {
        match model.layers.get(layer)?.spec {
            LayerSpec::Kwta { .. } => self.patterns[layer].as_deref(),
            _ => None,
        }
    }

    pub fn region_signature(&self, sample: usize) -> RegionSignature {
        RegionSignature(self.patterns.iter().flatten().map(|p| p[sample].clone()).collect())
    }

    /// Smallest gap between the k-th and (k+1)-th pre-activation over all
    /// k-WTA layers of `sample`, and smallest |pre-activation| over ReLU layers.
    pub fn min_margin(&self, sample: usize, model: &Model<T>) -> T {
        let mut best = T::infinity();
        for (i, layer) in model.layers.iter().enumerate() {
            let per = layer.in_len();
            if i >= self.inputs.len() {
                break;
            }
            let x = &self.inputs[i][sample * per..(sample + 1) * per];
            match layer.spec {
                LayerSpec::Kwta { gamma } => {
                    let k = kwta::k_from_gamma(gamma, per).expect("validated gamma");
                    if let Ok(Some(m)) = kwta::winner_margin(x, k) {
                        best = best.min(m);
                    }
                }
                LayerSpec::Relu => {
                    best = x.iter().fold(best, |m, v| m.min(v.abs()));
                }
                _ => {}
            }
        }
        best
    }
}

/// Output of [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    /// One entry per layer; `Some` for parametric layers.
    pub params: Vec<Option<Params<T>>>,
    pub input: Tensor<T>,
}
