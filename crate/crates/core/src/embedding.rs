//! Frame-level feature embedding: a small CNN with named layer groups.
//!
//! Groups are ordered bottom to top (`conv1`, `conv2`, ..., `fc5`, ...) so
//! transfer plans and ablation sweeps can address "the bottom k groups".
//! The classifier head used for single-shot training sits on top of the
//! last group and is not itself a group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    softmax, HasParameters, Init, Layer, LayerContext, LayerKind, Mode, Parameter, RngStream,
    Tensor,
};
use crate::preproc::NetworkInput;

pub const FEATURE_DIM: usize = 256;
pub const HEAD_INIT_STD: f64 = 0.01;
pub const DEFAULT_DROPOUT: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of each convolutional group.
    pub conv_channels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    /// Max-pool window after each conv group; 1 disables pooling.
    pub conv_pools: Vec<usize>,
    pub conv_kernel: usize,
    /// Widths of the fully connected groups; the last is the feature size.
    pub fc_dims: Vec<usize>,
    pub dropout: f64,
    /// Inputs are standardised as `(x - input_mean) / input_scale`.
    pub input_mean: f64,
    pub input_scale: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            input_channels: 3,
            input_height: crate::preproc::INPUT_HEIGHT,
            input_width: crate::preproc::INPUT_WIDTH,
            conv_channels: vec![6, 12, 16, 16],
            conv_strides: vec![2, 1, 1, 1],
            conv_pools: vec![2, 2, 2, 1],
            conv_kernel: 3,
            fc_dims: vec![64, 64, FEATURE_DIM],
            dropout: DEFAULT_DROPOUT,
            input_mean: 128.0,
            input_scale: 128.0,
        }
    }
}

impl EmbeddingConfig {
    pub fn group_names(&self) -> Vec<String> {
        let n_conv = self.conv_channels.len();
        (0..n_conv)
            .map(|i| format!("conv{}", i + 1))
            .chain((0..self.fc_dims.len()).map(|i| format!("fc{}", n_conv + i + 1)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n_conv = self.conv_channels.len();
        if n_conv < 4 {
            return Err(Error::config("embedding.conv_channels", "need at least 4 conv groups"));
        }
        if self.fc_dims.len() < 2 {
            return Err(Error::config("embedding.fc_dims", "need at least 2 fc groups"));
        }
        if self.conv_strides.len() != n_conv {
            return Err(Error::config("embedding.conv_strides", "length must match conv_channels"));
        }
        if self.conv_pools.len() != n_conv {
            return Err(Error::config("embedding.conv_pools", "length must match conv_channels"));
        }
        if self.fc_dims.last() != Some(&FEATURE_DIM) {
            return Err(Error::config(
                "embedding.fc_dims",
                format!("last fc group must have {FEATURE_DIM} outputs"),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("embedding.dropout", "must lie in [0, 1)"));
        }
        if !(self.input_scale > 0.0) || !self.input_mean.is_finite() {
            return Err(Error::config("embedding.input_scale", "must be positive and finite"));
        }
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(Error::config("embedding.input_height", "input extents must be positive"));
        }
        Ok(())
    }

    /// Stable fingerprint of the architecture and standardisation.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// 256-dimensional per-frame feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug)]
pub struct LayerGroup {
    name: String,
    layers: Vec<Layer>,
}

impl LayerGroup {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    fn init(&mut self, rng: &mut RngStream) {
        for l in &mut self.layers {
            l.init(Init::He, rng);
        }
    }
}

/// `relu -> dropout -> dense -> softmax` classifier over a feature vector.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    dropout: Layer,
    dense: Layer,
    classes: usize,
}

/// Forward record of a classifier head evaluation.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    pre_relu: Vec<f64>,
    dropout: LayerContext,
    dense: LayerContext,
    pub posterior: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(prefix: &str, features: usize, classes: usize, dropout: f64, rng: &mut RngStream) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "classifier needs at least 2 classes, got {classes}"
            )));
        }
        let mut dense = Layer::dense(prefix, features, classes)?;
        dense.init(Init::Normal(HEAD_INIT_STD), rng);
        Ok(ClassifierHead {
            dropout: Layer::new(format!("{prefix}.dropout"), LayerKind::Dropout { rate: dropout })?,
            dense,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dense(&self) -> &Layer {
        &self.dense
    }

    pub fn dense_mut(&mut self) -> &mut Layer {
        &mut self.dense
    }

    pub fn dropout_rate(&self) -> f64 {
        match self.dropout.kind() {
            LayerKind::Dropout { rate } => *rate,
            _ => 0.0,
        }
    }

    pub fn forward(&self, features: &[f64], mode: Mode, rng: &mut RngStream) -> Result<HeadTrace> {
        let rectified = Tensor::vector(features.iter().map(|v| v.max(0.0)).collect());
        let (dropped, dropout) = self.dropout.forward(&rectified, mode, rng)?;
        let (logits, dense) = self.dense.forward(&dropped, mode, rng)?;
        Ok(HeadTrace {
            pre_relu: features.to_vec(),
            dropout,
            dense,
            posterior: softmax(logits.data()),
        })
    }

    /// Backpropagate a gradient on the logits; returns the feature gradient.
    pub fn backward_logits(&mut self, trace: &HeadTrace, dlogits: &[f64]) -> Result<Vec<f64>> {
        let g = self.dense.backward(&trace.dense, &Tensor::vector(dlogits.to_vec()))?;
        let g = self.dropout.backward(&trace.dropout, &g)?;
        Ok(g
            .data()
            .iter()
            .zip(&trace.pre_relu)
            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
            .collect())
    }

    /// Backpropagate a gradient on the posterior (through the softmax).
    pub fn backward_posterior(&mut self, trace: &HeadTrace, dposterior: &[f64]) -> Result<Vec<f64>> {
        let y = &trace.posterior;
        let inner: f64 = y.iter().zip(dposterior).map(|(a, b)| a * b).sum();
        let dlogits: Vec<f64> = y.iter().zip(dposterior).map(|(s, g)| s * (g - inner)).collect();
        self.backward_logits(trace, &dlogits)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        self.dense.params().iter().collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.dense.params_mut().iter_mut().collect()
    }
}

/// Cross-entropy `-log posterior[truth]` and its gradient on the logits.
pub fn cross_entropy(posterior: &[f64], truth: usize) -> (f64, Vec<f64>) {
    let loss = -posterior[truth].max(1e-300).ln();
    let mut d = posterior.to_vec();
    d[truth] -= 1.0;
    (loss, d)
}

#[derive(Clone, Debug)]
pub struct FrameEmbedding {
    config: EmbeddingConfig,
    groups: Vec<LayerGroup>,
    head: Option<ClassifierHead>,
}

/// Forward record of one embedding pass.
#[derive(Clone, Debug)]
pub struct EmbedTrace {
    contexts: Vec<Vec<LayerContext>>,
}

impl EmbedTrace {
    /// Layer contexts per group, bottom to top, parallel to the group layers.
    pub fn contexts(&self) -> &[Vec<LayerContext>] {
        &self.contexts
    }
}

impl FrameEmbedding {
    /// Build and He-initialise the groups described by `config`.
    pub fn build(config: &EmbeddingConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let names = config.group_names();
        let mut shape = vec![config.input_channels, config.input_height, config.input_width];
        let mut groups = Vec::with_capacity(names.len());
        let n_conv = config.conv_channels.len();
        let mut prev_name = "input".to_string();
        for (gi, name) in names.iter().enumerate() {
            let mut layers = Vec::new();
            if gi < n_conv {
                layers.push(Layer::new(
                    name.clone(),
                    LayerKind::Conv2d {
                        in_channels: shape[0],
                        out_channels: config.conv_channels[gi],
                        kernel: config.conv_kernel,
                        stride: config.conv_strides[gi],
                        padding: config.conv_kernel / 2,
                    },
                )?);
                layers.push(Layer::activation(format!("{name}.relu"), LayerKind::Relu));
                if config.conv_pools[gi] > 1 {
                    layers.push(Layer::new(
                        format!("{name}.pool"),
                        LayerKind::MaxPool {
                            size: config.conv_pools[gi],
                        },
                    )?);
                }
            } else {
                let fi = gi - n_conv;
                let inputs: usize = shape.iter().product();
                layers.push(Layer::dense(name.clone(), inputs, config.fc_dims[fi])?);
                if fi + 1 < config.fc_dims.len() {
                    layers.push(Layer::activation(format!("{name}.relu"), LayerKind::Relu));
                    layers.push(Layer::new(
                        format!("{name}.dropout"),
                        LayerKind::Dropout {
                            rate: config.dropout,
                        },
                    )?);
                }
            }
            for l in &layers {
                shape = l.output_shape(&shape).map_err(|e| match e {
                    Error::Shape { detail, .. } => Error::shape(
                        format!("{prev_name} -> {name}"),
                        detail,
                    ),
                    other => other,
                })?;
                if shape.iter().any(|&d| d == 0) {
                    return Err(Error::shape(
                        format!("{prev_name} -> {name}"),
                        format!("output extent collapses to {shape:?}"),
                    ));
                }
            }
            let mut group = LayerGroup {
                name: name.clone(),
                layers,
            };
            group.init(rng);
            groups.push(group);
            prev_name = name.clone();
        }
        Ok(FrameEmbedding {
            config: config.clone(),
            groups,
            head: None,
        })
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn groups(&self) -> &[LayerGroup] {
        &self.groups
    }

    pub fn group_names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut LayerGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    /// Re-draw one group's parameters (He init) and reset its optimizer state.
    pub fn reinit_group(&mut self, name: &str, rng: &mut RngStream) -> Result<()> {
        let group = self
            .group_mut(name)
            .ok_or_else(|| Error::Plan(format!("unknown group `{name}`")))?;
        group.init(rng);
        for p in group.parameters_mut() {
            p.reset_momentum();
            p.zero_grad();
        }
        Ok(())
    }

    pub fn set_group_lr(&mut self, name: &str, multiplier: f64) -> Result<()> {
        let group = self
            .group_mut(name)
            .ok_or_else(|| Error::Plan(format!("unknown group `{name}`")))?;
        for p in group.parameters_mut() {
            p.lr_multiplier = multiplier;
        }
        Ok(())
    }

    pub fn head(&self) -> Option<&ClassifierHead> {
        self.head.as_ref()
    }

    pub fn head_mut(&mut self) -> Option<&mut ClassifierHead> {
        self.head.as_mut()
    }

    /// Replace the top classification layer with a fresh `256 x classes`
    /// layer (weights ~ N(0, 0.01^2), zero bias).
    pub fn adapt_head(&mut self, classes: usize, rng: &mut RngStream) -> Result<()> {
        self.head = Some(ClassifierHead::new(
            "head",
            FEATURE_DIM,
            classes,
            self.config.dropout,
            rng,
        )?);
        Ok(())
    }

    pub fn embed(&self, input: &NetworkInput, mode: Mode, rng: &mut RngStream) -> Result<(Embedding, EmbedTrace)> {
        self.embed_tensor(input.tensor(), mode, rng)
    }

    pub fn embed_tensor(&self, input: &Tensor, mode: Mode, rng: &mut RngStream) -> Result<(Embedding, EmbedTrace)> {
        let expected = [
            self.config.input_channels,
            self.config.input_height,
            self.config.input_width,
        ];
        if input.shape() != expected {
            return Err(Error::shape(
                "embedding input",
                format!("expected {expected:?}, got {:?}", input.shape()),
            ));
        }
        let (mean, scale) = (self.config.input_mean, self.config.input_scale);
        let mut x = Tensor::new(
            input.shape().to_vec(),
            input.data().iter().map(|v| (v - mean) / scale).collect(),
        )?;
        let mut contexts = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let mut ctxs = Vec::with_capacity(g.layers.len());
            for l in &g.layers {
                let (y, ctx) = l.forward(&x, mode, rng)?;
                ctxs.push(ctx);
                x = y;
            }
            contexts.push(ctxs);
        }
        Ok((Embedding(x.into_data()), EmbedTrace { contexts }))
    }

    /// Backpropagate a gradient on the embedding. Returns the gradient with
    /// respect to the raw (unstandardised) input.
    pub fn backward(&mut self, trace: &EmbedTrace, grad: &[f64]) -> Result<Tensor> {
        let mut g = Tensor::vector(grad.to_vec());
        for (group, ctxs) in self.groups.iter_mut().zip(&trace.contexts).rev() {
            for (l, ctx) in group.layers.iter_mut().zip(ctxs).rev() {
                g = l.backward(ctx, &g)?;
            }
        }
        let scale = self.config.input_scale;
        g.data_mut().iter_mut().for_each(|v| *v /= scale);
        Ok(g)
    }

    /// Single-shot posterior through the attached head.
    pub fn classify(&self, input: &NetworkInput, mode: Mode, rng: &mut RngStream) -> Result<(Vec<f64>, EmbedTrace, HeadTrace)> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("embedding has no classifier head".into()))?;
        let (e, trace) = self.embed(input, mode, rng)?;
        let head_trace = head.forward(e.as_slice(), mode, rng)?;
        Ok((head_trace.posterior.clone(), trace, head_trace))
    }
}

impl HasParameters for FrameEmbedding {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.groups.iter().flat_map(|g| g.parameters()).collect();
        if let Some(h) = &self.head {
            v.extend(h.parameters());
        }
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self
            .groups
            .iter_mut()
            .flat_map(|g| g.parameters_mut())
            .collect();
        if let Some(h) = &mut self.head {
            v.extend(h.parameters_mut());
        }
        v
    }
}
