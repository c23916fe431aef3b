//! Fragments and reference implementations shared by the integration tests.
#![allow(dead_code)]

use reid_core::embedding::{cross_entropy, ClassifierHead, EmbeddingConfig, FrameEmbedding};
use reid_core::numeric::{GradCheckable, HasParameters, Layer, LayerKind, Mode, Parameter, RngStream, Tensor};
use reid_core::sequence::{lstm_step, LstmState, LstmWeights, SequenceModel};
use reid_core::Result;

pub const EPSILON: f64 = 1e-5;
/// Inputs of the full pipeline are raw depth codes (0..255); a larger step
/// keeps roundoff below the tolerance through the conv stack.
pub const PIPELINE_EPSILON: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], std: f64, rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, std)).collect()).unwrap()
}

/// Weighted sum `sum_i c_i y_i` and its gradient.
fn linear_loss(y: &[f64], coeffs: &[f64]) -> (f64, Vec<f64>) {
    (y.iter().zip(coeffs).map(|(a, b)| a * b).sum(), coeffs.to_vec())
}

/// One layer with a fixed random loss; the input is checked as well.
pub struct LayerFragment {
    pub layer: Layer,
    pub input: Parameter,
    coeffs: Vec<f64>,
    seed: u64,
}

impl LayerFragment {
    pub fn new(kind: LayerKind, input_shape: &[usize], seed: u64) -> Self {
        let mut rng = RngStream::new(seed);
        let mut layer = Layer::new("layer", kind).unwrap();
        for p in layer.params_mut() {
            let shape = p.shape().to_vec();
            *p.value_mut() = random_tensor(&shape, 0.5, &mut rng);
        }
        let input = Parameter::weight("input", random_tensor(input_shape, 1.0, &mut rng));
        let out: usize = layer.output_shape(input_shape).unwrap().iter().product();
        let coeffs = (0..out).map(|_| rng.normal(0.0, 1.0)).collect();
        LayerFragment {
            layer,
            input,
            coeffs,
            seed: seed ^ 0x5eed,
        }
    }
}

impl GradCheckable for LayerFragment {
    fn check_parameters(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self.layer.params_mut().iter_mut().collect();
        v.push(&mut self.input);
        v
    }

    fn loss(&mut self) -> Result<f64> {
        let (y, _) = self.layer.forward(self.input.value(), Mode::Train, &mut RngStream::new(self.seed))?;
        Ok(linear_loss(y.data(), &self.coeffs).0)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let (y, ctx) = self.layer.forward(self.input.value(), Mode::Train, &mut RngStream::new(self.seed))?;
        let (loss, d) = linear_loss(y.data(), &self.coeffs);
        let dx = self.layer.backward(&ctx, &Tensor::new(y.shape().to_vec(), d)?)?;
        self.input.grad_mut().add_assign(&dx)?;
        Ok(loss)
    }
}

/// Every layer kind with shapes drawn from `seed`.
pub fn layer_fragments(seed: u64) -> Vec<(&'static str, LayerFragment)> {
    let mut r = RngStream::new(seed.wrapping_mul(7919));
    let mut pick = |lo: usize, hi: usize| lo + r.below(hi - lo + 1);
    let (c, h, w) = (pick(1, 3), pick(4, 7), pick(4, 7));
    let n = pick(2, 9);
    let conv = LayerKind::Conv2d {
        in_channels: c,
        out_channels: pick(1, 3),
        kernel: pick(1, 3),
        stride: pick(1, 2),
        padding: pick(0, 1),
    };
    vec![
        ("dense", LayerFragment::new(LayerKind::Dense { inputs: n, outputs: pick(1, 6) }, &[n], seed)),
        ("conv2d", LayerFragment::new(conv, &[c, h, w], seed)),
        ("maxpool", LayerFragment::new(LayerKind::MaxPool { size: pick(1, 3) }, &[c, h, w], seed)),
        ("relu", LayerFragment::new(LayerKind::Relu, &[n], seed)),
        ("sigmoid", LayerFragment::new(LayerKind::Sigmoid, &[n], seed)),
        ("tanh", LayerFragment::new(LayerKind::Tanh, &[n], seed)),
        ("softmax", LayerFragment::new(LayerKind::Softmax, &[n], seed)),
        ("dropout", LayerFragment::new(LayerKind::Dropout { rate: 0.4 }, &[n], seed)),
    ]
}

/// Several LSTM steps from a random state with a cross-entropy loss on a
/// softmax of the last hidden state, plus a linear loss on every `h_t`, `c_t`.
pub struct LstmFragment {
    pub weights: LstmWeights,
    pub inputs: Vec<Parameter>,
    pub h0: Parameter,
    pub c0: Parameter,
    coeffs_h: Vec<Vec<f64>>,
    coeffs_c: Vec<Vec<f64>>,
    truth: usize,
}

impl LstmFragment {
    pub fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed);
        let n = 2 + rng.below(4);
        let m = 2 + rng.below(4);
        let steps = 1 + rng.below(3);
        let mut weights = LstmWeights::new(n, m, &mut rng).unwrap();
        for p in weights.parameters_mut() {
            let shape = p.shape().to_vec();
            *p.value_mut() = random_tensor(&shape, 0.6, &mut rng);
        }
        let inputs = (0..steps)
            .map(|t| Parameter::weight(format!("g{t}"), random_tensor(&[n], 1.0, &mut rng)))
            .collect();
        let h0 = Parameter::weight("h0", random_tensor(&[m], 0.5, &mut rng));
        let c0 = Parameter::weight("c0", random_tensor(&[m], 0.5, &mut rng));
        let coeffs_h = (0..steps).map(|_| (0..m).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
        let coeffs_c = (0..steps).map(|_| (0..m).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
        LstmFragment {
            weights,
            inputs,
            h0,
            c0,
            coeffs_h,
            coeffs_c,
            truth: rng.below(m),
        }
    }

    fn run(&self) -> Result<(f64, Vec<reid_core::sequence::LstmStepCache>, Vec<LstmState>)> {
        let mut state = LstmState {
            h: self.h0.value().data().to_vec(),
            c: self.c0.value().data().to_vec(),
        };
        let mut caches = Vec::new();
        let mut states = Vec::new();
        let mut loss = 0.0;
        for (t, g) in self.inputs.iter().enumerate() {
            let (next, cache) = lstm_step(g.value().data(), &state, &self.weights)?;
            loss += linear_loss(&next.h, &self.coeffs_h[t]).0 + linear_loss(&next.c, &self.coeffs_c[t]).0;
            caches.push(cache);
            states.push(next.clone());
            state = next;
        }
        let post = reid_core::numeric::softmax(&state.h);
        loss += cross_entropy(&post, self.truth).0;
        Ok((loss, caches, states))
    }
}

impl GradCheckable for LstmFragment {
    fn check_parameters(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self.weights.parameters_mut().iter_mut().collect();
        v.extend(self.inputs.iter_mut());
        v.push(&mut self.h0);
        v.push(&mut self.c0);
        v
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(self.run()?.0)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let (loss, caches, states) = self.run()?;
        let last = states.last().expect("at least one step");
        let post = reid_core::numeric::softmax(&last.h);
        let (_, dlogits) = cross_entropy(&post, self.truth);
        let m = self.weights.hidden_dim();
        let mut dh_next = vec![0.0; m];
        let mut dc_next = vec![0.0; m];
        for t in (0..caches.len()).rev() {
            let mut dh: Vec<f64> = dh_next.iter().zip(&self.coeffs_h[t]).map(|(a, b)| a + b).collect();
            if t + 1 == caches.len() {
                dh.iter_mut().zip(&dlogits).for_each(|(a, b)| *a += b);
            }
            let dc: Vec<f64> = dc_next.iter().zip(&self.coeffs_c[t]).map(|(a, b)| a + b).collect();
            let (dg, dh_prev, dc_prev) = self.weights.backward_step(&caches[t], &dh, &dc)?;
            self.inputs[t].grad_mut().data_mut().iter_mut().zip(&dg).for_each(|(a, b)| *a += b);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        self.h0.grad_mut().data_mut().iter_mut().zip(&dh_next).for_each(|(a, b)| *a += b);
        self.c0.grad_mut().data_mut().iter_mut().zip(&dc_next).for_each(|(a, b)| *a += b);
        Ok(loss)
    }
}

/// `relu -> dropout (fixed mask) -> dense -> softmax` with cross-entropy on
/// the logits plus a linear loss on the posterior.
pub struct HeadFragment {
    pub head: ClassifierHead,
    pub features: Parameter,
    coeffs: Vec<f64>,
    truth: usize,
    seed: u64,
}

impl HeadFragment {
    pub fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed);
        let features = 3 + rng.below(8);
        let classes = 2 + rng.below(6);
        let mut head = ClassifierHead::new("head", features, classes, 0.4, &mut rng).unwrap();
        for p in head.parameters_mut() {
            let shape = p.shape().to_vec();
            *p.value_mut() = random_tensor(&shape, 0.7, &mut rng);
        }
        HeadFragment {
            head,
            features: Parameter::weight("features", random_tensor(&[features], 1.0, &mut rng)),
            coeffs: (0..classes).map(|_| rng.normal(0.0, 1.0)).collect(),
            truth: rng.below(classes),
            seed: seed ^ 0xd00d,
        }
    }
}

impl GradCheckable for HeadFragment {
    fn check_parameters(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.head.parameters_mut();
        v.push(&mut self.features);
        v
    }

    fn loss(&mut self) -> Result<f64> {
        let t = self.head.forward(self.features.value().data(), Mode::Train, &mut RngStream::new(self.seed))?;
        Ok(cross_entropy(&t.posterior, self.truth).0 + linear_loss(&t.posterior, &self.coeffs).0)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let t = self.head.forward(self.features.value().data(), Mode::Train, &mut RngStream::new(self.seed))?;
        let (ce, dlogits) = cross_entropy(&t.posterior, self.truth);
        let (lin, dpost) = linear_loss(&t.posterior, &self.coeffs);
        let a = self.head.backward_logits(&t, &dlogits)?;
        let b = self.head.backward_posterior(&t, &dpost)?;
        for (g, (x, y)) in self.features.grad_mut().data_mut().iter_mut().zip(a.iter().zip(&b)) {
            *g += x + y;
        }
        Ok(ce + lin)
    }
}

/// A reduced embedding with the same group structure as the default one.
pub fn small_embedding_config(rng: &mut RngStream) -> EmbeddingConfig {
    let mut pick = |lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
    EmbeddingConfig {
        input_channels: 3,
        input_height: pick(10, 14),
        input_width: pick(6, 9),
        conv_channels: vec![pick(2, 3), pick(2, 3), 2, 2],
        conv_strides: vec![2, 1, 1, 1],
        conv_pools: vec![1, 2, 1, 1],
        conv_kernel: 3,
        fc_dims: vec![pick(6, 10), pick(6, 10), reid_core::embedding::FEATURE_DIM],
        dropout: 0.2,
        ..EmbeddingConfig::default()
    }
}

/// Raw input -> embedding -> head, with either a squared loss on the
/// embedding or cross-entropy on the posterior. Dropout masks are fixed.
pub struct PipelineFragment {
    pub embedding: FrameEmbedding,
    pub input: Parameter,
    target: Option<Vec<f64>>,
    truth: usize,
    seed: u64,
}

/// Smallest distance of the forward pass from a non-differentiable point:
/// relu inputs from zero and max-pool winners from the runner-up.
pub fn kink_margin(embedding: &FrameEmbedding, input: &Tensor, seed: u64) -> f64 {
    let (e, trace) = embedding.embed_tensor(input, Mode::Train, &mut RngStream::new(seed)).unwrap();
    let mut margin = e.as_slice().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    for (group, ctxs) in embedding.groups().iter().zip(trace.contexts()) {
        for (layer, ctx) in group.layers().iter().zip(ctxs) {
            let x = ctx.input();
            match *layer.kind() {
                LayerKind::Relu => {
                    margin = x.data().iter().fold(margin, |m, v| m.min(v.abs()));
                }
                LayerKind::MaxPool { size } if size > 1 => {
                    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    for ch in 0..c {
                        for oy in 0..h / size {
                            for ox in 0..w / size {
                                let mut vals: Vec<f64> = (0..size * size)
                                    .map(|k| x.data()[ch * h * w + (oy * size + k / size) * w + ox * size + k % size])
                                    .collect();
                                vals.sort_by(|a, b| b.total_cmp(a));
                                margin = margin.min(vals[0] - vals[1]);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }
    margin
}

/// Draws whose forward pass comes closer than this to a kink are skipped.
pub const KINK_MARGIN: f64 = 1e-4;

impl PipelineFragment {
    /// The first draw derived from `seed` that keeps [`KINK_MARGIN`] clear
    /// of every kink.
    pub fn new(seed: u64, squared: bool) -> Self {
        (0..)
            .map(|attempt| Self::draw(seed.wrapping_mul(1_000).wrapping_add(attempt), squared))
            .find(|f| kink_margin(&f.embedding, f.input.value(), f.seed) > KINK_MARGIN)
            .expect("unbounded search")
    }

    fn draw(seed: u64, squared: bool) -> Self {
        let mut rng = RngStream::new(seed);
        let cfg = small_embedding_config(&mut rng);
        let mut embedding = FrameEmbedding::build(&cfg, &mut rng).unwrap();
        let classes = 2 + rng.below(5);
        embedding.adapt_head(classes, &mut rng).unwrap();
        // Positive, distinct biases keep units alive and pre-activations
        // away from the relu kink.
        for p in embedding.parameters_mut() {
            if p.name().starts_with("head") {
                let shape = p.shape().to_vec();
                *p.value_mut() = random_tensor(&shape, 0.05, &mut rng);
            } else if !p.decay {
                p.value_mut().data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(0.05, 0.3));
            }
        }
        let shape = [3, cfg.input_height, cfg.input_width];
        let raw: Vec<f64> = (0..shape.iter().product()).map(|_| rng.uniform_range(0.0, 255.0)).collect();
        let input = Tensor::new(shape.to_vec(), raw).unwrap();
        let seed_mask = seed ^ 0xfeed;
        // A target near the current embedding keeps the loss small next to
        // its gradient, which limits cancellation in the differences.
        let target = squared.then(|| {
            let (e, _) = embedding.embed_tensor(&input, Mode::Train, &mut RngStream::new(seed_mask)).unwrap();
            e.as_slice().iter().map(|v| v + rng.normal(0.0, 0.1)).collect()
        });
        PipelineFragment {
            embedding,
            input: Parameter::weight("input", input),
            target,
            truth: rng.below(classes),
            seed: seed_mask,
        }
    }
}

impl GradCheckable for PipelineFragment {
    fn check_parameters(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.embedding.parameters_mut();
        v.push(&mut self.input);
        v
    }

    fn loss(&mut self) -> Result<f64> {
        let mut rng = RngStream::new(self.seed);
        let (e, _) = self.embedding.embed_tensor(self.input.value(), Mode::Train, &mut rng)?;
        match &self.target {
            Some(t) => Ok(0.5 * e.as_slice().iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()),
            None => {
                let head = self.embedding.head().expect("head attached");
                let ht = head.forward(e.as_slice(), Mode::Train, &mut rng)?;
                Ok(cross_entropy(&ht.posterior, self.truth).0)
            }
        }
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let mut rng = RngStream::new(self.seed);
        let (e, trace) = self.embedding.embed_tensor(self.input.value(), Mode::Train, &mut rng)?;
        let (loss, de) = match &self.target {
            Some(t) => {
                let d: Vec<f64> = e.as_slice().iter().zip(t).map(|(a, b)| a - b).collect();
                (0.5 * d.iter().map(|v| v * v).sum::<f64>(), d)
            }
            None => {
                let head = self.embedding.head_mut().expect("head attached");
                let ht = head.forward(e.as_slice(), Mode::Train, &mut rng)?;
                let (loss, dl) = cross_entropy(&ht.posterior, self.truth);
                (loss, head.backward_logits(&ht, &dl)?)
            }
        };
        let dx = self.embedding.backward(&trace, &de)?;
        self.input.grad_mut().add_assign(&dx)?;
        Ok(loss)
    }
}

/// LSTM + classifier over a window of embeddings with per-step
/// cross-entropy, embeddings checked as inputs.
pub struct SequenceFragment {
    pub model: SequenceModel,
    pub embeddings: Vec<Parameter>,
    truth: usize,
    seed: u64,
}

/// Smallest nonzero analytic gradient entry a draw may have, relative to
/// its loss. Below this, double-precision central differences cannot
/// resolve the entry to the suite's tolerance at any step size.
pub const RESOLVABLE_GRADIENT: f64 = 1e-6;

impl SequenceFragment {
    /// Searches draws `seed * 1000 + attempt` for one whose nonzero
    /// gradient entries are all resolvable by finite differences.
    pub fn new(seed: u64) -> Self {
        for attempt in 0..1000 {
            let mut f = Self::draw(seed * 1000 + attempt);
            f.check_parameters().into_iter().for_each(Parameter::zero_grad);
            let loss = f.loss_and_grad().unwrap();
            let smallest = f
                .check_parameters()
                .iter()
                .flat_map(|p| p.grad().data().iter().copied().filter(|g| *g != 0.0).collect::<Vec<_>>())
                .fold(f64::INFINITY, |a, g| a.min(g.abs()));
            f.check_parameters().into_iter().for_each(Parameter::zero_grad);
            if smallest >= RESOLVABLE_GRADIENT * loss.abs().max(1.0) {
                return f;
            }
        }
        panic!("no well-conditioned sequence draw for seed {seed}");
    }

    fn draw(seed: u64) -> Self {
        let mut rng = RngStream::new(seed);
        let (n, m, classes) = (3 + rng.below(3), 3 + rng.below(3), 2 + rng.below(4));
        let mut model = SequenceModel::with_dims(n, m, classes, 0.4, &mut rng).unwrap();
        for p in model.parameters_mut() {
            let shape = p.shape().to_vec();
            *p.value_mut() = random_tensor(&shape, 0.6, &mut rng);
        }
        let steps = 1 + rng.below(3);
        SequenceFragment {
            model,
            embeddings: (0..steps)
                .map(|t| Parameter::weight(format!("g{t}"), random_tensor(&[n], 1.0, &mut rng)))
                .collect(),
            truth: rng.below(classes),
            seed: seed ^ 0xabc,
        }
    }
}

impl GradCheckable for SequenceFragment {
    fn check_parameters(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.model.lstm.parameters_mut().iter_mut().collect::<Vec<_>>();
        v.extend(self.model.classifier.parameters_mut());
        v.extend(self.embeddings.iter_mut());
        v
    }

    fn loss(&mut self) -> Result<f64> {
        let refs: Vec<&[f64]> = self.embeddings.iter().map(|p| p.value().data()).collect();
        let trace = self.model.forward_window(&refs, Mode::Train, &mut RngStream::new(self.seed))?;
        Ok(trace.heads.iter().map(|h| cross_entropy(&h.posterior, self.truth).0).sum())
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let refs: Vec<Vec<f64>> = self.embeddings.iter().map(|p| p.value().data().to_vec()).collect();
        let refs: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
        let trace = self.model.forward_window(&refs, Mode::Train, &mut RngStream::new(self.seed))?;
        let mut loss = 0.0;
        let dlogits: Vec<Option<Vec<f64>>> = trace
            .heads
            .iter()
            .map(|h| {
                let (l, d) = cross_entropy(&h.posterior, self.truth);
                loss += l;
                Some(d)
            })
            .collect();
        let dgs = self.model.backward_window(&trace, &dlogits)?;
        for (p, dg) in self.embeddings.iter_mut().zip(dgs) {
            p.grad_mut().data_mut().iter_mut().zip(&dg).for_each(|(a, b)| *a += b);
        }
        Ok(loss)
    }
}

/// Scalar re-implementation of one LSTM step, written out per unit.
pub fn scalar_lstm_step(weights: &LstmWeights, g: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let n = weights.input_dim();
    let m = weights.hidden_dim();
    let pre = |k: usize, r: usize| {
        let (wg, wh, b) = weights.gate(k);
        let mut s = b.value().data()[r];
        for j in 0..n {
            s += wg.value().data()[r * n + j] * g[j];
        }
        for j in 0..m {
            s += wh.value().data()[r * m + j] * h_prev[j];
        }
        s
    };
    let mut h = vec![0.0; m];
    let mut c = vec![0.0; m];
    for r in 0..m {
        let i = sig(pre(0, r));
        let f = sig(pre(1, r));
        let z = pre(2, r).tanh();
        let o = sig(pre(3, r));
        c[r] = f * c_prev[r] + i * z;
        h[r] = o * c[r].tanh();
    }
    (h, c)
}
