//! Recurrent sequence model: LSTM over frame embeddings, the stochastic
//! temporal attention unit, the per-step classifier and multi-shot fusion.

use serde::{Deserialize, Serialize};

use crate::embedding::{ClassifierHead, HeadTrace, DEFAULT_DROPOUT, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::numeric::{axpy, dot, sigmoid, HasParameters, Mode, Parameter, RngStream, Tensor};

pub const HIDDEN_DIM: usize = 256;
/// LSTM weights are drawn from Uniform(-a, a).
pub const LSTM_INIT_RANGE: f64 = 0.08;

/// The four gates of the cell, in parameter order.
const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// Input and recurrent weights plus bias for every gate:
/// `W_g{i,f,c,o}` (`hidden x input`), `W_h{i,f,c,o}` (`hidden x hidden`),
/// `b_{i,f,c,o}`.
#[derive(Clone, Debug)]
pub struct LstmWeights {
    input_dim: usize,
    hidden_dim: usize,
    /// For gate k: `[w_g, w_h, b]` at indices `3k..3k+3`.
    params: Vec<Parameter>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    pub g: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub cell_input: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub tanh_c: Vec<f64>,
    versions: Vec<u64>,
}

impl LstmWeights {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut RngStream) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::shape("lstm", "extents must be positive"));
        }
        let mut params = Vec::with_capacity(12);
        for gate in GATES {
            let wg = (0..hidden_dim * input_dim)
                .map(|_| rng.uniform_range(-LSTM_INIT_RANGE, LSTM_INIT_RANGE))
                .collect();
            let wh = (0..hidden_dim * hidden_dim)
                .map(|_| rng.uniform_range(-LSTM_INIT_RANGE, LSTM_INIT_RANGE))
                .collect();
            params.push(Parameter::weight(
                format!("lstm.w_g{gate}"),
                Tensor::new(vec![hidden_dim, input_dim], wg)?,
            ));
            params.push(Parameter::weight(
                format!("lstm.w_h{gate}"),
                Tensor::new(vec![hidden_dim, hidden_dim], wh)?,
            ));
            params.push(Parameter::bias(format!("lstm.b_{gate}"), Tensor::zeros(&[hidden_dim])));
        }
        Ok(LstmWeights {
            input_dim,
            hidden_dim,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// `(W_g, W_h, b)` for gate index 0..4 (input, forget, cell, output).
    pub fn gate(&self, k: usize) -> (&Parameter, &Parameter, &Parameter) {
        (&self.params[3 * k], &self.params[3 * k + 1], &self.params[3 * k + 2])
    }

    pub fn gate_mut(&mut self, k: usize) -> (&mut Parameter, &mut Parameter, &mut Parameter) {
        let [wg, wh, b] = &mut self.params[3 * k..3 * k + 3] else {
            unreachable!()
        };
        (wg, wh, b)
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    fn preactivation(&self, k: usize, g: &[f64], h: &[f64]) -> Vec<f64> {
        let (wg, wh, b) = self.gate(k);
        let (wg, wh, b) = (wg.value().data(), wh.value().data(), b.value().data());
        let (n, m) = (self.input_dim, self.hidden_dim);
        (0..m)
            .map(|r| dot(&wg[r * n..(r + 1) * n], g) + dot(&wh[r * m..(r + 1) * m], h) + b[r])
            .collect()
    }

    /// Backward through one step. Adds parameter gradients and returns
    /// `(d g, d h_prev, d c_prev)` given `d h` and `d c` flowing into this
    /// step's outputs.
    pub fn backward_step(
        &mut self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc_next: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if cache.versions.iter().zip(&self.params).any(|(v, p)| *v != p.version()) {
            return Err(Error::StaleContext("lstm".into()));
        }
        let m = self.hidden_dim;
        let n = self.input_dim;
        let mut dc = vec![0.0; m];
        let mut dpre = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        for r in 0..m {
            let (i, f, z, o, tc) = (
                cache.input_gate[r],
                cache.forget_gate[r],
                cache.cell_input[r],
                cache.output_gate[r],
                cache.tanh_c[r],
            );
            let d_o = dh[r] * tc;
            dc[r] = dc_next[r] + dh[r] * o * (1.0 - tc * tc);
            dpre[0][r] = dc[r] * z * i * (1.0 - i);
            dpre[1][r] = dc[r] * cache.c_prev[r] * f * (1.0 - f);
            dpre[2][r] = dc[r] * i * (1.0 - z * z);
            dpre[3][r] = d_o * o * (1.0 - o);
        }
        let mut dg = vec![0.0; n];
        let mut dh_prev = vec![0.0; m];
        for (k, dp) in dpre.iter().enumerate() {
            let (wg, wh, b) = self.gate_mut(k);
            let wgv = wg.value().data().to_vec();
            let whv = wh.value().data().to_vec();
            {
                let gw = wg.grad_mut().data_mut();
                for r in 0..m {
                    if dp[r] != 0.0 {
                        axpy(dp[r], &cache.g, &mut gw[r * n..(r + 1) * n]);
                        axpy(dp[r], &wgv[r * n..(r + 1) * n], &mut dg);
                    }
                }
            }
            {
                let gh = wh.grad_mut().data_mut();
                for r in 0..m {
                    if dp[r] != 0.0 {
                        axpy(dp[r], &cache.h_prev, &mut gh[r * m..(r + 1) * m]);
                        axpy(dp[r], &whv[r * m..(r + 1) * m], &mut dh_prev);
                    }
                }
            }
            b.grad_mut()
                .data_mut()
                .iter_mut()
                .zip(dp)
                .for_each(|(a, d)| *a += d);
        }
        let dc_prev = dc
            .iter()
            .zip(&cache.forget_gate)
            .map(|(d, f)| d * f)
            .collect();
        Ok((dg, dh_prev, dc_prev))
    }
}

/// One LSTM update:
/// `i = s(W_gi g + W_hi h' + b_i)`, `f = s(W_gf g + W_hf h' + b_f)`,
/// `z = tanh(W_gc g + W_hc h' + b_c)`, `c = f * c' + i * z`,
/// `o = s(W_go g + W_ho h' + b_o)`, `h = o * tanh(c)`.
pub fn lstm_step(g: &[f64], prev: &LstmState, weights: &LstmWeights) -> Result<(LstmState, LstmStepCache)> {
    if g.len() != weights.input_dim {
        return Err(Error::shape(
            "lstm_step",
            format!("input length expected {}, got {}", weights.input_dim, g.len()),
        ));
    }
    if prev.h.len() != weights.hidden_dim || prev.c.len() != weights.hidden_dim {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "state length expected {}, got h {} c {}",
                weights.hidden_dim,
                prev.h.len(),
                prev.c.len()
            ),
        ));
    }
    if !g.iter().chain(&prev.h).chain(&prev.c).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("lstm_step input".into()));
    }
    let input_gate: Vec<f64> = weights.preactivation(0, g, &prev.h).into_iter().map(sigmoid).collect();
    let forget_gate: Vec<f64> = weights.preactivation(1, g, &prev.h).into_iter().map(sigmoid).collect();
    let cell_input: Vec<f64> = weights.preactivation(2, g, &prev.h).into_iter().map(f64::tanh).collect();
    let output_gate: Vec<f64> = weights.preactivation(3, g, &prev.h).into_iter().map(sigmoid).collect();
    let c: Vec<f64> = (0..weights.hidden_dim)
        .map(|r| forget_gate[r] * prev.c[r] + input_gate[r] * cell_input[r])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = output_gate.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    let cache = LstmStepCache {
        g: g.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        input_gate,
        forget_gate,
        cell_input,
        output_gate,
        tanh_c,
        versions: weights.params.iter().map(Parameter::version).collect(),
    };
    Ok((LstmState { h, c }, cache))
}

/// Linear map of the frame embedding to one logit, squashed by a sigmoid;
/// the result parameterises a Bernoulli frame weight.
#[derive(Clone, Debug)]
pub struct RtaUnit {
    pub weight: Parameter,
    pub bias: Parameter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RtaOutput {
    /// Pre-sigmoid activation.
    pub activation: f64,
    /// Bernoulli parameter, strictly inside (0, 1).
    pub p: f64,
    /// Sampled binary weight, train mode only.
    pub sample: Option<bool>,
}

impl RtaUnit {
    pub fn new(input_dim: usize, rng: &mut RngStream) -> Self {
        let w = (0..input_dim).map(|_| rng.normal(0.0, 0.01)).collect();
        RtaUnit {
            weight: Parameter::weight("rta.weight", Tensor::vector(w)),
            bias: Parameter::bias("rta.bias", Tensor::vector(vec![0.0])),
        }
    }

    pub fn zeros(input_dim: usize) -> Self {
        RtaUnit {
            weight: Parameter::weight("rta.weight", Tensor::zeros(&[input_dim])),
            bias: Parameter::bias("rta.bias", Tensor::vector(vec![0.0])),
        }
    }

    /// Accumulate the gradient of a loss with respect to the activation.
    /// Returns the gradient with respect to the embedding.
    pub fn backward(&mut self, g: &[f64], dactivation: f64) -> Vec<f64> {
        axpy(dactivation, g, self.weight.grad_mut().data_mut());
        self.bias.grad_mut().data_mut()[0] += dactivation;
        self.weight.value().data().iter().map(|w| w * dactivation).collect()
    }
}

/// Bernoulli parameter of the unit, plus a sample in train mode.
pub fn rta_weight(g: &[f64], unit: &RtaUnit, mode: Mode, rng: &mut RngStream) -> Result<RtaOutput> {
    if g.len() != unit.weight.value().len() {
        return Err(Error::shape(
            "rta",
            format!("input length expected {}, got {}", unit.weight.value().len(), g.len()),
        ));
    }
    let activation = dot(unit.weight.value().data(), g) + unit.bias.value().data()[0];
    // Keep p strictly inside (0, 1) even when the sigmoid saturates.
    let p = sigmoid(activation).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    let sample = match mode {
        Mode::Train => Some(rng.bernoulli(p)),
        Mode::Eval => None,
    };
    Ok(RtaOutput {
        activation,
        p,
        sample,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub posterior: Vec<f64>,
    pub bernoulli_param: f64,
    pub sampled_weight: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequencePrediction {
    pub frames: Vec<FramePrediction>,
    pub fused: Vec<f64>,
}

/// Multi-shot prediction: frame posteriors weighted by `p_t / sum p`.
pub fn fuse_sequence(frames: Vec<FramePrediction>) -> Result<SequencePrediction> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("fusion needs at least one frame".into()))?;
    let n = first.posterior.len();
    if frames.iter().any(|f| f.posterior.len() != n) {
        return Err(Error::shape("fuse_sequence", "posterior lengths differ"));
    }
    let total: f64 = frames.iter().map(|f| f.bernoulli_param).sum();
    let mut fused = vec![0.0; n];
    for f in &frames {
        axpy(f.bernoulli_param / total, &f.posterior, &mut fused);
    }
    Ok(SequencePrediction { frames, fused })
}

/// How per-frame posteriors are weighted in multi-shot fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    /// Normalised RTA Bernoulli parameters.
    Rta,
    /// Equal weights (plain average pooling).
    Uniform,
}

/// LSTM, attention unit and classifier on top of frame embeddings.
#[derive(Clone, Debug)]
pub struct SequenceModel {
    pub lstm: LstmWeights,
    pub rta: RtaUnit,
    pub classifier: ClassifierHead,
}

/// Forward record of a window of steps.
#[derive(Clone, Debug)]
pub struct WindowTrace {
    pub steps: Vec<LstmStepCache>,
    pub heads: Vec<HeadTrace>,
    pub attention: Vec<RtaOutput>,
}

impl SequenceModel {
    pub fn new(classes: usize, rng: &mut RngStream) -> Result<Self> {
        Self::with_dims(FEATURE_DIM, HIDDEN_DIM, classes, DEFAULT_DROPOUT, rng)
    }

    pub fn with_dims(input_dim: usize, hidden_dim: usize, classes: usize, dropout: f64, rng: &mut RngStream) -> Result<Self> {
        let lstm = LstmWeights::new(input_dim, hidden_dim, rng)?;
        let rta = RtaUnit::new(input_dim, rng);
        let classifier = ClassifierHead::new("cls", hidden_dim, classes, dropout, rng)?;
        Ok(SequenceModel {
            lstm,
            rta,
            classifier,
        })
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    /// Run the LSTM from a zero state over `embeddings`, classifying each
    /// step and evaluating the attention unit on each frame.
    pub fn forward_window(&self, embeddings: &[&[f64]], mode: Mode, rng: &mut RngStream) -> Result<WindowTrace> {
        let mut state = LstmState::zeros(self.lstm.hidden_dim());
        let mut trace = WindowTrace {
            steps: Vec::with_capacity(embeddings.len()),
            heads: Vec::with_capacity(embeddings.len()),
            attention: Vec::with_capacity(embeddings.len()),
        };
        for g in embeddings {
            trace.attention.push(rta_weight(g, &self.rta, mode, rng)?);
            let (next, cache) = lstm_step(g, &state, &self.lstm)?;
            trace.heads.push(classify_frame(&next, &self.classifier, mode, rng)?);
            trace.steps.push(cache);
            state = next;
        }
        Ok(trace)
    }

    /// Backpropagate per-step gradients on the classifier logits through
    /// time. Returns the gradient on each step's embedding.
    pub fn backward_window(&mut self, trace: &WindowTrace, dlogits: &[Option<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
        let t_len = trace.steps.len();
        let m = self.lstm.hidden_dim();
        let mut dh_next = vec![0.0; m];
        let mut dc_next = vec![0.0; m];
        let mut dgs = vec![Vec::new(); t_len];
        for t in (0..t_len).rev() {
            let mut dh = dh_next.clone();
            if let Some(dl) = &dlogits[t] {
                let d = self.classifier.backward_logits(&trace.heads[t], dl)?;
                axpy(1.0, &d, &mut dh);
            }
            let (dg, dh_prev, dc_prev) = self.lstm.backward_step(&trace.steps[t], &dh, &dc_next)?;
            dgs[t] = dg;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(dgs)
    }

    /// Evaluation-mode multi-shot prediction of a full sequence.
    ///
    /// Each frame's posterior comes from the LSTM run over that frame's
    /// history window of at most `history` frames, starting from a zero state.
    pub fn predict_sequence(&self, embeddings: &[&[f64]], history: usize, attention: Attention) -> Result<SequencePrediction> {
        if history == 0 {
            return Err(Error::InvalidArgument("history must be >= 1".into()));
        }
        let mut rng = RngStream::new(0);
        let mut frames = Vec::with_capacity(embeddings.len());
        for t in 0..embeddings.len() {
            let start = (t + 1).saturating_sub(history);
            let mut state = LstmState::zeros(self.lstm.hidden_dim());
            for g in &embeddings[start..=t] {
                state = lstm_step(g, &state, &self.lstm)?.0;
            }
            let head = classify_frame(&state, &self.classifier, Mode::Eval, &mut rng)?;
            let p = match attention {
                Attention::Rta => rta_weight(embeddings[t], &self.rta, Mode::Eval, &mut rng)?.p,
                Attention::Uniform => 1.0,
            };
            frames.push(FramePrediction {
                posterior: head.posterior,
                bernoulli_param: p,
                sampled_weight: None,
            });
        }
        fuse_sequence(frames)
    }
}

/// Per-step posterior from the hidden state.
pub fn classify_frame(state: &LstmState, head: &ClassifierHead, mode: Mode, rng: &mut RngStream) -> Result<HeadTrace> {
    head.forward(&state.h, mode, rng)
}

impl HasParameters for SequenceModel {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.lstm.parameters().iter().collect();
        v.push(&self.rta.weight);
        v.push(&self.rta.bias);
        v.extend(self.classifier.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self.lstm.parameters_mut().iter_mut().collect();
        v.push(&mut self.rta.weight);
        v.push(&mut self.rta.bias);
        v.extend(self.classifier.parameters_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_weights(input: usize, hidden: usize) -> LstmWeights {
        let mut w = LstmWeights::new(input, hidden, &mut RngStream::new(0)).unwrap();
        for p in w.parameters_mut() {
            p.value_mut().fill(0.0);
        }
        w
    }

    #[test]
    fn zero_weights_zero_state() {
        let w = zero_weights(4, 3);
        let (s, cache) = lstm_step(&[1.0, -2.0, 0.5, 3.0], &LstmState::zeros(3), &w).unwrap();
        assert!(cache.input_gate.iter().all(|&v| v == 0.5));
        assert!(cache.forget_gate.iter().all(|&v| v == 0.5));
        assert!(cache.output_gate.iter().all(|&v| v == 0.5));
        assert!(cache.cell_input.iter().all(|&v| v == 0.0));
        assert!(s.c.iter().all(|&v| v == 0.0));
        assert!(s.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_unit_cell() {
        let w = zero_weights(2, 2);
        let prev = LstmState {
            h: vec![0.0; 2],
            c: vec![1.0; 2],
        };
        let (s, _) = lstm_step(&[0.3, 0.7], &prev, &w).unwrap();
        for r in 0..2 {
            assert_eq!(s.c[r], 0.5);
            assert!((s.h[r] - 0.231_058_578_6).abs() < 1e-10);
        }
    }

    #[test]
    fn extent_mismatch_rejected() {
        let w = zero_weights(4, 3);
        assert!(lstm_step(&[1.0; 3], &LstmState::zeros(3), &w).is_err());
        assert!(lstm_step(&[1.0; 4], &LstmState::zeros(2), &w).is_err());
    }

    #[test]
    fn rta_zero_unit_is_half() {
        let unit = RtaUnit::zeros(5);
        let out = rta_weight(&[3.0, -1.0, 2.0, 0.0, 9.0], &unit, Mode::Eval, &mut RngStream::new(0)).unwrap();
        assert_eq!(out.p, 0.5);
        assert_eq!(out.sample, None);
        let out = rta_weight(&[0.0; 5], &unit, Mode::Train, &mut RngStream::new(0)).unwrap();
        assert!(out.sample.is_some());
    }

    #[test]
    fn rta_p_stays_inside_unit_interval() {
        let mut unit = RtaUnit::zeros(1);
        unit.bias.value_mut().data_mut()[0] = 1000.0;
        let p = rta_weight(&[0.0], &unit, Mode::Eval, &mut RngStream::new(0)).unwrap().p;
        assert!(p < 1.0);
        unit.bias.value_mut().data_mut()[0] = -1000.0;
        let p = rta_weight(&[0.0], &unit, Mode::Eval, &mut RngStream::new(0)).unwrap().p;
        assert!(p > 0.0);
    }

    #[test]
    fn rta_sample_frequency() {
        let mut unit = RtaUnit::zeros(1);
        // sigmoid(a) = 0.25
        unit.bias.value_mut().data_mut()[0] = (0.25f64 / 0.75).ln();
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| rta_weight(&[0.0], &unit, Mode::Train, &mut rng).unwrap().sample.unwrap())
            .count();
        let mean = ones as f64 / n as f64;
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se, "mean {mean}");
    }

    fn frame(posterior: Vec<f64>, p: f64) -> FramePrediction {
        FramePrediction {
            posterior,
            bernoulli_param: p,
            sampled_weight: None,
        }
    }

    #[test]
    fn fusion_weights_normalise() {
        let seq = fuse_sequence(vec![
            frame(vec![1.0, 0.0], 0.5),
            frame(vec![0.0, 1.0], 0.5),
            frame(vec![1.0, 0.0], 1.0),
        ])
        .unwrap();
        assert_eq!(seq.fused, vec![0.75, 0.25]);
    }

    #[test]
    fn fusion_equal_weights_is_average() {
        let seq = fuse_sequence(vec![frame(vec![0.2, 0.8], 0.3), frame(vec![0.6, 0.4], 0.3)]).unwrap();
        assert!((seq.fused[0] - 0.4).abs() < 1e-15);
        assert!((seq.fused[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn fusion_single_frame_identity() {
        let seq = fuse_sequence(vec![frame(vec![0.1, 0.2, 0.7], 0.01)]).unwrap();
        assert_eq!(seq.fused, vec![0.1, 0.2, 0.7]);
        assert!(fuse_sequence(vec![]).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_posterior() {
        let mut rng = RngStream::new(0);
        let mut head = ClassifierHead::new("cls", 4, 5, 0.4, &mut rng).unwrap();
        for p in head.parameters_mut() {
            p.value_mut().fill(0.0);
        }
        let state = LstmState {
            h: vec![0.3, -0.2, 0.9, 0.1],
            c: vec![0.0; 4],
        };
        let t = classify_frame(&state, &head, Mode::Eval, &mut rng).unwrap();
        assert!(t.posterior.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn hand_set_head_matches_softmax() {
        let mut rng = RngStream::new(0);
        let mut head = ClassifierHead::new("cls", 2, 2, 0.4, &mut rng).unwrap();
        head.dense_mut().params_mut()[0]
            .value_mut()
            .data_mut()
            .copy_from_slice(&[1.0, -1.0, 0.5, 2.0]);
        head.dense_mut().params_mut()[1]
            .value_mut()
            .data_mut()
            .copy_from_slice(&[0.1, -0.2]);
        let state = LstmState {
            h: vec![0.6, -0.3],
            c: vec![0.0; 2],
        };
        let post = classify_frame(&state, &head, Mode::Eval, &mut rng).unwrap().posterior;
        // relu(h) = (0.6, 0); logits = (0.6 + 0.1, 0.3 - 0.2) = (0.7, 0.1)
        let e0 = 0.7f64.exp();
        let e1 = 0.1f64.exp();
        assert!((post[0] - e0 / (e0 + e1)).abs() < 1e-12);
        assert!((post[1] - e1 / (e0 + e1)).abs() < 1e-12);
        let again = classify_frame(&state, &head, Mode::Eval, &mut rng).unwrap().posterior;
        assert_eq!(post, again);
    }
}
