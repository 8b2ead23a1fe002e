//! FCAE and classifier models built from the engine's layers.
//!
//! The decoder mirrors the encoder in reverse: every pooling layer is undone
//! by nearest-neighbour upsampling to the recorded pre-pool size, every conv
//! layer by a transposed convolution with its own (untied) weights. Hidden
//! activations are ReLU; the last decoder layer is linear and emits the
//! input's channel count.

use rand::Rng;

use super::conv::{self, FilterSpec};
use super::init::{xavier_filter, xavier_uniform};
use super::loss::{l2_penalty, reconstruction_error, softmax, softmax_cross_entropy};
use super::pool::{maxpool, maxpool_backward, upsample, upsample_backward};
use super::{check_finite, relu, relu_backward, NnError, Param, Tensor};
use crate::genome::DecodedArchitecture;

/// Filters, bias and stride of one conv or transposed-conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub spec: FilterSpec,
    pub filters: Param,
    pub bias: Param,
}

impl ConvBlock {
    fn new(name: &str, spec: FilterSpec, bias_len: usize, rng: &mut impl Rng) -> Self {
        Self {
            spec,
            filters: Param::new(
                format!("{name}.filters"),
                xavier_filter(spec.k_h, spec.k_w, spec.c_in, spec.c_out, rng),
            ),
            bias: Param::new(format!("{name}.bias"), vec![0.0; bias_len]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub d_in: usize,
    pub d_out: usize,
    pub weights: Param,
    pub bias: Param,
}

impl Dense {
    fn new(name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            d_in,
            d_out,
            weights: Param::new(
                format!("{name}.weights"),
                xavier_uniform(d_in * d_out, d_in, d_out, rng),
            ),
            bias: Param::new(format!("{name}.bias"), vec![0.0; d_out]),
        }
    }

    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        conv::dense(x, n, self.d_in, &self.weights.value, &self.bias.value, self.d_out)
    }

    fn backward(&mut self, x: &[f64], n: usize, dy: &[f64], need_input_grad: bool) -> Option<Vec<f64>> {
        conv::dense_backward(
            x,
            n,
            self.d_in,
            &self.weights.value,
            self.d_out,
            dy,
            &mut self.weights.grad,
            &mut self.bias.grad,
            need_input_grad,
        )
    }
}

/// Conv layers (ReLU) followed by max-pooling layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub arch: DecodedArchitecture,
    /// `(height, width, channels)` of one input item.
    pub input_hwc: [usize; 3],
    pub convs: Vec<ConvBlock>,
    name: String,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// `acts[0]` is the input, `acts[i + 1]` the ReLU output of conv `i`.
    acts: Vec<Tensor>,
    pool_inputs: Vec<[usize; 4]>,
    argmax: Vec<Vec<usize>>,
    pub code: Tensor,
}

impl Encoder {
    pub fn new(
        name: &str,
        arch: &DecodedArchitecture,
        input_hwc: [usize; 3],
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let specs = Self::specs(arch, input_hwc)?;
        let convs = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| ConvBlock::new(&format!("{name}.conv{i}"), spec, spec.c_out, rng))
            .collect();
        let enc = Self {
            arch: arch.clone(),
            input_hwc,
            convs,
            name: name.to_string(),
        };
        enc.code_hwc()?;
        Ok(enc)
    }

    /// Renames the encoder and its parameters (`{name}.conv{i}.*`).
    pub fn rename(&mut self, name: &str) {
        for (i, b) in self.convs.iter_mut().enumerate() {
            b.filters.name = format!("{name}.conv{i}.filters");
            b.bias.name = format!("{name}.conv{i}.bias");
        }
        self.name = name.to_string();
    }

    fn specs(arch: &DecodedArchitecture, input_hwc: [usize; 3]) -> Result<Vec<FilterSpec>, NnError> {
        let [h, w, c] = input_hwc;
        if h == 0 || w == 0 || c == 0 {
            return Err(NnError::Degenerate(format!("input {h}x{w}x{c} is empty")));
        }
        if arch.conv.is_empty() {
            return Err(NnError::Degenerate("no conv layers".into()));
        }
        let mut c_in = c;
        Ok(arch
            .conv
            .iter()
            .map(|l| {
                let spec = FilterSpec {
                    k_h: l.filter_h,
                    k_w: l.filter_w,
                    c_in,
                    c_out: l.feature_maps,
                    s_h: l.stride_h,
                    s_w: l.stride_w,
                };
                c_in = l.feature_maps;
                spec
            })
            .collect())
    }

    /// Spatial sizes `(h, w)` at the input of every conv layer, then at the
    /// input of every pool layer, then of the code.
    pub fn spatial_plan(&self) -> Result<Vec<(usize, usize)>, NnError> {
        let (mut h, mut w) = (self.input_hwc[0], self.input_hwc[1]);
        let mut plan = vec![(h, w)];
        for l in &self.arch.conv {
            if l.stride_h == 0 || l.stride_w == 0 || l.filter_h == 0 || l.filter_w == 0 {
                return Err(NnError::Degenerate("zero-sized conv window".into()));
            }
            h = conv::same_out_dim(h, l.stride_h);
            w = conv::same_out_dim(w, l.stride_w);
            plan.push((h, w));
        }
        for p in &self.arch.pool {
            if p.stride_h == 0 || p.stride_w == 0 || p.kernel_h == 0 || p.kernel_w == 0 {
                return Err(NnError::Degenerate("zero-sized pooling window".into()));
            }
            h = conv::same_out_dim(h, p.stride_h);
            w = conv::same_out_dim(w, p.stride_w);
            plan.push((h, w));
        }
        if plan.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(NnError::Degenerate(format!("spatial size collapses to zero: {plan:?}")));
        }
        Ok(plan)
    }

    pub fn code_hwc(&self) -> Result<[usize; 3], NnError> {
        let plan = self.spatial_plan()?;
        let &(h, w) = plan.last().expect("plan is never empty");
        let c = self.convs.last().map_or(self.input_hwc[2], |b| b.spec.c_out);
        Ok([h, w, c])
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let [h, w, c] = self.input_hwc;
        if (x.height(), x.width(), x.channels()) != (h, w, c) {
            return Err(NnError::Shape(format!(
                "{} expects items of {h}x{w}x{c}, got {:?}",
                self.name,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let mut h = self.conv_forward(0, x)?;
        for i in 1..self.convs.len() {
            h = self.conv_forward(i, &h)?;
        }
        for (j, p) in self.arch.pool.iter().enumerate() {
            h = maxpool(&h, (p.kernel_h, p.kernel_w), (p.stride_h, p.stride_w))?.0;
            check_finite(&h, || format!("{}.pool{j}", self.name))?;
        }
        Ok(h)
    }

    fn conv_forward(&self, i: usize, x: &Tensor) -> Result<Tensor, NnError> {
        let b = &self.convs[i];
        let z = relu(&conv::conv2d_same(x, &b.filters.value, Some(&b.bias.value), &b.spec)?);
        check_finite(&z, || format!("{}.conv{i}", self.name))?;
        Ok(z)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<EncoderTrace, NnError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.convs.len() + 1);
        acts.push(x.clone());
        for i in 0..self.convs.len() {
            let z = self.conv_forward(i, &acts[i])?;
            acts.push(z);
        }
        let mut h = acts.last().expect("at least the input").clone();
        let mut pool_inputs = Vec::new();
        let mut argmax = Vec::new();
        for (j, p) in self.arch.pool.iter().enumerate() {
            pool_inputs.push(h.shape());
            let (y, a) = maxpool(&h, (p.kernel_h, p.kernel_w), (p.stride_h, p.stride_w))?;
            check_finite(&y, || format!("{}.pool{j}", self.name))?;
            argmax.push(a);
            h = y;
        }
        Ok(EncoderTrace {
            acts,
            pool_inputs,
            argmax,
            code: h,
        })
    }

    /// Accumulates conv gradients; returns the input gradient if requested.
    pub fn backward(
        &mut self,
        trace: &EncoderTrace,
        grad_code: Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>, NnError> {
        let mut g = grad_code;
        for j in (0..self.arch.pool.len()).rev() {
            g = maxpool_backward(trace.pool_inputs[j], &trace.argmax[j], &g);
        }
        for i in (0..self.convs.len()).rev() {
            g = relu_backward(&trace.acts[i + 1], &g);
            let b = &mut self.convs[i];
            let gi = conv::conv2d_same_backward(
                &trace.acts[i],
                &b.filters.value,
                &b.spec,
                &g,
                &mut b.filters.grad,
                &mut b.bias.grad,
                i > 0 || need_input_grad,
            )?;
            match gi {
                Some(t) => g = t,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    /// `Σ λ_i Σ w²` over conv filters, optionally accumulating `2λw`.
    pub fn l2_penalty(&mut self, accumulate_grad: bool) -> f64 {
        let mut total = 0.0;
        for (b, l) in self.convs.iter_mut().zip(&self.arch.conv) {
            let grad = accumulate_grad.then_some(&mut b.filters.grad[..]);
            total += l2_penalty(&b.filters.value, l.l2, grad);
        }
        total
    }

    pub fn l2_value(&self) -> f64 {
        self.convs
            .iter()
            .zip(&self.arch.conv)
            .map(|(b, l)| l2_penalty(&b.filters.value, l.l2, None))
            .sum()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.convs.iter().flat_map(|b| [&b.filters, &b.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs
            .iter_mut()
            .flat_map(|b| [&mut b.filters, &mut b.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub reconstruction: f64,
    pub l2: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.l2
    }
}

/// Encoder plus mirrored decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FcaeModel {
    pub encoder: Encoder,
    /// `decoder[i]` inverts encoder conv `i`.
    pub decoder: Vec<ConvBlock>,
}

impl FcaeModel {
    /// Xavier-initialised model; encoder weights are drawn first, then the
    /// decoder's, each in layer order.
    pub fn new(arch: &DecodedArchitecture, input_hwc: [usize; 3], rng: &mut impl Rng) -> Result<Self, NnError> {
        let encoder = Encoder::new("encoder", arch, input_hwc, rng)?;
        let decoder = encoder
            .convs
            .iter()
            .enumerate()
            .map(|(i, b)| ConvBlock::new(&format!("decoder.deconv{i}"), b.spec, b.spec.c_in, rng))
            .collect();
        Ok(Self { encoder, decoder })
    }

    fn decode_step(&self, i: usize, u: &Tensor, target: (usize, usize)) -> Result<Tensor, NnError> {
        let b = &self.decoder[i];
        let z = conv::deconv(u, &b.filters.value, Some(&b.bias.value), &b.spec, target)?;
        let z = if i > 0 { relu(&z) } else { z };
        check_finite(&z, || format!("decoder.deconv{i}"))?;
        Ok(z)
    }

    fn upsample_targets(&self) -> Result<Vec<(usize, usize)>, NnError> {
        let plan = self.encoder.spatial_plan()?;
        Ok(plan[..plan.len() - 1].to_vec())
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let code = self.encoder.forward(x)?;
        self.decode(code)
    }

    pub fn decode(&self, code: Tensor) -> Result<Tensor, NnError> {
        let targets = self.upsample_targets()?;
        let nc = self.encoder.convs.len();
        let mut u = code;
        for j in (0..self.encoder.arch.pool.len()).rev() {
            u = upsample(&u, targets[nc + j])?;
            check_finite(&u, || format!("decoder.upsample{j}"))?;
        }
        for i in (0..nc).rev() {
            u = self.decode_step(i, &u, targets[i])?;
        }
        Ok(u)
    }

    /// Loss without gradients, on frozen weights.
    pub fn loss(&self, x: &Tensor) -> Result<LossParts, NnError> {
        let recon = self.reconstruct(x)?;
        let (reconstruction, _) = reconstruction_error(&recon, x)?;
        Ok(LossParts {
            reconstruction,
            l2: self.encoder.l2_value(),
        })
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Resets and fills every parameter gradient of `reconstruction + l2`.
    pub fn forward_backward(&mut self, x: &Tensor) -> Result<LossParts, NnError> {
        self.zero_grad();
        let trace = self.encoder.forward_trace(x)?;
        let targets = self.upsample_targets()?;
        let nc = self.encoder.convs.len();
        let np = self.encoder.arch.pool.len();

        let mut up_inputs = vec![[0usize; 4]; np];
        let mut u = trace.code.clone();
        for j in (0..np).rev() {
            up_inputs[j] = u.shape();
            u = upsample(&u, targets[nc + j])?;
        }
        let mut dec_in: Vec<Option<Tensor>> = vec![None; nc];
        let mut dec_out: Vec<Option<Tensor>> = vec![None; nc];
        for i in (0..nc).rev() {
            let z = self.decode_step(i, &u, targets[i])?;
            dec_in[i] = Some(std::mem::replace(&mut u, z.clone()));
            dec_out[i] = Some(z);
        }
        let (reconstruction, mut g) = reconstruction_error(&u, x)?;
        if !reconstruction.is_finite() {
            return Err(NnError::NonFinite {
                layer: "loss.reconstruction".into(),
            });
        }

        for i in 0..nc {
            if i > 0 {
                g = relu_backward(dec_out[i].as_ref().expect("filled above"), &g);
            }
            let b = &mut self.decoder[i];
            g = conv::deconv_backward(
                dec_in[i].as_ref().expect("filled above"),
                &b.filters.value,
                &b.spec,
                &g,
                &mut b.filters.grad,
                &mut b.bias.grad,
                true,
            )?
            .expect("input gradient requested");
        }
        for j in 0..np {
            g = upsample_backward(up_inputs[j], &g);
        }
        self.encoder.backward(&trace, g, false)?;
        let l2 = self.encoder.l2_penalty(true);
        if !l2.is_finite() {
            return Err(NnError::NonFinite {
                layer: "loss.l2".into(),
            });
        }
        Ok(LossParts { reconstruction, l2 })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.iter().flat_map(|b| [&b.filters, &b.bias]));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(
            self.decoder
                .iter_mut()
                .flat_map(|b| [&mut b.filters, &mut b.bias]),
        );
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// One or two stacked encoders, then FC(ReLU) → dropout → FC → softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub blocks: Vec<Encoder>,
    pub hidden: Dense,
    pub output: Dense,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierStep {
    pub cross_entropy: f64,
    pub l2: f64,
    pub correct: usize,
}

impl Classifier {
    /// Block `i` is renamed `block{i}` so stacked encoders keep distinct
    /// parameter names.
    pub fn new(
        mut blocks: Vec<Encoder>,
        hidden_units: usize,
        n_classes: usize,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let last = blocks
            .last()
            .ok_or_else(|| NnError::Degenerate("classifier needs at least one encoder".into()))?;
        for pair in blocks.windows(2) {
            if pair[0].code_hwc()? != pair[1].input_hwc {
                return Err(NnError::Shape(
                    "stacked encoder input does not match the previous code".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NnError::Shape(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let [h, w, c] = last.code_hwc()?;
        let d = h * w * c;
        for (i, b) in blocks.iter_mut().enumerate() {
            b.rename(&format!("block{i}"));
        }
        Ok(Self {
            hidden: Dense::new("head.hidden", d, hidden_units, rng),
            output: Dense::new("head.output", hidden_units, n_classes, rng),
            blocks,
            dropout_rate,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.output.d_out
    }

    fn features(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut h = self.blocks[0].forward(x)?;
        for b in &self.blocks[1..] {
            h = b.forward(&h)?;
        }
        Ok(h)
    }

    /// Evaluation-mode logits; dropout is inactive.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>, NnError> {
        let code = self.features(x)?;
        let n = code.batch();
        let hidden = relu_vec(self.hidden.forward(code.data(), n));
        Ok(self.output.forward(&hidden, n))
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Vec<f64>, NnError> {
        Ok(softmax(&self.logits(x)?, self.n_classes()))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<u8>, NnError> {
        let k = self.n_classes();
        Ok(self
            .logits(x)?
            .chunks_exact(k)
            .map(|row| argmax(row) as u8)
            .collect())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Training-mode pass (dropout active) filling every gradient.
    pub fn forward_backward(&mut self, x: &Tensor, labels: &[u8], rng: &mut impl Rng) -> Result<ClassifierStep, NnError> {
        self.zero_grad();
        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            let t = b.forward_trace(&h)?;
            h = t.code.clone();
            traces.push(t);
        }
        let code = h;
        let n = code.batch();
        let pre = self.hidden.forward(code.data(), n);
        let act = relu_vec(pre);
        let keep = 1.0 - self.dropout_rate;
        let mask: Vec<f64> = act
            .iter()
            .map(|_| {
                if self.dropout_rate == 0.0 || rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let dropped: Vec<f64> = act.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let logits = self.output.forward(&dropped, n);
        let k = self.n_classes();
        let correct = logits
            .chunks_exact(k)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l as usize)
            .count();
        let (ce, dlogits) = softmax_cross_entropy(&logits, k, labels)?;
        if !ce.is_finite() {
            return Err(NnError::NonFinite {
                layer: "loss.cross_entropy".into(),
            });
        }
        let ddrop = self
            .output
            .backward(&dropped, n, &dlogits, true)
            .expect("input gradient requested");
        let dpre: Vec<f64> = ddrop
            .iter()
            .zip(&mask)
            .zip(&act)
            .map(|((g, m), a)| if *a > 0.0 { g * m } else { 0.0 })
            .collect();
        let dcode = self
            .hidden
            .backward(code.data(), n, &dpre, true)
            .expect("input gradient requested");
        let mut g = Tensor::from_vec(code.shape(), dcode)?;
        for (bi, b) in self.blocks.iter_mut().enumerate().rev() {
            match b.backward(&traces[bi], g, bi > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        let l2 = self.blocks.iter_mut().map(|b| b.l2_penalty(true)).sum();
        Ok(ClassifierStep {
            cross_entropy: ce,
            l2,
            correct,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.extend([&self.hidden.weights, &self.hidden.bias, &self.output.weights, &self.output.bias]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend([
            &mut self.hidden.weights,
            &mut self.hidden.bias,
            &mut self.output.weights,
            &mut self.output.bias,
        ]);
        v
    }
}

fn relu_vec(mut v: Vec<f64>) -> Vec<f64> {
    for x in &mut v {
        *x = x.max(0.0);
    }
    v
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
