//! A small DLRM-style click model on top of parameter-shared embeddings.
//!
//! Dense features go through a bottom MLP to a `d`-vector; each categorical
//! field is looked up in its own [`PssStore`]. The top MLP sees the bottom
//! output concatenated with all pairwise dot products among the `F + 1`
//! vectors and emits one logit.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::PssConfig;
use crate::error::{Error, Result};
use crate::grad::{GradientBuffer, GradientMode, IndexMap};
use crate::metrics::{bce_loss, sigmoid};
use crate::rng::SplitMix64;
use crate::store::{backward, PssStore};

/// Affine layer `y = W x + b`, `W` row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Weights uniform on `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut SplitMix64) -> Self {
        let bound = libm::sqrt(6.0 / (inputs + outputs) as f64);
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.uniform(-bound, bound)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }
}

/// Multi-layer perceptron: ReLU after every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Gradients of an [`Mlp`], one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Mlp {
    /// Layer widths from input to output, e.g. `[8, 16, 4]` is two layers.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid("an MLP needs at least two non-zero widths"));
        }
        let mut rng = SplitMix64::new(seed);
        Ok(Self { layers: widths.windows(2).map(|w| Linear::glorot(w[0], w[1], &mut rng)).collect() })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for l in &layers {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::invalid("layer widths must be at least 1"));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::invalid("layer parameter shapes are inconsistent"));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid("layer parameters must be finite"));
            }
        }
        if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(Error::invalid("consecutive layer widths do not chain"));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acts = Vec::new();
        self.forward_cached(x, &mut acts)?;
        Ok(acts.pop().unwrap_or_default())
    }

    /// Leaves the input followed by every layer's (post-activation) output in `acts`.
    fn forward_cached(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::invalid("MLP input width mismatch"));
        }
        acts.clear();
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[i], &mut out);
            if i < last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        Ok(())
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    fn backward(&self, acts: &[Vec<f64>], grad_out: &[f64], grads: &mut MlpGradients) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i < last {
                // ReLU: pass gradient where the output was positive.
                for (gv, &a) in g.iter_mut().zip(&acts[i + 1]) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let input = &acts[i];
            let (gw, gb) = &mut grads.layers[i];
            let mut gin = vec![0.0; layer.inputs];
            for (o, &go) in g.iter().enumerate() {
                gb[o] += go;
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for ((gwv, &x), (gi, &w)) in grow.iter_mut().zip(input).zip(gin.iter_mut().zip(row)) {
                    *gwv += go * x;
                    *gi += go * w;
                }
            }
            g = gin;
        }
        g
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        MlpGradients {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    fn apply_sgd(&mut self, grads: &MlpGradients, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(&mut *f);
            layer.bias.iter_mut().for_each(&mut *f);
        }
    }
}

pub fn mlp_forward(spec: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    spec.forward(x)
}

/// Dot products of all unordered pairs `i < j`, in row-major upper-triangle order.
pub fn dot_interactions(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let Some(first) = vectors.first() else {
        return Ok(Vec::new());
    };
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::invalid("interaction vectors must share one length"));
    }
    let mut out = Vec::with_capacity(vectors.len() * (vectors.len().saturating_sub(1)) / 2);
    for (i, a) in vectors.iter().enumerate() {
        for b in &vectors[i + 1..] {
            out.push(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum());
        }
    }
    Ok(out)
}

/// Number of pairwise interactions among `count` vectors.
pub fn interaction_count(count: usize) -> usize {
    count * count.saturating_sub(1) / 2
}

/// Architecture of a [`DlrmModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DlrmSpec {
    pub dense_dim: usize,
    /// Hidden widths of the bottom MLP (its output width is `d`).
    pub bottom_hidden: Vec<usize>,
    /// Hidden widths of the top MLP (its output width is 1).
    pub top_hidden: Vec<usize>,
    /// One embedding table per categorical field; all share `d`.
    pub tables: Vec<PssConfig>,
    pub seed: u64,
}

impl DlrmSpec {
    /// Toy defaults: bottom `[dense_dim, 16, d]`, top `[.., 32, 1]`.
    pub fn toy(dense_dim: usize, tables: Vec<PssConfig>, seed: u64) -> Self {
        Self { dense_dim, bottom_hidden: vec![16], top_hidden: vec![32], tables, seed }
    }
}

/// A mini-batch: `B x dense_dim` features, `B x F` tokens, `B` labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub dense: &'a [f64],
    pub tokens: &'a [u64],
    pub labels: &'a [bool],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlrmModel {
    bottom: Mlp,
    fields: Vec<PssStore>,
    top: Mlp,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub bottom_acts: Vec<Vec<f64>>,
    pub embeddings: Vec<Vec<f64>>,
    pub index_maps: Vec<IndexMap>,
    pub top_acts: Vec<Vec<f64>>,
    pub logit: f64,
}

/// Gradients of the mean batch loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DlrmGradients {
    pub loss: f64,
    pub bottom: MlpGradients,
    pub top: MlpGradients,
    pub fields: Vec<GradientBuffer>,
}

impl DlrmGradients {
    /// Flattened in [`DlrmModel::flat_params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for grads in [&self.bottom, &self.top] {
            for (w, b) in &grads.layers {
                out.extend_from_slice(w);
                out.extend_from_slice(b);
            }
        }
        for f in &self.fields {
            out.extend(f.densify());
        }
        out
    }
}

impl DlrmModel {
    pub fn new(spec: &DlrmSpec) -> Result<Self> {
        let Some(first) = spec.tables.first() else {
            return Err(Error::invalid("a DLRM model needs at least one categorical field"));
        };
        let d = first.d;
        if spec.tables.iter().any(|t| t.d != d) {
            return Err(Error::invalid("all embedding tables must share d"));
        }
        let mut bottom_widths = vec![spec.dense_dim];
        bottom_widths.extend(&spec.bottom_hidden);
        bottom_widths.push(d);
        let mut top_widths = vec![d + interaction_count(spec.tables.len() + 1)];
        top_widths.extend(&spec.top_hidden);
        top_widths.push(1);
        let bottom = Mlp::new(&bottom_widths, crate::rng::stream_seed(spec.seed, 0xB0))?;
        let top = Mlp::new(&top_widths, crate::rng::stream_seed(spec.seed, 0x70))?;
        let fields = spec.tables.iter().map(|&c| PssStore::new(c)).collect::<Result<Vec<_>>>()?;
        Self::from_parts(bottom, fields, top)
    }

    pub fn from_parts(bottom: Mlp, fields: Vec<PssStore>, top: Mlp) -> Result<Self> {
        let Some(first) = fields.first() else {
            return Err(Error::invalid("a DLRM model needs at least one categorical field"));
        };
        let d = first.d();
        if fields.iter().any(|f| f.d() != d) {
            return Err(Error::invalid("all embedding tables must share d"));
        }
        if bottom.output_width() != d {
            return Err(Error::invalid("bottom MLP must output d values"));
        }
        if top.input_width() != d + interaction_count(fields.len() + 1) || top.output_width() != 1 {
            return Err(Error::invalid("top MLP must map d + interactions to one logit"));
        }
        Ok(Self { bottom, fields, top })
    }

    pub fn bottom(&self) -> &Mlp {
        &self.bottom
    }

    pub fn top(&self) -> &Mlp {
        &self.top
    }

    pub fn fields(&self) -> &[PssStore] {
        &self.fields
    }

    pub fn fields_mut(&mut self) -> &mut [PssStore] {
        &mut self.fields
    }

    pub fn dense_dim(&self) -> usize {
        self.bottom.input_width()
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn d(&self) -> usize {
        self.fields[0].d()
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        let b = batch.len();
        if batch.dense.len() != b * self.dense_dim() || batch.tokens.len() != b * self.num_fields() {
            return Err(Error::invalid("batch shapes are inconsistent with the model"));
        }
        Ok(())
    }

    /// Head of the network for one sample given its embeddings.
    fn head(
        &self,
        dense_x: &[f64],
        embeddings: &[&[f64]],
        bottom_acts: &mut Vec<Vec<f64>>,
        top_acts: &mut Vec<Vec<f64>>,
    ) -> Result<f64> {
        self.bottom.forward_cached(dense_x, bottom_acts)?;
        let bottom_out = bottom_acts.last().map(Vec::as_slice).unwrap_or_default();
        let mut vectors: Vec<&[f64]> = Vec::with_capacity(embeddings.len() + 1);
        vectors.push(bottom_out);
        vectors.extend_from_slice(embeddings);
        let mut top_in = bottom_out.to_vec();
        top_in.extend(dot_interactions(&vectors)?);
        self.top.forward_cached(&top_in, top_acts)?;
        Ok(top_acts.last().map_or(0.0, |o| o[0]))
    }

    /// Forward pass for one sample: click probability plus the cache needed
    /// to differentiate it.
    pub fn forward(&self, dense_x: &[f64], tokens: &[u64]) -> Result<(f64, ForwardCache)> {
        if tokens.len() != self.num_fields() {
            return Err(Error::invalid("one token per categorical field is required"));
        }
        let mut embeddings = Vec::with_capacity(tokens.len());
        let mut index_maps = Vec::with_capacity(tokens.len());
        for (store, &t) in self.fields.iter().zip(tokens) {
            let (e, m) = store.lookup_batch(&[t])?;
            embeddings.push(e);
            index_maps.push(m);
        }
        let views: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
        let (mut bottom_acts, mut top_acts) = (Vec::new(), Vec::new());
        let logit = self.head(dense_x, &views, &mut bottom_acts, &mut top_acts)?;
        Ok((sigmoid(logit), ForwardCache { bottom_acts, embeddings, index_maps, top_acts, logit }))
    }

    pub fn logit(&self, dense_x: &[f64], tokens: &[u64]) -> Result<f64> {
        Ok(self.forward(dense_x, tokens)?.1.logit)
    }

    fn batch_embeddings(&self, tokens: &[u64], b: usize) -> Result<Vec<(Vec<f64>, IndexMap)>> {
        let f_count = self.num_fields();
        let mut column = vec![0u64; b];
        self.fields
            .iter()
            .enumerate()
            .map(|(f, store)| {
                for (s, c) in column.iter_mut().enumerate() {
                    *c = tokens[s * f_count + f];
                }
                store.lookup_batch(&column)
            })
            .collect()
    }

    /// Click probabilities for `B` samples.
    pub fn predict(&self, dense: &[f64], tokens: &[u64]) -> Result<Vec<f64>> {
        Ok(self.logits(dense, tokens)?.into_iter().map(sigmoid).collect())
    }

    /// Pre-sigmoid scores for `B` samples.
    pub fn logits(&self, dense: &[f64], tokens: &[u64]) -> Result<Vec<f64>> {
        let b = tokens.len() / self.num_fields().max(1);
        let batch = Batch { dense, tokens, labels: &vec![false; b] };
        self.check_batch(&batch)?;
        let looked_up = self.batch_embeddings(tokens, b)?;
        let (d, din) = (self.d(), self.dense_dim());
        let (mut bottom_acts, mut top_acts) = (Vec::new(), Vec::new());
        let mut views: Vec<&[f64]> = Vec::with_capacity(self.num_fields());
        (0..b)
            .map(|s| {
                views.clear();
                views.extend(looked_up.iter().map(|(e, _)| &e[s * d..(s + 1) * d]));
                self.head(&dense[s * din..(s + 1) * din], &views, &mut bottom_acts, &mut top_acts)
            })
            .collect()
    }

    /// Mean BCE over the batch.
    pub fn loss(&self, batch: &Batch<'_>) -> Result<f64> {
        let probs = self.predict(batch.dense, batch.tokens)?;
        let total: f64 = probs.iter().zip(batch.labels).map(|(&p, &y)| bce_loss(p, y)).sum();
        Ok(total / batch.len() as f64)
    }

    /// Reverse-mode gradients of the mean batch loss; embedding gradients go
    /// through the chosen backward pass.
    pub fn gradients(&self, batch: &Batch<'_>, mode: GradientMode) -> Result<DlrmGradients> {
        self.check_batch(batch)?;
        let b = batch.len();
        if b == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let (d, din, f_count) = (self.d(), self.dense_dim(), self.num_fields());
        let looked_up = self.batch_embeddings(batch.tokens, b)?;
        let mut g_emb: Vec<Vec<f64>> = vec![vec![0.0; b * d]; f_count];
        let mut bottom = self.bottom.zero_gradients();
        let mut top = self.top.zero_gradients();
        let (mut bottom_acts, mut top_acts) = (Vec::new(), Vec::new());
        let mut views: Vec<&[f64]> = Vec::with_capacity(f_count);
        let mut loss = 0.0;
        let inv_b = 1.0 / b as f64;
        for s in 0..b {
            views.clear();
            views.extend(looked_up.iter().map(|(e, _)| &e[s * d..(s + 1) * d]));
            let x = &batch.dense[s * din..(s + 1) * din];
            let z = self.head(x, &views, &mut bottom_acts, &mut top_acts)?;
            let p = sigmoid(z);
            let y = batch.labels[s];
            loss += bce_loss(p, y);
            let dz = (p - if y { 1.0 } else { 0.0 }) * inv_b;
            let g_top_in = self.top.backward(&top_acts, &[dz], &mut top);
            let (g_bottom_direct, g_dots) = g_top_in.split_at(d);
            let bottom_out = &bottom_acts[bottom_acts.len() - 1];
            let mut g_vecs = vec![vec![0.0; d]; f_count + 1];
            g_vecs[0].copy_from_slice(g_bottom_direct);
            let vector = |i: usize| -> &[f64] {
                if i == 0 {
                    bottom_out
                } else {
                    views[i - 1]
                }
            };
            let mut pair = 0;
            for i in 0..=f_count {
                for j in i + 1..=f_count {
                    let g = g_dots[pair];
                    pair += 1;
                    if g == 0.0 {
                        continue;
                    }
                    let (vi, vj) = (vector(i), vector(j));
                    for t in 0..d {
                        g_vecs[i][t] += g * vj[t];
                        g_vecs[j][t] += g * vi[t];
                    }
                }
            }
            self.bottom.backward(&bottom_acts, &g_vecs[0], &mut bottom);
            for (f, gv) in g_vecs[1..].iter().enumerate() {
                g_emb[f][s * d..(s + 1) * d].copy_from_slice(gv);
            }
        }
        let loss = loss * inv_b;
        if !loss.is_finite() {
            return Err(Error::Numeric(alloc::format!("batch loss is {loss}")));
        }
        let fields = looked_up
            .iter()
            .zip(&g_emb)
            .zip(&self.fields)
            .map(|(((_, imap), g), store)| backward(mode, g, imap, store.config().memory_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(DlrmGradients { loss, bottom, top, fields })
    }

    /// Plain SGD on every parameter.
    pub fn apply(&mut self, grads: &DlrmGradients, lr: f64) -> Result<()> {
        if grads.fields.len() != self.fields.len() {
            return Err(Error::invalid("gradient field count does not match the model"));
        }
        for (store, g) in self.fields.iter_mut().zip(&grads.fields) {
            store.apply_sgd(g, lr)?;
        }
        self.bottom.apply_sgd(&grads.bottom, lr);
        self.top.apply_sgd(&grads.top, lr);
        Ok(())
    }

    /// One SGD step; returns the mean loss before the update.
    pub fn train_step(&mut self, batch: &Batch<'_>, lr: f64, mode: GradientMode) -> Result<f64> {
        let grads = self.gradients(batch, mode)?;
        self.apply(&grads, lr)?;
        Ok(grads.loss)
    }

    /// Calls `f` on every trainable scalar: bottom MLP, top MLP, then each
    /// field's memory.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.bottom.visit_params_mut(&mut f);
        self.top.visit_params_mut(&mut f);
        for store in &mut self.fields {
            store.memory_mut().iter_mut().for_each(&mut f);
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().visit_params_mut(|p| out.push(*p));
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let mut count = 0;
        self.visit_params_mut(|_| count += 1);
        if count != values.len() {
            return Err(Error::invalid("parameter vector length mismatch"));
        }
        let mut it = values.iter();
        self.visit_params_mut(|p| *p = *it.next().unwrap_or(p));
        Ok(())
    }
}

/// Convenience for [`DlrmModel::forward`].
pub fn dlrm_forward(model: &DlrmModel, dense_x: &[f64], tokens: &[u64]) -> Result<(f64, ForwardCache)> {
    model.forward(dense_x, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    fn tiny_model(seed: u64) -> DlrmModel {
        let tables = vec![PssConfig::robe_z(10, 4, 16, 2, seed), PssConfig::hashed_net(7, 4, 12, seed + 1)];
        let spec = DlrmSpec { dense_dim: 3, bottom_hidden: vec![8], top_hidden: vec![8], tables, seed };
        DlrmModel::new(&spec).unwrap()
    }

    fn tiny_batch(seed: u64, b: usize) -> (Vec<f64>, Vec<u64>, Vec<bool>) {
        let mut rng = SplitMix64::new(seed);
        let dense = (0..b * 3).map(|_| rng.normal()).collect();
        let tokens = (0..b).flat_map(|_| [rng.below(10), rng.below(7)]).collect::<Vec<_>>();
        let labels = (0..b).map(|i| i % 2 == 0).collect();
        (dense, tokens, labels)
    }

    #[test]
    fn interaction_examples() {
        let v: [&[f64]; 3] = [&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]];
        assert_eq!(dot_interactions(&v).unwrap(), vec![0.0, 1.0, 1.0]);
        assert!(dot_interactions(&[&[1.0][..]]).unwrap().is_empty());
        assert!(dot_interactions(&[&[1.0][..], &[1.0, 2.0][..]]).is_err());
    }

    #[test]
    fn interactions_match_double_loop() {
        let mut rng = SplitMix64::new(3);
        let vecs: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.normal()).collect()).collect();
        let views: Vec<&[f64]> = vecs.iter().map(Vec::as_slice).collect();
        let got = dot_interactions(&views).unwrap();
        let mut want = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                if i < j {
                    want.push(vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum::<f64>());
                }
            }
        }
        assert_eq!(got.len(), 10);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn identity_layer(n: usize) -> Linear {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        Linear { inputs: n, outputs: n, weights, bias: vec![0.0; n] }
    }

    #[test]
    fn mlp_identity_and_relu() {
        let one = Mlp::from_layers(vec![identity_layer(3)]).unwrap();
        assert_eq!(mlp_forward(&one, &[1.0, 2.0, 0.5]).unwrap(), vec![1.0, 2.0, 0.5]);
        let two = Mlp::from_layers(vec![identity_layer(3), identity_layer(3)]).unwrap();
        assert_eq!(mlp_forward(&two, &[-1.0, -2.0, -0.5]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(mlp_forward(&two, &[1.0]).is_err());
        assert!(Mlp::new(&[3], 0).is_err());
        assert!(Mlp::from_layers(vec![identity_layer(3), identity_layer(2)]).is_err());
    }

    #[test]
    fn mlp_matches_hand_rolled_oracle() {
        let mlp = Mlp::new(&[5, 7, 6, 2], 4).unwrap();
        let mut rng = SplitMix64::new(8);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let mut h = x.clone();
        for (li, layer) in mlp.layers().iter().enumerate() {
            h = (0..layer.outputs)
                .map(|o| {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let s = row.iter().zip(&h).fold(layer.bias[o], |s, (w, x)| s + w * x);
                    if li + 1 < mlp.layers().len() && s < 0.0 {
                        0.0
                    } else {
                        s
                    }
                })
                .collect();
        }
        let got = mlp.forward(&x).unwrap();
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let mut m = tiny_model(1);
        m.visit_params_mut(|p| *p = 0.0);
        let (p, _) = dlrm_forward(&m, &[1.0, -2.0, 3.0], &[4, 5]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn probabilities_stay_open_interval() {
        let m = tiny_model(2);
        let (dense, tokens, _) = tiny_batch(5, 10_000);
        for p in m.predict(&dense, &tokens).unwrap() {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let m = tiny_model(3);
        let mut rng = SplitMix64::new(12);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let tokens = [rng.below(10), rng.below(7)];
            // Embeddings read straight from memory via the placements.
            let emb: Vec<Vec<f64>> = m
                .fields()
                .iter()
                .zip(tokens)
                .map(|(s, t)| {
                    let mut row = Vec::new();
                    for p in s.chunk_locations(t).unwrap() {
                        for k in 0..p.length {
                            let at = (p.start + k) % s.memory().len();
                            row.push(f64::from(p.sign) * s.memory()[at]);
                        }
                    }
                    row
                })
                .collect();
            let bottom = m.bottom().forward(&x).unwrap();
            let all = [bottom.clone(), emb[0].clone(), emb[1].clone()];
            let mut top_in = bottom.clone();
            for i in 0..3 {
                for j in i + 1..3 {
                    top_in.push((0..4).map(|t| all[i][t] * all[j][t]).sum());
                }
            }
            let z = m.top().forward(&top_in).unwrap()[0];
            let want = 1.0 / (1.0 + (-z).exp());
            let (got, cache) = m.forward(&x, &tokens).unwrap();
            assert!((got - want).abs() < 1e-12);
            assert_eq!(cache.embeddings, emb);
            assert_eq!(m.predict(&x, &tokens).unwrap()[0], got);
        }
    }

    #[test]
    fn token_errors_propagate() {
        let m = tiny_model(3);
        assert!(matches!(m.forward(&[0.0; 3], &[10, 0]), Err(Error::TokenOutOfRange { .. })));
        assert!(m.forward(&[0.0; 3], &[1]).is_err());
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn every_gradient_matches_central_differences() {
        let m = tiny_model(4);
        let (dense, tokens, labels) = tiny_batch(6, 6);
        let batch = Batch { dense: &dense, tokens: &tokens, labels: &labels };
        let analytic = m.gradients(&batch, GradientMode::Sparse).unwrap().flatten();
        let params = m.flat_params();
        assert_eq!(analytic.len(), params.len());
        let h = 1e-5;
        let mut probe = m.clone();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            probe.set_flat_params(&p).unwrap();
            let up = probe.loss(&batch).unwrap();
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let down = probe.loss(&batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!(relative_error(analytic[i], fd) < 1e-4, "param {i}: {} vs {fd}", analytic[i]);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_model() {
        let mut m = tiny_model(5);
        let before = m.clone();
        let (dense, tokens, labels) = tiny_batch(1, 8);
        let batch = Batch { dense: &dense, tokens: &tokens, labels: &labels };
        let loss = m.train_step(&batch, 0.0, GradientMode::Dense).unwrap();
        assert!(loss > 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn gradient_modes_update_identically() {
        let (dense, tokens, labels) = tiny_batch(2, 32);
        let batch = Batch { dense: &dense, tokens: &tokens, labels: &labels };
        let mut a = tiny_model(6);
        let mut b = a.clone();
        for _ in 0..5 {
            let la = a.train_step(&batch, 0.1, GradientMode::Sparse).unwrap();
            let lb = b.train_step(&batch, 0.1, GradientMode::Dense).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn batch_order_does_not_change_summed_gradient() {
        let m = tiny_model(7);
        let (dense, tokens, labels) = tiny_batch(3, 40);
        let grads = |dense: &[f64], tokens: &[u64], labels: &[bool]| {
            m.gradients(&Batch { dense, tokens, labels }, GradientMode::Dense).unwrap().flatten()
        };
        let base = grads(&dense, &tokens, &labels);
        let mut order: Vec<usize> = (0..40).collect();
        SplitMix64::new(9).shuffle(&mut order);
        let d2: Vec<f64> = order.iter().flat_map(|&i| dense[i * 3..i * 3 + 3].to_vec()).collect();
        let t2: Vec<u64> = order.iter().flat_map(|&i| tokens[i * 2..i * 2 + 2].to_vec()).collect();
        let l2: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
        let shuffled = grads(&d2, &t2, &l2);
        for (a, b) in base.iter().zip(&shuffled) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn separable_batch_loss_halves() {
        // Label is the sign of the first dense feature.
        let tables = vec![PssConfig::with_compression(Variant::RobeZ, 50, 16, 4.0, 4, 1, 1).unwrap(); 4];
        let mut m = DlrmModel::new(&DlrmSpec::toy(8, tables, 2)).unwrap();
        let mut rng = SplitMix64::new(4);
        let b = 128;
        let dense: Vec<f64> = (0..b * 8).map(|_| rng.normal()).collect();
        let tokens: Vec<u64> = (0..b * 4).map(|_| rng.below(50)).collect();
        let labels: Vec<bool> = (0..b).map(|s| dense[s * 8] > 0.0).collect();
        let batch = Batch { dense: &dense, tokens: &tokens, labels: &labels };
        let first = m.loss(&batch).unwrap();
        for _ in 0..200 {
            m.train_step(&batch, 0.1, GradientMode::Sparse).unwrap();
        }
        let last = m.loss(&batch).unwrap();
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn collision_free_robe_tracks_full_table() {
        // n = 3 tokens, |M| = n * d: find seeds whose chunk reads never overlap.
        let (n, d) = (3, 4);
        let seed_for = |field: u64| {
            (0..10_000u64)
                .map(|s| PssConfig::robe_z(n, d, n * d, 2, s * 2 + field))
                .find(|c| {
                    let store = PssStore::new(*c).unwrap();
                    !crate::store::placements_overlap(&store, &[0, 1, 2]).unwrap()
                })
                .unwrap()
        };
        let full_spec = DlrmSpec {
            dense_dim: 3,
            bottom_hidden: vec![8],
            top_hidden: vec![8],
            tables: vec![PssConfig::full_table(n, d, 1), PssConfig::full_table(n, d, 2)],
            seed: 9,
        };
        let mut full = DlrmModel::new(&full_spec).unwrap();
        let robe_spec = DlrmSpec { tables: vec![seed_for(0), seed_for(1)], ..full_spec };
        let mut robe = DlrmModel::new(&robe_spec).unwrap();
        for (r, f) in robe.fields.iter_mut().zip(&full.fields) {
            for t in 0..n as u64 {
                r.assign_embedding(t, &f.memory()[t as usize * d..(t as usize + 1) * d]).unwrap();
            }
        }
        let mut rng = SplitMix64::new(1);
        for step in 0..100 {
            let dense: Vec<f64> = (0..16 * 3).map(|_| rng.normal()).collect();
            let tokens: Vec<u64> = (0..16 * 2).map(|_| rng.below(3)).collect();
            let labels: Vec<bool> = (0..16).map(|s| dense[s * 3] + tokens[s * 2] as f64 > 1.0).collect();
            let batch = Batch { dense: &dense, tokens: &tokens, labels: &labels };
            let a = full.train_step(&batch, 0.1, GradientMode::Sparse).unwrap();
            let b = robe.train_step(&batch, 0.1, GradientMode::Sparse).unwrap();
            assert!((a - b).abs() <= 0.02 * a, "step {step}: {a} vs {b}");
        }
    }

    #[test]
    fn shape_checks() {
        let mut spec =
            DlrmSpec::toy(3, vec![PssConfig::full_table(4, 4, 0), PssConfig::full_table(4, 8, 0)], 0);
        assert!(DlrmModel::new(&spec).is_err());
        spec.tables.clear();
        assert!(DlrmModel::new(&spec).is_err());
        let m = tiny_model(1);
        let batch = Batch { dense: &[0.0; 3], tokens: &[0], labels: &[true] };
        assert!(m.gradients(&batch, GradientMode::Dense).is_err());
    }
}
