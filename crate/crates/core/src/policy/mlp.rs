//! Small feed-forward network with a hand-rolled backward pass.
//!
//! Hidden layers are tanh, the output head is linear. Weights are stored
//! column-major (`w[input * out_dim + out]`) so that a sparse binary input
//! touches one contiguous column per active index, in both the forward pass
//! and the first-layer gradient. `grad_check` guards the backward pass
//! against central finite differences.

use rand::Rng;

use crate::rng::rng_from_seed;

use super::SparseInput;

#[derive(Debug, Clone)]
pub struct Mlp {
    /// Layer widths, `[input, hidden.., output]`.
    pub dims: Vec<u32>,
    /// Per layer, column-major `in_dim * out_dim`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Gradient accumulator with the same shape as the network parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= c;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= c;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for w in &self.weights {
            for &v in w {
                m = m.max(v.abs());
            }
        }
        for b in &self.biases {
            for &v in b {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Activations cached by [`Mlp::forward_cached`], consumed by backward.
pub struct ForwardCache {
    /// Post-activation values per layer, including the linear output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

impl Mlp {
    /// Xavier-uniform initialization, biases zero.
    pub fn new(dims: &[u32], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l] as usize, dims[l + 1] as usize);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Mlp { dims: dims.to_vec(), weights, biases }
    }

    /// Like [`Mlp::new`] but with a zero-initialized output layer, so a
    /// fresh policy head starts exactly uniform.
    pub fn new_zero_head(dims: &[u32], seed: u64) -> Self {
        let mut net = Mlp::new(dims, seed);
        let last = net.num_layers() - 1;
        net.weights[last].iter_mut().for_each(|w| *w = 0.0);
        net
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> u32 {
        self.dims[0]
    }

    pub fn output_dim(&self) -> u32 {
        *self.dims.last().unwrap()
    }

    fn layer_forward(&self, l: usize, add_cols: Option<&[u32]>, dense_in: Option<&[f64]>) -> Vec<f64> {
        let out_dim = self.dims[l + 1] as usize;
        let w = &self.weights[l];
        let mut z = self.biases[l].clone();
        if let Some(active) = add_cols {
            for &i in active {
                let col = &w[i as usize * out_dim..(i as usize + 1) * out_dim];
                for (zo, &wv) in z.iter_mut().zip(col) {
                    *zo += wv;
                }
            }
        }
        if let Some(a) = dense_in {
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let col = &w[i * out_dim..(i + 1) * out_dim];
                for (zo, &wv) in z.iter_mut().zip(col) {
                    *zo += ai * wv;
                }
            }
        }
        z
    }

    /// Forward pass over the active indices of a sparse binary input.
    pub fn forward(&self, active: &[u32]) -> Vec<f64> {
        let n = self.num_layers();
        let mut z = self.layer_forward(0, Some(active), None);
        for l in 1..n {
            for v in &mut z {
                *v = v.tanh();
            }
            z = self.layer_forward(l, None, Some(&z));
        }
        z
    }

    /// Forward pass keeping per-layer activations for backprop.
    pub fn forward_cached(&self, active: &[u32]) -> ForwardCache {
        let n = self.num_layers();
        let mut activations = Vec::with_capacity(n);
        let mut z = self.layer_forward(0, Some(active), None);
        for l in 1..n {
            for v in &mut z {
                *v = v.tanh();
            }
            activations.push(z.clone());
            z = self.layer_forward(l, None, Some(&z));
        }
        activations.push(z);
        ForwardCache { activations }
    }

    /// Accumulate parameter gradients for `d loss / d output` at one input.
    pub fn backward(
        &self,
        active: &[u32],
        cache: &ForwardCache,
        dout: &[f64],
        grads: &mut MlpGrads,
    ) {
        let n = self.num_layers();
        debug_assert_eq!(dout.len(), self.output_dim() as usize);
        let mut delta = dout.to_vec();
        for l in (0..n).rev() {
            let out_dim = self.dims[l + 1] as usize;
            // Bias gradient.
            for (g, &d) in grads.biases[l].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 {
                // Sparse binary input: gradient lands on the active columns.
                for &i in active {
                    let base = i as usize * out_dim;
                    for (o, &d) in delta.iter().enumerate() {
                        grads.weights[0][base + o] += d;
                    }
                }
                break;
            }
            let a_prev = &cache.activations[l - 1];
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            let mut delta_prev = vec![0.0; a_prev.len()];
            for (i, &ai) in a_prev.iter().enumerate() {
                let base = i * out_dim;
                let mut acc = 0.0;
                for (o, &d) in delta.iter().enumerate() {
                    gw[base + o] += ai * d;
                    acc += w[base + o] * d;
                }
                // tanh'(z) = 1 - tanh(z)^2, and a_prev stores tanh(z).
                delta_prev[i] = acc * (1.0 - ai * ai);
            }
            delta = delta_prev;
        }
    }

    pub fn export_params(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for l in 0..self.num_layers() {
            out.push(self.weights[l].clone());
            out.push(self.biases[l].clone());
        }
        out
    }

    pub fn import_params(&mut self, params: &[Vec<f64>]) -> Result<(), String> {
        if params.len() != 2 * self.num_layers() {
            return Err(format!(
                "expected {} parameter blocks, got {}",
                2 * self.num_layers(),
                params.len()
            ));
        }
        for l in 0..self.num_layers() {
            if params[2 * l].len() != self.weights[l].len()
                || params[2 * l + 1].len() != self.biases[l].len()
            {
                return Err(format!("parameter block {l} has wrong length"));
            }
            self.weights[l].copy_from_slice(&params[2 * l]);
            self.biases[l].copy_from_slice(&params[2 * l + 1]);
        }
        Ok(())
    }

    fn param_mut(&mut self, layer: usize, weight: bool, idx: usize) -> &mut f64 {
        if weight {
            &mut self.weights[layer][idx]
        } else {
            &mut self.biases[layer][idx]
        }
    }
}

/// First-order optimizers over an [`Mlp`]'s parameters.
///
/// Adam is the default for value learning; plain SGD (with optional
/// momentum) tends to generalize better for the policy-gradient runs, where
/// per-parameter normalization would amplify rare instance-specific signals
/// to the same step size as the consistent rule signals.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn adam(net: &Mlp, lr: f64) -> Self {
        Optimizer::Adam(Adam::new(net, lr))
    }

    pub fn sgd(net: &Mlp, lr: f64, momentum: f64) -> Self {
        Optimizer::Sgd(Sgd::new(net, lr, momentum))
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        match self {
            Optimizer::Adam(a) => a.step(net, grads),
            Optimizer::Sgd(s) => s.step(net, grads),
        }
    }
}

/// Plain SGD with momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    vel_w: Vec<Vec<f64>>,
    vel_b: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(net: &Mlp, lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            vel_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            vel_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        for l in 0..net.num_layers() {
            for (i, g) in grads.weights[l].iter().enumerate() {
                self.vel_w[l][i] = self.momentum * self.vel_w[l][i] - self.lr * g;
                net.weights[l][i] += self.vel_w[l][i];
            }
            for (i, g) in grads.biases[l].iter().enumerate() {
                self.vel_b[l][i] = self.momentum * self.vel_b[l][i] - self.lr * g;
                net.biases[l][i] += self.vel_b[l][i];
            }
        }
    }
}

/// Adam optimizer over an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Apply one descent step on the given loss gradients.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for l in 0..net.num_layers() {
            Self::step_block(
                &mut net.weights[l],
                &grads.weights[l],
                &mut self.m_w[l],
                &mut self.v_w[l],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            Self::step_block(
                &mut net.biases[l],
                &grads.biases[l],
                &mut self.m_b[l],
                &mut self.v_b[l],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_block(
        params: &mut [f64],
        grads: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// A differentiable loss over a batch of inputs: maps the stacked network
/// outputs to `(loss, d loss / d output per input)`.
pub struct LossProbe<'a> {
    pub inputs: &'a [SparseInput],
    #[allow(clippy::type_complexity)]
    pub loss: &'a dyn Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
}

/// Compare analytic gradients against central finite differences
/// (step `1e-5`) on `n_probes` randomly chosen parameters.
///
/// Returns the maximum relative error, with the relative scale floored at 1
/// so exact zeros compare cleanly.
pub fn grad_check(net: &Mlp, probe: &LossProbe, n_probes: usize, seed: u64) -> f64 {
    const STEP: f64 = 1e-5;
    let eval = |net: &Mlp| -> (f64, Vec<Vec<f64>>) {
        let outs: Vec<Vec<f64>> = probe.inputs.iter().map(|x| net.forward(&x.active)).collect();
        (probe.loss)(&outs)
    };

    // Analytic gradients.
    let mut grads = MlpGrads::zeros_like(net);
    let caches: Vec<ForwardCache> =
        probe.inputs.iter().map(|x| net.forward_cached(&x.active)).collect();
    let outs: Vec<Vec<f64>> = caches.iter().map(|c| c.output().to_vec()).collect();
    let (_, douts) = (probe.loss)(&outs);
    for ((x, cache), dout) in probe.inputs.iter().zip(&caches).zip(&douts) {
        net.backward(&x.active, cache, dout, &mut grads);
    }

    // Random parameter coordinates to probe.
    let mut rng = rng_from_seed(seed);
    let mut work = net.clone();
    let mut max_rel: f64 = 0.0;
    for _ in 0..n_probes {
        let layer = rng.gen_range(0..net.num_layers());
        let weight = rng.gen_bool(0.5);
        let len = if weight { net.weights[layer].len() } else { net.biases[layer].len() };
        let idx = rng.gen_range(0..len);
        let analytic = if weight { grads.weights[layer][idx] } else { grads.biases[layer][idx] };

        let orig = *work.param_mut(layer, weight, idx);
        *work.param_mut(layer, weight, idx) = orig + STEP;
        let (lp, _) = eval(&work);
        *work.param_mut(layer, weight, idx) = orig - STEP;
        let (lm, _) = eval(&work);
        *work.param_mut(layer, weight, idx) = orig;
        let fd = (lp - lm) / (2.0 * STEP);

        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::softmax;

    fn squared_loss(target: Vec<Vec<f64>>) -> impl Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        move |outs: &[Vec<f64>]| {
            let mut loss = 0.0;
            let mut douts = Vec::with_capacity(outs.len());
            for (out, tgt) in outs.iter().zip(&target) {
                let mut dout = Vec::with_capacity(out.len());
                for (&o, &t) in out.iter().zip(tgt) {
                    loss += 0.5 * (o - t) * (o - t);
                    dout.push(o - t);
                }
                douts.push(dout);
            }
            (loss, douts)
        }
    }

    #[test]
    fn linear_network_squared_loss_is_exact() {
        let net = Mlp::new(&[6, 3], 1);
        let inputs =
            vec![SparseInput::new(6, vec![0, 2]), SparseInput::new(6, vec![1, 4, 5])];
        let loss = squared_loss(vec![vec![0.3, -0.1, 0.7], vec![-0.2, 0.5, 0.0]]);
        let probe = LossProbe { inputs: &inputs, loss: &loss };
        let err = grad_check(&net, &probe, 120, 2024);
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn two_hidden_layer_softmax_cross_entropy() {
        let net = Mlp::new(&[10, 16, 16, 4], 3);
        let inputs: Vec<SparseInput> = (0..5)
            .map(|i| SparseInput::new(10, vec![i, (i + 3) % 10, (i + 7) % 10]))
            .collect();
        let targets = [0usize, 3, 1, 2, 2];
        let loss = move |outs: &[Vec<f64>]| {
            let mut loss = 0.0;
            let mut douts = Vec::with_capacity(outs.len());
            for (out, &t) in outs.iter().zip(targets.iter()) {
                let p = softmax(out);
                loss -= p[t].ln();
                let mut dout = p;
                dout[t] -= 1.0;
                douts.push(dout);
            }
            (loss, douts)
        };
        let probe = LossProbe { inputs: &inputs, loss: &loss };
        let err = grad_check(&net, &probe, 150, 7);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_input_probe_leaves_weight_gradients_zero() {
        let net = Mlp::new(&[4, 3], 5);
        let input = SparseInput::new(4, vec![]);
        let cache = net.forward_cached(&input.active);
        let mut grads = MlpGrads::zeros_like(&net);
        net.backward(&input.active, &cache, &[1.0, -2.0, 0.5], &mut grads);
        assert!(grads.weights[0].iter().all(|&g| g == 0.0));
        assert_eq!(grads.biases[0], vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_reduces_a_quadratic_loss() {
        let mut net = Mlp::new(&[2, 2], 9);
        let inputs = vec![SparseInput::new(2, vec![0]), SparseInput::new(2, vec![1])];
        let loss = squared_loss(vec![vec![1.0, -1.0], vec![-0.5, 0.5]]);
        let mut opt = Adam::new(&net, 0.05);
        let eval = |net: &Mlp| {
            let outs: Vec<Vec<f64>> = inputs.iter().map(|x| net.forward(&x.active)).collect();
            loss(&outs).0
        };
        let before = eval(&net);
        for _ in 0..500 {
            let mut grads = MlpGrads::zeros_like(&net);
            for x in &inputs {
                let cache = net.forward_cached(&x.active);
                let outs = vec![cache.output().to_vec()];
                // Evaluate per-input to route the right dout to backward.
                let full_outs: Vec<Vec<f64>> =
                    inputs.iter().map(|xx| net.forward(&xx.active)).collect();
                let (_, douts) = loss(&full_outs);
                let idx = inputs.iter().position(|xx| xx == x).unwrap();
                drop(outs);
                net.backward(&x.active, &cache, &douts[idx], &mut grads);
            }
            opt.step(&mut net, &grads);
        }
        let after = eval(&net);
        assert!(after < 1e-6, "loss should collapse: before {before}, after {after}");
    }
}
