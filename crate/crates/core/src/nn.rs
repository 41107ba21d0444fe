//! Dense MLP with explicit backpropagation and Adam.
//!
//! Everything is `f64`: downstream equality tests on the estimator side need
//! ~1e-12 agreement, which rules out single precision. Hidden layers are relu,
//! the output layer is linear. Weight matrices are row-major `(out, in)`.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameters of a dense network: `layer_sizes` plus one weight matrix and one
/// bias vector per layer transition.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    /// `weights[l]` is row-major with shape `(layer_sizes[l+1], layer_sizes[l])`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-parameter gradients, shape-congruent with an [`MlpParams`].
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activation `z` of every layer, in forward order.
    pre_activations: Vec<Vec<f64>>,
}

impl MlpParams {
    /// Initialize with uniform fan-in scaled weights, `U(-sqrt(1/fan_in), +sqrt(1/fan_in))`,
    /// and zero biases. Deterministic in `(layer_sizes, seed)`.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let mat: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(mat);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Direct access for tests and hand-built fixtures. Panics on shape mismatch.
    pub fn set_layer(&mut self, layer: usize, weights: Vec<f64>, biases: Vec<f64>) {
        assert_eq!(
            weights.len(),
            self.layer_sizes[layer] * self.layer_sizes[layer + 1]
        );
        assert_eq!(biases.len(), self.layer_sizes[layer + 1]);
        self.weights[layer] = weights;
        self.biases[layer] = biases;
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    /// Forward pass. Hidden layers are relu, the output layer is linear.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} != layer_sizes[0] {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        let mut activation = input.to_vec();
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                z[o] = b[o] + dot(row, &activation);
            }
            activation = if l + 1 < self.num_layers() {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre_activations.push(z);
        }
        Ok((
            activation,
            ForwardCache {
                input: input.to_vec(),
                pre_activations,
            },
        ))
    }

    /// Exact reverse-mode gradients of the forward map, given `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<GradBundle> {
        if cache.pre_activations.len() != self.num_layers()
            || cache.input.len() != self.input_dim()
            || cache
                .pre_activations
                .iter()
                .zip(self.layer_sizes.iter().skip(1))
                .any(|(z, &n)| z.len() != n)
        {
            return Err(Error::Shape("cache does not match network shape".into()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output_grad length {} != output dim {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let mut grads = GradBundle::zeros_like(self);
        let mut g = output_grad.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            // Activation feeding this layer: input for l==0, relu(z_{l-1}) otherwise.
            let a_prev: Vec<f64> = if l == 0 {
                cache.input.clone()
            } else {
                cache.pre_activations[l - 1]
                    .iter()
                    .map(|&v| v.max(0.0))
                    .collect()
            };
            let gw = &mut grads.weights[l];
            for o in 0..n_out {
                let go = g[o];
                grads.biases[l][o] = go;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    row[i] = go * a_prev[i];
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut g_prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let go = g[o];
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        g_prev[i] += row[i] * go;
                    }
                }
                for (gp, z) in g_prev.iter_mut().zip(&cache.pre_activations[l - 1]) {
                    if *z <= 0.0 {
                        *gp = 0.0;
                    }
                }
                g = g_prev;
            }
        }
        Ok(grads)
    }

    pub fn congruent_with(&self, grads: &GradBundle) -> bool {
        grads.weights.len() == self.weights.len()
            && grads.biases.len() == self.biases.len()
            && grads
                .weights
                .iter()
                .zip(&self.weights)
                .all(|(a, b)| a.len() == b.len())
            && grads
                .biases
                .iter()
                .zip(&self.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    /// Flat serialization: `[n_sizes, sizes..., weights (row-major, per layer), biases (per layer)]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.layer_sizes.len() + self.param_count());
        out.push(self.layer_sizes.len() as f64);
        out.extend(self.layer_sizes.iter().map(|&s| s as f64));
        for w in &self.weights {
            out.extend_from_slice(w);
        }
        for b in &self.biases {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let bad = || Error::Input("malformed flat parameter array".into());
        if flat.is_empty() {
            return Err(bad());
        }
        let n_sizes = flat[0] as usize;
        if n_sizes < 2 || flat.len() < 1 + n_sizes {
            return Err(bad());
        }
        let layer_sizes: Vec<usize> = flat[1..1 + n_sizes].iter().map(|&v| v as usize).collect();
        if layer_sizes.contains(&0) {
            return Err(bad());
        }
        let mut params = MlpParams {
            layer_sizes: layer_sizes.clone(),
            weights: layer_sizes
                .windows(2)
                .map(|w| vec![0.0; w[0] * w[1]])
                .collect(),
            biases: layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect(),
        };
        let mut cursor = 1 + n_sizes;
        for w in &mut params.weights {
            let len = w.len();
            if flat.len() < cursor + len {
                return Err(bad());
            }
            w.copy_from_slice(&flat[cursor..cursor + len]);
            cursor += len;
        }
        for b in &mut params.biases {
            let len = b.len();
            if flat.len() < cursor + len {
                return Err(bad());
            }
            b.copy_from_slice(&flat[cursor..cursor + len]);
            cursor += len;
        }
        if cursor != flat.len() {
            return Err(bad());
        }
        if !params.all_finite() {
            return Err(Error::Numeric("non-finite parameter entries".into()));
        }
        Ok(params)
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn coord(&mut self, index: usize) -> &mut f64 {
        let mut idx = index;
        for w in &mut self.weights {
            if idx < w.len() {
                return &mut w[idx];
            }
            idx -= w.len();
        }
        for b in &mut self.biases {
            if idx < b.len() {
                return &mut b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index {index} out of range");
    }
}

impl GradBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        GradBundle {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &GradBundle) {
        for (a, b) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(other.weights.iter().chain(other.biases.iter()))
        {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    fn coord(&self, index: usize) -> f64 {
        let mut idx = index;
        for w in &self.weights {
            if idx < w.len() {
                return w[idx];
            }
            idx -= w.len();
        }
        for b in &self.biases {
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("gradient index {index} out of range");
    }
}

/// Dot product with four partial accumulators so the loop vectorizes; the
/// reassociation is fixed, so results stay bit-deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

#[allow(clippy::too_many_arguments)]
fn adam_block(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lr: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Bias-corrected Adam over an [`MlpParams`]. The update direction is descent
/// on the supplied gradient; callers maximizing an objective negate first.
#[derive(Debug, Clone)]
pub struct AdamState {
    step_count: u64,
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            step_count: 0,
            m_weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One descent step. Refuses non-finite gradients without touching state.
    pub fn step(&mut self, params: &mut MlpParams, grads: &GradBundle, lr: f64) -> Result<()> {
        if !params.congruent_with(grads) {
            return Err(Error::Shape("gradient shape does not match parameters".into()));
        }
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient entries, update refused".into()));
        }
        self.step_count += 1;
        for l in 0..params.weights.len() {
            adam_block(
                &mut params.weights[l],
                &grads.weights[l],
                &mut self.m_weights[l],
                &mut self.v_weights[l],
                self.step_count,
                self.beta1,
                self.beta2,
                self.epsilon,
                lr,
            );
            adam_block(
                &mut params.biases[l],
                &grads.biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
                self.step_count,
                self.beta1,
                self.beta2,
                self.epsilon,
                lr,
            );
        }
        Ok(())
    }
}

/// Adam over a plain vector (used for the Gaussian policy's global log-std).
#[derive(Debug, Clone)]
pub struct VecAdamState {
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl VecAdamState {
    pub fn new(len: usize) -> Self {
        VecAdamState {
            step_count: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("vector adam shape mismatch".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient entries, update refused".into()));
        }
        self.step_count += 1;
        adam_block(
            params,
            grads,
            &mut self.m,
            &mut self.v,
            self.step_count,
            self.beta1,
            self.beta2,
            self.epsilon,
            lr,
        );
        Ok(())
    }
}

/// Compare an analytic gradient against central finite differences of `loss`.
///
/// Checks every coordinate, or a fixed seeded subsample of 10^4 coordinates
/// for larger networks. Returns the max relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(loss: F, params: &MlpParams, analytic: &GradBundle, h: f64) -> Result<f64>
where
    F: Fn(&MlpParams) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config("finite-difference step h must be positive".into()));
    }
    if !params.congruent_with(analytic) {
        return Err(Error::Shape("analytic gradient shape mismatch".into()));
    }
    let total = params.param_count();
    const MAX_COORDS: usize = 10_000;
    let coords: Vec<usize> = if total <= MAX_COORDS {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9d5a_b3f1);
        (0..MAX_COORDS).map(|_| rng.gen_range(0..total)).collect()
    };
    let mut scratch = params.clone();
    let mut max_rel = 0.0f64;
    for idx in coords {
        let base = *scratch.coord(idx);
        *scratch.coord(idx) = base + h;
        let up = loss(&scratch)?;
        *scratch.coord(idx) = base - h;
        let down = loss(&scratch)?;
        *scratch.coord(idx) = base;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric("loss returned a non-finite value".into()));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.coord(idx);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_counts_and_zero_biases() {
        let p = MlpParams::init(&[4, 5, 5, 3], 7).unwrap();
        assert_eq!(p.param_count(), 73); // weights 20+25+15, biases 5+5+3
        let p2 = MlpParams::init(&[2, 2], 123).unwrap();
        assert_eq!(p2.biases[0], vec![0.0, 0.0]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(&[3, 8, 2], 42).unwrap();
        let b = MlpParams::init(&[3, 8, 2], 42).unwrap();
        assert_eq!(a, b);
        let c = MlpParams::init(&[3, 8, 2], 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(MlpParams::init(&[4], 0), Err(Error::Config(_))));
        assert!(matches!(MlpParams::init(&[4, 0, 2], 0), Err(Error::Config(_))));
        assert!(matches!(MlpParams::init(&[], 0), Err(Error::Config(_))));
    }

    #[test]
    fn forward_zero_net_is_zero() {
        let mut p = MlpParams::init(&[3, 4, 2], 0).unwrap();
        p.set_layer(0, vec![0.0; 12], vec![0.0; 4]);
        p.set_layer(1, vec![0.0; 8], vec![0.0; 2]);
        let (y, _) = p.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_layer() {
        let mut p = MlpParams::init(&[3, 3], 0).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        p.set_layer(0, eye, vec![0.0; 3]);
        let x = [0.5, -1.5, 2.0];
        let (y, _) = p.forward(&x).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn forward_relu_gates_hidden() {
        // 1 -> 1 -> 1, all-ones weights: relu(-1) = 0 so the output is 0.
        let mut p = MlpParams::init(&[1, 1, 1], 0).unwrap();
        p.set_layer(0, vec![1.0], vec![0.0]);
        p.set_layer(1, vec![1.0], vec![0.0]);
        let (y, _) = p.forward(&[-1.0]).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = MlpParams::init(&[3, 2], 0).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_zero_grad_is_zero() {
        let p = MlpParams::init(&[3, 5, 2], 9).unwrap();
        let (_, cache) = p.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = p.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.weights.iter().all(|w| w.iter().all(|&x| x == 0.0)));
        assert!(g.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn backward_single_linear_layer_closed_form() {
        // y = Wx + b: dL/dW = g x^T, dL/db = g.
        let p = MlpParams::init(&[2, 2], 3).unwrap();
        let x = [0.7, -0.4];
        let (_, cache) = p.forward(&x).unwrap();
        let g = [2.0, -3.0];
        let grads = p.backward(&cache, &g).unwrap();
        let expect_w = [g[0] * x[0], g[0] * x[1], g[1] * x[0], g[1] * x[1]];
        for (a, e) in grads.weights[0].iter().zip(expect_w.iter()) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(grads.biases[0], g.to_vec());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Random 3-layer net, loss = sum of squared outputs.
        let params = MlpParams::init(&[4, 6, 5, 3], 11).unwrap();
        let input = [0.3, -0.8, 0.5, 1.2];
        let loss = |p: &MlpParams| -> Result<f64> {
            let (y, _) = p.forward(&input)?;
            Ok(0.5 * y.iter().map(|v| v * v).sum::<f64>())
        };
        let (y, cache) = params.forward(&input).unwrap();
        let analytic = params.backward(&cache, &y).unwrap();
        let max_rel = grad_check(loss, &params, &analytic, 1e-5).unwrap();
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let p = MlpParams::init(&[3, 4, 2], 1).unwrap();
        let other = MlpParams::init(&[3, 5, 2], 1).unwrap();
        let (_, cache) = other.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(p.backward(&cache, &[1.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn adam_zero_grad_is_fixed_point() {
        let mut p = MlpParams::init(&[3, 4, 2], 5).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        let zeros = GradBundle::zeros_like(&p);
        adam.step(&mut p, &zeros, 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut p = MlpParams::init(&[2, 2], 5).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        let mut g = GradBundle::zeros_like(&p);
        g.weights[0] = vec![0.3, -0.7, 0.01, -2.0];
        let lr = 1e-3;
        adam.step(&mut p, &g, lr).unwrap();
        for i in 0..4 {
            let delta = p.weights[0][i] - before.weights[0][i];
            let expect = -lr * g.weights[0][i].signum();
            assert!((delta - expect).abs() < 1e-6, "delta {delta} expect {expect}");
        }
    }

    #[test]
    fn adam_refuses_non_finite() {
        let mut p = MlpParams::init(&[2, 2], 5).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        let mut g = GradBundle::zeros_like(&p);
        g.weights[0][1] = f64::NAN;
        assert!(matches!(adam.step(&mut p, &g, 1e-3), Err(Error::Numeric(_))));
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn adam_identical_sequences_identical_params() {
        let run = || {
            let mut p = MlpParams::init(&[3, 4, 2], 8).unwrap();
            let mut adam = AdamState::new(&p);
            for step in 0..10 {
                let mut g = GradBundle::zeros_like(&p);
                for (i, w) in g.weights[0].iter_mut().enumerate() {
                    *w = ((step * 7 + i) as f64 * 0.1).sin();
                }
                adam.step(&mut p, &g, 1e-3).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn grad_check_quadratic_loss() {
        // loss = 0.5 * ||theta||^2, analytic gradient = theta.
        let params = MlpParams::init(&[3, 4, 2], 2).unwrap();
        let loss = |p: &MlpParams| -> Result<f64> {
            Ok(0.5
                * p.weights
                    .iter()
                    .chain(p.biases.iter())
                    .map(|v| v.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>())
        };
        let analytic = GradBundle {
            weights: params.weights.clone(),
            biases: params.biases.clone(),
        };
        let max_rel = grad_check(loss, &params, &analytic, 1e-5).unwrap();
        assert!(max_rel < 1e-7, "max relative error {max_rel}");
    }

    #[test]
    fn flat_roundtrip() {
        let p = MlpParams::init(&[4, 5, 5, 3], 7).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), 1 + 4 + 73);
        let q = MlpParams::from_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(MlpParams::from_flat(&flat[..10]).is_err());
    }
}
