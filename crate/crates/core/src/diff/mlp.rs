//! Three-layer perceptron (two tanh hidden layers, linear output) stored
//! inside a [`ParamVector`], plus the linear predictor the decoder emits.
//!
//! Weight matrices are row-major `[rows, cols]` acting as `W x + b`.
//! Backward passes accumulate into a gradient vector (callers zero it per
//! batch) and return the gradient with respect to the input so networks
//! can be chained.

use super::params::ParamVector;
use super::rng::Rng;

/// Layer widths `[input, hidden1, hidden2, output]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub dims: [usize; 4],
}

impl MlpSpec {
    pub fn new(dims: [usize; 4]) -> Self {
        assert!(dims.iter().all(|d| *d > 0), "MlpSpec dims must be positive");
        MlpSpec { dims }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[3]
    }

    pub fn param_count(&self) -> usize {
        self.segments("m").iter().map(|(_, d)| d.iter().product::<usize>()).sum()
    }

    /// Segment layout under `prefix`: w1,b1,w2,b2,w3,b3.
    pub fn segments(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let [n0, n1, n2, n3] = self.dims;
        vec![
            (format!("{prefix}.w1"), vec![n1, n0]),
            (format!("{prefix}.b1"), vec![n1]),
            (format!("{prefix}.w2"), vec![n2, n1]),
            (format!("{prefix}.b2"), vec![n2]),
            (format!("{prefix}.w3"), vec![n3, n2]),
            (format!("{prefix}.b3"), vec![n3]),
        ]
    }

    /// Glorot-uniform weights (`limit = sqrt(6/(fan_in+fan_out))`), zero
    /// biases. Draw order is fixed: w1, w2, w3, each row-major; biases
    /// consume no draws.
    pub fn init(&self, params: &mut ParamVector, prefix: &str, rng: &mut Rng) {
        let [n0, n1, n2, n3] = self.dims;
        for (w, fan_in, fan_out) in [("w1", n0, n1), ("w2", n1, n2), ("w3", n2, n3)] {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in params.get_mut(&format!("{prefix}.{w}")) {
                *v = rng.range(-limit, limit);
            }
        }
    }

    /// Forward pass returning the output layer.
    pub fn forward(&self, params: &ParamVector, prefix: &str, x: &[f64]) -> Vec<f64> {
        let (out, _, _) = self.forward_cached(params, prefix, x);
        out
    }

    /// Forward pass up to the second hidden layer (used when the network
    /// acts as a representation extractor; w3/b3 stay untouched).
    pub fn forward_hidden(&self, params: &ParamVector, prefix: &str, x: &[f64]) -> Vec<f64> {
        let h1 = affine_tanh(params.get(&format!("{prefix}.w1")), params.get(&format!("{prefix}.b1")), x);
        affine_tanh(params.get(&format!("{prefix}.w2")), params.get(&format!("{prefix}.b2")), &h1)
    }

    fn forward_cached(
        &self,
        params: &ParamVector,
        prefix: &str,
        x: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        assert_eq!(x.len(), self.dims[0], "MlpSpec::forward input width");
        let h1 = affine_tanh(params.get(&format!("{prefix}.w1")), params.get(&format!("{prefix}.b1")), x);
        let h2 = affine_tanh(params.get(&format!("{prefix}.w2")), params.get(&format!("{prefix}.b2")), &h1);
        let out = affine(params.get(&format!("{prefix}.w3")), params.get(&format!("{prefix}.b3")), &h2);
        (out, h1, h2)
    }

    /// Backward pass for upstream gradient `dL/dout`. Accumulates
    /// parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(
        &self,
        params: &ParamVector,
        prefix: &str,
        x: &[f64],
        upstream: &[f64],
        grad: &mut ParamVector,
    ) -> Vec<f64> {
        assert_eq!(upstream.len(), self.dims[3], "MlpSpec::backward upstream width");
        let (_, h1, h2) = self.forward_cached(params, prefix, x);
        // Output layer is linear: delta3 = upstream.
        let d_h2 = backprop_layer(
            params.get(&format!("{prefix}.w3")),
            &h2,
            upstream,
            grad.get_mut(&format!("{prefix}.w3")),
        );
        accumulate(grad.get_mut(&format!("{prefix}.b3")), upstream);
        // tanh'(a) = 1 - h^2 with h the activated value.
        let delta2: Vec<f64> = d_h2.iter().zip(&h2).map(|(d, h)| d * (1.0 - h * h)).collect();
        let d_h1 = backprop_layer(
            params.get(&format!("{prefix}.w2")),
            &h1,
            &delta2,
            grad.get_mut(&format!("{prefix}.w2")),
        );
        accumulate(grad.get_mut(&format!("{prefix}.b2")), &delta2);
        let delta1: Vec<f64> = d_h1.iter().zip(&h1).map(|(d, h)| d * (1.0 - h * h)).collect();
        let d_x = backprop_layer(
            params.get(&format!("{prefix}.w1")),
            x,
            &delta1,
            grad.get_mut(&format!("{prefix}.w1")),
        );
        accumulate(grad.get_mut(&format!("{prefix}.b1")), &delta1);
        d_x
    }

    /// Backward pass when the forward stopped at the second hidden layer.
    /// `upstream` is `dL/dh2`; w3/b3 receive no gradient.
    pub fn backward_hidden(
        &self,
        params: &ParamVector,
        prefix: &str,
        x: &[f64],
        upstream: &[f64],
        grad: &mut ParamVector,
    ) -> Vec<f64> {
        assert_eq!(upstream.len(), self.dims[2], "MlpSpec::backward_hidden upstream width");
        let h1 = affine_tanh(params.get(&format!("{prefix}.w1")), params.get(&format!("{prefix}.b1")), x);
        let h2 = affine_tanh(params.get(&format!("{prefix}.w2")), params.get(&format!("{prefix}.b2")), &h1);
        let delta2: Vec<f64> = upstream.iter().zip(&h2).map(|(d, h)| d * (1.0 - h * h)).collect();
        let d_h1 = backprop_layer(
            params.get(&format!("{prefix}.w2")),
            &h1,
            &delta2,
            grad.get_mut(&format!("{prefix}.w2")),
        );
        accumulate(grad.get_mut(&format!("{prefix}.b2")), &delta2);
        let delta1: Vec<f64> = d_h1.iter().zip(&h1).map(|(d, h)| d * (1.0 - h * h)).collect();
        let d_x = backprop_layer(
            params.get(&format!("{prefix}.w1")),
            x,
            &delta1,
            grad.get_mut(&format!("{prefix}.w1")),
        );
        accumulate(grad.get_mut(&format!("{prefix}.b1")), &delta1);
        d_x
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let rows = b.len();
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            b[r] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
        })
        .collect()
}

fn affine_tanh(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    affine(w, b, x).into_iter().map(f64::tanh).collect()
}

/// Accumulates `delta ⊗ input` into `grad_w` and returns `Wᵀ delta`.
fn backprop_layer(w: &[f64], input: &[f64], delta: &[f64], grad_w: &mut [f64]) -> Vec<f64> {
    let rows = delta.len();
    let cols = input.len();
    debug_assert_eq!(w.len(), rows * cols);
    let mut d_input = vec![0.0; cols];
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let g_row = &mut grad_w[r * cols..(r + 1) * cols];
        let d = delta[r];
        for c in 0..cols {
            g_row[c] += d * input[c];
            d_input[c] += d * row[c];
        }
    }
    d_input
}

fn accumulate(acc: &mut [f64], add: &[f64]) {
    for (a, b) in acc.iter_mut().zip(add) {
        *a += b;
    }
}

/// Applies the linear predictor `theta = [w..., b]` to `x`.
pub fn linear_predict(theta: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(theta.len(), x.len() + 1, "theta holds weights plus bias");
    let (w, b) = theta.split_at(x.len());
    w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b[0]
}

/// Accumulates `upstream * d(prediction)/d(theta)` into `grad_theta`.
pub fn linear_grad_theta(x: &[f64], upstream: f64, grad_theta: &mut [f64]) {
    debug_assert_eq!(grad_theta.len(), x.len() + 1);
    for (g, xi) in grad_theta.iter_mut().zip(x) {
        *g += upstream * xi;
    }
    grad_theta[x.len()] += upstream;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(spec: MlpSpec, seed: u64) -> ParamVector {
        let segs = spec.segments("m");
        let spec_refs: Vec<(&str, Vec<usize>)> =
            segs.iter().map(|(n, d)| (n.as_str(), d.clone())).collect();
        let mut params = ParamVector::zeros(&spec_refs);
        spec.init(&mut params, "m", &mut Rng::new(seed));
        params
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = MlpSpec::new([4, 8, 8, 2]);
        assert_eq!(spec.param_count(), 130);
        let params = build(spec, 1);
        assert_eq!(params.len(), 130);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let spec = MlpSpec::new([3, 5, 4, 2]);
        let params = build(spec, 9);
        let x = [0.3, -1.2, 0.7];
        let got = spec.forward(&params, "m", &x);

        let mut h1 = vec![0.0; 5];
        for r in 0..5 {
            let mut acc = params.get("m.b1")[r];
            for c in 0..3 {
                acc += params.get("m.w1")[r * 3 + c] * x[c];
            }
            h1[r] = acc.tanh();
        }
        let mut h2 = vec![0.0; 4];
        for r in 0..4 {
            let mut acc = params.get("m.b2")[r];
            for c in 0..5 {
                acc += params.get("m.w2")[r * 5 + c] * h1[c];
            }
            h2[r] = acc.tanh();
        }
        for r in 0..2 {
            let mut acc = params.get("m.b3")[r];
            for c in 0..4 {
                acc += params.get("m.w3")[r * 4 + c] * h2[c];
            }
            assert!((got[r] - acc).abs() < 1e-12);
        }
    }

    // Scalar objective with a nontrivial upstream: L = sum_i c_i*out_i + 0.5*out_i^2.
    fn loss(spec: &MlpSpec, params: &ParamVector, x: &[f64], c: &[f64]) -> f64 {
        spec.forward(params, "m", x)
            .iter()
            .zip(c)
            .map(|(o, ci)| ci * o + 0.5 * o * o)
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = MlpSpec::new([3, 6, 5, 2]);
        let params = build(spec, 4);
        let x = [0.4, -0.9, 1.3];
        let c = [0.7, -1.1];

        let out = spec.forward(&params, "m", &x);
        let upstream: Vec<f64> = out.iter().zip(&c).map(|(o, ci)| ci + o).collect();
        let mut grad = params.zeros_like();
        let d_x = spec.backward(&params, "m", &x, &upstream, &mut grad);

        let h = 1e-5;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let fd = (loss(&spec, &plus, &x, &c) - loss(&spec, &minus, &x, &c)) / (2.0 * h);
            let an = grad.values()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i} ({}) rel {rel}", params.segment_of(i));
        }
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let fd = (loss(&spec, &params, &xp, &c) - loss(&spec, &params, &xm, &c)) / (2.0 * h);
            let rel = (fd - d_x[i]).abs() / (fd.abs() + d_x[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "input {i} rel {rel}");
        }
    }

    #[test]
    fn hidden_backward_matches_finite_differences() {
        let spec = MlpSpec::new([4, 5, 3, 2]);
        let params = build(spec, 12);
        let x = [0.2, -0.4, 0.9, -1.5];
        let c = [0.3, -0.8, 1.2];

        let hidden_loss = |p: &ParamVector, x: &[f64]| -> f64 {
            spec.forward_hidden(p, "m", x).iter().zip(&c).map(|(h, ci)| ci * h).sum()
        };
        let mut grad = params.zeros_like();
        let d_x = spec.backward_hidden(&params, "m", &x, &c, &mut grad);

        let h = 1e-5;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let fd = (hidden_loss(&plus, &x) - hidden_loss(&minus, &x)) / (2.0 * h);
            let an = grad.values()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i} ({}) rel {rel}", params.segment_of(i));
        }
        assert!(grad.get("m.w3").iter().all(|g| *g == 0.0));
        assert!(grad.get("m.b3").iter().all(|g| *g == 0.0));
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let fd = (hidden_loss(&params, &xp) - hidden_loss(&params, &xm)) / (2.0 * h);
            let rel = (fd - d_x[i]).abs() / (fd.abs() + d_x[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "input {i} rel {rel}");
        }
    }

    #[test]
    fn linear_predictor_and_grad() {
        let theta = [2.0, -1.0, 0.5, 3.0]; // w = [2,-1,0.5], b = 3
        let x = [1.0, 2.0, 4.0];
        assert!((linear_predict(&theta, &x) - 5.0).abs() < 1e-15);
        let mut grad = vec![0.0; 4];
        linear_grad_theta(&x, 2.0, &mut grad);
        assert_eq!(grad, vec![2.0, 4.0, 8.0, 2.0]);
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let spec = MlpSpec::new([4, 8, 8, 2]);
        let a = build(spec, 5);
        let b = build(spec, 5);
        assert_eq!(a.values(), b.values());
        let limit = (6.0 / 12.0f64).sqrt();
        assert!(a.get("m.w1").iter().all(|v| v.abs() <= limit));
        assert!(a.get("m.b1").iter().all(|v| *v == 0.0));
        assert!(a.get("m.b3").iter().all(|v| *v == 0.0));
    }
}
