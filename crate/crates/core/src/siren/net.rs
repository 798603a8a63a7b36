//! Batched forward pass and exact backpropagation for the sine network.
//!
//! `h_0 = omega0 * x`, `h_l = sin(W_l h_{l-1} + b_l)` for hidden layers, and a
//! linear output layer. Coordinates and outputs are row-major `N x 2` and
//! `N x 3` buffers.

use crate::error::{Error, Result};
use crate::linalg::gemm;

use super::weights::{SirenWeights, IN_DIM, OUT_DIM};

/// Activations kept from a forward pass, enough to backpropagate.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub n: usize,
    /// `acts[0]` is the scaled input; `acts[l]` is hidden activation `h_l`.
    pub acts: Vec<Vec<f64>>,
    /// `cos[l]` is the cosine of the pre-activation of hidden layer `l + 1`.
    pub cos: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

fn check_coords(coords: &[f64]) -> Result<usize> {
    if coords.len() % IN_DIM != 0 {
        return Err(Error::Dimension(format!(
            "coordinate buffer length {} is not a multiple of {IN_DIM}",
            coords.len()
        )));
    }
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::Argument("coordinates must be finite".into()));
    }
    Ok(coords.len() / IN_DIM)
}

fn check_weights(weights: &SirenWeights) -> Result<()> {
    weights.validate().map_err(|e| match e {
        Error::Numeric { .. } => e,
        other => Error::Dimension(other.to_string()),
    })
}

/// `out[N x rows] = input[N x cols] * W^T + b`.
fn affine(input: &[f64], n: usize, layer: &super::weights::Layer, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(n * layer.rows);
    for _ in 0..n {
        out.extend_from_slice(&layer.bias);
    }
    gemm(n, layer.cols, layer.rows, 1.0, input, false, &layer.weight, true, 1.0, out);
}

impl ForwardTrace {
    pub fn run(&mut self, weights: &SirenWeights, omega0: f64, coords: &[f64]) -> Result<()> {
        check_weights(weights)?;
        let n = check_coords(coords)?;
        let depth = weights.depth();
        self.n = n;
        self.acts.resize_with(depth, Vec::new);
        self.cos.resize_with(depth - 1, Vec::new);

        let input = &mut self.acts[0];
        input.clear();
        input.extend(coords.iter().map(|c| omega0 * c));

        for l in 0..depth - 1 {
            let (done, rest) = self.acts.split_at_mut(l + 1);
            let next = &mut rest[0];
            affine(&done[l], n, &weights.layers[l], next);
            let cos = &mut self.cos[l];
            cos.resize(next.len(), 0.0);
            crate::trig::sin_cos_in_place(next, cos);
        }
        affine(&self.acts[depth - 1], n, &weights.layers[depth - 1], &mut self.output);
        Ok(())
    }

    /// Index of the first layer whose outputs contain a non-finite value.
    fn first_non_finite_layer(&self) -> Option<usize> {
        let depth = self.acts.len();
        (1..depth)
            .find(|&l| self.acts[l].iter().any(|v| !v.is_finite()))
            .map(|l| l - 1)
            .or_else(|| {
                self.output
                    .iter()
                    .any(|v| !v.is_finite())
                    .then_some(depth - 1)
            })
    }
}

/// Evaluates the network at every coordinate.
pub fn forward(weights: &SirenWeights, omega0: f64, coords: &[f64]) -> Result<Vec<f64>> {
    let mut trace = ForwardTrace::default();
    trace.run(weights, omega0, coords)?;
    Ok(trace.output)
}

/// Reusable buffers for repeated loss/gradient evaluations.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    pub trace: ForwardTrace,
    d_out: Vec<f64>,
    d_h: Vec<f64>,
    d_z: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mean squared error over all `N x 3` entries.
    pub fn loss(&mut self, weights: &SirenWeights, omega0: f64, coords: &[f64], targets: &[f64]) -> Result<f64> {
        self.trace.run(weights, omega0, coords)?;
        let mse = mse(&self.trace.output, targets)?;
        if !mse.is_finite() {
            let layer = self.trace.first_non_finite_layer().unwrap_or(weights.depth() - 1);
            return Err(Error::Numeric { layer });
        }
        Ok(mse)
    }

    /// Computes the MSE and writes its exact gradient into `grads`.
    pub fn loss_and_grad_into(
        &mut self,
        weights: &SirenWeights,
        omega0: f64,
        coords: &[f64],
        targets: &[f64],
        grads: &mut SirenWeights,
    ) -> Result<f64> {
        let loss = self.loss(weights, omega0, coords, targets)?;
        if !grads.same_shape(weights) {
            *grads = weights.zeros_like();
        }
        let n = self.trace.n;
        let depth = weights.depth();
        let scale = 2.0 / (n * OUT_DIM) as f64;

        self.d_out.clear();
        self.d_out
            .extend(self.trace.output.iter().zip(targets).map(|(y, t)| scale * (y - t)));

        // Output layer.
        let last = &weights.layers[depth - 1];
        backprop_layer(
            &self.d_out,
            &self.trace.acts[depth - 1],
            n,
            last,
            &mut grads.layers[depth - 1],
        );
        self.d_h.resize(n * last.cols, 0.0);
        gemm(n, last.rows, last.cols, 1.0, &self.d_out, false, &last.weight, false, 0.0, &mut self.d_h);

        for l in (0..depth - 1).rev() {
            let layer = &weights.layers[l];
            self.d_z.clear();
            self.d_z
                .extend(self.d_h.iter().zip(&self.trace.cos[l]).map(|(d, c)| d * c));
            backprop_layer(&self.d_z, &self.trace.acts[l], n, layer, &mut grads.layers[l]);
            if l > 0 {
                self.d_h.resize(n * layer.cols, 0.0);
                gemm(n, layer.rows, layer.cols, 1.0, &self.d_z, false, &layer.weight, false, 0.0, &mut self.d_h);
            }
        }

        for (i, g) in grads.layers.iter().enumerate() {
            if g.weight.iter().chain(&g.bias).any(|v| !v.is_finite()) {
                return Err(Error::Numeric { layer: i });
            }
        }
        Ok(loss)
    }
}

/// Weight gradient `delta^T * input` and bias gradient `sum(delta)`.
fn backprop_layer(
    delta: &[f64],
    input: &[f64],
    n: usize,
    layer: &super::weights::Layer,
    grad: &mut super::weights::Layer,
) {
    gemm(layer.rows, n, layer.cols, 1.0, delta, true, input, false, 0.0, &mut grad.weight);
    grad.bias.fill(0.0);
    for row in delta.chunks_exact(layer.rows) {
        for (b, d) in grad.bias.iter_mut().zip(row) {
            *b += d;
        }
    }
}

pub fn mse(output: &[f64], targets: &[f64]) -> Result<f64> {
    if output.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} outputs vs {} targets",
            output.len(),
            targets.len()
        )));
    }
    if output.is_empty() {
        return Err(Error::Argument("no pixels".into()));
    }
    let sum: f64 = output.iter().zip(targets).map(|(y, t)| (y - t) * (y - t)).sum();
    Ok(sum / output.len() as f64)
}

/// Loss and gradient with freshly allocated buffers.
pub fn loss_and_grad(
    weights: &SirenWeights,
    omega0: f64,
    coords: &[f64],
    targets: &[f64],
) -> Result<(f64, SirenWeights)> {
    if targets.len() != coords.len() / IN_DIM * OUT_DIM {
        return Err(Error::Dimension(format!(
            "{} targets for {} coordinates",
            targets.len() / OUT_DIM,
            coords.len() / IN_DIM
        )));
    }
    let mut ws = Workspace::new();
    let mut grads = weights.zeros_like();
    let loss = ws.loss_and_grad_into(weights, omega0, coords, targets, &mut grads)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siren::config::SirenConfig;
    use crate::siren::weights::{init_siren, Layer};

    /// Direct scalar evaluation of the network at one coordinate.
    pub(crate) fn scalar_eval(w: &SirenWeights, omega0: f64, x: [f64; 2]) -> [f64; 3] {
        let mut h: Vec<f64> = x.iter().map(|v| omega0 * v).collect();
        for (l, layer) in w.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                let mut acc = layer.bias[r];
                for c in 0..layer.cols {
                    acc += layer.w(r, c) * h[c];
                }
                next[r] = if l + 1 < w.depth() { acc.sin() } else { acc };
            }
            h = next;
        }
        [h[0], h[1], h[2]]
    }

    fn coords5() -> Vec<f64> {
        vec![-1.0, -1.0, 0.3, -0.2, 0.0, 0.0, 0.9, 0.5, -0.4, 1.0]
    }

    #[test]
    fn zero_network_outputs_zero() {
        let w = SirenWeights::zeros(4, 3);
        let y = forward(&w, 10.0, &coords5()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_network() {
        let mut w = SirenWeights::zeros(3, 2);
        w.layers[0].bias = vec![0.3, -0.7, 1.1];
        w.layers[1] = Layer {
            rows: 3,
            cols: 3,
            weight: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            bias: vec![0.1, 0.2, 0.3],
        };
        let y = forward(&w, 5.0, &coords5()).unwrap();
        let want = [0.3f64.sin() + 0.1, (-0.7f64).sin() + 0.2, 1.1f64.sin() + 0.3];
        for px in y.chunks(3) {
            for c in 0..3 {
                assert!((px[c] - want[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_scalar_evaluator() {
        let w = init_siren(&SirenConfig::new(6, 4, 0.1, 30, 11));
        let coords = coords5();
        let y = forward(&w, 3.0, &coords).unwrap();
        for (i, px) in coords.chunks(2).enumerate() {
            let want = scalar_eval(&w, 3.0, [px[0], px[1]]);
            for c in 0..3 {
                assert!((y[i * 3 + c] - want[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let w = SirenWeights::zeros(4, 3);
        assert!(matches!(forward(&w, 1.0, &[0.0, 0.0, 0.0]), Err(Error::Dimension(_))));
        let mut bad = SirenWeights::zeros(4, 3);
        bad.layers[1].cols = 5;
        assert!(matches!(forward(&bad, 1.0, &[0.0, 0.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let w = init_siren(&SirenConfig::new(5, 3, 0.1, 30, 2));
        let coords = coords5();
        let targets = forward(&w, 2.0, &coords).unwrap();
        let (loss, grads) = loss_and_grad(&w, 2.0, &coords, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubling_residual_quadruples_loss() {
        let w = init_siren(&SirenConfig::new(5, 3, 0.1, 30, 2));
        let coords = coords5();
        let y = forward(&w, 2.0, &coords).unwrap();
        let t1: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        let t2: Vec<f64> = y.iter().map(|v| v + 0.2).collect();
        let (l1, _) = loss_and_grad(&w, 2.0, &coords, &t1).unwrap();
        let (l2, _) = loss_and_grad(&w, 2.0, &coords, &t2).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = init_siren(&SirenConfig::new(4, 3, 0.1, 30, 5));
        let coords = coords5();
        let targets: Vec<f64> = (0..15).map(|i| ((i * 7 % 11) as f64 / 5.5) - 1.0).collect();
        let (_, grads) = loss_and_grad(&w, 2.5, &coords, &targets).unwrap();
        let flat = w.to_flat();
        let g = grads.to_flat();
        let h = 1e-4;
        let mut probe = w.clone();
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += h;
            probe.set_flat(&p);
            let up = Workspace::new().loss(&probe, 2.5, &coords, &targets).unwrap();
            p[i] -= 2.0 * h;
            probe.set_flat(&p);
            let down = Workspace::new().loss(&probe, 2.5, &coords, &targets).unwrap();
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: analytic {} fd {fd}", g[i]);
        }
    }

    #[test]
    fn overflow_reports_layer() {
        let mut w = SirenWeights::zeros(3, 3);
        w.layers[2].weight.fill(f64::MAX);
        w.layers[0].bias.fill(1.0);
        w.layers[1].bias.fill(1.0);
        let targets = vec![0.0; 15];
        let err = Workspace::new().loss(&w, 1.0, &coords5(), &targets).unwrap_err();
        assert!(matches!(err, Error::Numeric { layer: 2 }), "{err:?}");
    }
}
