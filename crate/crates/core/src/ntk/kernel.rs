//! Output Jacobians of the sine network and its empirical tangent kernel.
//!
//! Rows are ordered `(pixel, channel)`, i.e. row `3 i + c`; columns follow
//! [`SirenWeights::to_flat`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::siren::{ForwardTrace, SirenWeights, OUT_DIM};

const F64_BYTES: usize = std::mem::size_of::<f64>();

pub(crate) fn check_budget(values: usize, budget: usize) -> Result<()> {
    let needed = values.saturating_mul(F64_BYTES);
    if needed > budget {
        return Err(Error::Budget { needed, budget });
    }
    Ok(())
}

/// Per-channel backpropagated sensitivities: `deltas[c][l]` is the `N x rows_l`
/// derivative of output channel `c` with respect to the pre-activation of
/// hidden layer `l`.
struct Sensitivities {
    trace: ForwardTrace,
    deltas: Vec<Vec<Vec<f64>>>,
}

fn sensitivities(weights: &SirenWeights, omega0: f64, coords: &[f64]) -> Result<Sensitivities> {
    let depth = weights.depth();
    if depth < 2 {
        return Err(Error::Dimension("network needs at least one hidden layer".into()));
    }
    let mut trace = ForwardTrace::default();
    trace.run(weights, omega0, coords)?;
    let n = trace.n;
    let out = &weights.layers[depth - 1];
    let mut deltas = Vec::with_capacity(OUT_DIM);
    for c in 0..OUT_DIM {
        let mut per_layer = vec![Vec::new(); depth - 1];
        let top = depth - 2;
        let w_row = &out.weight[c * out.cols..(c + 1) * out.cols];
        per_layer[top] = trace.cos[top]
            .chunks_exact(out.cols)
            .flat_map(|cos| cos.iter().zip(w_row).map(|(a, b)| a * b))
            .collect();
        for l in (1..=top).rev() {
            let layer = &weights.layers[l];
            let mut d = vec![0.0; n * layer.cols];
            gemm(n, layer.rows, layer.cols, 1.0, &per_layer[l], false, &layer.weight, false, 0.0, &mut d);
            for (v, cos) in d.iter_mut().zip(&trace.cos[l - 1]) {
                *v *= cos;
            }
            per_layer[l - 1] = d;
        }
        deltas.push(per_layer);
    }
    Ok(Sensitivities { trace, deltas })
}

/// Exact Jacobian of all `3N` outputs with respect to all parameters.
pub fn jacobian(weights: &SirenWeights, omega0: f64, coords: &[f64], budget: usize) -> Result<DMatrix<f64>> {
    let n = coords.len() / 2;
    let p = weights.param_count();
    check_budget(n * OUT_DIM * p, budget)?;
    let s = sensitivities(weights, omega0, coords)?;
    let depth = weights.depth();
    let mut j = DMatrix::zeros(n * OUT_DIM, p);
    let mut offset = 0;
    for (l, layer) in weights.layers.iter().enumerate() {
        let input = &s.trace.acts[l];
        let bias_at = offset + layer.rows * layer.cols;
        for i in 0..n {
            let x = &input[i * layer.cols..(i + 1) * layer.cols];
            for c in 0..OUT_DIM {
                let row = i * OUT_DIM + c;
                if l + 1 == depth {
                    for (k, &xv) in x.iter().enumerate() {
                        j[(row, offset + c * layer.cols + k)] = xv;
                    }
                    j[(row, bias_at + c)] = 1.0;
                    continue;
                }
                let d = &s.deltas[c][l][i * layer.rows..(i + 1) * layer.rows];
                for (r, &dv) in d.iter().enumerate() {
                    for (k, &xv) in x.iter().enumerate() {
                        j[(row, offset + r * layer.cols + k)] = dv * xv;
                    }
                    j[(row, bias_at + r)] = dv;
                }
            }
        }
        offset = bias_at + layer.rows;
    }
    Ok(j)
}

/// `Θ = J Jᵀ`.
pub fn empirical_ntk(j: &DMatrix<f64>) -> DMatrix<f64> {
    j * j.transpose()
}

/// `N x N` Gram matrix `A Aᵀ + 1` of row-major `n x k` activations.
fn gram_plus_one(a: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut g = vec![1.0; n * n];
    gemm(n, k, n, 1.0, a, false, a, true, 1.0, &mut g);
    g
}

/// The empirical kernel built layer by layer without materializing `J`.
///
/// Each layer contributes `(δ_i · δ_j)(h_i · h_j + 1)` per output pair, which
/// costs `O(N² width)` per layer instead of `O(N² P)`.
pub fn siren_ntk(weights: &SirenWeights, omega0: f64, coords: &[f64], budget: usize) -> Result<DMatrix<f64>> {
    let n = coords.len() / 2;
    let m = n * OUT_DIM;
    check_budget(m * m + 2 * n * n, budget)?;
    let s = sensitivities(weights, omega0, coords)?;
    let depth = weights.depth();
    let mut theta = DMatrix::zeros(m, m);

    let last = &weights.layers[depth - 1];
    let a = gram_plus_one(&s.trace.acts[depth - 1], n, last.cols);
    for i in 0..n {
        for jx in 0..n {
            let v = a[i * n + jx];
            for c in 0..OUT_DIM {
                theta[(i * OUT_DIM + c, jx * OUT_DIM + c)] = v;
            }
        }
    }

    let mut b = vec![0.0; n * n];
    for l in 0..depth - 1 {
        let layer = &weights.layers[l];
        let a = gram_plus_one(&s.trace.acts[l], n, layer.cols);
        for c in 0..OUT_DIM {
            for c2 in c..OUT_DIM {
                let (dc, dc2) = (&s.deltas[c][l], &s.deltas[c2][l]);
                gemm(n, layer.rows, n, 1.0, dc, false, dc2, true, 0.0, &mut b);
                for i in 0..n {
                    for jx in 0..n {
                        let v = b[i * n + jx] * a[i * n + jx];
                        theta[(i * OUT_DIM + c, jx * OUT_DIM + c2)] += v;
                        if c2 != c {
                            theta[(jx * OUT_DIM + c2, i * OUT_DIM + c)] += v;
                        }
                    }
                }
            }
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::coord_grid;
    use crate::siren::{forward, init_siren, SirenConfig};

    const BIG: usize = 1 << 30;

    fn net(width: usize, depth: usize, seed: u64) -> SirenWeights {
        init_siren(&SirenConfig::new(width, depth, 0.1, 8, seed))
    }

    #[test]
    fn rows_match_finite_differences() {
        let w = net(4, 3, 7);
        let coords = coord_grid(3);
        let omega0 = 3.0;
        let j = jacobian(&w, omega0, &coords, BIG).unwrap();
        let flat = w.to_flat();
        let mut probe = w.clone();
        let h = 1e-6;
        for p in 0..flat.len() {
            let mut f = flat.clone();
            f[p] += h;
            probe.set_flat(&f);
            let up = forward(&probe, omega0, &coords).unwrap();
            f[p] -= 2.0 * h;
            probe.set_flat(&f);
            let down = forward(&probe, omega0, &coords).unwrap();
            for r in 0..up.len() {
                let fd = (up[r] - down[r]) / (2.0 * h);
                let err = (fd - j[(r, p)]).abs() / fd.abs().max(j[(r, p)].abs()).max(1e-3);
                assert!(err < 1e-4, "row {r} param {p}: {} vs {fd}", j[(r, p)]);
            }
        }
    }

    #[test]
    fn zero_output_layer_rows_are_last_hidden_activations() {
        let mut w = net(5, 3, 1);
        let depth = w.depth();
        w.layers[depth - 1].weight.fill(0.0);
        let coords = coord_grid(2);
        let j = jacobian(&w, 2.0, &coords, BIG).unwrap();
        let mut trace = ForwardTrace::default();
        trace.run(&w, 2.0, &coords).unwrap();
        let out_start = w.param_count() - (3 * 5 + 3);
        for i in 0..4 {
            let h = &trace.acts[depth - 1][i * 5..(i + 1) * 5];
            for c in 0..3 {
                let row = j.row(i * 3 + c);
                for p in 0..out_start {
                    assert_eq!(row[p], 0.0);
                }
                for k in 0..5 {
                    assert_eq!(row[out_start + c * 5 + k], h[k]);
                }
            }
        }
    }

    #[test]
    fn duplicate_coordinates_duplicate_rows() {
        let w = net(4, 4, 2);
        let coords = [0.3, -0.2, 0.3, -0.2];
        let j = jacobian(&w, 5.0, &coords, BIG).unwrap();
        for c in 0..3 {
            assert_eq!(j.row(c), j.row(3 + c));
        }
    }

    #[test]
    fn structured_kernel_equals_j_jt() {
        let w = net(6, 4, 3);
        let coords = coord_grid(4);
        let j = jacobian(&w, 4.0, &coords, BIG).unwrap();
        let dense = empirical_ntk(&j);
        let fast = siren_ntk(&w, 4.0, &coords, BIG).unwrap();
        let scale = dense.amax();
        assert!((&dense - &fast).amax() <= 1e-12 * scale);
        assert!((&fast - fast.transpose()).amax() <= 1e-10);
        assert!((fast.trace() - j.norm_squared()).abs() <= 1e-9 * j.norm_squared());
    }

    #[test]
    fn identity_jacobian_gives_identity_kernel() {
        let j = DMatrix::<f64>::identity(4, 4);
        assert_eq!(empirical_ntk(&j), j);
    }

    #[test]
    fn budget_is_enforced() {
        let w = net(4, 3, 0);
        let coords = coord_grid(4);
        assert!(matches!(jacobian(&w, 1.0, &coords, 100), Err(Error::Budget { .. })));
        assert!(matches!(siren_ntk(&w, 1.0, &coords, 100), Err(Error::Budget { .. })));
    }
}
