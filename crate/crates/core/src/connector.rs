//! Barrier bypass and recursive path refinement.
//!
//! The max-loss interpolant B between two modes A and C is optimized into a
//! low-loss point B' while constrained to the hyperplane through B orthogonal
//! to the chord C-A. Refinement recurses on the two half-paths until every
//! sampled loss sits below delta.

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::net::{cross_entropy, cross_entropy_grad, Network};
use crate::paths::{find_barrier, interpolate, is_delta_connected, sample_loss_curve, LossCurve, Path};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub lr: f64,
    pub iters: usize,
    pub lambda_mse: f64,
    pub lambda_hf: f64,
    pub delta: f64,
    pub max_depth: usize,
    /// Elementwise clamp applied after each update; `None` disables.
    pub clamp_range: Option<(f64, f64)>,
    /// Grid size of the initial two-waypoint curve.
    pub primary_samples: usize,
    /// Grid size per segment for refined curves.
    pub refined_samples: usize,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        ConnectorConfig {
            lr: 0.005,
            iters: 1024,
            lambda_mse: 0.1,
            lambda_hf: 1e-7,
            delta: 0.001,
            max_depth: 4,
            clamp_range: Some((0.0, 1.0)),
            primary_samples: 1000,
            refined_samples: 500,
        }
    }
}

impl ConnectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::config("delta", "must be positive"));
        }
        if self.lambda_mse < 0.0 || self.lambda_hf < 0.0 {
            return Err(Error::config("lambda", "penalty weights must be nonnegative"));
        }
        if self.iters == 0 || self.max_depth == 0 {
            return Err(Error::config("iters", "iters and max_depth must be positive"));
        }
        if self.primary_samples < 2 || self.refined_samples < 2 {
            return Err(Error::config("samples", "need at least 2 samples per curve"));
        }
        if let Some((lo, hi)) = self.clamp_range {
            if !(lo < hi) {
                return Err(Error::config("clamp_range", "lo must be below hi"));
            }
        }
        Ok(())
    }
}

/// Sum over channels of squared differences between horizontally and
/// vertically adjacent pixels.
pub fn hf_penalty(x: &Tensor) -> Result<f64> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::NonImageShape {
            got: x.shape().to_vec(),
        });
    };
    let d = x.data();
    let mut acc = 0.0;
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                let v = d[base + i * w + j];
                if j + 1 < w {
                    let dh = d[base + i * w + j + 1] - v;
                    acc += dh * dh;
                }
                if i + 1 < h {
                    let dv = d[base + (i + 1) * w + j] - v;
                    acc += dv * dv;
                }
            }
        }
    }
    Ok(acc)
}

/// Gradient of `hf_penalty`.
pub(crate) fn hf_penalty_grad(x: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::NonImageShape {
            got: x.shape().to_vec(),
        });
    };
    let d = x.data();
    let mut g = Tensor::zeros(x.shape());
    let gd = g.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                let p = base + i * w + j;
                if j + 1 < w {
                    let diff = 2.0 * (d[p + 1] - d[p]);
                    gd[p + 1] += diff;
                    gd[p] -= diff;
                }
                if i + 1 < h {
                    let diff = 2.0 * (d[p + w] - d[p]);
                    gd[p + w] += diff;
                    gd[p] -= diff;
                }
            }
        }
    }
    Ok(g)
}

/// Remove the component of `v` along the unit vector `u`.
fn project_out(v: &mut Tensor, u: &Tensor) {
    let coeff = v.dot(u);
    v.add_scaled(u, -coeff);
}

/// Optimize the interpolant `b` between modes `a` and `c` within the
/// hyperplane orthogonal to the chord `c - a`.
///
/// Minimizes `cross_entropy + lambda_mse * MSE(x, b) + lambda_hf * hf(x)` by
/// Adam; the gradient is projected onto the hyperplane before each moment
/// update and the accumulated displacement `x - b` is re-projected after each
/// step (and after clamping), so the returned displacement is orthogonal to
/// the chord up to rounding. Returns the best admissible iterate: lowest
/// total objective among iterates whose cross-entropy does not exceed that
/// of `b`.
pub fn optimize_barrier_point(
    net: &Network,
    a: &Tensor,
    c: &Tensor,
    b: &Tensor,
    y: usize,
    cfg: &ConnectorConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    b.check_shape(net.input_shape())?;
    a.check_shape(net.input_shape())?;
    c.check_shape(net.input_shape())?;

    let mut chord = c.clone();
    chord.add_scaled(a, -1.0);
    let chord_norm = chord.norm_l2();
    if chord_norm == 0.0 {
        return Err(Error::DegenerateChord);
    }
    let mut unit = chord;
    unit.scale(1.0 / chord_norm);

    let use_hf = cfg.lambda_hf > 0.0;
    let n = b.len() as f64;

    // Objective value and input-space gradient at x.
    let eval = |x: &Tensor| -> Result<(f64, f64, Tensor)> {
        let cache = net.forward_cached(x)?;
        let ce = cross_entropy(&cache.logits, y);
        let seed = cross_entropy_grad(&cache.logits, y);
        let mut grad = net.backward_input(&cache, &seed);
        let mut total = ce;
        if cfg.lambda_mse > 0.0 {
            total += cfg.lambda_mse * x.mse(b);
            let mut diff = x.clone();
            diff.add_scaled(b, -1.0);
            grad.add_scaled(&diff, cfg.lambda_mse * 2.0 / n);
        }
        if use_hf {
            total += cfg.lambda_hf * hf_penalty(x)?;
            grad.add_scaled(&hf_penalty_grad(x)?, cfg.lambda_hf);
        }
        Ok((total, ce, grad))
    };

    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(b.len());
    let mut x = b.clone();

    let (mut best_total, ce_at_b, _) = eval(&x)?;
    let mut best = x.clone();

    for iter in 0..cfg.iters {
        let (total, _, mut grad) = eval(&x)?;
        if !total.is_finite() {
            return Err(Error::OptimizationDiverged { iter });
        }

        project_out(&mut grad, &unit);
        let step = adam.step(grad.data(), &adam_cfg);
        for (xi, s) in x.data_mut().iter_mut().zip(&step) {
            *xi += s;
        }

        // Adam's nonlinearity can leak an off-plane component; re-project the
        // displacement itself.
        let mut disp = x.clone();
        disp.add_scaled(b, -1.0);
        project_out(&mut disp, &unit);
        if let Some((lo, hi)) = cfg.clamp_range {
            let mut clamped = b.clone();
            clamped.add_scaled(&disp, 1.0);
            clamped.clamp_elementwise(lo, hi);
            disp = clamped;
            disp.add_scaled(b, -1.0);
            project_out(&mut disp, &unit);
        }
        x = b.clone();
        x.add_scaled(&disp, 1.0);

        let (total_now, ce_now, _) = eval(&x)?;
        if !total_now.is_finite() {
            return Err(Error::OptimizationDiverged { iter });
        }
        if ce_now <= ce_at_b && total_now < best_total {
            best_total = total_now;
            best = x.clone();
        }
    }
    Ok(best)
}

/// Recursively refine the straight path between modes `a` and `c` until the
/// sampled loss stays at or below `cfg.delta` everywhere; returns the refined
/// path with its final loss curve.
pub fn connect(
    net: &Network,
    a: &Tensor,
    c: &Tensor,
    y: usize,
    cfg: &ConnectorConfig,
) -> Result<(Path, LossCurve)> {
    cfg.validate()?;
    for endpoint in [a, c] {
        let loss = cross_entropy(&net.forward_logits(endpoint)?, y);
        if loss > cfg.delta {
            return Err(Error::EndpointNotMode {
                loss,
                delta: cfg.delta,
            });
        }
    }

    let (waypoints, ok) = refine(net, a, c, y, cfg, cfg.max_depth, true)?;
    let path = Path::new(waypoints, y)?;
    let curve = sample_loss_curve(net, &path, cfg.refined_samples)?;
    if !ok || !is_delta_connected(&curve, cfg.delta) {
        let max_loss = curve.max_loss();
        return Err(Error::NotConnected {
            depth: cfg.max_depth,
            max_loss,
            delta: cfg.delta,
            best: Box::new((path, curve)),
        });
    }
    Ok((path, curve))
}

/// Returns the refined waypoint chain for the segment `a -> c` and whether
/// every leaf reached delta-connectivity within the depth budget.
fn refine(
    net: &Network,
    a: &Tensor,
    c: &Tensor,
    y: usize,
    cfg: &ConnectorConfig,
    depth: usize,
    primary: bool,
) -> Result<(Vec<Tensor>, bool)> {
    let n = if primary {
        cfg.primary_samples
    } else {
        cfg.refined_samples
    };
    let pair = Path::new(vec![a.clone(), c.clone()], y)?;
    let curve = sample_loss_curve(net, &pair, n)?;
    if is_delta_connected(&curve, cfg.delta) {
        return Ok((vec![a.clone(), c.clone()], true));
    }
    if depth == 0 {
        return Ok((vec![a.clone(), c.clone()], false));
    }

    let barrier = find_barrier(&curve);
    let b = interpolate(c, a, barrier.argmax_alpha)?;
    let b_prime = optimize_barrier_point(net, a, c, &b, y, cfg)?;

    let (left_res, right_res) = rayon::join(
        || refine(net, a, &b_prime, y, cfg, depth - 1, false),
        || refine(net, &b_prime, c, y, cfg, depth - 1, false),
    );
    let (left, left_ok) = left_res?;
    let (right, right_ok) = right_res?;

    let mut waypoints = left;
    for w in right.into_iter() {
        if waypoints.last() != Some(&w) {
            waypoints.push(w);
        }
    }
    Ok((waypoints, left_ok && right_ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledDataset;
    use crate::net::{LayerParams, LayerSpec};
    use crate::rng::rng_from_seed;
    use crate::train::{train, TrainConfig};
    use rand::Rng;

    #[test]
    fn hf_penalty_basics() {
        let flat = Tensor::new(vec![2, 3, 3], vec![0.7; 18]).unwrap();
        assert_eq!(hf_penalty(&flat).unwrap(), 0.0);

        let pair = Tensor::new(vec![1, 1, 2], vec![0.25, 0.75]).unwrap();
        assert!((hf_penalty(&pair).unwrap() - 0.25).abs() < 1e-15);

        let vec_shape = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            hf_penalty(&vec_shape),
            Err(Error::NonImageShape { .. })
        ));
    }

    #[test]
    fn hf_penalty_matches_naive_double_loop() {
        let mut rng = rng_from_seed(10);
        let (c, h, w) = (2, 5, 4);
        let x = Tensor::new(
            vec![c, h, w],
            (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut expected = 0.0;
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w.saturating_sub(1) {
                    let a = x.data()[ch * h * w + i * w + j];
                    let b = x.data()[ch * h * w + i * w + j + 1];
                    expected += (b - a) * (b - a);
                }
            }
            for i in 0..h.saturating_sub(1) {
                for j in 0..w {
                    let a = x.data()[ch * h * w + i * w + j];
                    let b = x.data()[ch * h * w + (i + 1) * w + j];
                    expected += (b - a) * (b - a);
                }
            }
        }
        assert!((hf_penalty(&x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn hf_grad_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let x = Tensor::new(
            vec![1, 4, 4],
            (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let g = hf_penalty_grad(&x).unwrap();
        let h = 1e-6;
        for coord in 0..16 {
            let mut plus = x.clone();
            plus.data_mut()[coord] += h;
            let mut minus = x.clone();
            minus.data_mut()[coord] -= h;
            let fd = (hf_penalty(&plus).unwrap() - hf_penalty(&minus).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[coord]).abs() < 1e-6);
        }
    }

    /// Symmetric net whose gradient vanishes identically: uniform weight
    /// rows and zero bias give uniform logits for every input.
    fn symmetric_net(n: usize) -> Network {
        let mut net = Network::new(
            vec![n],
            vec![LayerSpec::Dense { in_dim: n, out_dim: n }],
            n,
            0,
        )
        .unwrap();
        let w = Tensor::new(vec![n, n], vec![0.5; n * n]).unwrap();
        net.set_params(vec![Some(LayerParams {
            weight: w,
            bias: Tensor::zeros(&[n]),
        })])
        .unwrap();
        net
    }

    #[test]
    fn zero_gradient_point_is_a_fixed_point() {
        let net = symmetric_net(3);
        let a = Tensor::from_vec(vec![0.1, 0.2, 0.3]);
        let c = Tensor::from_vec(vec![0.9, 0.8, 0.7]);
        let b = interpolate(&c, &a, 0.5).unwrap();
        let cfg = ConnectorConfig {
            lambda_mse: 0.0,
            lambda_hf: 0.0,
            iters: 16,
            clamp_range: None,
            ..Default::default()
        };
        let b_prime = optimize_barrier_point(&net, &a, &c, &b, 1, &cfg).unwrap();
        assert_eq!(b_prime, b);
    }

    #[test]
    fn degenerate_chord_is_rejected() {
        let net = symmetric_net(3);
        let a = Tensor::from_vec(vec![0.1, 0.2, 0.3]);
        let cfg = ConnectorConfig::default();
        assert!(matches!(
            optimize_barrier_point(&net, &a, &a.clone(), &a, 0, &cfg),
            Err(Error::DegenerateChord)
        ));
    }

    /// Three class-0 blobs flanking a class-1 blob at the origin; the
    /// straight path between the two outer class-0 points passes through
    /// class-1 territory, and the escape direction is orthogonal to it.
    fn barrier_fixture() -> (Network, Tensor, Tensor) {
        let mut rng = rng_from_seed(12);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let blobs: [([f64; 2], usize); 4] = [
            ([-1.0, 0.0], 0),
            ([1.0, 0.0], 0),
            ([0.0, 1.5], 0),
            ([0.0, 0.0], 1),
        ];
        for (center, label) in blobs {
            for _ in 0..40 {
                inputs.push(Tensor::from_vec(vec![
                    center[0] + rng.random_range(-0.1..0.1),
                    center[1] + rng.random_range(-0.1..0.1),
                ]));
                labels.push(label);
            }
        }
        let data = LabeledDataset::new(inputs, labels, 2).unwrap();
        let mut net = Network::new(
            vec![2],
            vec![
                LayerSpec::Dense { in_dim: 2, out_dim: 16 },
                LayerSpec::Tanh,
                LayerSpec::Dense { in_dim: 16, out_dim: 2 },
            ],
            2,
            13,
        )
        .unwrap();
        let cfg = TrainConfig {
            lr: 0.02,
            epochs: 60,
            batch_size: 32,
            ..Default::default()
        };
        train(&mut net, &data, &cfg).unwrap();
        (net, Tensor::from_vec(vec![-1.0, 0.0]), Tensor::from_vec(vec![1.0, 0.0]))
    }

    fn toy_connector_cfg() -> ConnectorConfig {
        ConnectorConfig {
            lr: 0.05,
            iters: 256,
            lambda_mse: 0.01,
            lambda_hf: 0.0,
            delta: 0.05,
            max_depth: 4,
            clamp_range: None,
            primary_samples: 101,
            refined_samples: 101,
        }
    }

    #[test]
    fn optimized_point_is_orthogonal_and_no_worse() {
        let (net, a, c) = barrier_fixture();
        let cfg = toy_connector_cfg();
        let b = interpolate(&c, &a, 0.5).unwrap();
        let loss_b = cross_entropy(&net.forward_logits(&b).unwrap(), 0);
        assert!(loss_b > cfg.delta, "fixture should have a barrier, got {loss_b}");

        let b_prime = optimize_barrier_point(&net, &a, &c, &b, 0, &cfg).unwrap();
        let loss_bp = cross_entropy(&net.forward_logits(&b_prime).unwrap(), 0);
        assert!(loss_bp <= loss_b);
        assert!(loss_bp < cfg.delta, "optimized point still high: {loss_bp}");

        let mut disp = b_prime.clone();
        disp.add_scaled(&b, -1.0);
        let mut chord = c.clone();
        chord.add_scaled(&a, -1.0);
        let dot = disp.dot(&chord).abs();
        assert!(dot <= 1e-6 * disp.norm_l2() * chord.norm_l2());
    }

    #[test]
    fn connect_refines_through_the_barrier() {
        let (net, a, c) = barrier_fixture();
        let cfg = toy_connector_cfg();
        let (path, curve) = connect(&net, &a, &c, 0, &cfg).unwrap();
        assert_eq!(path.waypoints().first().unwrap(), &a);
        assert_eq!(path.waypoints().last().unwrap(), &c);
        assert!(path.num_segments() >= 2, "barrier should force a refinement");
        assert!(path.waypoints().len() - 2 <= (1 << cfg.max_depth) - 1);
        assert!(is_delta_connected(&curve, cfg.delta));
        // Waypoints themselves lie on the curve and must be modes.
        for w in path.waypoints() {
            let loss = cross_entropy(&net.forward_logits(w).unwrap(), 0);
            assert!(loss <= cfg.delta);
        }
    }

    #[test]
    fn already_connected_pair_returns_two_waypoints() {
        let (net, a, _) = barrier_fixture();
        let cfg = toy_connector_cfg();
        let near = Tensor::from_vec(vec![-0.95, 0.05]);
        let (path, _) = connect(&net, &a, &near, 0, &cfg).unwrap();
        assert_eq!(path.waypoints().len(), 2);

        let (path, curve) = connect(&net, &a, &a.clone(), 0, &cfg).unwrap();
        assert_eq!(path.waypoints().len(), 2);
        assert!(curve.losses().iter().all(|&l| l <= cfg.delta));
    }

    #[test]
    fn depth_exhaustion_reports_best_path() {
        let (net, a, c) = barrier_fixture();
        let cfg = ConnectorConfig {
            iters: 1,
            lr: 1e-9,
            max_depth: 1,
            ..toy_connector_cfg()
        };
        match connect(&net, &a, &c, 0, &cfg) {
            Err(Error::NotConnected { best, max_loss, .. }) => {
                assert!(max_loss > cfg.delta);
                assert!(best.0.waypoints().len() >= 2);
            }
            other => panic!("expected NotConnected, got {other:?}"),
        }
    }

    #[test]
    fn endpoint_above_delta_is_rejected() {
        let (net, a, _) = barrier_fixture();
        let cfg = toy_connector_cfg();
        let bad = Tensor::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            connect(&net, &a, &bad, 0, &cfg),
            Err(Error::EndpointNotMode { .. })
        ));
    }
}
