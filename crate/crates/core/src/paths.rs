//! Piecewise-linear paths in input space: interpolation, loss-curve
//! sampling, barrier identification, and delta-connectivity.

use crate::error::{Error, Result};
use crate::net::{cross_entropy, Network};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// An ordered waypoint sequence together with the class whose loss is
/// evaluated along it.
#[derive(Debug, Clone)]
pub struct Path {
    waypoints: Vec<Tensor>,
    target_class: usize,
}

impl Path {
    /// At least two waypoints of one shape; consecutive waypoints must be
    /// distinct, except that a two-waypoint path may be degenerate (equal
    /// endpoints) so that connecting a point to itself stays representable.
    pub fn new(waypoints: Vec<Tensor>, target_class: usize) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::config("waypoints", "need at least 2 waypoints"));
        }
        let shape = waypoints[0].shape().to_vec();
        for w in &waypoints[1..] {
            w.check_shape(&shape)?;
        }
        if waypoints.len() > 2 {
            for (i, pair) in waypoints.windows(2).enumerate() {
                if pair[0] == pair[1] {
                    return Err(Error::config(
                        "waypoints",
                        format!("waypoints {i} and {} coincide", i + 1),
                    ));
                }
            }
        }
        Ok(Path {
            waypoints,
            target_class,
        })
    }

    pub fn waypoints(&self) -> &[Tensor] {
        &self.waypoints
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    pub fn num_segments(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn reversed(&self) -> Path {
        Path {
            waypoints: self.waypoints.iter().rev().cloned().collect(),
            target_class: self.target_class,
        }
    }
}

/// Sampled losses along a path, on a global alpha grid in [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossCurve {
    alphas: Vec<f64>,
    losses: Vec<f64>,
    /// Segment index of each sample; a joint belongs to the segment it ends.
    segments: Vec<usize>,
    /// Waypoint positions in global alpha, `0 = first`, `1 = last`.
    boundaries: Vec<f64>,
}

impl LossCurve {
    pub fn new(
        alphas: Vec<f64>,
        losses: Vec<f64>,
        segments: Vec<usize>,
        boundaries: Vec<f64>,
    ) -> Result<Self> {
        if alphas.is_empty() || alphas.len() != losses.len() || alphas.len() != segments.len() {
            return Err(Error::config("alphas", "empty or mismatched curve columns"));
        }
        if alphas[0] != 0.0 || *alphas.last().unwrap() != 1.0 {
            return Err(Error::config("alphas", "grid must start at 0 and end at 1"));
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("alphas", "grid must be strictly increasing"));
        }
        Ok(LossCurve {
            alphas,
            losses,
            segments,
            boundaries,
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn max_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with header `alpha,loss,segment`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,loss,segment\n");
        for i in 0..self.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{}",
                self.alphas[i], self.losses[i], self.segments[i]
            )
            .unwrap();
        }
        out
    }
}

/// Barrier summary of one curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BarrierReport {
    pub max_loss: f64,
    pub argmax_alpha: f64,
    /// `max_loss - max(endpoint losses)`; zero when the max sits at an endpoint.
    pub gap: f64,
    pub endpoint_losses: (f64, f64),
}

/// Eq-style linear interpolation: `alpha * x_i + (1 - alpha) * x_j`.
/// `alpha = 1` returns `x_i` and `alpha = 0` returns `x_j`, bitwise.
pub fn interpolate(x_i: &Tensor, x_j: &Tensor, alpha: f64) -> Result<Tensor> {
    if !x_i.same_shape(x_j) {
        return Err(Error::ShapeMismatch {
            expected: x_i.shape().to_vec(),
            got: x_j.shape().to_vec(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if alpha == 1.0 {
        return Ok(x_i.clone());
    }
    if alpha == 0.0 {
        return Ok(x_j.clone());
    }
    let data = x_i
        .data()
        .iter()
        .zip(x_j.data())
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    Tensor::new(x_i.shape().to_vec(), data)
}

/// Sample the cross-entropy loss along each linear segment of `path` at
/// `n_per_segment` uniformly spaced points (endpoints included), then join
/// the segments into one global curve without duplicating the joints.
pub fn sample_loss_curve(net: &Network, path: &Path, n_per_segment: usize) -> Result<LossCurve> {
    if n_per_segment < 2 {
        return Err(Error::config("n_per_segment", "need at least 2 points"));
    }
    let segments = path.num_segments();
    let y = path.target_class();

    // (segment, step) pairs; joints are owned by the earlier segment.
    let mut grid = Vec::with_capacity(segments * n_per_segment);
    for s in 0..segments {
        let start = if s == 0 { 0 } else { 1 };
        for k in start..n_per_segment {
            grid.push((s, k));
        }
    }

    let rows: Vec<(f64, f64, usize)> = grid
        .par_iter()
        .map(|&(s, k)| {
            let u = k as f64 / (n_per_segment - 1) as f64;
            let point = interpolate(&path.waypoints()[s + 1], &path.waypoints()[s], u)?;
            let logits = net.forward_logits(&point)?;
            let alpha = (s as f64 + u) / segments as f64;
            Ok((alpha, cross_entropy(&logits, y), s))
        })
        .collect::<Result<_>>()?;

    let mut alphas = Vec::with_capacity(rows.len());
    let mut losses = Vec::with_capacity(rows.len());
    let mut segs = Vec::with_capacity(rows.len());
    for (a, l, s) in rows {
        alphas.push(a);
        losses.push(l);
        segs.push(s);
    }
    // Force the exact endpoints of the global grid.
    *alphas.first_mut().unwrap() = 0.0;
    *alphas.last_mut().unwrap() = 1.0;

    let boundaries = (0..=segments).map(|s| s as f64 / segments as f64).collect();
    LossCurve::new(alphas, losses, segs, boundaries)
}

/// Maximum sampled loss, its alpha (ties broken toward the smallest alpha),
/// and the gap relative to the higher endpoint loss.
pub fn find_barrier(curve: &LossCurve) -> BarrierReport {
    let losses = curve.losses();
    let mut best = 0;
    for i in 1..losses.len() {
        if losses[i] > losses[best] {
            best = i;
        }
    }
    let endpoint_losses = (losses[0], *losses.last().unwrap());
    let max_loss = losses[best];
    BarrierReport {
        max_loss,
        argmax_alpha: curve.alphas()[best],
        gap: max_loss - endpoint_losses.0.max(endpoint_losses.1),
        endpoint_losses,
    }
}

/// True iff every sampled loss is at most `delta`.
pub fn is_delta_connected(curve: &LossCurve, delta: f64) -> bool {
    assert!(delta > 0.0, "delta must be positive");
    curve.losses().iter().all(|&l| l <= delta)
}
