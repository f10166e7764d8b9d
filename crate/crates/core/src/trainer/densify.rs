use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::adam::AdamState;
use super::StaticFitConfig;
use crate::gaussians::GaussianCloud;
use crate::math::{mat_vec, quat_to_mat, normalize_quat};
use crate::rasterizer::RenderGradients;

/// Running per-Gaussian screen-space gradient statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub views: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            views: vec![0; n],
        }
    }

    /// Adds one render's screen-space gradient norms; Gaussians with zero
    /// gradient are treated as not visible in that render.
    pub fn record(&mut self, grads: &RenderGradients) {
        for (i, g) in grads.screen_ndc.iter().enumerate() {
            let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if norm > 0.0 {
                self.grad_sum[i] += norm;
                self.views[i] += 1;
            }
        }
    }

    /// Sum of the recorded norms over the interval.
    pub fn accumulated(&self, i: usize) -> f64 {
        self.grad_sum[i]
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.views[i] as f64
        }
    }
}

/// Counts from one densification pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small and splits large Gaussians whose accumulated screen gradient reaches
/// the threshold, then prunes Gaussians below `min_opacity` without going
/// under a tenth of `initial_count`. Adam moments follow their Gaussians; new
/// Gaussians start with zero moments. `states` are the per-group optimizer
/// states with their record widths.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    stats: &DensifyStats,
    states: &mut [(&mut AdamState, usize)],
    config: &StaticFitConfig,
    initial_count: usize,
    rng: &mut R,
) -> DensifyReport {
    let n = cloud.len();
    let mut report = DensifyReport::default();
    let big = config.dense_percent * config.scene_extent;
    let mut budget = config.max_gaussians.saturating_sub(n);
    let mut keep = vec![true; n];
    let mut added = GaussianCloud::with_capacity(0);
    for i in 0..n {
        if stats.accumulated(i) < config.densify_grad_threshold || budget == 0 {
            continue;
        }
        let scales = cloud.scales(i);
        let largest = scales[0].max(scales[1]).max(scales[2]);
        if largest > big {
            // Two children sampled from the parent, each 1/1.6 the size.
            let rot = quat_to_mat(normalize_quat(cloud.rotations[i]));
            let shrink = (1.6f64).ln();
            for _ in 0..2 {
                let z: [f64; 3] = std::array::from_fn(|k| {
                    let s: f64 = StandardNormal.sample(rng);
                    s * scales[k]
                });
                let off = mat_vec(&rot, z);
                let p = cloud.positions[i];
                let ls = cloud.log_scales[i];
                added.push(
                    [p[0] + off[0], p[1] + off[1], p[2] + off[2]],
                    cloud.rotations[i],
                    [ls[0] - shrink, ls[1] - shrink, ls[2] - shrink],
                    cloud.opacity_logits[i],
                    cloud.colors[i],
                );
            }
            keep[i] = false;
            report.split += 1;
            budget = budget.saturating_sub(1);
        } else {
            added.push(
                cloud.positions[i],
                cloud.rotations[i],
                cloud.log_scales[i],
                cloud.opacity_logits[i],
                cloud.colors[i],
            );
            report.cloned += 1;
            budget -= 1;
        }
    }

    // Prune transparent survivors, lowest opacity first, down to the floor.
    let floor = initial_count.div_ceil(10).max(1);
    let survivors = keep.iter().filter(|&&k| k).count() + added.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| keep[i] && cloud.opacity(i) < config.min_opacity)
        .collect();
    candidates.sort_by(|&a, &b| cloud.opacity_logits[a].total_cmp(&cloud.opacity_logits[b]).then(a.cmp(&b)));
    let allowed = survivors.saturating_sub(floor).min(candidates.len());
    for &i in &candidates[..allowed] {
        keep[i] = false;
        report.pruned += 1;
    }

    cloud.retain_mask(&keep);
    for (state, width) in states.iter_mut() {
        state.retain_records(*width, &keep);
        state.extend_zeros(*width, added.len());
    }
    for i in 0..added.len() {
        cloud.push(
            added.positions[i],
            added.rotations[i],
            added.log_scales[i],
            added.opacity_logits[i],
            added.colors[i],
        );
    }
    report
}
