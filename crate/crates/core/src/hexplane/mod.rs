//! HexPlane deformation field: six factorized feature planes fused by
//! element-wise product and decoded into per-Gaussian deltas.

mod decoder;
mod field;

use rayon::prelude::*;

pub use decoder::{DeformDecoder, Head, OUTPUTS, POSITION_OUT, ROTATION_OUT, SCALE_OUT};
pub use field::{HexPlaneField, PLANES, PLANE_NAMES};

use crate::error::{Error, Result};
use crate::gaussians::{apply_delta, GaussianCloud, GaussianDelta};
use crate::math::Vec3;
use crate::rasterizer::RenderGradients;

/// Chunk count for parallel gradient accumulation; fixed so results do not
/// depend on the thread pool.
const GRAD_CHUNKS: usize = 8;

/// Per-Gaussian deltas predicted by `decoder` from `field` at time `tau`.
pub fn predict_delta(
    cloud: &GaussianCloud,
    field: &HexPlaneField,
    decoder: &DeformDecoder,
    tau: f64,
) -> Result<GaussianDelta> {
    if decoder.input != field.features {
        return Err(Error::dimension("decoder input", field.features, decoder.input));
    }
    let outputs: Vec<[f64; OUTPUTS]> = cloud
        .positions
        .par_iter()
        .map_init(
            || (vec![0.0; field.features], Vec::new()),
            |(feature, trace), p| {
                field.trace(*p, tau, feature);
                let mut out = [0.0; OUTPUTS];
                decoder.forward_trace(feature, trace, &mut out);
                out
            },
        )
        .collect();
    let mut delta = GaussianDelta::zeros(cloud.len());
    for (i, out) in outputs.iter().enumerate() {
        delta.d_position[i].copy_from_slice(&out[POSITION_OUT]);
        delta.d_rotation[i].copy_from_slice(&out[ROTATION_OUT]);
        delta.d_log_scale[i].copy_from_slice(&out[SCALE_OUT]);
    }
    Ok(delta)
}

/// Points moved by the position head only, as used to advect mesh vertices.
pub fn displace_points(points: &[Vec3], field: &HexPlaneField, decoder: &DeformDecoder, tau: f64) -> Vec<Vec3> {
    points
        .par_iter()
        .map_init(
            || (vec![0.0; field.features], Vec::new()),
            |(feature, trace), p| {
                field.trace(*p, tau, feature);
                let mut out = [0.0; OUTPUTS];
                decoder.forward_trace(feature, trace, &mut out);
                [p[0] + out[0], p[1] + out[1], p[2] + out[2]]
            },
        )
        .collect()
}

/// The cloud at time `tau`: `apply_delta(cloud, decoder(field(position, tau)))`.
pub fn deform(
    cloud: &GaussianCloud,
    field: &HexPlaneField,
    decoder: &DeformDecoder,
    tau: f64,
) -> Result<GaussianCloud> {
    apply_delta(cloud, &predict_delta(cloud, field, decoder, tau)?)
}

/// Gradients of a deformation-dependent loss.
///
/// `positions` holds only the contribution flowing through the field
/// query; the direct path through `apply_delta` equals the upstream
/// position gradient and is added by the caller when positions are trained.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformGradients {
    pub planes: Vec<f64>,
    pub decoder: Vec<f64>,
    pub positions: Vec<Vec3>,
}

/// Upstream for [`query_gradients`] from rasterizer gradients of the deformed
/// cloud; deltas are additive, so the gradients carry over unchanged.
pub fn delta_upstream(grads: &RenderGradients) -> GaussianDelta {
    GaussianDelta {
        d_position: grads.positions.clone(),
        d_rotation: grads.rotations.clone(),
        d_log_scale: grads.log_scales.clone(),
    }
}

/// Reverse-mode pass through interpolation, fusion and the decoder.
pub fn query_gradients(
    field: &HexPlaneField,
    decoder: &DeformDecoder,
    cloud: &GaussianCloud,
    tau: f64,
    upstream: &GaussianDelta,
) -> Result<DeformGradients> {
    upstream.check()?;
    if upstream.len() != cloud.len() {
        return Err(Error::dimension("upstream delta", cloud.len(), upstream.len()));
    }
    if decoder.input != field.features {
        return Err(Error::dimension("decoder input", field.features, decoder.input));
    }
    let n = cloud.len();
    let chunk = n.div_ceil(GRAD_CHUNKS).max(1);
    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<Vec3>)> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut d_planes = vec![0.0; field.params.len()];
            let mut d_decoder = vec![0.0; decoder.params.len()];
            let mut d_positions = Vec::with_capacity(chunk);
            let mut feature = vec![0.0; field.features];
            let mut d_feature = vec![0.0; field.features];
            let mut trace = Vec::new();
            for i in c * chunk..((c + 1) * chunk).min(n) {
                let mut d_out = [0.0; OUTPUTS];
                d_out[POSITION_OUT].copy_from_slice(&upstream.d_position[i]);
                d_out[ROTATION_OUT].copy_from_slice(&upstream.d_rotation[i]);
                d_out[SCALE_OUT].copy_from_slice(&upstream.d_log_scale[i]);
                if d_out.iter().all(|&v| v == 0.0) {
                    d_positions.push([0.0; 3]);
                    continue;
                }
                let query = field.trace(cloud.positions[i], tau, &mut feature);
                let mut out = [0.0; OUTPUTS];
                decoder.forward_trace(&feature, &mut trace, &mut out);
                decoder.backward(&feature, &trace, &d_out, &mut d_decoder, &mut d_feature);
                d_positions.push(field.backward(&query, &d_feature, &mut d_planes));
            }
            (d_planes, d_decoder, d_positions)
        })
        .collect();

    let mut planes = vec![0.0; field.params.len()];
    let mut dec = vec![0.0; decoder.params.len()];
    let mut positions = Vec::with_capacity(n);
    for (p, d, pos) in partials {
        for (a, b) in planes.iter_mut().zip(&p) {
            *a += b;
        }
        for (a, b) in dec.iter_mut().zip(&d) {
            *a += b;
        }
        positions.extend(pos);
    }
    Ok(DeformGradients {
        planes,
        decoder: dec,
        positions,
    })
}
