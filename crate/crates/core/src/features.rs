//! Edge appearance features and the potentials derived from them.
//!
//! `J` is the Gaussian-derivative gradient magnitude summed over channels, `g = J / max J`,
//! and `phi = exp(tau * g) + w_tilde` is the edge indicator. Two potentials follow:
//! the structure-aware potential (high on edges, infinite on proposals) that repels the
//! adaptive cut, and the segmentation potential `1 / (phi + epsilon)` that attracts
//! connection paths to edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridMask, Polyline, ScalarField2D};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Gaussian standard deviation in grid units.
    pub sigma: f64,
    pub tau: f64,
    pub w_tilde: f64,
    /// Regulariser of the segmentation potential.
    pub epsilon: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sigma: 1.5,
            tau: 1.0,
            w_tilde: 0.1,
            epsilon: 0.1,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma", self.sigma),
            ("tau", self.tau),
            ("w_tilde", self.w_tilde),
            ("epsilon", self.epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EdgeFeatures<T> {
    /// Raw gradient magnitude.
    pub j: ScalarField2D<T>,
    /// `j` normalised to `[0, 1]`.
    pub g: ScalarField2D<T>,
    /// Edge indicator `exp(tau g) + w_tilde`.
    pub phi: ScalarField2D<T>,
    /// Horizontal derivative of the channel with the strongest response at each point.
    pub grad_x: ScalarField2D<T>,
    pub grad_y: ScalarField2D<T>,
}

impl<T: Real> EdgeFeatures<T> {
    pub fn width(&self) -> usize {
        self.g.width()
    }

    pub fn height(&self) -> usize {
        self.g.height()
    }
}

/// Sampled Gaussian and its derivative on `[-r, r]`, `r = ceil(3 sigma)`.
///
/// The smoothing kernel sums to one and the derivative kernel returns exactly 1 on a unit ramp.
fn gaussian_kernels<T: Real>(sigma: f64) -> (Vec<T>, Vec<T>) {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let s2 = sigma * sigma;
    let g: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * s2)).exp())
        .collect();
    let gsum: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / gsum).collect();
    let d: Vec<f64> = (-radius..=radius)
        .zip(&g)
        .map(|(k, gv)| -(k as f64) / s2 * gv)
        .collect();
    let ramp: f64 = (-radius..=radius).zip(&d).map(|(k, dv)| -(k as f64) * dv).sum();
    (
        g.into_iter().map(T::lit).collect(),
        d.into_iter().map(|v| T::lit(v / ramp)).collect(),
    )
}

/// Half-sample symmetric reflection into `[0, n)`.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Correlates every row (`horizontal`) or column with a symmetric or antisymmetric kernel.
///
/// Antisymmetric kernels are applied to differences of mirrored samples so constant signals
/// give exactly zero.
fn convolve_1d<T: Real>(
    src: &[T],
    width: usize,
    height: usize,
    kernel: &[T],
    horizontal: bool,
    antisymmetric: bool,
) -> Vec<T> {
    let r = (kernel.len() / 2) as i64;
    let centre = kernel[r as usize];
    let mut out = vec![T::zero(); src.len()];
    let (outer, inner) = if horizontal { (height, width) } else { (width, height) };
    let at = |o: usize, i: usize| {
        if horizontal {
            src[o * width + i]
        } else {
            src[i * width + o]
        }
    };
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = if antisymmetric { T::zero() } else { centre * at(o, i) };
            for k in 1..=r {
                let lo = at(o, reflect(i as i64 - k, inner));
                let hi = at(o, reflect(i as i64 + k, inner));
                // Convolution: sum_k w[k] * f(i - k), kernel stored from -r to r.
                let w_pos = kernel[(r + k) as usize];
                acc = if antisymmetric {
                    acc + w_pos * (lo - hi)
                } else {
                    acc + w_pos * (lo + hi)
                };
            }
            let idx = if horizontal { o * width + i } else { i * width + o };
            out[idx] = acc;
        }
    }
    out
}

/// Gaussian-derivative responses `(d/dx, d/dy)` of one channel.
fn gaussian_gradient<T: Real>(img: &ScalarField2D<T>, sigma: f64) -> (Vec<T>, Vec<T>) {
    let (w, h) = (img.width(), img.height());
    let (g, d) = gaussian_kernels::<T>(sigma);
    let smooth_y = convolve_1d(img.values(), w, h, &g, false, false);
    let gx = convolve_1d(&smooth_y, w, h, &d, true, true);
    let smooth_x = convolve_1d(img.values(), w, h, &g, true, false);
    let gy = convolve_1d(&smooth_x, w, h, &d, false, true);
    (gx, gy)
}

/// Computes `J`, `g`, `phi` and a gradient direction field from 1 or 3 equally sized channels.
pub fn compute_edge_features<T: Real>(
    channels: &[ScalarField2D<T>],
    cfg: &FeatureConfig,
) -> Result<EdgeFeatures<T>> {
    cfg.validate()?;
    if channels.len() != 1 && channels.len() != 3 {
        return Err(Error::domain(format!(
            "expected 1 or 3 channels, got {}",
            channels.len()
        )));
    }
    let (w, h) = (channels[0].width(), channels[0].height());
    if channels.iter().any(|c| c.width() != w || c.height() != h) {
        return Err(Error::domain("channel dimensions differ"));
    }
    if channels.iter().any(|c| c.values().iter().any(|v| !v.is_finite())) {
        return Err(Error::domain("image values must be finite"));
    }
    let n = w * h;
    let mut j2 = vec![T::zero(); n];
    let mut best = vec![T::zero(); n];
    let mut dir_x = vec![T::zero(); n];
    let mut dir_y = vec![T::zero(); n];
    for ch in channels {
        let (gx, gy) = gaussian_gradient(ch, cfg.sigma);
        for i in 0..n {
            let m = gx[i] * gx[i] + gy[i] * gy[i];
            j2[i] = j2[i] + m;
            if m > best[i] {
                best[i] = m;
                dir_x[i] = gx[i];
                dir_y[i] = gy[i];
            }
        }
    }
    let j: Vec<T> = j2.into_iter().map(T::sqrt).collect();
    let jmax = j.iter().copied().fold(T::zero(), T::max);
    let g: Vec<T> = if jmax > T::zero() {
        j.iter().map(|&v| (v / jmax).min(T::one())).collect()
    } else {
        vec![T::zero(); n]
    };
    let (tau, w_tilde) = (T::lit(cfg.tau), T::lit(cfg.w_tilde));
    let phi: Vec<T> = g.iter().map(|&v| (tau * v).exp() + w_tilde).collect();
    Ok(EdgeFeatures {
        j: ScalarField2D::new(w, h, j)?,
        g: ScalarField2D::new(w, h, g)?,
        phi: ScalarField2D::new(w, h, phi)?,
        grad_x: ScalarField2D::new(w, h, dir_x)?,
        grad_y: ScalarField2D::new(w, h, dir_y)?,
    })
}

/// Grid points covered by the vertices of `curves`.
pub fn occupancy_of<T: Real>(curves: &[&Polyline<T>], width: usize, height: usize) -> GridMask {
    let mut mask = GridMask::new(width, height);
    for c in curves {
        for p in &c.points {
            if let Some((x, y)) = p.snap(width, height) {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// `phi` with `+∞` on every grid point in `occupied`.
pub fn structural_potential<T: Real>(
    feat: &EdgeFeatures<T>,
    occupied: &GridMask,
) -> Result<ScalarField2D<T>> {
    if occupied.width() != feat.width() || occupied.height() != feat.height() {
        return Err(Error::domain("occupancy mask does not match feature grid"));
    }
    let values = feat
        .phi
        .values()
        .iter()
        .zip(occupied.bits())
        .map(|(&p, &on)| if on { T::infinity() } else { p })
        .collect();
    ScalarField2D::new_extended(feat.width(), feat.height(), values)
}

/// `1 / (phi + epsilon)`.
pub fn segmentation_potential<T: Real>(
    feat: &EdgeFeatures<T>,
    cfg: &FeatureConfig,
) -> Result<ScalarField2D<T>> {
    let eps = T::lit(cfg.epsilon);
    feat.phi.map(|p| T::one() / (p + eps))
}
