//! Collective pseudo-spin states in the Gaussian-moment approximation.
//!
//! A state is a mean Bloch direction plus a 2×2 covariance of the two
//! transverse quadratures, expressed in a local frame attached to the mean:
//! axis 0 points "toward +z" along the meridian (the Jz-like quadrature for
//! equatorial states) and axis 1 is the azimuthal quadrature (Jy-like).
//! Rotations move the mean by Rodrigues' formula and carry the covariance
//! through the induced orthogonal map between the old and new local frames,
//! so the ellipse area is preserved exactly up to floating-point error.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Microwave rotation axis: in the equatorial plane at a given azimuth, or
/// the polar (z) axis for phase evolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RotationAxis {
    Equatorial { azimuth_rad: f64 },
    Vertical,
}

/// A rotation pulse: axis, nominal angle, and fractional amplitude error ε
/// (the physical rotation angle is `angle · (1 + ε)`).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Rotation {
    pub axis: RotationAxis,
    pub angle_rad: f64,
    pub amplitude_error: f64,
}

impl Rotation {
    pub fn equatorial(azimuth_rad: f64, angle_rad: f64) -> Self {
        Rotation {
            axis: RotationAxis::Equatorial { azimuth_rad },
            angle_rad,
            amplitude_error: 0.0,
        }
    }

    pub fn vertical(angle_rad: f64) -> Self {
        Rotation {
            axis: RotationAxis::Vertical,
            angle_rad,
            amplitude_error: 0.0,
        }
    }

    pub fn with_amplitude_error(mut self, eps: f64) -> Self {
        self.amplitude_error = eps;
        self
    }

    fn axis_vector(&self) -> [f64; 3] {
        match self.axis {
            RotationAxis::Equatorial { azimuth_rad } => [azimuth_rad.cos(), azimuth_rad.sin(), 0.0],
            RotationAxis::Vertical => [0.0, 0.0, 1.0],
        }
    }

    fn effective_angle(&self) -> f64 {
        self.angle_rad * (1.0 + self.amplitude_error)
    }

    fn validate(&self) -> Result<()> {
        if !self.angle_rad.is_finite() {
            return Err(Error::Invalid("rotation angle must be finite".into()));
        }
        if !(self.amplitude_error > -1.0) {
            return Err(Error::Invalid("amplitude error must exceed -1".into()));
        }
        Ok(())
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Rodrigues rotation of `v` by `angle` about unit axis `k`.
fn rodrigues(k: [f64; 3], angle: f64, v: [f64; 3]) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let kv = cross(k, v);
    let kdv = dot(k, v);
    [
        v[0] * c + kv[0] * s + k[0] * kdv * (1.0 - c),
        v[1] * c + kv[1] * s + k[1] * kdv * (1.0 - c),
        v[2] * c + kv[2] * s + k[2] * kdv * (1.0 - c),
    ]
}

/// Local transverse frame at mean direction `dir`: axis 0 along the meridian
/// toward +z, axis 1 azimuthal. At the poles the meridian is degenerate and
/// the x axis is used, which is consistent for any subsequent rotation.
fn local_frame(dir: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let z = [0.0, 0.0, 1.0];
    let p = [
        z[0] - dir[2] * dir[0],
        z[1] - dir[2] * dir[1],
        z[2] - dir[2] * dir[2],
    ];
    let t1 = if dot(p, p).sqrt() < 1e-9 {
        [1.0, 0.0, 0.0]
    } else {
        normalize(p)
    };
    let t2 = cross(dir, t1);
    (t1, t2)
}

/// Collective spin state: atom count, contrast C = |J|/(N/2), mean Bloch
/// direction, and transverse covariance in spin² units (local frame).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GaussianSpinState {
    n_atoms: f64,
    contrast: f64,
    dir: [f64; 3],
    cov: [[f64; 2]; 2],
}

/// Coherent spin state on the equator (mean along +x, contrast 1) with the
/// projection-noise covariance N/4 in both transverse quadratures.
pub fn make_css(n_atoms: f64) -> Result<GaussianSpinState> {
    GaussianSpinState::new_on_equator(n_atoms, 1.0, 0.0)
}

impl GaussianSpinState {
    fn check_n_contrast(n_atoms: f64, contrast: f64) -> Result<()> {
        if !(n_atoms >= 1.0) {
            return Err(Error::Invalid(format!("atom number must be >= 1, got {n_atoms}")));
        }
        if !(0.0 < contrast && contrast <= 1.0) {
            return Err(Error::Invalid(format!("contrast must be in (0, 1], got {contrast}")));
        }
        Ok(())
    }

    pub fn new_on_equator(n_atoms: f64, contrast: f64, azimuth_rad: f64) -> Result<Self> {
        Self::check_n_contrast(n_atoms, contrast)?;
        let v = n_atoms / 4.0;
        Ok(GaussianSpinState {
            n_atoms,
            contrast,
            dir: [azimuth_rad.cos(), azimuth_rad.sin(), 0.0],
            cov: [[v, 0.0], [0.0, v]],
        })
    }

    /// Coherent state with all atoms in one clock level (mean at a pole).
    pub fn new_at_pole(n_atoms: f64, contrast: f64, up: bool) -> Result<Self> {
        Self::check_n_contrast(n_atoms, contrast)?;
        let v = n_atoms / 4.0;
        Ok(GaussianSpinState {
            n_atoms,
            contrast,
            dir: [0.0, 0.0, if up { 1.0 } else { -1.0 }],
            cov: [[v, 0.0], [0.0, v]],
        })
    }

    pub fn n_atoms(&self) -> f64 {
        self.n_atoms
    }

    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    pub fn mean_dir(&self) -> [f64; 3] {
        self.dir
    }

    pub fn mean_jz(&self) -> f64 {
        self.contrast * self.n_atoms / 2.0 * self.dir[2]
    }

    pub fn mean_azimuth(&self) -> f64 {
        self.dir[1].atan2(self.dir[0])
    }

    /// Variance of the meridian (Jz-like) quadrature, spin² units.
    pub fn var_jz(&self) -> f64 {
        self.cov[0][0]
    }

    /// Variance of the azimuthal (Jy-like) quadrature, spin² units.
    pub fn var_jy(&self) -> f64 {
        self.cov[1][1]
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        self.cov
    }

    pub fn cov_det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    /// Overwrite moments after a conditioning measurement (not a unitary:
    /// the ellipse area is allowed to change here, and only here).
    pub(crate) fn set_conditioned(
        &mut self,
        mean_jz: f64,
        var_jz: f64,
        var_jy: f64,
        contrast: f64,
    ) {
        let jmax = contrast * self.n_atoms / 2.0;
        let dz = (mean_jz / jmax).clamp(-1.0, 1.0);
        let psi = self.mean_azimuth();
        let r = (1.0 - dz * dz).sqrt();
        self.dir = [r * psi.cos(), r * psi.sin(), dz];
        self.cov = [[var_jz, 0.0], [0.0, var_jy]];
        self.contrast = contrast;
    }
}

/// Rotate mean and covariance, also carrying an explicit per-shot deviation
/// vector (realized offsets from the mean in the local frame) through the
/// same orthogonal map. Used by sequences that track a single atomic sample.
pub fn rotate_with_deviation(
    state: &GaussianSpinState,
    r: &Rotation,
    dev: [f64; 2],
) -> Result<(GaussianSpinState, [f64; 2])> {
    r.validate()?;
    let k = r.axis_vector();
    let angle = r.effective_angle();
    let new_dir = normalize(rodrigues(k, angle, state.dir));
    let (t1, t2) = local_frame(state.dir);
    let (u1, u2) = local_frame(new_dir);
    let rt1 = rodrigues(k, angle, t1);
    let rt2 = rodrigues(k, angle, t2);
    // induced 2×2 orthogonal map old frame -> new frame
    let m = [[dot(u1, rt1), dot(u1, rt2)], [dot(u2, rt1), dot(u2, rt2)]];
    let c = state.cov;
    let mc = [
        [
            m[0][0] * c[0][0] + m[0][1] * c[1][0],
            m[0][0] * c[0][1] + m[0][1] * c[1][1],
        ],
        [
            m[1][0] * c[0][0] + m[1][1] * c[1][0],
            m[1][0] * c[0][1] + m[1][1] * c[1][1],
        ],
    ];
    let new_cov = [
        [
            mc[0][0] * m[0][0] + mc[0][1] * m[0][1],
            mc[0][0] * m[1][0] + mc[0][1] * m[1][1],
        ],
        [
            mc[1][0] * m[0][0] + mc[1][1] * m[0][1],
            mc[1][0] * m[1][0] + mc[1][1] * m[1][1],
        ],
    ];
    let new_dev = [
        m[0][0] * dev[0] + m[0][1] * dev[1],
        m[1][0] * dev[0] + m[1][1] * dev[1],
    ];
    let mut out = *state;
    out.dir = new_dir;
    out.cov = new_cov;
    Ok((out, new_dev))
}

pub fn rotate(state: &GaussianSpinState, r: &Rotation) -> Result<GaussianSpinState> {
    rotate_with_deviation(state, r, [0.0, 0.0]).map(|(s, _)| s)
}

/// Rotation of the uncertainty ellipse about the mean spin axis by `angle`
/// (positive sense: meridian axis toward the azimuthal axis).
pub fn rotate_about_mean(state: &GaussianSpinState, angle: f64) -> GaussianSpinState {
    let (s, c) = angle.sin_cos();
    let m = [[c, -s], [s, c]];
    let cv = state.cov;
    let mc = [
        [m[0][0] * cv[0][0] + m[0][1] * cv[1][0], m[0][0] * cv[0][1] + m[0][1] * cv[1][1]],
        [m[1][0] * cv[0][0] + m[1][1] * cv[1][0], m[1][0] * cv[0][1] + m[1][1] * cv[1][1]],
    ];
    let mut out = *state;
    out.cov = [
        [mc[0][0] * m[0][0] + mc[0][1] * m[0][1], mc[0][0] * m[1][0] + mc[0][1] * m[1][1]],
        [mc[1][0] * m[0][0] + mc[1][1] * m[0][1], mc[1][0] * m[1][0] + mc[1][1] * m[1][1]],
    ];
    out
}

/// Error-compensated π/2 pulse: π/2·(1+ε) about azimuth 0 followed by
/// π·(1+ε) about azimuth 120°. For ε = 0 a polar state lands exactly on the
/// equator; the leading residual grows only quadratically in ε.
pub fn composite_pi_half(state: &GaussianSpinState, eps: f64) -> Result<GaussianSpinState> {
    let s1 = rotate(
        state,
        &Rotation::equatorial(0.0, std::f64::consts::FRAC_PI_2).with_amplitude_error(eps),
    )?;
    rotate(
        &s1,
        &Rotation::equatorial(2.0 * std::f64::consts::FRAC_PI_3, std::f64::consts::PI)
            .with_amplitude_error(eps),
    )
}

/// Residual of the composite π/2 pulse at amplitude error ε: the angle
/// between the actual and ideal (ε = 0) final mean directions, starting from
/// the lower pole.
pub fn composite_residual(n_atoms: f64, eps: f64) -> Result<f64> {
    let start = GaussianSpinState::new_at_pole(n_atoms, 1.0, false)?;
    let ideal = composite_pi_half(&start, 0.0)?;
    let actual = composite_pi_half(&start, eps)?;
    Ok(dot(ideal.dir, actual.dir).clamp(-1.0, 1.0).acos())
}

/// Linearized one-axis twisting: the azimuthal quadrature gains
/// `shear × (meridian quadrature)`. var_jz is exactly unchanged and the
/// ellipse area (covariance determinant) is preserved.
pub fn oat_shear(state: &GaussianSpinState, shear: f64) -> Result<GaussianSpinState> {
    if !shear.is_finite() {
        return Err(Error::Invalid("shear must be finite".into()));
    }
    let c = state.cov;
    let mut out = *state;
    out.cov = [
        [c[0][0], c[0][1] + shear * c[0][0]],
        [c[1][0] + shear * c[0][0], c[1][1] + shear * (c[0][1] + c[1][0]) + shear * shear * c[0][0]],
    ];
    Ok(out)
}

/// Shear magnitude that, followed by `rotate_about_mean(realign_rad)`,
/// brings var_jz of `state` to `target_var_jz`. The post-realignment
/// variance is an exact quadratic in the shear, so the calibration solves
/// that quadratic from three evaluations and returns the smaller-magnitude
/// root.
pub fn calibrate_shear(
    state: &GaussianSpinState,
    realign_rad: f64,
    target_var_jz: f64,
) -> Result<f64> {
    let f = |lam: f64| -> Result<f64> {
        Ok(rotate_about_mean(&oat_shear(state, lam)?, realign_rad).var_jz())
    };
    let f0 = f(0.0)?;
    let f1 = f(1.0)?;
    let fm1 = f(-1.0)?;
    let a = 0.5 * (f1 + fm1) - f0;
    let b = 0.5 * (f1 - fm1);
    let c = f0 - target_var_jz;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a == 0.0 {
        return Err(Error::Invalid(format!(
            "shear calibration cannot reach target variance {target_var_jz}"
        )));
    }
    let r1 = (-b + disc.sqrt()) / (2.0 * a);
    let r2 = (-b - disc.sqrt()) / (2.0 * a);
    Ok(if r1.abs() <= r2.abs() { r1 } else { r2 })
}

pub fn apply_contrast_decay(state: &GaussianSpinState, c_factor: f64) -> Result<GaussianSpinState> {
    if !(0.0 < c_factor && c_factor <= 1.0) {
        return Err(Error::Invalid(format!(
            "contrast decay factor must be in (0, 1], got {c_factor}"
        )));
    }
    let mut out = *state;
    out.contrast *= c_factor;
    Ok(out)
}

/// Metrological squeezing parameter: (var_jz / (n/4)) / contrast², linear
/// (not dB) scale.
pub fn wineland_parameter(var_jz: f64, n_atoms: f64, contrast: f64) -> Result<f64> {
    if !(var_jz > 0.0) {
        return Err(Error::Invalid("var_jz must be positive".into()));
    }
    if !(0.0 < contrast && contrast <= 1.0) {
        return Err(Error::Invalid("contrast must be in (0, 1]".into()));
    }
    Ok(var_jz / (n_atoms / 4.0) / (contrast * contrast))
}
