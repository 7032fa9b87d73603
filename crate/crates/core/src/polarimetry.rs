//! Stokes-vector processing of four-angle polarized captures.
//!
//! Specular reflection off dielectric surfaces keeps the illumination's linear
//! polarization while diffuse body reflection scrambles it, so the polarized
//! component of the Stokes vector isolates the specular term and the remainder
//! is the diffuse image used for Lambertian photometric stereo.

use crate::error::{Error, Result};
use crate::image::{ImageRgb, Mask};

/// Captures through a linear polarizer at 0°, 45°, 90°, 135°.
#[derive(Debug, Clone)]
pub struct PolarizedCaptures {
    pub i0: ImageRgb,
    pub i45: ImageRgb,
    pub i90: ImageRgb,
    pub i135: ImageRgb,
}

impl PolarizedCaptures {
    pub fn new(i0: ImageRgb, i45: ImageRgb, i90: ImageRgb, i135: ImageRgb) -> Result<Self> {
        if !(i0.same_shape(&i45) && i0.same_shape(&i90) && i0.same_shape(&i135)) {
            return Err(Error::argument("polarized capture shapes differ"));
        }
        for img in [&i0, &i45, &i90, &i135] {
            if img.data().iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::argument("polarized captures must be nonnegative"));
            }
        }
        Ok(PolarizedCaptures { i0, i45, i90, i135 })
    }
}

/// First three Stokes components per pixel per channel.
#[derive(Debug, Clone)]
pub struct StokesImage {
    pub s0: ImageRgb,
    pub s1: ImageRgb,
    pub s2: ImageRgb,
}

/// How s2 is formed from the four captures.
///
/// `Standard` is the conventional identity s2 = I_45 − I_135. `Legacy45`
/// instead uses s2 = 2·I_45 − I_0, which assumes I_0 + I_90 = I_45 + I_135
/// and folds the difference into I_0; kept for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StokesMode {
    #[default]
    Standard,
    Legacy45,
}

impl std::str::FromStr for StokesMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<StokesMode> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(StokesMode::Standard),
            "paper" | "legacy45" => Ok(StokesMode::Legacy45),
            other => Err(Error::argument(format!("unknown stokes mode {other:?}"))),
        }
    }
}

pub fn stokes_decompose(p: &PolarizedCaptures, mode: StokesMode) -> StokesImage {
    let half_sum = |a: f64, b: f64| (a + b) / 2.0;
    let s0 =
        p.i0.zip_map(&p.i90, half_sum)
            .and_then(|acc| {
                let other = p.i45.zip_map(&p.i135, half_sum)?;
                acc.zip_map(&other, |a, b| a + b)
            })
            .expect("shapes validated at construction");
    let s1 =
        p.i0.zip_map(&p.i90, |a, b| a - b)
            .expect("shapes validated at construction");
    let s2 = match mode {
        StokesMode::Standard => p.i45.zip_map(&p.i135, |a, b| a - b),
        StokesMode::Legacy45 => p.i45.zip_map(&p.i0, |a, b| 2.0 * a - b),
    }
    .expect("shapes validated at construction");
    StokesImage { s0, s1, s2 }
}

/// Diffuse/specular split with a per-pixel validity mask.
#[derive(Debug, Clone)]
pub struct Separation {
    pub diffuse: ImageRgb,
    pub specular: ImageRgb,
    /// Off where noise forced the diffuse estimate below zero in any channel.
    pub valid: Mask,
}

pub fn separate(s: &StokesImage) -> Separation {
    let (w, h) = (s.s0.width(), s.s0.height());
    let mut diffuse = ImageRgb::zeros(w, h);
    let mut specular = ImageRgb::zeros(w, h);
    let mut valid = Mask::constant(w, h, 1.0);
    for y in 0..h {
        for x in 0..w {
            let s0 = s.s0.get(x, y);
            let s1 = s.s1.get(x, y);
            let s2 = s.s2.get(x, y);
            let mut d = [0.0; 3];
            let mut sp = [0.0; 3];
            for c in 0..3 {
                sp[c] = s1[c].hypot(s2[c]);
                let raw = s0[c] - sp[c];
                if raw < 0.0 {
                    valid.set(x, y, 0.0);
                }
                d[c] = raw.max(0.0);
            }
            diffuse.set(x, y, d);
            specular.set(x, y, sp);
        }
    }
    Separation {
        diffuse,
        specular,
        valid,
    }
}

/// Malus-law forward model: `I_θ = diffuse/2 + specular·cos²(θ − aolp)`,
/// with the angle of linear polarization in degrees.
pub fn simulate_polarized(
    diffuse: &ImageRgb,
    specular: &ImageRgb,
    aolp_deg: f64,
) -> Result<PolarizedCaptures> {
    if !diffuse.same_shape(specular) {
        return Err(Error::argument("diffuse/specular shapes differ"));
    }
    let capture = |theta_deg: f64| {
        let cos2 = ((theta_deg - aolp_deg).to_radians().cos()).powi(2);
        diffuse
            .zip_map(specular, move |d, s| 0.5 * d + s * cos2)
            .expect("shape checked above")
    };
    PolarizedCaptures::new(capture(0.0), capture(45.0), capture(90.0), capture(135.0))
}

/// Removes the display-off ambient contribution, clamping at zero.
pub fn ambient_subtract(capture: &ImageRgb, ambient: &ImageRgb) -> Result<ImageRgb> {
    capture.saturating_sub(ambient)
}
