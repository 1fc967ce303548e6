//! Analytic eye appearance in normalized-patch coordinates.
//!
//! The patch is modelled as skin with an almond-shaped lid opening, a
//! sclera background, an iris disc and a pupil. Edges are antialiased by
//! signed distance. All terms are either even in the horizontal offset from
//! the patch centre or odd in it together with the yaw angles, so rendering
//! mirrored angles gives the exact mirror image when the appearance has no
//! horizontal shading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SynthError;
use crate::geometry::{EyeSide, GazeAngles, HeadAngles};
use crate::imaging::GrayImage;

/// Iris displacement in patch pixels per unit tangent of the gaze angle.
pub const KAPPA: f64 = 20.0;

pub const PATCH_WIDTH: usize = 60;
pub const PATCH_HEIGHT: usize = 36;

/// Largest gaze angle the renderer accepts, degrees.
pub const MAX_GAZE_DEG: f64 = 30.0;

/// Half width of the lid opening, px.
const LID_HALF_WIDTH: f64 = 26.0;
/// Intensity swing of the skin with head yaw across half the patch.
const HEAD_SHADING: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeAppearance {
    pub iris_radius: f64,
    pub pupil_radius: f64,
    pub sclera: f64,
    pub iris: f64,
    pub pupil: f64,
    pub skin: f64,
    /// Half height of the lid opening at the centre, px.
    pub aperture: f64,
    /// Intensity change from the patch centre to its right and bottom edge.
    pub shading: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for EyeAppearance {
    fn default() -> Self {
        Self {
            iris_radius: 6.5,
            pupil_radius: 2.6,
            sclera: 200.0,
            iris: 65.0,
            pupil: 20.0,
            skin: 145.0,
            aperture: 10.5,
            shading: [0.0, 0.0],
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl EyeAppearance {
    /// Samples a person's appearance from the default ranges.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let iris_radius = rng.gen_range(5.5..7.5);
        let iris = rng.gen_range(40.0..90.0);
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        let strength = rng.gen_range(0.0..50.0);
        Self {
            iris_radius,
            pupil_radius: 0.4 * iris_radius,
            sclera: rng.gen_range(175.0..225.0),
            iris,
            pupil: 0.3 * iris,
            skin: rng.gen_range(110.0..180.0),
            aperture: rng.gen_range(9.0..12.0),
            shading: [strength * dir.cos(), strength * dir.sin()],
            noise_sigma: rng.gen_range(2.0..6.0),
            seed: rng.gen(),
        }
    }

    /// Same appearance, horizontally mirrored shading.
    pub fn mirrored(&self) -> Self {
        Self {
            shading: [-self.shading[0], self.shading[1]],
            ..*self
        }
    }
}

/// Noise-free intensity model of one eye for fixed angles.
#[derive(Debug, Clone, Copy)]
pub struct EyeModel {
    app: EyeAppearance,
    center: (f64, f64),
    iris_offset: (f64, f64),
    aperture: f64,
    head_shading: f64,
}

fn check_range(g: &GazeAngles) -> Result<(), SynthError> {
    let (y, p) = g.to_degrees();
    if !(y.abs() <= MAX_GAZE_DEG && p.abs() <= MAX_GAZE_DEG) {
        return Err(SynthError::OutOfRangeGaze {
            yaw_deg: y,
            pitch_deg: p,
        });
    }
    Ok(())
}

fn coverage(signed_distance: f64) -> f64 {
    (signed_distance + 0.5).clamp(0.0, 1.0)
}

impl EyeModel {
    pub fn new(g: &GazeAngles, h: &HeadAngles, app: &EyeAppearance) -> Result<Self, SynthError> {
        check_range(g)?;
        Ok(Self {
            app: *app,
            center: (
                (PATCH_WIDTH as f64 - 1.0) / 2.0,
                (PATCH_HEIGHT as f64 - 1.0) / 2.0,
            ),
            iris_offset: iris_offset(g),
            aperture: app.aperture * (1.0 + 0.4 * h.pitch.sin()),
            head_shading: HEAD_SHADING * h.yaw.sin(),
        })
    }

    /// Iris centre in patch pixel coordinates.
    pub fn iris_center(&self) -> (f64, f64) {
        (
            self.center.0 + self.iris_offset.0,
            self.center.1 + self.iris_offset.1,
        )
    }

    /// Intensity at a continuous patch position, before noise and rounding.
    pub fn intensity(&self, u: f64, v: f64) -> f64 {
        let a = &self.app;
        let du = u - self.center.0;
        let dv = v - self.center.1;
        let (ox, oy) = self.iris_offset;

        let t = du / LID_HALF_WIDTH;
        let shape = (1.0 - t * t).max(0.0);
        let top = -self.aperture * shape + 0.5 * oy;
        let bottom = 0.7 * self.aperture * shape + 0.2 * oy;
        let eye_alpha = coverage((dv - top).min(bottom - dv));

        let ix = du - ox;
        let iy = dv - oy;
        let r = (ix * ix + iy * iy).sqrt();
        let iris_alpha = coverage(a.iris_radius - r);
        let pupil_alpha = coverage(a.pupil_radius - r);
        let mut inner = a.sclera + (a.iris - a.sclera) * iris_alpha;
        inner += (a.pupil - inner) * pupil_alpha;

        let half_w = self.center.0 + 0.5;
        let half_h = self.center.1 + 0.5;
        let skin = a.skin + self.head_shading * (du / half_w);
        let base = skin + (inner - skin) * eye_alpha;
        base + a.shading[0] * (du / half_w) + a.shading[1] * (dv / half_h)
    }
}

fn iris_offset(g: &GazeAngles) -> (f64, f64) {
    (KAPPA * g.yaw.tan(), -KAPPA * g.pitch.tan())
}

pub(crate) fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Renders a 60x36 right-eye patch. Noise is drawn from `app.seed`.
pub fn render_eye(
    g: &GazeAngles,
    h: &HeadAngles,
    app: &EyeAppearance,
) -> Result<GrayImage, SynthError> {
    let model = EyeModel::new(g, h, app)?;
    let mut rng = ChaCha8Rng::seed_from_u64(app.seed);
    let noise = Normal::new(0.0, app.noise_sigma.max(0.0)).expect("finite sigma");
    let noisy = app.noise_sigma > 0.0;
    Ok(GrayImage::from_fn(PATCH_WIDTH, PATCH_HEIGHT, |x, y| {
        let mut v = model.intensity(x as f64, y as f64);
        if noisy {
            v += noise.sample(&mut rng);
        }
        quantize(v)
    }))
}

/// Renders either eye: the left eye is the mirror image of a right eye
/// with mirrored angles.
pub fn render_eye_side(
    side: EyeSide,
    g: &GazeAngles,
    h: &HeadAngles,
    app: &EyeAppearance,
) -> Result<GrayImage, SynthError> {
    match side {
        EyeSide::Right => render_eye(g, h, app),
        EyeSide::Left => Ok(render_eye(&g.mirrored(), &h.mirrored(), app)?.flipped_horizontal()),
    }
}
