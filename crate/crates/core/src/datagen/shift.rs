//! Photometric domain shift. Geometry is never touched, so the source
//! depth map stays valid ground truth for the shifted frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::noise;
use super::render::{vignette, AppearanceParams};
use crate::frame::RgbFrame;

/// Image-space frequency of the texture overlay, cycles per pixel.
const OVERLAY_FREQ: f64 = 0.12;

/// Applies, in order: tone curve `I^light_falloff_exp`, per-channel colour
/// gain `base_albedo`, multiplicative texture overlay, specular highlights on
/// bright regions, vignetting and Gaussian sensor noise (seeded by `seed`).
/// [`AppearanceParams::neutral`] returns the input unchanged.
pub fn apply_domain_shift(frame: &RgbFrame, app: &AppearanceParams, seed: u64) -> RgbFrame {
    let (w, h) = (frame.width, frame.height);
    let mut out = frame.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensor = (app.noise_sigma > 0.0).then(|| Normal::new(0.0, app.noise_sigma).expect("sigma >= 0"));
    let tone = app.light_falloff_exp;
    for y in 0..h {
        for x in 0..w {
            let mut px = frame.pixel(x, y).map(|v| v as f64);
            if tone != 1.0 {
                px = px.map(|v| v.max(0.0).powf(tone));
            }
            for (v, g) in px.iter_mut().zip(app.base_albedo) {
                *v *= g;
            }
            if app.texture_strength > 0.0 {
                let n = noise::fractal3(app.texture_seed, x as f64 * OVERLAY_FREQ, y as f64 * OVERLAY_FREQ, 0.5);
                let m = 1.0 - app.texture_strength * n;
                px = px.map(|v| v * m);
            }
            if app.specular_strength > 0.0 {
                let lum = (px[0] + px[1] + px[2]) / 3.0;
                let glare = app.specular_strength * lum.clamp(0.0, 1.0).powi(4);
                px = px.map(|v| v + glare);
            }
            let vig = vignette(x, y, w, h, app.vignette_strength);
            if vig != 1.0 {
                px = px.map(|v| v * vig);
            }
            if let Some(n) = &sensor {
                for v in &mut px {
                    *v += n.sample(&mut rng);
                }
            }
            out.set_pixel(x, y, px.map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    out
}
