//! Hash-based value noise in two and three dimensions.

fn hash(mut x: u64) -> u64 {
    // SplitMix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64, iz: i64) -> f64 {
    let h = hash(seed ^ hash(ix as u64 ^ hash(iy as u64 ^ hash(iz as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Smooth value noise in [0, 1].
pub fn value3(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    let (fx, fy, fz) = (x.floor(), y.floor(), z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (fade(x - fx), fade(y - fy), fade(z - fz));
    let c = |dx, dy, dz| lattice(seed, ix + dx, iy + dy, iz + dz);
    let x00 = lerp(c(0, 0, 0), c(1, 0, 0), tx);
    let x10 = lerp(c(0, 1, 0), c(1, 1, 0), tx);
    let x01 = lerp(c(0, 0, 1), c(1, 0, 1), tx);
    let x11 = lerp(c(0, 1, 1), c(1, 1, 1), tx);
    lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
}

pub fn value2(seed: u64, x: f64, y: f64) -> f64 {
    value3(seed, x, y, 0.0)
}

/// Two-octave fractal noise in [0, 1].
pub fn fractal3(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    (2.0 * value3(seed, x, y, z) + value3(seed.wrapping_add(1), 2.0 * x, 2.0 * y, 2.0 * z)) / 3.0
}
