//! Procedural handwritten-style digits in the MNIST layout (28x28 grayscale).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIGIT_SIDE: usize = 28;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64) -> Stroke {
    let steps = (((a1 - a0).abs() / 15.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let a = (a0 + (a1 - a0) * i as f64 / steps as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Glyph skeletons in a unit box, y pointing down.
fn glyph(d: usize) -> Vec<Stroke> {
    match d {
        0 => vec![arc(0.5, 0.5, 0.22, 0.36, 0.0, 360.0)],
        1 => vec![vec![(0.38, 0.26), (0.53, 0.12), (0.53, 0.88)]],
        2 => {
            let mut s = arc(0.5, 0.32, 0.2, 0.2, 190.0, 390.0);
            s.extend([(0.27, 0.88), (0.76, 0.88)]);
            vec![s]
        }
        3 => {
            let mut s = arc(0.48, 0.3, 0.2, 0.18, 200.0, 450.0);
            s.extend(arc(0.48, 0.68, 0.23, 0.2, 270.0, 500.0));
            vec![s]
        }
        4 => vec![vec![(0.63, 0.88), (0.63, 0.12), (0.25, 0.62), (0.78, 0.62)]],
        5 => {
            let mut s = vec![(0.72, 0.12), (0.33, 0.12), (0.3, 0.46)];
            s.extend(arc(0.48, 0.65, 0.23, 0.23, 220.0, 500.0));
            vec![s]
        }
        6 => vec![
            arc(0.62, 0.56, 0.31, 0.44, 265.0, 180.0),
            arc(0.5, 0.68, 0.2, 0.2, 0.0, 360.0),
        ],
        7 => vec![vec![(0.24, 0.12), (0.76, 0.12), (0.42, 0.88)]],
        8 => vec![
            arc(0.5, 0.3, 0.18, 0.18, 0.0, 360.0),
            arc(0.5, 0.68, 0.22, 0.21, 0.0, 360.0),
        ],
        _ => vec![
            arc(0.5, 0.32, 0.2, 0.2, 0.0, 360.0),
            vec![(0.7, 0.32), (0.62, 0.88)],
        ],
    }
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn render_one(digit: usize, rng: &mut ChaCha8Rng, out: &mut [u8]) {
    let s = DIGIT_SIDE as f64;
    let rot = rng.gen_range(-14f64..14.0).to_radians();
    let shear = rng.gen_range(-0.25..0.25);
    let (sx, sy) = (rng.gen_range(0.8..1.05), rng.gen_range(0.85..1.05));
    let (tx, ty) = (rng.gen_range(-0.07..0.07), rng.gen_range(-0.06..0.06));
    let half_width = rng.gen_range(0.9..1.7);
    let ink = rng.gen_range(0.8..1.0);
    let jitter = 0.02;

    let (c, si) = (rot.cos(), rot.sin());
    let strokes: Vec<Stroke> = glyph(digit)
        .into_iter()
        .map(|st| {
            st.into_iter()
                .map(|(x, y)| {
                    let x = x + rng.gen_range(-jitter..jitter) - 0.5;
                    let y = y + rng.gen_range(-jitter..jitter) - 0.5;
                    let (x, y) = (sx * (x + shear * y), sy * y);
                    let (x, y) = (c * x - si * y, si * x + c * y);
                    // 20-pixel glyph box centred in the 28-pixel frame.
                    ((x + tx) * 20.0 + s / 2.0, (y + ty) * 20.0 + s / 2.0)
                })
                .collect()
        })
        .collect();

    for py in 0..DIGIT_SIDE {
        for px in 0..DIGIT_SIDE {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|st| st.windows(2).map(move |w| seg_dist(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            let v = (half_width + 0.5 - d).clamp(0.0, 1.0) * ink;
            out[py * DIGIT_SIDE + px] = (v * 255.0).round() as u8;
        }
    }
}

/// Renders `n` digits with random class, pose, and stroke width. Returns
/// (pixels, `n * 28 * 28` bytes row-major; labels).
pub fn render_digits(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0u8; n * DIGIT_SIDE * DIGIT_SIDE];
    let mut labels = Vec::with_capacity(n);
    for img in pixels.chunks_mut(DIGIT_SIDE * DIGIT_SIDE) {
        let d = rng.gen_range(0..10);
        render_one(d, &mut rng, img);
        labels.push(d as u8);
    }
    (pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_are_deterministic_and_inked() {
        let (a, la) = render_digits(20, 3);
        let (b, lb) = render_digits(20, 3);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        for img in a.chunks(DIGIT_SIDE * DIGIT_SIDE) {
            let ink = img.iter().filter(|&&p| p > 128).count();
            assert!(ink > 20 && ink < 400, "ink pixels {ink}");
        }
        assert!(la.iter().all(|&l| l < 10));
    }
}
