use rand::Rng;

use super::atlas::{AtlasLayout, Part, Rect, NUM_PARTS};
use crate::render::io::{dequantize, quantize};
use crate::render::{BACKGROUND, TEXTURE_SIZE};
use crate::tensor::Tensor;

/// RGB colour in `[0, 1]`.
pub type Rgb = [f64; 3];

/// Repeating motif painted over a part rectangle.
#[derive(Clone, Debug, PartialEq)]
pub enum Pattern {
    Solid,
    /// Square-wave stripes with `frequency` full periods across the rectangle.
    /// Vertical stripes repeat along the columns, horizontal ones along the rows.
    Stripes {
        vertical: bool,
        frequency: u32,
        phase: f64,
        accent: Rgb,
    },
    Checker {
        cells: u32,
        phase: f64,
        accent: Rgb,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartPaint {
    pub base: Rgb,
    pub pattern: Pattern,
}

/// Face drawn over a skin tone: two dark elliptical eyes and a mouth.
/// Positions are fractions of the face rectangle, radii are in texels.
#[derive(Clone, Debug, PartialEq)]
pub struct FacePaint {
    pub eye: Rgb,
    pub mouth: Rgb,
    pub eye_row: f64,
    pub eye_spread: f64,
    pub eye_radius: [f64; 2],
    pub mouth_row: f64,
    pub mouth_radius: [f64; 2],
}

/// Everything needed to paint one identity's texture.
#[derive(Clone, Debug, PartialEq)]
pub struct Paint {
    pub parts: [PartPaint; NUM_PARTS],
    pub skin: Rgb,
    pub hair: Rgb,
    /// Hair rows above the face and on the back of the head.
    pub hair_rows: [usize; 2],
    pub face: FacePaint,
}

const SKIN_TONES: [Rgb; 5] = [[0.96, 0.80, 0.69], [0.89, 0.67, 0.52], [0.76, 0.53, 0.38], [0.55, 0.37, 0.25], [0.36, 0.23, 0.15]];

fn colour<R: Rng>(rng: &mut R) -> Rgb {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

/// A colour at L1 distance at least 0.9 from `base`.
fn contrasting<R: Rng>(rng: &mut R, base: Rgb) -> Rgb {
    loop {
        let c = colour(rng);
        if c.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum::<f64>() >= 0.9 {
            return c;
        }
    }
}

impl Paint {
    /// Draws a random paint. The torso is always striped.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let skin = SKIN_TONES[rng.gen_range(0..SKIN_TONES.len())];
        let hair = [rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.2), rng.gen_range(0.0..0.12)];
        let parts = std::array::from_fn(|p| {
            let base = colour(rng);
            let pattern = match (Part::ALL[p], rng.gen_range(0..3)) {
                (Part::Head, _) => Pattern::Solid,
                (Part::Torso, _) | (_, 1) => Pattern::Stripes {
                    vertical: rng.gen_bool(0.5),
                    frequency: rng.gen_range(2..=6),
                    phase: rng.gen_range(0.0..1.0),
                    accent: contrasting(rng, base),
                },
                (_, 2) => Pattern::Checker { cells: rng.gen_range(2..=5), phase: rng.gen_range(0.0..1.0), accent: contrasting(rng, base) },
                _ => Pattern::Solid,
            };
            PartPaint { base: if p == Part::Head as usize { skin } else { base }, pattern }
        });
        let face = FacePaint {
            eye: [rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.2)],
            mouth: [rng.gen_range(0.6..0.9), rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.3)],
            eye_row: rng.gen_range(0.3..0.4),
            eye_spread: rng.gen_range(0.18..0.24),
            eye_radius: [rng.gen_range(1.2..2.0), rng.gen_range(1.8..2.8)],
            mouth_row: rng.gen_range(0.7..0.8),
            mouth_radius: [rng.gen_range(0.9..1.4), rng.gen_range(3.0..5.0)],
        };
        Self { parts, skin, hair, hair_rows: [rng.gen_range(2..=4), rng.gen_range(10..=16)], face }
    }

    /// Colour of texel `(row, col)`, or `None` outside every part rectangle.
    pub fn texel(&self, atlas: &AtlasLayout, row: usize, col: usize) -> Option<Rgb> {
        let part = atlas.part_at(row, col)?;
        let rect = atlas.rect(part);
        if part == Part::Head {
            return Some(self.head_texel(atlas, rect, row, col));
        }
        let paint = &self.parts[part as usize];
        let u = (col - rect.x0) as f64 + 0.5;
        let v = (row - rect.y0) as f64 + 0.5;
        Some(match paint.pattern {
            Pattern::Solid => paint.base,
            Pattern::Stripes { vertical, frequency, phase, accent } => {
                let x = if vertical { u / rect.width() as f64 } else { v / rect.height() as f64 };
                if (frequency as f64 * x + phase).fract() < 0.5 {
                    paint.base
                } else {
                    accent
                }
            }
            Pattern::Checker { cells, phase, accent } => {
                let a = (cells as f64 * u / rect.width() as f64 + phase).floor() as i64;
                let b = (cells as f64 * v / rect.height() as f64 + phase).floor() as i64;
                if (a + b).rem_euclid(2) == 0 {
                    paint.base
                } else {
                    accent
                }
            }
        })
    }

    fn head_texel(&self, atlas: &AtlasLayout, rect: Rect, row: usize, col: usize) -> Rgb {
        let face = atlas.face;
        if face.contains(row, col) {
            return self.face_texel(face, row, col);
        }
        let beside_face = (face.x0..face.x1).contains(&col);
        let depth = if beside_face { self.hair_rows[0] } else { self.hair_rows[1] };
        if row < rect.y0 + depth {
            self.hair
        } else {
            self.skin
        }
    }

    fn face_texel(&self, face: Rect, row: usize, col: usize) -> Rgb {
        let f = &self.face;
        let (y, x) = (row as f64 + 0.5, col as f64 + 0.5);
        let (fy, fx) = (face.y0 as f64, face.x0 as f64);
        let (h, w) = (face.height() as f64, face.width() as f64);
        let inside = |cy: f64, cx: f64, r: [f64; 2]| ((y - cy) / r[0]).powi(2) + ((x - cx) / r[1]).powi(2) <= 1.0;
        let eye_y = fy + f.eye_row * h;
        for side in [-1.0, 1.0] {
            if inside(eye_y, fx + (0.5 + side * f.eye_spread) * w, f.eye_radius) {
                return f.eye;
            }
        }
        if inside(fy + f.mouth_row * h, fx + 0.5 * w, f.mouth_radius) {
            return f.mouth;
        }
        self.skin
    }

    /// Paints the full `(3, 128, 128)` texture in network range, quantized to
    /// 8 bits. Texels outside the atlas take the quantized background.
    pub fn texture(&self, atlas: &AtlasLayout) -> Tensor<f64> {
        let n = TEXTURE_SIZE;
        let mut data = vec![dequantize(quantize(BACKGROUND)); 3 * n * n];
        for row in 0..n {
            for col in 0..n {
                if let Some(rgb) = self.texel(atlas, row, col) {
                    for (c, v) in rgb.iter().enumerate() {
                        data[c * n * n + row * n + col] = dequantize(quantize(2.0 * v - 1.0));
                    }
                }
            }
        }
        Tensor::new(&[3, n, n], data).expect("texture buffer matches its shape")
    }
}
