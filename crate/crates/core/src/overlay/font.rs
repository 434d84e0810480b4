//! Embedded stroke font for digits and `:`.
//!
//! Each glyph is a set of polylines in cell-relative coordinates (`x` across
//! the advance width, `y` down the em height, both in `[0, 1]`). Strokes are
//! rasterized as round-capped capsules with a fixed 4x4 supersampling grid,
//! so coverage depends only on the font size and never on the platform.

use alloc::vec::Vec;

type Glyph = &'static [&'static [(f64, f64)]];

/// Stroke half-width as a fraction of the font size.
const HALF_STROKE: f64 = 0.055;
const SUBSAMPLES: u32 = 4;

const DIGIT_0: Glyph = &[
    &[(0.500, 0.120), (0.425, 0.133), (0.355, 0.171), (0.295, 0.231), (0.249, 0.310), (0.220, 0.402), (0.210, 0.500), (0.220, 0.598), (0.249, 0.690), (0.295, 0.769), (0.355, 0.829), (0.425, 0.867), (0.500, 0.880), (0.575, 0.867), (0.645, 0.829), (0.705, 0.769), (0.751, 0.690), (0.780, 0.598), (0.790, 0.500), (0.780, 0.402), (0.751, 0.310), (0.705, 0.231), (0.645, 0.171), (0.575, 0.133), (0.500, 0.120)],
];

const DIGIT_1: Glyph = &[
    &[(0.300, 0.270), (0.520, 0.120), (0.520, 0.880)],
];

const DIGIT_2: Glyph = &[
    &[(0.230, 0.268), (0.259, 0.219), (0.305, 0.177), (0.365, 0.145), (0.435, 0.125), (0.510, 0.120), (0.584, 0.129), (0.652, 0.152), (0.709, 0.187), (0.751, 0.232), (0.775, 0.282), (0.779, 0.336), (0.763, 0.388), (0.220, 0.880), (0.800, 0.880)],
];

const DIGIT_3: Glyph = &[
    &[(0.264, 0.230), (0.302, 0.187), (0.353, 0.153), (0.415, 0.130), (0.483, 0.120), (0.552, 0.124), (0.618, 0.141), (0.675, 0.169), (0.719, 0.208), (0.748, 0.254), (0.760, 0.304), (0.753, 0.354), (0.728, 0.401), (0.687, 0.442), (0.632, 0.473), (0.569, 0.493), (0.500, 0.500), (0.577, 0.497), (0.648, 0.517), (0.708, 0.549), (0.754, 0.591), (0.782, 0.640), (0.790, 0.691), (0.777, 0.743), (0.745, 0.790), (0.695, 0.829), (0.631, 0.859), (0.558, 0.876), (0.481, 0.880), (0.405, 0.869), (0.336, 0.846), (0.279, 0.811), (0.237, 0.767)],
];

const DIGIT_4: Glyph = &[
    &[(0.660, 0.880), (0.660, 0.120), (0.200, 0.660), (0.820, 0.660)],
];

const DIGIT_5: Glyph = &[
    &[(0.760, 0.120), (0.300, 0.120), (0.260, 0.480), (0.278, 0.510), (0.336, 0.470), (0.406, 0.442), (0.483, 0.430), (0.561, 0.435), (0.634, 0.456), (0.698, 0.491), (0.748, 0.538), (0.779, 0.594), (0.790, 0.654), (0.780, 0.714), (0.749, 0.770), (0.700, 0.818), (0.637, 0.853), (0.563, 0.875), (0.485, 0.880), (0.408, 0.868), (0.338, 0.842), (0.280, 0.801), (0.237, 0.750)],
];

const DIGIT_6: Glyph = &[
    &[(0.780, 0.655), (0.770, 0.597), (0.742, 0.542), (0.698, 0.496), (0.640, 0.460), (0.572, 0.438), (0.500, 0.430), (0.428, 0.438), (0.360, 0.460), (0.302, 0.496), (0.258, 0.542), (0.230, 0.597), (0.220, 0.655), (0.230, 0.713), (0.258, 0.768), (0.302, 0.814), (0.360, 0.850), (0.428, 0.872), (0.500, 0.880), (0.572, 0.872), (0.640, 0.850), (0.698, 0.814), (0.742, 0.768), (0.770, 0.713), (0.780, 0.655)],
    &[(0.782, 0.128), (0.690, 0.146), (0.602, 0.175), (0.520, 0.212), (0.445, 0.259), (0.379, 0.313), (0.323, 0.374), (0.279, 0.440), (0.246, 0.511), (0.227, 0.585), (0.220, 0.660)],
];

const DIGIT_7: Glyph = &[
    &[(0.200, 0.120), (0.800, 0.120), (0.400, 0.880)],
];

const DIGIT_8: Glyph = &[
    &[(0.740, 0.300), (0.732, 0.253), (0.708, 0.210), (0.670, 0.173), (0.620, 0.144), (0.562, 0.126), (0.500, 0.120), (0.438, 0.126), (0.380, 0.144), (0.330, 0.173), (0.292, 0.210), (0.268, 0.253), (0.260, 0.300), (0.268, 0.347), (0.292, 0.390), (0.330, 0.427), (0.380, 0.456), (0.438, 0.474), (0.500, 0.480), (0.562, 0.474), (0.620, 0.456), (0.670, 0.427), (0.708, 0.390), (0.732, 0.347), (0.740, 0.300)],
    &[(0.790, 0.685), (0.780, 0.632), (0.751, 0.583), (0.705, 0.540), (0.645, 0.507), (0.575, 0.487), (0.500, 0.480), (0.425, 0.487), (0.355, 0.507), (0.295, 0.540), (0.249, 0.583), (0.220, 0.632), (0.210, 0.685), (0.220, 0.738), (0.249, 0.788), (0.295, 0.830), (0.355, 0.863), (0.425, 0.883), (0.500, 0.890), (0.575, 0.883), (0.645, 0.863), (0.705, 0.830), (0.751, 0.788), (0.780, 0.738), (0.790, 0.685)],
];

const DIGIT_9: Glyph = &[
    &[(0.780, 0.345), (0.770, 0.287), (0.742, 0.232), (0.698, 0.186), (0.640, 0.150), (0.572, 0.128), (0.500, 0.120), (0.428, 0.128), (0.360, 0.150), (0.302, 0.186), (0.258, 0.232), (0.230, 0.287), (0.220, 0.345), (0.230, 0.403), (0.258, 0.458), (0.302, 0.504), (0.360, 0.540), (0.428, 0.562), (0.500, 0.570), (0.572, 0.562), (0.640, 0.540), (0.698, 0.504), (0.742, 0.458), (0.770, 0.403), (0.780, 0.345)],
    &[(0.218, 0.872), (0.310, 0.854), (0.398, 0.825), (0.480, 0.788), (0.555, 0.741), (0.621, 0.687), (0.677, 0.626), (0.721, 0.560), (0.754, 0.489), (0.773, 0.415), (0.780, 0.340)],
];

const COLON: Glyph = &[
    &[(0.500, 0.360)],
    &[(0.500, 0.800)],
];

fn glyph(ch: char) -> Option<Glyph> {
    Some(match ch {
        '0' => DIGIT_0,
        '1' => DIGIT_1,
        '2' => DIGIT_2,
        '3' => DIGIT_3,
        '4' => DIGIT_4,
        '5' => DIGIT_5,
        '6' => DIGIT_6,
        '7' => DIGIT_7,
        '8' => DIGIT_8,
        '9' => DIGIT_9,
        ':' => COLON,
        _ => return None,
    })
}

pub fn supports(ch: char) -> bool {
    glyph(ch).is_some()
}

/// Horizontal advance of `ch` in pixels: 0.6 em for digits, 0.3 em for `:`.
pub fn advance(ch: char, size: u32) -> u32 {
    if ch == ':' {
        (size * 3 + 5) / 10
    } else {
        (size * 6 + 5) / 10
    }
}

/// Size of the box `text` occupies at `size` pixels.
pub fn text_extent(text: &str, size: u32) -> (u32, u32) {
    (text.chars().map(|c| advance(c, size)).sum(), size)
}

/// Antialiased coverage of a rendered string, one alpha byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMask {
    pub width: u32,
    pub height: u32,
    pub alpha: Vec<u8>,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    ax: f64,
    ay: f64,
    dx: f64,
    dy: f64,
    len2: f64,
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl Segment {
    fn new(a: (f64, f64), b: (f64, f64), pad: f64) -> Self {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        Self {
            ax: a.0,
            ay: a.1,
            dx,
            dy,
            len2: dx * dx + dy * dy,
            min_x: a.0.min(b.0) - pad,
            max_x: a.0.max(b.0) + pad,
            min_y: a.1.min(b.1) - pad,
            max_y: a.1.max(b.1) + pad,
        }
    }

    fn dist2(&self, px: f64, py: f64) -> f64 {
        let (rx, ry) = (px - self.ax, py - self.ay);
        let t = if self.len2 == 0.0 {
            0.0
        } else {
            ((rx * self.dx + ry * self.dy) / self.len2).clamp(0.0, 1.0)
        };
        let (qx, qy) = (rx - t * self.dx, ry - t * self.dy);
        qx * qx + qy * qy
    }
}

/// Rasterizes `text` at `size` pixels. Returns `None` if any character has
/// no glyph.
pub fn rasterize(text: &str, size: u32) -> Option<CoverageMask> {
    let (width, height) = text_extent(text, size);
    let mut alpha = alloc::vec![0u8; width as usize * height as usize];
    let half = HALF_STROKE * size as f64;
    let half2 = half * half;
    let step = 1.0 / SUBSAMPLES as f64;
    let full = SUBSAMPLES * SUBSAMPLES;

    let mut x0 = 0u32;
    let mut segments = Vec::new();
    for ch in text.chars() {
        let strokes = glyph(ch)?;
        let cell_w = advance(ch, size);
        let to_px = |(u, v): (f64, f64)| (x0 as f64 + u * cell_w as f64, v * size as f64);

        segments.clear();
        for stroke in strokes {
            match stroke {
                [p] => segments.push(Segment::new(to_px(*p), to_px(*p), half)),
                _ => segments.extend(
                    stroke
                        .windows(2)
                        .map(|w| Segment::new(to_px(w[0]), to_px(w[1]), half)),
                ),
            }
        }

        for py in 0..height {
            for px in x0..x0 + cell_w {
                let mut hits = 0u32;
                for sy in 0..SUBSAMPLES {
                    let y = py as f64 + (sy as f64 + 0.5) * step;
                    for sx in 0..SUBSAMPLES {
                        let x = px as f64 + (sx as f64 + 0.5) * step;
                        let inside = segments.iter().any(|s| {
                            x >= s.min_x
                                && x <= s.max_x
                                && y >= s.min_y
                                && y <= s.max_y
                                && s.dist2(x, y) <= half2
                        });
                        hits += inside as u32;
                    }
                }
                alpha[(py * width + px) as usize] = ((hits * 255 + full / 2) / full) as u8;
            }
        }
        x0 += cell_w;
    }

    Some(CoverageMask {
        width,
        height,
        alpha,
    })
}
