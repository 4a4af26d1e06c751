use image::{Rgb, RgbImage};

/// Canonical five-point landmark positions for a 112×112 face crop.
pub const ARCFACE_TEMPLATE_112: [[f64; 2]; 5] = [
    [38.2946, 51.6963],
    [73.5318, 51.5014],
    [56.0252, 71.7366],
    [41.5493, 92.3655],
    [70.7299, 92.2041],
];

/// `dst = [a -b; b a] * src + t` (rotation + uniform scale + translation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    /// Least-squares similarity mapping `src` onto `dst`. Treating points as
    /// complex numbers the optimum is `z = Σ conj(p̃) q̃ / Σ |p̃|²` over the
    /// centered sets. `None` when the source points are degenerate.
    pub fn estimate(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Option<Self> {
        if src.len() != dst.len() || src.len() < 2 {
            return None;
        }
        let n = src.len() as f64;
        let mean = |pts: &[[f64; 2]]| {
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
            [sx / n, sy / n]
        };
        let ms = mean(src);
        let md = mean(dst);
        let (mut num_re, mut num_im, mut den) = (0.0, 0.0, 0.0);
        for (p, q) in src.iter().zip(dst) {
            let (px, py) = (p[0] - ms[0], p[1] - ms[1]);
            let (qx, qy) = (q[0] - md[0], q[1] - md[1]);
            num_re += px * qx + py * qy;
            num_im += px * qy - py * qx;
            den += px * px + py * py;
        }
        if den <= f64::EPSILON {
            return None;
        }
        let a = num_re / den;
        let b = num_im / den;
        Some(Self {
            a,
            b,
            tx: md[0] - (a * ms[0] - b * ms[1]),
            ty: md[1] - (b * ms[0] + a * ms[1]),
        })
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn inverse(&self) -> Self {
        let s = self.a * self.a + self.b * self.b;
        let (ia, ib) = (self.a / s, -self.b / s);
        Self {
            a: ia,
            b: ib,
            tx: -(ia * self.tx - ib * self.ty),
            ty: -(ib * self.tx + ia * self.ty),
        }
    }

    /// Renders a `width`×`height` image by pulling each output pixel from
    /// the source through the inverse transform (bilinear, black border).
    pub fn warp(&self, src: &RgbImage, width: u32, height: u32) -> RgbImage {
        let inv = self.inverse();
        RgbImage::from_fn(width, height, |u, v| {
            let [x, y] = inv.apply([f64::from(u), f64::from(v)]);
            bilinear(src, x, y)
        })
    }
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |xi: f64, yi: f64| -> [f64; 3] {
        if xi < 0.0 || yi < 0.0 || xi >= f64::from(w) || yi >= f64::from(h) {
            [0.0; 3]
        } else {
            let p = img.get_pixel(xi as u32, yi as u32);
            [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]
        }
    };
    let p00 = sample(x0, y0);
    let p10 = sample(x0 + 1.0, y0);
    let p01 = sample(x0, y0 + 1.0);
    let p11 = sample(x0 + 1.0, y0 + 1.0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_similarity() {
        let truth = SimilarityTransform {
            a: 0.8,
            b: -0.3,
            tx: 12.0,
            ty: -4.5,
        };
        let src = [[10.0, 20.0], [50.0, 22.0], [31.0, 40.0], [15.0, 60.0], [47.0, 61.0]];
        let dst: Vec<[f64; 2]> = src.iter().map(|&p| truth.apply(p)).collect();
        let est = SimilarityTransform::estimate(&src, &dst).unwrap();
        for (got, want) in [est.a, est.b, est.tx, est.ty]
            .iter()
            .zip([truth.a, truth.b, truth.tx, truth.ty])
        {
            assert!((got - want).abs() < 1e-9);
        }
        let round = est.inverse().apply(est.apply([3.0, 7.0]));
        assert!((round[0] - 3.0).abs() < 1e-9 && (round[1] - 7.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_points_rejected() {
        let p = [[1.0, 1.0]; 5];
        assert!(SimilarityTransform::estimate(&p, &ARCFACE_TEMPLATE_112).is_none());
    }
}
