//! Analytic shape membership tests and background texture.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
    Cross,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Circle,
        ShapeClass::Square,
        ShapeClass::Triangle,
        ShapeClass::Cross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Circle => "circle",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Cross => "cross",
        }
    }

    pub(crate) fn is_rotatable(self) -> bool {
        !matches!(self, ShapeClass::Circle)
    }
}

/// Pixel-center membership test. `(dx, dy)` is the offset from the shape
/// center, `half` the half-extent, `theta` the shape rotation.
pub(crate) fn contains(class: ShapeClass, dx: f32, dy: f32, half: f32, theta: f32) -> bool {
    // Rotate the query point by -theta instead of rotating the shape.
    let (s, c) = (libm::sinf(theta), libm::cosf(theta));
    let rx = dx * c + dy * s;
    let ry = -dx * s + dy * c;
    match class {
        ShapeClass::Circle => dx * dx + dy * dy <= half * half,
        ShapeClass::Square => {
            let r = half * 0.82;
            rx.abs() <= r && ry.abs() <= r
        }
        ShapeClass::Triangle => {
            // Equilateral triangle with circumradius `half`, apex up.
            let vx = |k: usize| -> (f32, f32) {
                let ang = core::f32::consts::FRAC_PI_2 + k as f32 * 2.0 * core::f32::consts::PI / 3.0;
                (half * libm::cosf(ang), -half * libm::sinf(ang))
            };
            let (x0, y0) = vx(0);
            let (x1, y1) = vx(1);
            let (x2, y2) = vx(2);
            let edge = |ax: f32, ay: f32, bx: f32, by: f32| -> f32 {
                (bx - ax) * (ry - ay) - (by - ay) * (rx - ax)
            };
            let d0 = edge(x0, y0, x1, y1);
            let d1 = edge(x1, y1, x2, y2);
            let d2 = edge(x2, y2, x0, y0);
            (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
        }
        ShapeClass::Cross => {
            let arm = half * 0.35;
            (rx.abs() <= half && ry.abs() <= arm) || (ry.abs() <= half && rx.abs() <= arm)
        }
    }
}

/// Two oriented sinusoidal gratings; a cheap deterministic texture.
pub(crate) struct Gratings {
    waves: [(f32, f32, f32, f32); 2], // (kx, ky, phase, amplitude)
}

impl Gratings {
    pub(crate) fn sample(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let wave = |rng: &mut ChaCha8Rng| {
            let cycles: f32 = rng.gen_range(2.0..6.0);
            let orient: f32 = rng.gen_range(0.0..core::f32::consts::PI);
            let k = 2.0 * core::f32::consts::PI * cycles / size as f32;
            (
                k * libm::cosf(orient),
                k * libm::sinf(orient),
                rng.gen_range(0.0..2.0 * core::f32::consts::PI),
                rng.gen_range(0.05..0.14),
            )
        };
        Gratings {
            waves: [wave(rng), wave(rng)],
        }
    }

    pub(crate) fn eval(&self, x: f32, y: f32) -> f32 {
        self.waves
            .iter()
            .map(|&(kx, ky, phase, amp)| amp * libm::sinf(kx * x + ky * y + phase))
            .sum()
    }
}
