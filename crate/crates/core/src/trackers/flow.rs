//! Sparse pyramidal Lucas-Kanade optical flow.

use crate::dataio::Frame;

use super::MedianFlowParams;

/// Points whose structure matrix has a smaller eigenvalue below this are rejected.
/// The matrix is averaged over the window, intensities scaled to [0, 1].
pub const MIN_EIGENVALUE: f64 = 1e-4;
/// Iteration stops once the update step is shorter than this many pixels.
pub const CONVERGENCE_EPS: f64 = 0.03;
const MIN_LEVEL_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Converged,
    /// Too little texture around the point at some pyramid level.
    IllConditioned,
    /// Iteration budget exhausted at the finest level.
    Diverged,
    /// The tracked position left the image.
    OutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPoint {
    pub point: (f64, f64),
    pub status: FlowStatus,
}

impl FlowPoint {
    pub fn ok(&self) -> bool {
        self.status == FlowStatus::Converged
    }
}

struct Level {
    width: usize,
    height: usize,
    data: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
}

impl Level {
    fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        let mut grad_x = vec![0.0; data.len()];
        let mut grad_y = vec![0.0; data.len()];
        let at = |x: usize, y: usize| data[y * width + x];
        for y in 0..height {
            for x in 0..width {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(height - 1));
                grad_x[y * width + x] = (at(xr, y) - at(xl, y)) / 2.0;
                grad_y[y * width + x] = (at(x, yd) - at(x, yu)) / 2.0;
            }
        }
        Self { width, height, data, grad_x, grad_y }
    }

    fn sample(buf: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (width - 1) as f64);
        let y = y.clamp(0.0, (height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
        let (ax, ay) = (x - x0 as f64, y - y0 as f64);
        let top = buf[y0 * width + x0] * (1.0 - ax) + buf[y0 * width + x1] * ax;
        let bottom = buf[y1 * width + x0] * (1.0 - ax) + buf[y1 * width + x1] * ax;
        top * (1.0 - ay) + bottom * ay
    }

    /// Samples the `(2 half + 1)^2` window centred on `(cx, cy)` into `out`,
    /// rows outermost. Interior windows share one set of bilinear weights.
    fn window(buf: &[f64], width: usize, height: usize, cx: f64, cy: f64, half: i64, out: &mut [f64]) {
        let (fx, fy) = (cx.floor(), cy.floor());
        let (x0, y0) = (fx as i64 - half, fy as i64 - half);
        let side = 2 * half + 1;
        let interior = x0 >= 0 && y0 >= 0 && x0 + side < width as i64 && y0 + side < height as i64;
        if !interior {
            let mut i = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    out[i] = Self::sample(buf, width, height, cx + dx as f64, cy + dy as f64);
                    i += 1;
                }
            }
            return;
        }
        let (ax, ay) = (cx - fx, cy - fy);
        let (w00, w01, w10, w11) = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
        let side = side as usize;
        for r in 0..side {
            let top = (y0 as usize + r) * width + x0 as usize;
            let bottom = top + width;
            for c in 0..side {
                out[r * side + c] =
                    buf[top + c] * w00 + buf[top + c + 1] * w01 + buf[bottom + c] * w10 + buf[bottom + c + 1] * w11;
            }
        }
    }

    fn downsample(&self) -> Option<Level> {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        if w < MIN_LEVEL_SIZE || h < MIN_LEVEL_SIZE {
            return None;
        }
        const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (sw, sh) = (self.width as i64, self.height as i64);
        // Horizontal pass on every source row, keeping even columns.
        let mut tmp = vec![0.0; w * self.height];
        for y in 0..self.height {
            for x in 0..w {
                let cx = 2 * x as i64;
                tmp[y * w + x] = TAPS
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * self.data[y * self.width + (cx + k as i64 - 2).clamp(0, sw - 1) as usize])
                    .sum();
            }
        }
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            let cy = 2 * y as i64;
            for x in 0..w {
                data[y * w + x] = TAPS
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * tmp[(cy + k as i64 - 2).clamp(0, sh - 1) as usize * w + x])
                    .sum();
            }
        }
        Some(Level::new(w, h, data))
    }
}

/// Gaussian image pyramid with per-level gradients. Level 0 is full resolution.
pub struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    pub fn build(frame: &Frame, max_levels: usize) -> Self {
        let base: Vec<f64> = frame.pixels().iter().map(|&p| p as f64 / 255.0).collect();
        let mut levels = vec![Level::new(frame.width(), frame.height(), base)];
        while levels.len() < max_levels.max(1) {
            match levels.last().expect("non-empty").downsample() {
                Some(next) => levels.push(next),
                None => break,
            }
        }
        Self { levels }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Tracks `points` from `prev` into `next`.
pub fn track_points(
    prev: &Pyramid,
    next: &Pyramid,
    points: &[(f64, f64)],
    params: &MedianFlowParams,
) -> Vec<FlowPoint> {
    let depth = prev.depth().min(next.depth());
    points.iter().map(|&p| track_one(prev, next, depth, p, params)).collect()
}

fn track_one(prev: &Pyramid, next: &Pyramid, depth: usize, pt: (f64, f64), params: &MedianFlowParams) -> FlowPoint {
    let half = params.lk_window as i64;
    let size = ((2 * half + 1) * (2 * half + 1)) as usize;
    let count = size as f64;
    let mut guess = (0.0, 0.0);
    let mut template = vec![0.0; size];
    let mut gx = vec![0.0; size];
    let mut gy = vec![0.0; size];
    let mut warped = vec![0.0; size];

    for level in (0..depth).rev() {
        let scale = (1u64 << level) as f64;
        let (px, py) = (pt.0 / scale, pt.1 / scale);
        let src = &prev.levels[level];
        let dst = &next.levels[level];

        Level::window(&src.data, src.width, src.height, px, py, half, &mut template);
        Level::window(&src.grad_x, src.width, src.height, px, py, half, &mut gx);
        Level::window(&src.grad_y, src.width, src.height, px, py, half, &mut gy);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for (x, y) in gx.iter().zip(&gy) {
            a += x * x;
            b += x * y;
            c += y * y;
        }
        let (a, b, c) = (a / count, b / count, c / count);
        let min_eig = ((a + c) - ((a - c) * (a - c) + 4.0 * b * b).sqrt()) / 2.0;
        if min_eig < MIN_EIGENVALUE {
            return FlowPoint { point: pt, status: FlowStatus::IllConditioned };
        }
        let det = a * c - b * b;

        let mut step = (0.0, 0.0);
        let mut converged = false;
        for _ in 0..params.lk_iterations {
            let (qx, qy) = (px + guess.0 + step.0, py + guess.1 + step.1);
            Level::window(&dst.data, dst.width, dst.height, qx, qy, half, &mut warped);
            let (mut bx, mut by) = (0.0, 0.0);
            for i in 0..size {
                let diff = template[i] - warped[i];
                bx += diff * gx[i];
                by += diff * gy[i];
            }
            let (bx, by) = (bx / count, by / count);
            let eta = ((c * bx - b * by) / det, (a * by - b * bx) / det);
            step.0 += eta.0;
            step.1 += eta.1;
            if eta.0.hypot(eta.1) < CONVERGENCE_EPS {
                converged = true;
                break;
            }
        }
        if level == 0 {
            let point = (pt.0 + guess.0 + step.0, pt.1 + guess.1 + step.1);
            let inside = point.0 >= 0.0
                && point.1 >= 0.0
                && point.0 <= (dst.width - 1) as f64
                && point.1 <= (dst.height - 1) as f64;
            let status = if !inside {
                FlowStatus::OutOfBounds
            } else if converged {
                FlowStatus::Converged
            } else {
                FlowStatus::Diverged
            };
            return FlowPoint { point, status };
        }
        guess = (2.0 * (guess.0 + step.0), 2.0 * (guess.1 + step.1));
    }
    unreachable!("pyramid has at least one level")
}

/// Builds pyramids for both frames and tracks `points` from `prev` to `next`.
pub fn lk_flow(prev: &Frame, next: &Frame, points: &[(f64, f64)], params: &MedianFlowParams) -> Vec<FlowPoint> {
    let a = Pyramid::build(prev, params.pyramid_levels);
    let b = Pyramid::build(next, params.pyramid_levels);
    track_points(&a, &b, points, params)
}
