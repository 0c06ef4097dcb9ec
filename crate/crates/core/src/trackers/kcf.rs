//! Kernelized correlation filter with raw-intensity features and a Gaussian kernel.
//!
//! Conventions, with `S_u` the cyclic shift `(S_u x)[p] = x[p + u]` and `N` the
//! window size in pixels:
//!
//! * kernel correlation `k^{ab}[u] = exp(-|S_u a - b|^2 / (sigma^2 N))`
//! * training `alpha_hat = y_hat / (k_hat^{xx} + lambda)`, with the label `y`
//!   a Gaussian centred on lag zero
//! * response `r = real(idft(alpha_hat * k_hat^{zx}))`, so `r[u]` scores the
//!   hypothesis that the target moved by `u`
//!
//! The window is fixed at initialization (no scale adaptation).

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::dataio::Frame;
use crate::geometry::BoundingBox;

use super::dft::Dft2d;
use super::{check_init_box, KcfParams, Tracker, TrackerError, TrackerUpdate};

/// Pixel rectangle a window was cut from: top-left corner and size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRect {
    pub x0: i64,
    pub y0: i64,
    pub cols: usize,
    pub rows: usize,
}

struct State {
    dft: Dft2d,
    rows: usize,
    cols: usize,
    cos_window: Array2<f64>,
    label_hat: Array2<Complex64>,
    model_x_hat: Array2<Complex64>,
    model_alpha_hat: Array2<Complex64>,
    center: (f64, f64),
    size: (f64, f64),
}

pub struct KcfTracker {
    params: KcfParams,
    state: Option<State>,
    last_response: Option<Array2<f64>>,
    last_imag_residue: f64,
    last_window: Option<WindowRect>,
}

/// Smallest even integer >= `v` (and >= 4).
fn even_at_least(v: f64) -> usize {
    let n = (v - 1e-9).ceil().max(4.0) as usize;
    n + n % 2
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())).collect()
}

/// Signed cyclic lag of index `i` in a period `n`; lags above `n / 2` wrap negative.
pub(crate) fn wrapped_lag(i: usize, n: usize) -> i64 {
    if i > n / 2 {
        i as i64 - n as i64
    } else {
        i as i64
    }
}

impl KcfTracker {
    pub fn new(params: KcfParams) -> Self {
        Self { params, state: None, last_response: None, last_imag_residue: 0.0, last_window: None }
    }

    /// Response map of the most recent update, indexed `[row_lag, col_lag]`.
    pub fn last_response(&self) -> Option<&Array2<f64>> {
        self.last_response.as_ref()
    }

    /// Largest imaginary magnitude discarded from the most recent response.
    pub fn last_imag_residue(&self) -> f64 {
        self.last_imag_residue
    }

    /// Window used by the most recent `init` or `update`.
    pub fn last_window(&self) -> Option<WindowRect> {
        self.last_window
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        let s = self.state.as_ref()?;
        BoundingBox::from_center(s.center.0, s.center.1, s.size.0, s.size.1).ok()
    }

    fn window_rect(center: (f64, f64), rows: usize, cols: usize) -> WindowRect {
        WindowRect {
            x0: (center.0 - cols as f64 / 2.0).round() as i64,
            y0: (center.1 - rows as f64 / 2.0).round() as i64,
            cols,
            rows,
        }
    }

    /// Zero-mean intensities in [0, 1], multiplied by the cosine window.
    fn features(frame: &Frame, rect: WindowRect, cos_window: &Array2<f64>) -> Array2<f64> {
        let mut patch = Array2::from_shape_fn((rect.rows, rect.cols), |(r, c)| {
            frame.get_clamped(rect.x0 + c as i64, rect.y0 + r as i64) as f64 / 255.0
        });
        let mean = patch.mean().unwrap_or(0.0);
        patch.mapv_inplace(|v| v - mean);
        patch * cos_window
    }

    fn kernel_correlation(
        dft: &Dft2d,
        sigma: f64,
        a_hat: &Array2<Complex64>,
        b_hat: &Array2<Complex64>,
    ) -> Array2<Complex64> {
        let n = a_hat.len() as f64;
        let aa = a_hat.iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        let bb = b_hat.iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        let cross = dft.inverse(&(a_hat * &b_hat.mapv(|v| v.conj())));
        let k = cross.mapv(|c| Complex64::new((-((aa + bb - 2.0 * c.re).max(0.0)) / (sigma * sigma * n)).exp(), 0.0));
        dft.forward(&k)
    }

    fn train(&self, state: &State, x_hat: &Array2<Complex64>) -> Array2<Complex64> {
        let k_hat = Self::kernel_correlation(&state.dft, self.params.kernel_sigma, x_hat, x_hat);
        let lambda = self.params.lambda;
        ndarray::Zip::from(&state.label_hat).and(&k_hat).map_collect(|y, k| y / (k + lambda))
    }
}

impl Tracker for KcfTracker {
    fn init(&mut self, frame: &Frame, bbox: BoundingBox) -> Result<(), TrackerError> {
        if self.state.is_some() {
            return Err(TrackerError::AlreadyInitialized);
        }
        self.params.validate()?;
        check_init_box(frame, &bbox)?;
        let cols = even_at_least(bbox.w() * self.params.padding);
        let rows = even_at_least(bbox.h() * self.params.padding);
        let (hr, hc) = (hann(rows), hann(cols));
        let cos_window = Array2::from_shape_fn((rows, cols), |(r, c)| hr[r] * hc[c]);

        let sigma = (bbox.w() * bbox.h()).sqrt() * self.params.output_sigma_factor;
        let label = Array2::from_shape_fn((rows, cols), |(r, c)| {
            let (dr, dc) = (wrapped_lag(r, rows) as f64, wrapped_lag(c, cols) as f64);
            (-0.5 * (dr * dr + dc * dc) / (sigma * sigma)).exp()
        });
        let dft = Dft2d::new(rows, cols);
        let label_hat = dft.forward_real(&label);

        let center = bbox.center();
        let rect = Self::window_rect(center, rows, cols);
        let x_hat = dft.forward_real(&Self::features(frame, rect, &cos_window));
        let mut state = State {
            dft,
            rows,
            cols,
            cos_window,
            label_hat,
            model_x_hat: x_hat.clone(),
            model_alpha_hat: Array2::zeros((rows, cols)),
            center,
            size: (bbox.w(), bbox.h()),
        };
        state.model_alpha_hat = self.train(&state, &x_hat);
        self.state = Some(state);
        self.last_window = Some(rect);
        Ok(())
    }

    fn update(&mut self, frame: &Frame) -> Result<TrackerUpdate, TrackerError> {
        let state = self.state.as_ref().ok_or(TrackerError::NotInitialized)?;
        let rect = Self::window_rect(state.center, state.rows, state.cols);
        let z_hat = state.dft.forward_real(&Self::features(frame, rect, &state.cos_window));
        let k_hat = Self::kernel_correlation(&state.dft, self.params.kernel_sigma, &z_hat, &state.model_x_hat);
        let response = state.dft.inverse(&(&state.model_alpha_hat * &k_hat));

        let mut peak = (0usize, 0usize);
        let mut peak_value = f64::NEG_INFINITY;
        for ((r, c), v) in response.indexed_iter() {
            if v.re > peak_value {
                peak_value = v.re;
                peak = (r, c);
            }
        }
        self.last_imag_residue = response.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        self.last_response = Some(response.mapv(|v| v.re));
        self.last_window = Some(rect);

        if peak_value < self.params.response_fail_threshold {
            return Ok(TrackerUpdate::failure(peak_value));
        }
        let dy = wrapped_lag(peak.0, state.rows) as f64;
        let dx = wrapped_lag(peak.1, state.cols) as f64;
        let center = (state.center.0 + dx, state.center.1 + dy);
        let Ok(bbox) = BoundingBox::from_center(center.0, center.1, state.size.0, state.size.1) else {
            return Ok(TrackerUpdate::failure(peak_value));
        };
        if check_init_box(frame, &bbox).is_err() {
            return Ok(TrackerUpdate::failure(peak_value));
        }

        let eta = self.params.interp_factor;
        if eta > 0.0 {
            let new_rect = Self::window_rect(center, state.rows, state.cols);
            let x_hat = state.dft.forward_real(&Self::features(frame, new_rect, &state.cos_window));
            let alpha_hat = self.train(state, &x_hat);
            let state = self.state.as_mut().expect("initialized");
            state.model_x_hat = &state.model_x_hat * (1.0 - eta) + &x_hat * eta;
            state.model_alpha_hat = &state.model_alpha_hat * (1.0 - eta) + &alpha_hat * eta;
        }
        self.state.as_mut().expect("initialized").center = center;
        Ok(TrackerUpdate::success(bbox, peak_value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured_frame(width: usize, height: usize, seed: u64) -> Frame {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<f64> = (0..((width / 6 + 2) * (height / 6 + 2))).map(|_| rng.gen_range(20.0..235.0)).collect();
        let cw = width / 6 + 2;
        let px = (0..width * height)
            .map(|i| {
                let (x, y) = ((i % width) as f64 / 6.0, (i / width) as f64 / 6.0);
                let (ix, iy) = (x.floor() as usize, y.floor() as usize);
                let (ax, ay) = (x - ix as f64, y - iy as f64);
                let t = |a: usize, b: usize| cells[b * cw + a];
                let v = (t(ix, iy) * (1.0 - ax) + t(ix + 1, iy) * ax) * (1.0 - ay)
                    + (t(ix, iy + 1) * (1.0 - ax) + t(ix + 1, iy + 1) * ax) * ay;
                v.round() as u8
            })
            .collect();
        Frame::new(width, height, 0, px).unwrap()
    }

    #[test]
    fn window_is_even() {
        assert_eq!(even_at_least(7.5), 8);
        assert_eq!(even_at_least(8.0), 8);
        assert_eq!(even_at_least(3.0 * 2.5), 8);
        assert_eq!(even_at_least(9.2), 10);
        assert_eq!(even_at_least(1.0), 4);
    }

    #[test]
    fn lags_wrap() {
        assert_eq!(wrapped_lag(0, 8), 0);
        assert_eq!(wrapped_lag(4, 8), 4);
        assert_eq!(wrapped_lag(5, 8), -3);
        assert_eq!(wrapped_lag(7, 8), -1);
    }

    #[test]
    fn init_frame_peaks_at_zero_lag() {
        let frame = textured_frame(120, 100, 1);
        let b = BoundingBox::new(40.0, 30.0, 24.0, 20.0).unwrap();
        let mut t = KcfTracker::new(KcfParams::default());
        t.init(&frame, b).unwrap();
        let u = t.update(&frame).unwrap();
        assert!(!u.failed());
        assert_eq!(u.bbox().unwrap(), b);
        let resp = t.last_response().unwrap();
        let argmax = resp.indexed_iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, (0, 0));
        assert!(t.last_imag_residue() <= 1e-9);
    }

    #[test]
    fn frozen_model_is_stable() {
        let frame = textured_frame(120, 100, 2);
        let b = BoundingBox::new(50.0, 40.0, 20.0, 20.0).unwrap();
        let mut t = KcfTracker::new(KcfParams { interp_factor: 0.0, ..Default::default() });
        t.init(&frame, b).unwrap();
        let first = t.update(&frame).unwrap();
        for _ in 0..3 {
            assert_eq!(t.update(&frame).unwrap(), first);
        }
    }

    #[test]
    fn follows_small_translation() {
        let big = textured_frame(160, 140, 3);
        let crop = |dx: usize, dy: usize| {
            let px = (0..120 * 100).map(|i| big.get(i % 120 + dx, i / 120 + dy)).collect();
            Frame::new(120, 100, 0, px).unwrap()
        };
        // Content moving by (+3, -2) means the crop origin moves by (-3, +2).
        let (f0, f1) = (crop(10, 10), crop(7, 12));
        let b = BoundingBox::new(45.0, 40.0, 20.0, 20.0).unwrap();
        let mut t = KcfTracker::new(KcfParams::default());
        t.init(&f0, b).unwrap();
        let moved = t.update(&f1).unwrap().bbox().unwrap();
        assert_eq!((moved.x() - b.x(), moved.y() - b.y()), (3.0, -2.0));
    }

    /// Solves the kernel ridge regression over all cyclic shifts directly in the
    /// spatial domain and compares the resulting responses with the DFT path.
    #[test]
    fn matches_spatial_kernel_ridge_regression() {
        use nalgebra::{DMatrix, DVector};
        let params = KcfParams { interp_factor: 0.0, ..Default::default() };
        for seed in 0..20u64 {
            let f0 = textured_frame(40, 40, 100 + seed);
            let f1 = textured_frame(40, 40, 200 + seed);
            let b = BoundingBox::new(15.0 + (seed % 3) as f64, 16.0, 3.0, 3.0).unwrap();
            let mut t = KcfTracker::new(params);
            t.init(&f0, b).unwrap();
            let rect = t.last_window().unwrap();
            assert_eq!((rect.rows, rect.cols), (8, 8));
            let state = t.state.as_ref().unwrap();
            let x = KcfTracker::features(&f0, rect, &state.cos_window);
            let z = KcfTracker::features(&f1, rect, &state.cos_window);
            let label = state.dft.inverse(&state.label_hat).mapv(|v| v.re);
            t.update(&f1).unwrap();
            let response = t.last_response().unwrap();

            let (rows, cols) = (8usize, 8usize);
            let n = rows * cols;
            let shifted = |a: &Array2<f64>, u: usize| -> Vec<f64> {
                let (ur, uc) = (u / cols, u % cols);
                (0..n).map(|p| a[((p / cols + ur) % rows, (p % cols + uc) % cols)]).collect()
            };
            let sigma = params.kernel_sigma;
            let kappa = |a: &[f64], b: &[f64]| {
                let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                (-d / (sigma * sigma * n as f64)).exp()
            };
            let xs: Vec<Vec<f64>> = (0..n).map(|u| shifted(&x, u)).collect();
            let zs: Vec<Vec<f64>> = (0..n).map(|u| shifted(&z, u)).collect();
            let k = DMatrix::from_fn(n, n, |u, s| kappa(&xs[u], &xs[s]) + if u == s { params.lambda } else { 0.0 });
            let y = DVector::from_fn(n, |u, _| label[(u / cols, u % cols)]);
            let alpha = k.lu().solve(&y).unwrap();
            for u in 0..n {
                let r: f64 = (0..n).map(|s| alpha[s] * kappa(&zs[u], &xs[s])).sum();
                let got = response[(u / cols, u % cols)];
                assert!((r - got).abs() <= 1e-6, "seed {seed} lag {u}: {r} vs {got}");
            }
            assert!(t.last_imag_residue() <= 1e-9);
        }
    }
}
