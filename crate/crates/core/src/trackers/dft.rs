//! Two-dimensional discrete Fourier transform on `ndarray` matrices.
//!
//! Forward transform is unnormalized; the inverse divides by `rows * cols`.
//! Any size >= 1 is supported.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned transforms for one matrix shape.
pub struct Dft2d {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Dft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "DFT dimensions must be >= 1");
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn transform(&self, data: &mut Array2<Complex64>, inverse: bool) {
        assert_eq!(data.dim(), (self.rows, self.cols), "matrix shape differs from plan");
        let (row_fft, col_fft) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cols.max(self.rows)];
        for mut row in data.axis_iter_mut(Axis(0)) {
            let line = &mut buf[..self.cols];
            line.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
            row_fft.process(line);
            row.iter_mut().zip(line.iter()).for_each(|(v, b)| *v = *b);
        }
        for mut col in data.axis_iter_mut(Axis(1)) {
            let line = &mut buf[..self.rows];
            line.iter_mut().zip(col.iter()).for_each(|(b, v)| *b = *v);
            col_fft.process(line);
            col.iter_mut().zip(line.iter()).for_each(|(v, b)| *v = *b);
        }
        if inverse {
            let scale = 1.0 / (self.rows * self.cols) as f64;
            data.mapv_inplace(|v| v * scale);
        }
    }

    pub fn forward_real(&self, image: &Array2<f64>) -> Array2<Complex64> {
        let mut data = image.mapv(|v| Complex64::new(v, 0.0));
        self.transform(&mut data, false);
        data
    }

    pub fn forward(&self, data: &Array2<Complex64>) -> Array2<Complex64> {
        let mut out = data.clone();
        self.transform(&mut out, false);
        out
    }

    pub fn inverse(&self, spectrum: &Array2<Complex64>) -> Array2<Complex64> {
        let mut out = spectrum.clone();
        self.transform(&mut out, true);
        out
    }
}

/// Forward DFT of a real matrix.
pub fn dft2d(image: &Array2<f64>) -> Array2<Complex64> {
    let (r, c) = image.dim();
    Dft2d::new(r, c).forward_real(image)
}

/// Normalized inverse DFT.
pub fn idft2d(spectrum: &Array2<Complex64>) -> Array2<Complex64> {
    let (r, c) = spectrum.dim();
    Dft2d::new(r, c).inverse(spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_err(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_image_has_only_dc() {
        let img = Array2::from_elem((5, 7), 2.5);
        let spec = dft2d(&img);
        for ((r, c), v) in spec.indexed_iter() {
            if (r, c) == (0, 0) {
                assert!((v - Complex64::new(2.5 * 35.0, 0.0)).norm() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn linear(a in -3.0..3.0f64, b in -3.0..3.0f64,
                  xs in proptest::collection::vec(-10.0..10.0f64, 30),
                  ys in proptest::collection::vec(-10.0..10.0f64, 30)) {
            let x = Array2::from_shape_vec((5, 6), xs).unwrap();
            let y = Array2::from_shape_vec((5, 6), ys).unwrap();
            let lhs = dft2d(&(&x * a + &y * b));
            let rhs = dft2d(&x).mapv(|v| v * a) + dft2d(&y).mapv(|v| v * b);
            prop_assert!(max_err(&lhs, &rhs) <= 1e-9);
        }

        #[test]
        fn parseval(xs in proptest::collection::vec(-10.0..10.0f64, 48)) {
            let x = Array2::from_shape_vec((6, 8), xs).unwrap();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let spectral: f64 = dft2d(&x).iter().map(|v| v.norm_sqr()).sum::<f64>() / 48.0;
            prop_assert!((energy - spectral).abs() <= 1e-6 * energy.max(1e-12));
        }

        #[test]
        fn inverse_round_trip(xs in proptest::collection::vec(-100.0..100.0f64, 256)) {
            let x = Array2::from_shape_vec((16, 16), xs).unwrap();
            let back = idft2d(&dft2d(&x));
            let err = x.iter().zip(back.iter()).map(|(a, b)| (b - Complex64::new(*a, 0.0)).norm()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-9);
        }
    }
}
