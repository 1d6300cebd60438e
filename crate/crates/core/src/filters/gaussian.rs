use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// Truncation radius `ceil(3 sigma)`.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Sampled 1-D Gaussian over `[-r, r]`, renormalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Mirror index with the edge sample repeated (`-1 -> 0`, `n -> n - 1`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Sparse 1-D operator: output `i` gathers `Σ w * input[j]` over `taps[i]`.
type Taps<T> = Vec<Vec<(usize, T)>>;

fn blur_taps<T: Scalar>(n: usize, kernel: &[f64]) -> Taps<T> {
    let r = (kernel.len() / 2) as isize;
    (0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, &w)| (reflect(i + j as isize - r, n), T::of(w)))
                .collect()
        })
        .collect()
}

fn transpose_taps<T: Scalar>(taps: &Taps<T>) -> Taps<T> {
    let mut out: Taps<T> = vec![Vec::new(); taps.len()];
    for (i, row) in taps.iter().enumerate() {
        for &(j, w) in row {
            out[j].push((i, w));
        }
    }
    out
}

fn apply_rows<T: Scalar>(img: &ImageTensor<T>, taps: &Taps<T>) -> ImageTensor<T> {
    let w = img.width();
    let src = img.data();
    let mut out = vec![T::zero(); src.len()];
    par::for_each_chunk(&mut out, w, |row, dst| {
        let line = &src[row * w..(row + 1) * w];
        for (d, tap) in dst.iter_mut().zip(taps) {
            let mut acc = T::zero();
            for &(j, k) in tap {
                acc += k * line[j];
            }
            *d = acc;
        }
    });
    img.with_data(out)
}

fn apply_cols<T: Scalar>(img: &ImageTensor<T>, taps: &Taps<T>) -> ImageTensor<T> {
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    let mut out = vec![T::zero(); src.len()];
    par::for_each_chunk(&mut out, w, |row, dst| {
        let (c, y) = (row / h, row % h);
        let plane = &src[c * h * w..(c + 1) * h * w];
        for &(j, k) in &taps[y] {
            let line = &plane[j * w..(j + 1) * w];
            for (d, &s) in dst.iter_mut().zip(line) {
                *d += k * s;
            }
        }
    });
    img.with_data(out)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "sigma must be positive and finite, got {sigma}"
        )))
    }
}

/// Separable Gaussian blur of every channel with mirrored borders.
pub fn gaussian_blur<T: Scalar>(img: &ImageTensor<T>, sigma: f64) -> Result<ImageTensor<T>> {
    check_sigma(sigma)?;
    let kernel = gaussian_kernel(sigma);
    let horizontal = apply_rows(img, &blur_taps(img.width(), &kernel));
    Ok(apply_cols(&horizontal, &blur_taps(img.height(), &kernel)))
}

/// Adjoint (transpose) of [`gaussian_blur`]. Differs from the blur itself
/// only near the borders, where mirroring breaks symmetry.
pub fn gaussian_blur_adjoint<T: Scalar>(
    grad: &ImageTensor<T>,
    sigma: f64,
) -> Result<ImageTensor<T>> {
    check_sigma(sigma)?;
    let kernel = gaussian_kernel(sigma);
    let vertical = apply_cols(grad, &transpose_taps(&blur_taps(grad.height(), &kernel)));
    Ok(apply_rows(
        &vertical,
        &transpose_taps(&blur_taps(grad.width(), &kernel)),
    ))
}
