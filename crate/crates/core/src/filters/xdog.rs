use super::{gaussian_blur, gaussian_blur_adjoint, morph_filter, MxdogParams};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// `blur(img, sigma) - tau * blur(img, k * sigma)`, per channel.
pub fn dog<T: Scalar>(img: &ImageTensor<T>, params: &MxdogParams) -> Result<ImageTensor<T>> {
    params.validate()?;
    let fine = gaussian_blur(img, params.sigma)?;
    let coarse = gaussian_blur(img, params.k * params.sigma)?;
    let tau = T::of(params.tau);
    Ok(fine.with_data(
        fine.data()
            .iter()
            .zip(coarse.data())
            .map(|(&f, &c)| f - tau * c)
            .collect(),
    ))
}

/// Transpose of the linear map [`dog`].
pub fn dog_adjoint<T: Scalar>(
    grad: &ImageTensor<T>,
    params: &MxdogParams,
) -> Result<ImageTensor<T>> {
    let fine = gaussian_blur_adjoint(grad, params.sigma)?;
    let coarse = gaussian_blur_adjoint(grad, params.k * params.sigma)?;
    let tau = T::of(params.tau);
    Ok(fine.with_data(
        fine.data()
            .iter()
            .zip(coarse.data())
            .map(|(&f, &c)| f - tau * c)
            .collect(),
    ))
}

/// Continuous-ramp threshold: 1 above `epsilon`, `1 + tanh(phi (u - epsilon))`
/// below it.
///
/// Evaluated as `2 / (1 + exp(-2 phi (u - epsilon)))`, which is the same
/// function but stays strictly positive far into the saturated tail.
#[inline]
pub fn xdog_ramp<T: Scalar>(u: T, epsilon: T, phi: T) -> T {
    if u >= epsilon {
        T::one()
    } else {
        let two = T::of(2.0);
        two / (T::one() + (-two * phi * (u - epsilon)).exp())
    }
}

pub fn xdog<T: Scalar>(img: &ImageTensor<T>, params: &MxdogParams) -> Result<ImageTensor<T>> {
    let (eps, phi) = (T::of(params.epsilon), T::of(params.phi));
    Ok(dog(img, params)?.map(|u| xdog_ramp(u, eps, phi)))
}

/// Arithmetic mean of each channel, summed in index order in `f64`.
pub fn channel_means<T: Scalar>(img: &ImageTensor<T>) -> Vec<T> {
    (0..img.channels())
        .map(|c| {
            let plane = img.channel(c);
            let sum: f64 = plane.iter().map(|v| v.as_f64()).sum();
            T::of(sum / plane.len() as f64)
        })
        .collect()
}

/// Per-channel binarization against the channel mean: values `<= mean` map
/// to 0, the rest to 1.
pub fn threshold_xdog<T: Scalar>(xd: &ImageTensor<T>) -> ImageTensor<T> {
    let means = channel_means(xd);
    let n = xd.plane_len();
    xd.with_data(
        xd.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v <= means[i / n] {
                    T::zero()
                } else {
                    T::one()
                }
            })
            .collect(),
    )
}

/// Full hard pipeline: xdog, mean threshold, small-region removal.
pub fn mxdog<T: Scalar>(img: &ImageTensor<T>, params: &MxdogParams) -> Result<ImageTensor<T>> {
    morph_filter(&threshold_xdog(&xdog(img, params)?), params.a_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::gaussian_blur;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> ImageTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, c, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn dog_of_constant_is_scaled_constant() {
        let p = MxdogParams::default();
        for c in [0.0, 0.3, 1.0] {
            let img = ImageTensor::<f64>::filled(12, 9, 3, c).unwrap();
            let out = dog(&img, &p).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.06 * c).abs() < 1e-6));
        }
    }

    #[test]
    fn dog_matches_two_blur_composition() {
        let p = MxdogParams::default();
        let img = random_image(3, 16, 16, 1);
        let a = gaussian_blur(&img, 1.0).unwrap();
        let b = gaussian_blur(&img, 1.6).unwrap();
        let out = dog(&img, &p).unwrap();
        for i in 0..img.data().len() {
            assert!((out.data()[i] - (a.data()[i] - 0.94 * b.data()[i])).abs() <= 1e-6);
        }
    }

    #[test]
    fn dog_adjoint_inner_product() {
        let p = MxdogParams::default();
        let x = random_image(1, 10, 7, 3);
        let y = random_image(2, 10, 7, 3);
        let lhs: f64 = dog(&x, &p)
            .unwrap()
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(dog_adjoint(&y, &p).unwrap().data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn ramp_values() {
        let (eps, phi) = (-0.1f64, 50.0);
        assert_eq!(xdog_ramp(eps, eps, phi), 1.0);
        // Limit from below is 1 + tanh(0) = 1.
        assert!((xdog_ramp(eps - 1e-12, eps, phi) - 1.0).abs() < 1e-9);
        assert!(xdog_ramp(eps - 10.0, eps, phi) < 1e-6);
        assert!(xdog_ramp(eps - 0.8, eps, phi) > 0.0);
        // 1 + tanh(-1), evaluated independently of the implementation.
        let expected = 1.0 + (-1.0f64).tanh();
        assert!((expected - 0.238_405_844_044_234).abs() < 1e-12);
        assert!((xdog_ramp(-0.12, eps, phi) - expected).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let flat = ImageTensor::<f32>::filled(3, 3, 1, 0.7).unwrap();
        assert!(threshold_xdog(&flat).data().iter().all(|&v| v == 0.0));
        let split = ImageTensor::<f32>::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(threshold_xdog(&split).data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn threshold_matches_scalar_oracle() {
        for seed in 0..10 {
            let img = random_image(seed, 8, 8, 1);
            let mean = img.data().iter().sum::<f64>() / 64.0;
            let out = threshold_xdog(&img);
            for (o, v) in out.data().iter().zip(img.data()) {
                assert_eq!(*o, if *v > mean { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn means_are_per_channel() {
        let img = ImageTensor::<f64>::from_fn(2, 2, 3, |c, _, _| c as f64).unwrap();
        assert_eq!(channel_means(&img), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn mxdog_of_constant_is_black() {
        let img = ImageTensor::<f32>::filled(20, 20, 3, 0.42).unwrap();
        let out = mxdog(&img, &MxdogParams::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mxdog_commutes_with_channel_permutation() {
        let img = random_image(9, 24, 20, 3).cast::<f32>();
        let p = MxdogParams::default();
        let order = [2, 0, 1];
        let a = mxdog(&img.permute_channels(&order).unwrap(), &p).unwrap();
        let b = mxdog(&img, &p).unwrap().permute_channels(&order).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn xdog_range_on_pixel_images(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
            let img = random_image(seed, h, w, 1).cast::<f32>();
            let out = xdog(&img, &MxdogParams::default()).unwrap();
            prop_assert!(out.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn dog_of_any_constant(c in -5.0f64..5.0, h in 1usize..10, w in 1usize..10) {
            let img = ImageTensor::<f64>::filled(h, w, 1, c).unwrap();
            let out = dog(&img, &MxdogParams::default()).unwrap();
            prop_assert!(out.data().iter().all(|&v| (v - 0.06 * c).abs() < 1e-6));
        }
    }
}
