use super::{channel_means, dog, dog_adjoint, xdog_ramp, MxdogParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// Differentiable surrogate of [`super::mxdog`], with the intermediates its
/// backward pass needs.
///
/// The hard mean threshold becomes `0.5 * (1 + tanh(rho * (v - mean)))` on
/// the xdog output `v`. Morphology is omitted, so gradients pass through that
/// stage unchanged. The channel mean is part of the differentiated graph.
#[derive(Clone, Debug)]
pub struct SoftMxdog<T> {
    params: MxdogParams,
    rho: T,
    dog: ImageTensor<T>,
    xdog: ImageTensor<T>,
    means: Vec<T>,
    output: ImageTensor<T>,
}

impl<T: Scalar> SoftMxdog<T> {
    pub fn forward(img: &ImageTensor<T>, params: &MxdogParams, rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParam(format!(
                "rho must be positive and finite, got {rho}"
            )));
        }
        let u = dog(img, params)?;
        let (eps, phi) = (T::of(params.epsilon), T::of(params.phi));
        let v = u.map(|x| xdog_ramp(x, eps, phi));
        let means = channel_means(&v);
        let rho_t = T::of(rho);
        let half = T::of(0.5);
        let n = v.plane_len();
        let s = v.with_data(
            v.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| half * (T::one() + (rho_t * (x - means[i / n])).tanh()))
                .collect(),
        );
        Ok(Self {
            params: *params,
            rho: rho_t,
            dog: u,
            xdog: v,
            means,
            output: s,
        })
    }

    /// Hash of which side of the ramp threshold each DoG response falls on.
    pub fn branch_pattern(&self) -> u64 {
        let eps = T::of(self.params.epsilon);
        let mut h = crate::net::Fnv::default();
        self.dog
            .data()
            .iter()
            .for_each(|&u| h.write(u64::from(u >= eps)));
        h.0
    }

    pub fn output(&self) -> &ImageTensor<T> {
        &self.output
    }

    pub fn into_output(self) -> ImageTensor<T> {
        self.output
    }

    /// Pulls `dL/d(output)` back to `dL/d(input image)`.
    pub fn backward(&self, grad: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        if grad.shape() != self.output.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match {:?}",
                grad.shape(),
                self.output.shape()
            )));
        }
        let n = self.xdog.plane_len();
        let half_rho = self.rho * T::of(0.5);
        let (eps, phi, two) = (
            T::of(self.params.epsilon),
            T::of(self.params.phi),
            T::of(2.0),
        );

        // d s / d v along the direct path, times the incoming gradient.
        let direct: Vec<T> = self
            .xdog
            .data()
            .iter()
            .zip(grad.data())
            .enumerate()
            .map(|(i, (&v, &g))| {
                let t = (self.rho * (v - self.means[i / n])).tanh();
                half_rho * (T::one() - t * t) * g
            })
            .collect();
        // Every v in a channel also moves that channel's mean.
        let mean_pull: Vec<T> = direct
            .chunks(n)
            .map(|c| T::of(c.iter().map(|x| x.as_f64()).sum::<f64>() / n as f64))
            .collect();

        let grad_u: Vec<T> = self
            .dog
            .data()
            .iter()
            .zip(self.xdog.data())
            .zip(&direct)
            .enumerate()
            .map(|(i, ((&u, &v), &d))| {
                if u >= eps {
                    T::zero()
                } else {
                    // d/du (1 + tanh(phi (u - eps))) = phi * v * (2 - v).
                    (d - mean_pull[i / n]) * phi * v * (two - v)
                }
            })
            .collect();
        dog_adjoint(&self.dog.with_data(grad_u), &self.params)
    }
}

/// Forward value of the differentiable MXDoG surrogate.
pub fn soft_mxdog<T: Scalar>(
    img: &ImageTensor<T>,
    params: &MxdogParams,
    rho: f64,
) -> Result<ImageTensor<T>> {
    Ok(SoftMxdog::forward(img, params, rho)?.into_output())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{threshold_xdog, xdog};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> ImageTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn constant_image_maps_to_half() {
        let img = ImageTensor::<f64>::filled(10, 10, 3, 0.6).unwrap();
        let s = soft_mxdog(&img, &MxdogParams::default(), 50.0).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn steep_surrogate_approaches_hard_threshold() {
        let p = MxdogParams::default();
        // 4x4 blocks of random gray levels give strong edges.
        let noise = random_image(4, 6, 6);
        let img = ImageTensor::from_fn(24, 24, 3, |c, y, x| noise.get(c, y / 4, x / 4)).unwrap();
        let xd = xdog(&img, &p).unwrap();
        let hard = threshold_xdog(&xd);
        let soft = soft_mxdog(&img, &p, 1e4).unwrap();
        let means = channel_means(&xd);
        let n = xd.plane_len();
        let mut checked = 0;
        for i in 0..xd.data().len() {
            // Only pixels whose xdog value is well separated from the mean.
            if (xd.data()[i] - means[i / n]).abs() > 1e-3 {
                assert!((soft.data()[i] - hard.data()[i]).abs() <= 1e-3);
                checked += 1;
            }
        }
        assert!(checked > xd.data().len() / 4, "{checked}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = MxdogParams::default();
        let img = random_image(8, 12, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let weights: Vec<f64> = (0..img.data().len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let objective = |x: &ImageTensor<f64>| -> f64 {
            let s = soft_mxdog(x, &p, 50.0).unwrap();
            s.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let trace = SoftMxdog::forward(&img, &p, 50.0).unwrap();
        let grad = trace.backward(&img.with_data(weights.clone())).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in (0..img.data().len()).step_by(7) {
            let mut plus = img.clone();
            plus.data_mut()[i] += h;
            let mut minus = img.clone();
            minus.data_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let a = grad.data()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn rejects_bad_rho() {
        let img = ImageTensor::<f64>::zeros(4, 4, 1).unwrap();
        assert!(soft_mxdog(&img, &MxdogParams::default(), 0.0).is_err());
    }
}
