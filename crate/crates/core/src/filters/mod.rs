//! MXDoG abstraction pipeline.
//!
//! `gaussian_blur -> dog -> xdog -> threshold_xdog -> morph_filter`, each
//! applied to every channel independently. [`soft_mxdog`] is a smooth
//! stand-in for the last two stages that gradients can flow through.

mod gaussian;
mod morph;
mod soft;
mod xdog;

pub use gaussian::{gaussian_blur, gaussian_blur_adjoint, gaussian_kernel, kernel_radius};
pub use morph::morph_filter;
pub use soft::{soft_mxdog, SoftMxdog};
pub use xdog::{channel_means, dog, dog_adjoint, mxdog, threshold_xdog, xdog, xdog_ramp};

use crate::error::{Error, Result};

/// Parameters of the MXDoG filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MxdogParams {
    /// Standard deviation of the finer Gaussian, in pixels.
    pub sigma: f64,
    /// Ratio between the coarse and fine Gaussian scales.
    pub k: f64,
    /// Weight of the coarse Gaussian in the DoG.
    pub tau: f64,
    /// Steepness of the tanh ramp.
    pub phi: f64,
    /// Ramp threshold.
    pub epsilon: f64,
    /// Connected regions smaller than this many pixels are flipped.
    pub a_min: usize,
}

impl Default for MxdogParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            k: 1.6,
            tau: 0.94,
            phi: 50.0,
            epsilon: -0.1,
            a_min: 10,
        }
    }
}

impl MxdogParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidParam(msg.into()));
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return fail("sigma must be positive and finite");
        }
        if !(self.k.is_finite() && self.k > 1.0) {
            return fail("k must be greater than 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau must lie in (0, 1]");
        }
        if !(self.phi.is_finite() && self.phi >= 0.0) {
            return fail("phi must be non-negative and finite");
        }
        if !self.epsilon.is_finite() {
            return fail("epsilon must be finite");
        }
        if self.a_min < 1 {
            return fail("a_min must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_are_valid() {
        let p = MxdogParams::default();
        assert!(p.validate().is_ok());
        assert_eq!(
            (p.sigma, p.k, p.tau, p.phi, p.epsilon, p.a_min),
            (1.0, 1.6, 0.94, 50.0, -0.1, 10)
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let base = MxdogParams::default();
        for p in [
            MxdogParams { sigma: 0.0, ..base },
            MxdogParams { k: 1.0, ..base },
            MxdogParams { tau: 0.0, ..base },
            MxdogParams { tau: 1.2, ..base },
            MxdogParams { a_min: 0, ..base },
            MxdogParams {
                phi: f64::NAN,
                ..base
            },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }
}
