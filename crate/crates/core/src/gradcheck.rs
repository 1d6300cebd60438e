//! Central finite-difference verification of the objective's gradient.

use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::MxdogParams;
use crate::filters::SoftMxdog;
use crate::losses::{precompute_targets, total_loss_and_grad, LossWeights};
use crate::net::{make_test_net, FeatureNet};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

pub const MIN_SIZE: usize = 16;
pub const FD_STEP: f64 = 1e-3;
/// Smooth coordinates compared per configuration.
pub const SAMPLES: usize = 64;
/// A configuration fails if fewer smooth coordinates than this were found.
pub const MIN_SAMPLES: usize = 50;
pub const TOLERANCE_F64: f64 = 1e-4;
/// The 32-bit analytic gradient is compared against a 64-bit oracle; single
/// precision accumulation limits agreement to roughly this level.
pub const TOLERANCE_F32: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F32 => TOLERANCE_F32,
            Precision::F64 => TOLERANCE_F64,
        }
    }
}

/// The weight configurations exercised by [`gradcheck`]: each term alone,
/// then the default weights.
pub fn standard_configs() -> Vec<(&'static str, LossWeights)> {
    vec![
        (
            "content",
            LossWeights::only([true, false, false, false, false]),
        ),
        (
            "mxdog_content",
            LossWeights::only([false, true, false, false, false]),
        ),
        (
            "style",
            LossWeights::only([false, false, true, false, false]),
        ),
        (
            "mxdog_content_cns",
            LossWeights::only([false, false, false, true, false]),
        ),
        (
            "mxdog_style_cns",
            LossWeights::only([false, false, false, false, true]),
        ),
        ("total", LossWeights::default()),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermCheck {
    pub label: String,
    pub samples: usize,
    /// Coordinates skipped because their stencil straddles a kink.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub tolerance: f64,
    pub checks: Vec<TermCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "gradcheck size={} seed={} precision={} step={:e} tolerance={:e}\n",
            self.size,
            self.seed,
            self.precision.bits(),
            FD_STEP,
            self.tolerance
        );
        for c in &self.checks {
            out.push_str(&format!(
                "{:<18} samples={} excluded={} max_rel_error={:.3e} (at index {}) {}\n",
                c.label,
                c.samples,
                c.excluded,
                c.max_rel_error,
                c.worst_index,
                if c.passed { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(if self.passed() { "PASS\n" } else { "FAIL\n" });
        out
    }
}

/// `|a - b| / max(|a|, |b|)`, and 0 when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central difference `(f(x + h) - f(x - h)) / 2h` along coordinate `index`.
pub fn central_difference(
    f: impl Fn(&ImageTensor<f64>) -> Result<f64>,
    x: &ImageTensor<f64>,
    index: usize,
    step: f64,
) -> Result<f64> {
    let mut plus = x.clone();
    plus.data_mut()[index] += step;
    let mut minus = x.clone();
    minus.data_mut()[index] -= step;
    Ok((f(&plus)? - f(&minus)?) / (2.0 * step))
}

/// Piecewise-constant `4 x 4` blocks of random gray levels plus mild
/// per-pixel noise, so the MXDoG terms see real edges.
fn random_image(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor<f64> {
    let blocks = size.div_ceil(4);
    let levels: Vec<f64> = (0..3 * blocks * blocks)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let mut img = ImageTensor::from_fn(size, size, 3, |c, y, x| {
        levels[(c * blocks + y / 4) * blocks + x / 4] + rng.random_range(-0.05..0.05)
    })
    .expect("size checked by caller");
    img.clamp01();
    img
}

fn deepest(net: &FeatureNet<f64>, names: &[&str]) -> usize {
    names
        .iter()
        .filter_map(|n| net.layer_index(n))
        .max()
        .unwrap_or(0)
}

/// Hash of every branch the objective takes at `x`: ReLU signs and pool
/// argmaxes on both network passes, and the ramp side of each DoG response.
pub fn kink_pattern(
    x: &ImageTensor<f64>,
    net: &FeatureNet<f64>,
    params: &MxdogParams,
    w: &LossWeights,
    rho: f64,
) -> Result<u64> {
    let [l1, l2, l3, l4, l5] = w.lambdas();
    let mut taps: Vec<&str> = vec![&w.content_layer];
    taps.extend(w.style_layers.iter().map(String::as_str));
    let mut pattern = 0u64;
    if l1 > 0.0 || l2 > 0.0 || l3 > 0.0 {
        pattern ^= net.trace(x, deepest(net, &taps))?.activation_pattern(net);
    }
    if l4 > 0.0 || l5 > 0.0 {
        taps.push(&w.constraint_layer);
        let soft = SoftMxdog::forward(x, params, rho)?;
        let trace = net.trace(soft.output(), deepest(net, &taps))?;
        pattern = pattern.rotate_left(1)
            ^ trace.activation_pattern(net)
            ^ soft.branch_pattern().rotate_left(7);
    }
    Ok(pattern)
}

/// Compares the analytic gradient (in precision `T`) against 64-bit central
/// differences of the total loss.
///
/// Coordinates are visited in `order`. One whose stencil `x ± h` changes the
/// branch pattern (see [`kink_pattern`]) straddles a kink, where a central
/// difference does not estimate the derivative; it is skipped and counted.
/// Stops after `wanted` smooth coordinates.
#[allow(clippy::too_many_arguments)]
pub fn check_gradient<T: Scalar>(
    label: &str,
    image: &ImageTensor<f64>,
    content: &ImageTensor<f64>,
    style: &ImageTensor<f64>,
    net64: &FeatureNet<f64>,
    net: &FeatureNet<T>,
    params: &MxdogParams,
    w: &LossWeights,
    rho: f64,
    order: &[usize],
    wanted: usize,
    tolerance: f64,
) -> Result<TermCheck> {
    let targets = precompute_targets(&content.cast(), &style.cast(), net, params, w)?;
    let (_, grad) = total_loss_and_grad(&image.cast(), &targets, net, params, w, rho)?;

    let targets64 = precompute_targets(content, style, net64, params, w)?;
    let loss = |x: &ImageTensor<f64>| -> Result<f64> {
        Ok(total_loss_and_grad(x, &targets64, net64, params, w, rho)?
            .0
            .total)
    };
    let pattern = |x: &ImageTensor<f64>| kink_pattern(x, net64, params, w, rho);
    let centre = pattern(image)?;

    let mut worst = (0.0, order.first().copied().unwrap_or(0));
    let (mut samples, mut excluded) = (0, 0);
    for &i in order {
        if samples == wanted {
            break;
        }
        let mut plus = image.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = image.clone();
        minus.data_mut()[i] -= FD_STEP;
        if pattern(&plus)? != centre || pattern(&minus)? != centre {
            excluded += 1;
            continue;
        }
        let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * FD_STEP);
        let err = relative_error(grad.data()[i].as_f64(), numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
        samples += 1;
    }
    Ok(TermCheck {
        label: label.to_owned(),
        samples,
        excluded,
        max_rel_error: worst.0,
        worst_index: worst.1,
        passed: samples >= MIN_SAMPLES && worst.0 <= tolerance,
    })
}

/// Builds the scale-8 test net and random `size x size` images from `seed`
/// and checks every configuration in [`standard_configs`].
pub fn gradcheck(size: usize, seed: u64, precision: Precision) -> Result<GradcheckReport> {
    if size < MIN_SIZE {
        return Err(Error::InvalidParam(format!(
            "gradcheck size must be at least {MIN_SIZE}, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let round = |img: ImageTensor<f64>| match precision {
        // Evaluate both sides at the same, f32-representable point.
        Precision::F32 => img.cast::<f32>().cast::<f64>(),
        Precision::F64 => img,
    };
    let content = round(random_image(&mut rng, size));
    let style = round(random_image(&mut rng, size));
    let image = round(random_image(&mut rng, size));
    let n = image.data().len();
    let order = sample(&mut rng, n, n).into_vec();

    let net64 = make_test_net::<f64>(seed, 8)?;
    let net32 = make_test_net::<f32>(seed, 8)?;
    let params = MxdogParams::default();
    let rho = 50.0;
    let tolerance = precision.tolerance();

    let checks = standard_configs()
        .into_iter()
        .map(|(label, w)| match precision {
            Precision::F64 => check_gradient(
                label, &image, &content, &style, &net64, &net64, &params, &w, rho, &order, SAMPLES,
                tolerance,
            ),
            Precision::F32 => check_gradient(
                label, &image, &content, &style, &net64, &net32, &params, &w, rho, &order, SAMPLES,
                tolerance,
            ),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport {
        size,
        seed,
        precision,
        tolerance,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_quadratic_is_exact() {
        let x = ImageTensor::<f64>::new(1, 2, 1, vec![3.0, -1.0]).unwrap();
        let f = |x: &ImageTensor<f64>| -> Result<f64> { Ok(x.data().iter().map(|v| v * v).sum()) };
        assert!((central_difference(f, &x, 0, 1e-3).unwrap() - 6.0).abs() < 1e-9);
        assert!((central_difference(f, &x, 1, 1e-3).unwrap() + 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_small_sizes() {
        assert!(gradcheck(8, 0, Precision::F64).is_err());
    }
}
