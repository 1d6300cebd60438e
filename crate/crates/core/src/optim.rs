//! Pixel-space stylization: Adam on the image, minimizing the total objective.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::MxdogParams;
use crate::image_io::{resize_longest_edge, resize_to_longest_edge};
use crate::losses::{
    precompute_targets, total_loss_and_grad, LossBreakdown, LossWeights, StyleTargets,
};
use crate::net::FeatureNet;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// Adam moments for one image-shaped parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub delta: f64,
    shape: (usize, usize, usize),
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: (usize, usize, usize), lr: f64) -> Self {
        let n = shape.0 * shape.1 * shape.2;
        Self {
            t: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            beta1: 0.9,
            beta2: 0.999,
            lr,
            delta: 1e-8,
            shape,
        }
    }

    /// One bias-corrected Adam update of `img` in place.
    pub fn step(&mut self, img: &mut ImageTensor<T>, grad: &ImageTensor<T>) -> Result<()> {
        if img.shape() != self.shape || grad.shape() != self.shape {
            return Err(Error::Shape(format!(
                "adam state is {:?}, image {:?}, gradient {:?}",
                self.shape,
                img.shape(),
                grad.shape()
            )));
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, delta) = (T::of(self.lr), T::of(self.delta));
        for (((p, &g), m), v) in img
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + delta);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Start from the (resized) content image.
    Content,
    /// Seeded uniform noise in `[0.4, 0.6]`.
    Noise,
}

#[derive(Clone, Debug)]
pub struct StylizeConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub params: MxdogParams,
    pub rho: f64,
    pub seed: u64,
    pub init: Init,
    pub max_edge: usize,
    pub log_interval: usize,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 1e-2,
            weights: LossWeights::default(),
            params: MxdogParams::default(),
            rho: 50.0,
            seed: 0,
            init: Init::Content,
            max_edge: 768,
            log_interval: 10,
        }
    }
}

impl StylizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidParam("iterations must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParam("learning rate must be positive".into()));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidParam("rho must be positive".into()));
        }
        if self.max_edge < 1 || self.log_interval < 1 {
            return Err(Error::InvalidParam(
                "max_edge and log_interval must be at least 1".into(),
            ));
        }
        self.params.validate()
    }
}

/// Loss values at the start of iteration `iteration` (before its update);
/// the final record, at `iteration == iterations`, is the result's loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord<T = f32> {
    pub iteration: usize,
    pub loss: LossBreakdown<T>,
}

impl<T: Scalar> LossRecord<T> {
    /// One whitespace-separated line: iteration, the five terms, total.
    pub fn to_line(&self) -> String {
        let mut s = self.iteration.to_string();
        for v in self.loss.terms().iter().chain([&self.loss.total]) {
            s.push_str(&format!(" {:.9e}", v.as_f64()));
        }
        s
    }
}

pub const LOG_HEADER: &str =
    "# iteration content mxdog_content style mxdog_content_cns mxdog_style_cns total";

#[derive(Clone, Debug)]
pub struct Stylized<T = f32> {
    pub image: ImageTensor<T>,
    pub history: Vec<LossRecord<T>>,
    pub targets: StyleTargets<T>,
}

pub fn initial_image<T: Scalar>(content: &ImageTensor<T>, init: Init, seed: u64) -> ImageTensor<T> {
    let mut img = match init {
        Init::Content => content.clone(),
        Init::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..content.data().len())
                .map(|_| T::of(rng.random_range(0.4..=0.6)))
                .collect();
            content.with_data(data)
        }
    };
    img.clamp01();
    img
}

pub fn stylize<T: Scalar>(
    content: &ImageTensor<T>,
    style: &ImageTensor<T>,
    net: &FeatureNet<T>,
    cfg: &StylizeConfig,
) -> Result<Stylized<T>> {
    stylize_with(content, style, net, cfg, |_, _| {})
}

/// [`stylize`] with a callback invoked on every recorded loss, receiving the
/// record and the image it was evaluated at.
pub fn stylize_with<T: Scalar>(
    content: &ImageTensor<T>,
    style: &ImageTensor<T>,
    net: &FeatureNet<T>,
    cfg: &StylizeConfig,
    mut on_record: impl FnMut(&LossRecord<T>, &ImageTensor<T>),
) -> Result<Stylized<T>> {
    cfg.validate()?;
    let content = resize_longest_edge(content, cfg.max_edge)?;
    let style = resize_to_longest_edge(style, content.height().max(content.width()))?;
    let targets = precompute_targets(&content, &style, net, &cfg.params, &cfg.weights)?;

    let mut image = initial_image(&content, cfg.init, cfg.seed);
    let mut adam = AdamState::new(image.shape(), cfg.learning_rate);
    let mut history = Vec::new();
    let evaluate = |img: &ImageTensor<T>| {
        total_loss_and_grad(img, &targets, net, &cfg.params, &cfg.weights, cfg.rho)
    };

    for iteration in 0..cfg.iterations {
        let (loss, grad) = evaluate(&image)?;
        if iteration % cfg.log_interval == 0 {
            let record = LossRecord { iteration, loss };
            on_record(&record, &image);
            history.push(record);
        }
        adam.step(&mut image, &grad)?;
        image.clamp01();
    }
    let (loss, _) = evaluate(&image)?;
    let record = LossRecord {
        iteration: cfg.iterations,
        loss,
    };
    on_record(&record, &image);
    history.push(record);

    Ok(Stylized {
        image,
        history,
        targets,
    })
}
