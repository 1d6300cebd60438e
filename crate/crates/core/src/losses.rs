//! Content, style and MXDoG loss terms and the weighted total objective.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::filters::{mxdog, MxdogParams, SoftMxdog};
use crate::net::{FeatureNet, CONTENT_LAYER, STYLE_LAYERS};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, ImageTensor};

/// Channel correlations of one layer, normalized by its spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix<T = f32> {
    pub n: usize,
    /// Row-major `n x n`.
    pub data: Vec<T>,
}

impl<T: Scalar> GramMatrix<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }
}

/// `G_ij = (1 / M) Σ_k F_ik F_jk`. The upper triangle is computed and mirrored.
pub fn gram<T: Scalar>(f: &FeatureMap<T>) -> GramMatrix<T> {
    let n = f.channels;
    let m = T::of(f.spatial() as f64);
    let mut data = vec![T::zero(); n * n];
    for i in 0..n {
        let a = f.plane(i);
        for j in i..n {
            let b = f.plane(j);
            let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
            data[i * n + j] = dot / m;
            data[j * n + i] = dot / m;
        }
    }
    GramMatrix { n, data }
}

/// Pulls a gradient with respect to a Gram matrix back onto the features:
/// `dF = (dG + dG^T) F / M`.
fn gram_backward<T: Scalar>(f: &FeatureMap<T>, dg: &[T]) -> FeatureMap<T> {
    let n = f.channels;
    let hw = f.spatial();
    let m = T::of(hw as f64);
    let mut out = FeatureMap::zeros(n, f.height, f.width);
    for i in 0..n {
        let dst = &mut out.data[i * hw..(i + 1) * hw];
        for j in 0..n {
            let coef = (dg[i * n + j] + dg[j * n + i]) / m;
            if coef == T::zero() {
                continue;
            }
            for (d, &v) in dst.iter_mut().zip(f.plane(j)) {
                *d += coef * v;
            }
        }
    }
    out
}

fn same_shape<T: Scalar>(f: &FeatureMap<T>, target: &FeatureMap<T>) -> Result<()> {
    if f.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "feature map {:?} does not match target {:?}",
            f.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Squared feature distance over `N_l * M_l`, with `M_l` taken from the target.
pub fn content_loss<T: Scalar>(f: &FeatureMap<T>, target: &FeatureMap<T>) -> Result<T> {
    same_shape(f, target)?;
    let norm = T::of((target.channels * target.spatial()) as f64);
    let sum: T = f
        .data
        .iter()
        .zip(&target.data)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / norm)
}

fn content_loss_grad<T: Scalar>(
    f: &FeatureMap<T>,
    target: &FeatureMap<T>,
) -> Result<(T, FeatureMap<T>)> {
    let loss = content_loss(f, target)?;
    let scale = T::of(2.0) / T::of((target.channels * target.spatial()) as f64);
    let data = f
        .data
        .iter()
        .zip(&target.data)
        .map(|(&a, &b)| scale * (a - b))
        .collect();
    Ok((loss, FeatureMap { data, ..*f }))
}

fn gram_distance<T: Scalar>(g: &GramMatrix<T>, target: &GramMatrix<T>) -> Result<T> {
    if g.n != target.n {
        return Err(Error::Shape(format!(
            "Gram sizes differ: {} vs {}",
            g.n, target.n
        )));
    }
    let sum: T = g
        .data
        .iter()
        .zip(&target.data)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / T::of((g.n * g.n) as f64))
}

fn check_layer_sets<A, B>(fs: &BTreeMap<String, A>, targets: &BTreeMap<String, B>) -> Result<()> {
    if fs.len() != targets.len() || fs.keys().any(|k| !targets.contains_key(k)) {
        return Err(Error::Shape(format!(
            "style layers {:?} do not match targets {:?}",
            fs.keys().collect::<Vec<_>>(),
            targets.keys().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// `Σ_l (1 / N_l²) Σ_ij (G^l_ij - T^l_ij)²` over the layers in `fs`.
pub fn style_loss<T: Scalar>(
    fs: &BTreeMap<String, FeatureMap<T>>,
    targets: &BTreeMap<String, GramMatrix<T>>,
) -> Result<T> {
    check_layer_sets(fs, targets)?;
    let mut total = T::zero();
    for (name, f) in fs {
        total += gram_distance(&gram(f), &targets[name])?;
    }
    Ok(total)
}

fn style_loss_grad<T: Scalar>(
    fs: &BTreeMap<String, FeatureMap<T>>,
    targets: &BTreeMap<String, GramMatrix<T>>,
) -> Result<(T, BTreeMap<String, FeatureMap<T>>)> {
    check_layer_sets(fs, targets)?;
    let mut total = T::zero();
    let mut grads = BTreeMap::new();
    for (name, f) in fs {
        let g = gram(f);
        let target = &targets[name];
        total += gram_distance(&g, target)?;
        let scale = T::of(2.0) / T::of((g.n * g.n) as f64);
        let dg: Vec<T> = g
            .data
            .iter()
            .zip(&target.data)
            .map(|(&a, &b)| scale * (a - b))
            .collect();
        grads.insert(name.clone(), gram_backward(f, &dg));
    }
    Ok((total, grads))
}

/// Term weights and layer choices for the total objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Content loss against the content image.
    pub lambda1: f64,
    /// Content loss against the MXDoG-filtered content image.
    pub lambda2: f64,
    /// Style loss against the style image.
    pub lambda3: f64,
    /// Content constraint between MXDoG(output) and MXDoG(content).
    pub lambda4: f64,
    /// Style constraint between MXDoG(output) and MXDoG(style).
    pub lambda5: f64,
    /// Layer for the two content terms.
    pub content_layer: String,
    /// Layer for the MXDoG content constraint.
    pub constraint_layer: String,
    pub style_layers: Vec<String>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.2,
            lambda3: 5.0,
            lambda4: 2e2,
            lambda5: 1e3,
            content_layer: CONTENT_LAYER.to_owned(),
            constraint_layer: CONTENT_LAYER.to_owned(),
            style_layers: STYLE_LAYERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LossWeights {
    pub fn lambdas(&self) -> [f64; 5] {
        [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
        ]
    }

    /// Only the given terms switched on, at weight 1, default layers.
    pub fn only(terms: [bool; 5]) -> Self {
        let l = |on: bool| if on { 1.0 } else { 0.0 };
        Self {
            lambda1: l(terms[0]),
            lambda2: l(terms[1]),
            lambda3: l(terms[2]),
            lambda4: l(terms[3]),
            lambda5: l(terms[4]),
            ..Self::default()
        }
    }

    pub fn validate<T: Scalar>(&self, net: &FeatureNet<T>) -> Result<()> {
        for (i, l) in self.lambdas().iter().enumerate() {
            if !(l.is_finite() && *l >= 0.0) {
                return Err(Error::InvalidParam(format!(
                    "lambda{} must be finite and non-negative, got {l}",
                    i + 1
                )));
            }
        }
        if self.style_layers.is_empty() {
            return Err(Error::InvalidParam("no style layers".into()));
        }
        for name in self.layer_names() {
            if !net.has_layer(name) {
                return Err(Error::UnknownTap(name.to_owned()));
            }
        }
        Ok(())
    }

    fn layer_names(&self) -> impl Iterator<Item = &str> {
        [self.content_layer.as_str(), self.constraint_layer.as_str()]
            .into_iter()
            .chain(self.style_layers.iter().map(String::as_str))
    }
}

/// Unweighted values of the five terms and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<T = f32> {
    pub content: T,
    pub mxdog_content: T,
    pub style: T,
    pub mxdog_content_cns: T,
    pub mxdog_style_cns: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn terms(&self) -> [T; 5] {
        [
            self.content,
            self.mxdog_content,
            self.style,
            self.mxdog_content_cns,
            self.mxdog_style_cns,
        ]
    }

    /// `λ_i * term_i` for each term, in the order used to form `total`.
    pub fn weighted(&self, w: &LossWeights) -> [T; 5] {
        let terms = self.terms();
        let lambdas = w.lambdas();
        std::array::from_fn(|i| T::of(lambdas[i]) * terms[i])
    }

    fn from_terms(terms: [T; 5], w: &LossWeights) -> Self {
        let mut out = Self {
            content: terms[0],
            mxdog_content: terms[1],
            style: terms[2],
            mxdog_content_cns: terms[3],
            mxdog_style_cns: terms[4],
            total: T::zero(),
        };
        out.total = out
            .weighted(w)
            .into_iter()
            .fold(T::zero(), |acc, v| acc + v);
        out
    }
}

/// Everything the objective compares against, computed once per
/// content/style pair with the exact (hard) MXDoG pipeline.
#[derive(Clone, Debug)]
pub struct StyleTargets<T = f32> {
    pub content_features: FeatureMap<T>,
    pub mxdog_content_features: FeatureMap<T>,
    pub mxdog_constraint_features: FeatureMap<T>,
    pub style_grams: BTreeMap<String, GramMatrix<T>>,
    pub mxdog_style_grams: BTreeMap<String, GramMatrix<T>>,
    pub content_mxdog: ImageTensor<T>,
    pub style_mxdog: ImageTensor<T>,
    content_shape: (usize, usize, usize),
}

impl<T: Scalar> StyleTargets<T> {
    pub fn content_shape(&self) -> (usize, usize, usize) {
        self.content_shape
    }
}

pub fn precompute_targets<T: Scalar>(
    content: &ImageTensor<T>,
    style: &ImageTensor<T>,
    net: &FeatureNet<T>,
    params: &MxdogParams,
    w: &LossWeights,
) -> Result<StyleTargets<T>> {
    w.validate(net)?;
    params.validate()?;
    let content_mxdog = mxdog(content, params)?;
    let style_mxdog = mxdog(style, params)?;

    let c = net.forward(content, &[&w.content_layer])?;
    let cm = net.forward(&content_mxdog, &[&w.content_layer, &w.constraint_layer])?;
    let style_taps: Vec<&str> = w.style_layers.iter().map(String::as_str).collect();
    let grams = |img: &ImageTensor<T>| -> Result<BTreeMap<String, GramMatrix<T>>> {
        Ok(net
            .forward(img, &style_taps)?
            .into_iter()
            .map(|(k, f)| (k, gram(&f)))
            .collect())
    };
    Ok(StyleTargets {
        content_features: c[&w.content_layer].clone(),
        mxdog_content_features: cm[&w.content_layer].clone(),
        mxdog_constraint_features: cm[&w.constraint_layer].clone(),
        style_grams: grams(style)?,
        mxdog_style_grams: grams(&style_mxdog)?,
        content_mxdog,
        style_mxdog,
        content_shape: content.shape(),
    })
}

fn accumulate<T: Scalar>(
    grads: &mut BTreeMap<String, FeatureMap<T>>,
    name: &str,
    g: FeatureMap<T>,
    weight: T,
) {
    match grads.get_mut(name) {
        Some(acc) => {
            for (a, v) in acc.data.iter_mut().zip(&g.data) {
                *a += weight * *v;
            }
        }
        None => {
            let scaled = FeatureMap {
                data: g.data.iter().map(|&v| weight * v).collect(),
                ..g
            };
            grads.insert(name.to_owned(), scaled);
        }
    }
}

fn deepest<T: Scalar>(net: &FeatureNet<T>, names: &[&str]) -> usize {
    names
        .iter()
        .filter_map(|n| net.layer_index(n))
        .max()
        .unwrap_or(0)
}

/// Evaluates the weighted five-term objective at `image` and its gradient.
///
/// The two constraint terms see the differentiable surrogate
/// [`SoftMxdog`] of `image`; targets come from the hard pipeline. Terms with
/// zero weight are not evaluated and report 0.
pub fn total_loss_and_grad<T: Scalar>(
    image: &ImageTensor<T>,
    targets: &StyleTargets<T>,
    net: &FeatureNet<T>,
    params: &MxdogParams,
    w: &LossWeights,
    rho: f64,
) -> Result<(LossBreakdown<T>, ImageTensor<T>)> {
    if image.shape() != targets.content_shape {
        return Err(Error::Shape(format!(
            "image {:?} does not match content {:?}",
            image.shape(),
            targets.content_shape
        )));
    }
    let [l1, l2, l3, l4, l5] = w.lambdas();
    let mut terms = [T::zero(); 5];
    let mut grad = image.zeros_like();
    let style_taps: Vec<&str> = w.style_layers.iter().map(String::as_str).collect();

    // Terms on the image itself.
    let mut taps: Vec<&str> = Vec::new();
    if l1 > 0.0 || l2 > 0.0 {
        taps.push(&w.content_layer);
    }
    if l3 > 0.0 {
        taps.extend(&style_taps);
    }
    if !taps.is_empty() {
        let trace = net.trace(image, deepest(net, &taps))?;
        let mut tap_grads = BTreeMap::new();
        let content_f = trace.get(&w.content_layer, net);
        if l1 > 0.0 {
            let f = content_f.ok_or_else(|| Error::UnknownTap(w.content_layer.clone()))?;
            let (loss, g) = content_loss_grad(f, &targets.content_features)?;
            terms[0] = loss;
            accumulate(&mut tap_grads, &w.content_layer, g, T::of(l1));
        }
        if l2 > 0.0 {
            let f = content_f.ok_or_else(|| Error::UnknownTap(w.content_layer.clone()))?;
            let (loss, g) = content_loss_grad(f, &targets.mxdog_content_features)?;
            terms[1] = loss;
            accumulate(&mut tap_grads, &w.content_layer, g, T::of(l2));
        }
        if l3 > 0.0 {
            let fs = collect_taps(&trace, net, &style_taps)?;
            let (loss, gs) = style_loss_grad(&fs, &targets.style_grams)?;
            terms[2] = loss;
            for (name, g) in gs {
                accumulate(&mut tap_grads, &name, g, T::of(l3));
            }
        }
        add_into(&mut grad, &net.backward_trace(&trace, &tap_grads)?);
    }

    // Constraint terms on the surrogate MXDoG of the image.
    if l4 > 0.0 || l5 > 0.0 {
        let soft = SoftMxdog::forward(image, params, rho)?;
        let mut taps: Vec<&str> = Vec::new();
        if l4 > 0.0 {
            taps.push(&w.constraint_layer);
        }
        if l5 > 0.0 {
            taps.extend(&style_taps);
        }
        let trace = net.trace(soft.output(), deepest(net, &taps))?;
        let mut tap_grads = BTreeMap::new();
        if l4 > 0.0 {
            let f = trace
                .get(&w.constraint_layer, net)
                .ok_or_else(|| Error::UnknownTap(w.constraint_layer.clone()))?;
            let (loss, g) = content_loss_grad(f, &targets.mxdog_constraint_features)?;
            terms[3] = loss;
            accumulate(&mut tap_grads, &w.constraint_layer, g, T::of(l4));
        }
        if l5 > 0.0 {
            let fs = collect_taps(&trace, net, &style_taps)?;
            let (loss, gs) = style_loss_grad(&fs, &targets.mxdog_style_grams)?;
            terms[4] = loss;
            for (name, g) in gs {
                accumulate(&mut tap_grads, &name, g, T::of(l5));
            }
        }
        let grad_soft = net.backward_trace(&trace, &tap_grads)?;
        add_into(&mut grad, &soft.backward(&grad_soft)?);
    }

    let breakdown = LossBreakdown::from_terms(terms, w);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "total loss is {}",
            breakdown.total
        )));
    }
    Ok((breakdown, grad))
}

/// Constraint losses evaluated on the hard MXDoG of `image`, for comparison
/// with the surrogate values reported by [`total_loss_and_grad`].
pub fn hard_constraint_losses<T: Scalar>(
    image: &ImageTensor<T>,
    targets: &StyleTargets<T>,
    net: &FeatureNet<T>,
    params: &MxdogParams,
    w: &LossWeights,
) -> Result<(T, T)> {
    let md = mxdog(image, params)?;
    let mut taps: Vec<&str> = vec![&w.constraint_layer];
    taps.extend(w.style_layers.iter().map(String::as_str));
    let trace = net.trace(&md, deepest(net, &taps))?;
    let f = trace
        .get(&w.constraint_layer, net)
        .ok_or_else(|| Error::UnknownTap(w.constraint_layer.clone()))?;
    let content = content_loss(f, &targets.mxdog_constraint_features)?;
    let fs = collect_taps(&trace, net, &taps[1..])?;
    let style = style_loss(&fs, &targets.mxdog_style_grams)?;
    Ok((content, style))
}

fn collect_taps<T: Scalar>(
    trace: &crate::net::Trace<T>,
    net: &FeatureNet<T>,
    names: &[&str],
) -> Result<BTreeMap<String, FeatureMap<T>>> {
    names
        .iter()
        .map(|&n| {
            trace
                .get(n, net)
                .cloned()
                .map(|f| (n.to_owned(), f))
                .ok_or_else(|| Error::UnknownTap(n.to_owned()))
        })
        .collect()
}

fn add_into<T: Scalar>(acc: &mut ImageTensor<T>, g: &ImageTensor<T>) {
    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += v;
    }
}
