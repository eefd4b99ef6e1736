//! Classification losses for imbalanced data.
//!
//! All losses return the batch-mean loss together with the gradient with
//! respect to the logits, already divided by the batch size.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassHistogram;
use crate::real::Real;

pub const DEFAULT_MAX_MARGIN: f64 = 0.5;
pub const DEFAULT_SCALE: f64 = 30.0;
pub const DEFAULT_BETA: f64 = 0.999;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("non-finite logit at row {row}")]
    NonFiniteLogit { row: usize },
    #[error("{labels} labels for {rows} logit rows")]
    BatchMismatch { labels: usize, rows: usize },
    #[error("class {0} has no samples; cannot derive a weight or margin for it")]
    ZeroCount(usize),
    #[error("expected {expected} per-class values, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },
    #[error("invalid loss parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = LossError> = std::result::Result<T, E>;

/// Per-class weights, normalized so they sum to the number of classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    w: Vec<f64>,
}

impl ClassWeights {
    /// Normalize arbitrary positive scores to sum to `K`.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(LossError::InvalidParameter(format!(
                "class weights must be positive and finite: {raw:?}"
            )));
        }
        let k = raw.len() as f64;
        let total: f64 = raw.iter().sum();
        Ok(Self {
            w: raw.into_iter().map(|v| v * k / total).collect(),
        })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self {
            w: vec![1.0; num_classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

fn positive_counts(hist: &ClassHistogram) -> Result<&[usize]> {
    match hist.counts.iter().position(|&n| n == 0) {
        Some(c) => Err(LossError::ZeroCount(c)),
        None => Ok(&hist.counts),
    }
}

/// `w_c ∝ 1 / n_c`.
pub fn inverse_frequency_weights(hist: &ClassHistogram) -> Result<ClassWeights> {
    let counts = positive_counts(hist)?;
    ClassWeights::normalized(counts.iter().map(|&n| 1.0 / n as f64).collect())
}

/// Effective number of samples `E_n = (1 - beta^n) / (1 - beta)`.
pub fn effective_number(n: usize, beta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    // expm1 keeps precision when beta^n is close to 1
    let num = -(n as f64 * beta.ln()).exp_m1();
    num / (1.0 - beta)
}

/// `w_c ∝ 1 / E_{n_c}`; `beta = 0` gives uniform weights.
pub fn effective_number_weights(hist: &ClassHistogram, beta: f64) -> Result<ClassWeights> {
    if !(0.0..1.0).contains(&beta) {
        return Err(LossError::InvalidParameter(format!(
            "beta must lie in [0, 1), got {beta}"
        )));
    }
    let counts = positive_counts(hist)?;
    ClassWeights::normalized(
        counts
            .iter()
            .map(|&n| 1.0 / effective_number(n, beta))
            .collect(),
    )
}

/// Label-distribution-aware margins and the logit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdamSpec {
    pub margins: Vec<f64>,
    pub scale: f64,
}

impl LdamSpec {
    pub fn new(margins: Vec<f64>, scale: f64) -> Result<Self> {
        if margins.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(LossError::InvalidParameter(format!(
                "margins must be non-negative: {margins:?}"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(LossError::InvalidParameter(format!(
                "scale must be positive, got {scale}"
            )));
        }
        Ok(Self { margins, scale })
    }

    pub fn max_margin(&self) -> f64 {
        self.margins.iter().copied().fold(0.0, f64::max)
    }
}

/// `Δ_c = C / n_c^{1/4}` with `C` chosen so the rarest class gets `max_margin`.
pub fn ldam_margins(hist: &ClassHistogram, max_margin: f64) -> Result<Vec<f64>> {
    if !(max_margin > 0.0 && max_margin.is_finite()) {
        return Err(LossError::InvalidParameter(format!(
            "max_margin must be positive, got {max_margin}"
        )));
    }
    let counts = positive_counts(hist)?;
    let raw: Vec<f64> = counts.iter().map(|&n| (n as f64).powf(-0.25)).collect();
    let largest = raw.iter().copied().fold(0.0, f64::max);
    Ok(raw.into_iter().map(|r| max_margin * r / largest).collect())
}

/// Returned by every loss: the batch-mean loss and `∂loss/∂logits`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput<F> {
    pub loss: F,
    pub dlogits: Array2<F>,
}

fn check_batch<F: Real>(logits: &ArrayView2<F>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(LossError::BatchMismatch {
            labels: labels.len(),
            rows: logits.nrows(),
        });
    }
    let k = logits.ncols();
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(LossError::LabelOutOfRange {
            label,
            num_classes: k,
        });
    }
    for (row, r) in logits.outer_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFiniteLogit { row });
        }
    }
    Ok(())
}

fn check_weights(weights: Option<&ClassWeights>, k: usize) -> Result<()> {
    match weights {
        Some(w) if w.len() != k => Err(LossError::ClassCountMismatch {
            expected: k,
            actual: w.len(),
        }),
        _ => Ok(()),
    }
}

/// Softmax cross-entropy on already-validated inputs, max-subtracted for
/// stability.
fn cross_entropy_kernel<F: Real>(
    logits: ArrayView2<F>,
    labels: &[usize],
    weights: Option<&ClassWeights>,
) -> LossOutput<F> {
    let batch = logits.nrows();
    let inv_b = F::one() / F::from_usize(batch.max(1)).unwrap();
    let mut dlogits = Array2::zeros(logits.dim());
    let mut total = F::zero();
    for ((row, mut grad), &y) in logits.outer_iter().zip(dlogits.outer_iter_mut()).zip(labels) {
        let w = weights.map_or(F::one(), |w| F::from_f64_lossy(w.as_slice()[y]));
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for (g, &z) in grad.iter_mut().zip(row.iter()) {
            let e = (z - max).exp();
            *g = e;
            sum = sum + e;
        }
        let log_sum = sum.ln();
        total = total + w * (log_sum - (row[y] - max));
        let scale = w * inv_b;
        for (j, g) in grad.iter_mut().enumerate() {
            let p = *g / sum;
            let onehot = if j == y { F::one() } else { F::zero() };
            *g = scale * (p - onehot);
        }
    }
    LossOutput {
        loss: total * inv_b,
        dlogits,
    }
}

/// `(1/B) Σ_b w_{y_b} · (−log softmax(z_b)[y_b])`; `w ≡ 1` without weights.
pub fn softmax_cross_entropy<F: Real>(
    logits: ArrayView2<F>,
    labels: &[usize],
    weights: Option<&ClassWeights>,
) -> Result<LossOutput<F>> {
    check_batch(&logits, labels)?;
    check_weights(weights, logits.ncols())?;
    Ok(cross_entropy_kernel(logits, labels, weights))
}

/// LDAM: cross-entropy on `s · (z − Δ_y e_y)`, with the chain factor `s`
/// applied to the gradient.
pub fn ldam_loss<F: Real>(
    logits: ArrayView2<F>,
    labels: &[usize],
    spec: &LdamSpec,
    weights: Option<&ClassWeights>,
) -> Result<LossOutput<F>> {
    check_batch(&logits, labels)?;
    let k = logits.ncols();
    if spec.margins.len() != k {
        return Err(LossError::ClassCountMismatch {
            expected: k,
            actual: spec.margins.len(),
        });
    }
    check_weights(weights, k)?;
    let s = F::from_f64_lossy(spec.scale);
    let mut shifted = logits.to_owned();
    for (mut row, &y) in shifted.outer_iter_mut().zip(labels) {
        let margin = F::from_f64_lossy(spec.margins[y]);
        for (j, z) in row.iter_mut().enumerate() {
            let base = if j == y { *z - margin } else { *z };
            *z = s * base;
        }
    }
    if let Some(row) = shifted
        .outer_iter()
        .position(|r| r.iter().any(|v| !v.is_finite()))
    {
        return Err(LossError::NonFiniteLogit { row });
    }
    let mut out = cross_entropy_kernel(shifted.view(), labels, weights);
    out.dlogits.mapv_inplace(|g| g * s);
    Ok(out)
}

/// Which loss a training stage optimizes, as written in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss")]
pub enum LossSpec {
    #[serde(rename = "ce")]
    CrossEntropy,
    #[serde(rename = "wce-invfreq")]
    WeightedInverseFrequency,
    #[serde(rename = "wce-effnum")]
    WeightedEffectiveNumber {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    #[serde(rename = "ldam")]
    Ldam {
        #[serde(default = "default_max_margin")]
        max_margin: f64,
        #[serde(default = "default_scale", rename = "s")]
        scale: f64,
        /// When set, LDAM is additionally weighted by effective-number
        /// class weights with this beta.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reweight_beta: Option<f64>,
    },
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_max_margin() -> f64 {
    DEFAULT_MAX_MARGIN
}
fn default_scale() -> f64 {
    DEFAULT_SCALE
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::CrossEntropy
    }
}

impl LossSpec {
    pub fn ldam_default() -> Self {
        LossSpec::Ldam {
            max_margin: DEFAULT_MAX_MARGIN,
            scale: DEFAULT_SCALE,
            reweight_beta: None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LossSpec::CrossEntropy => "ce",
            LossSpec::WeightedInverseFrequency => "wce-invfreq",
            LossSpec::WeightedEffectiveNumber { .. } => "wce-effnum",
            LossSpec::Ldam { .. } => "ldam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::WeightedEffectiveNumber { beta } => {
                if !(0.0..1.0).contains(&beta) {
                    return Err(LossError::InvalidParameter(format!(
                        "beta must lie in [0, 1), got {beta}"
                    )));
                }
            }
            LossSpec::Ldam {
                max_margin,
                scale,
                reweight_beta,
            } => {
                if !(max_margin >= 0.0 && max_margin.is_finite()) {
                    return Err(LossError::InvalidParameter(format!(
                        "max_margin must be non-negative, got {max_margin}"
                    )));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(LossError::InvalidParameter(format!(
                        "s must be positive, got {scale}"
                    )));
                }
                if let Some(beta) = reweight_beta {
                    if !(0.0..1.0).contains(&beta) {
                        return Err(LossError::InvalidParameter(format!(
                            "beta must lie in [0, 1), got {beta}"
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Fix weights and margins from the training histogram.
    ///
    /// `max_margin = 0` yields all-zero margins, which reduces LDAM to
    /// (scaled) cross-entropy.
    pub fn resolve(&self, hist: &ClassHistogram) -> Result<ResolvedLoss> {
        self.validate()?;
        Ok(match *self {
            LossSpec::CrossEntropy => ResolvedLoss::CrossEntropy { weights: None },
            LossSpec::WeightedInverseFrequency => ResolvedLoss::CrossEntropy {
                weights: Some(inverse_frequency_weights(hist)?),
            },
            LossSpec::WeightedEffectiveNumber { beta } => ResolvedLoss::CrossEntropy {
                weights: Some(effective_number_weights(hist, beta)?),
            },
            LossSpec::Ldam {
                max_margin,
                scale,
                reweight_beta,
            } => {
                let margins = if max_margin == 0.0 {
                    vec![0.0; hist.num_classes()]
                } else {
                    ldam_margins(hist, max_margin)?
                };
                let weights = reweight_beta
                    .map(|beta| effective_number_weights(hist, beta))
                    .transpose()?;
                ResolvedLoss::Ldam {
                    spec: LdamSpec::new(margins, scale)?,
                    weights,
                }
            }
        })
    }
}

/// A loss with its class-dependent constants fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ResolvedLoss {
    CrossEntropy { weights: Option<ClassWeights> },
    Ldam {
        spec: LdamSpec,
        weights: Option<ClassWeights>,
    },
}

impl ResolvedLoss {
    pub fn evaluate<F: Real>(&self, logits: ArrayView2<F>, labels: &[usize]) -> Result<LossOutput<F>> {
        match self {
            ResolvedLoss::CrossEntropy { weights } => {
                softmax_cross_entropy(logits, labels, weights.as_ref())
            }
            ResolvedLoss::Ldam { spec, weights } => ldam_loss(logits, labels, spec, weights.as_ref()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hist(counts: &[usize]) -> ClassHistogram {
        ClassHistogram {
            counts: counts.to_vec(),
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ce_uniform_logits_is_ln2() {
        let out = softmax_cross_entropy(array![[0.0f64, 0.0]].view(), &[0], None).unwrap();
        assert!(close(out.loss, std::f64::consts::LN_2, 1e-15));
        assert_eq!(out.dlogits, array![[-0.5, 0.5]]);
    }

    #[test]
    fn ce_is_stable_for_huge_logits() {
        let out = softmax_cross_entropy(array![[1000.0f64, 0.0]].view(), &[0], None).unwrap();
        assert!(out.loss.is_finite() && out.loss < 1e-12);
        let f32_out = softmax_cross_entropy(array![[1000.0f32, 0.0]].view(), &[1], None).unwrap();
        assert!(close(f32_out.loss as f64, 1000.0, 1e-3));
    }

    #[test]
    fn uniform_weights_equal_unweighted() {
        let logits = array![[0.3f64, -1.2, 2.0], [1.0, 0.0, -0.5]];
        let a = softmax_cross_entropy(logits.view(), &[2, 0], None).unwrap();
        let b = softmax_cross_entropy(logits.view(), &[2, 0], Some(&ClassWeights::uniform(3))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ce_errors() {
        let logits = array![[0.0f64, 1.0]];
        assert_eq!(
            softmax_cross_entropy(logits.view(), &[2], None).unwrap_err(),
            LossError::LabelOutOfRange {
                label: 2,
                num_classes: 2
            }
        );
        let nan = array![[f64::NAN, 1.0]];
        assert_eq!(
            softmax_cross_entropy(nan.view(), &[0], None).unwrap_err(),
            LossError::NonFiniteLogit { row: 0 }
        );
        assert!(softmax_cross_entropy(logits.view(), &[0, 1], None).is_err());
    }

    #[test]
    fn inverse_frequency_examples() {
        assert_eq!(inverse_frequency_weights(&hist(&[10, 10])).unwrap().as_slice(), &[1.0, 1.0]);
        let w = inverse_frequency_weights(&hist(&[10, 30])).unwrap();
        assert!(close(w.as_slice()[0], 1.5, 1e-15) && close(w.as_slice()[1], 0.5, 1e-15));
        assert_eq!(
            inverse_frequency_weights(&hist(&[1, 1, 1, 1])).unwrap().as_slice(),
            &[1.0; 4]
        );
        assert_eq!(
            inverse_frequency_weights(&hist(&[3, 0])).unwrap_err(),
            LossError::ZeroCount(1)
        );
    }

    /// Σ_{i=0}^{n-1} β^i by direct summation.
    fn effective_number_oracle(n: usize, beta: f64) -> f64 {
        // Kahan-compensated so the oracle's own rounding stays far below 1e-12
        let (mut sum, mut carry) = (0.0f64, 0.0f64);
        for i in 0..n {
            let y = beta.powi(i as i32) - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        }
        sum
    }

    #[test]
    fn effective_number_examples() {
        let w = effective_number_weights(&hist(&[5, 500, 7]), 0.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0]);
        assert!(close(effective_number(2, 0.9), 1.9, 1e-15));
        assert_eq!(effective_number_weights(&hist(&[2, 2]), 0.9).unwrap().as_slice(), &[1.0, 1.0]);
        assert!(effective_number_weights(&hist(&[2, 0]), 0.9).is_err());
        assert!(effective_number_weights(&hist(&[2, 2]), 1.0).is_err());
    }

    #[test]
    fn effective_number_matches_summation() {
        for beta in [0.9, 0.99, 0.999] {
            for n in (1..=10_000).step_by(37).chain([10_000]) {
                let a = effective_number(n, beta);
                let b = effective_number_oracle(n, beta);
                assert!((a - b).abs() <= 1e-12 * b.max(1.0), "n={n} beta={beta}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn effective_number_approaches_inverse_frequency() {
        let h = hist(&[3, 17, 100, 64]);
        let a = effective_number_weights(&h, 0.9999).unwrap();
        let b = inverse_frequency_weights(&h).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() / y < 0.01);
        }
    }

    #[test]
    fn margin_examples() {
        assert_eq!(ldam_margins(&hist(&[16, 16]), 0.5).unwrap(), vec![0.5, 0.5]);
        let m = ldam_margins(&hist(&[16, 256]), 0.5).unwrap();
        assert!(close(m[0], 0.5, 1e-15) && close(m[1], 0.25, 1e-15));
        let m = ldam_margins(&hist(&[1, 10000]), 0.5).unwrap();
        assert!(close(m[0], 0.5, 1e-15) && close(m[1], 0.05, 1e-15));
        assert!(ldam_margins(&hist(&[0, 3]), 0.5).is_err());
        assert!(ldam_margins(&hist(&[1, 3]), 0.0).is_err());
    }

    #[test]
    fn ldam_scalar_example() {
        let spec = LdamSpec::new(vec![0.5, 0.0], 1.0).unwrap();
        let out = ldam_loss(array![[0.0f64, 0.0]].view(), &[0], &spec, None).unwrap();
        assert!(close(out.loss, (1.0 + 0.5f64.exp()).ln(), 1e-15));
        assert!(close(out.loss, 0.974077, 1e-6));
    }

    #[test]
    fn ldam_zero_margin_unit_scale_is_ce_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = Array2::from_shape_fn((7, 4), |_| rng.gen_range(-3.0..3.0f64));
        let labels: Vec<usize> = (0..7).map(|i| i % 4).collect();
        let spec = LdamSpec::new(vec![0.0; 4], 1.0).unwrap();
        let w = ClassWeights::normalized(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        for weights in [None, Some(&w)] {
            let a = ldam_loss(logits.view(), &labels, &spec, weights).unwrap();
            let b = softmax_cross_entropy(logits.view(), &labels, weights).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ldam_margin_length_checked() {
        let spec = LdamSpec::new(vec![0.1], 1.0).unwrap();
        assert!(matches!(
            ldam_loss(array![[0.0f64, 0.0]].view(), &[0], &spec, None),
            Err(LossError::ClassCountMismatch { .. })
        ));
    }

    #[test]
    fn loss_spec_resolution() {
        let h = hist(&[100, 10]);
        let resolved = LossSpec::ldam_default().resolve(&h).unwrap();
        match resolved {
            ResolvedLoss::Ldam { spec, weights } => {
                assert!(close(spec.max_margin(), 0.5, 1e-15));
                assert!(spec.margins[1] > spec.margins[0]);
                assert_eq!(spec.scale, 30.0);
                assert!(weights.is_none());
            }
            _ => panic!(),
        }
        let neutral = LossSpec::Ldam {
            max_margin: 0.0,
            scale: 1.0,
            reweight_beta: None,
        }
        .resolve(&h)
        .unwrap();
        assert!(matches!(neutral, ResolvedLoss::Ldam { ref spec, .. } if spec.margins == vec![0.0, 0.0]));
        assert!(LossSpec::WeightedEffectiveNumber { beta: 1.5 }.resolve(&h).is_err());
    }

    #[test]
    fn loss_spec_parses_config_keys() {
        #[derive(Deserialize)]
        struct Wrapper {
            #[serde(flatten)]
            loss: LossSpec,
        }
        let w: Wrapper = toml::from_str("loss = \"ldam\"\nmax_margin = 0.3\ns = 10.0\n").unwrap();
        assert_eq!(
            w.loss,
            LossSpec::Ldam {
                max_margin: 0.3,
                scale: 10.0,
                reweight_beta: None
            }
        );
        let w: Wrapper = toml::from_str("loss = \"wce-effnum\"\nbeta = 0.99\n").unwrap();
        assert_eq!(w.loss, LossSpec::WeightedEffectiveNumber { beta: 0.99 });
        let w: Wrapper = toml::from_str("loss = \"ce\"\n").unwrap();
        assert_eq!(w.loss, LossSpec::CrossEntropy);
    }

    fn random_case(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.gen_range(1..6);
        let k = rng.gen_range(2..6);
        let logits = Array2::from_shape_fn((b, k), |_| rng.gen_range(-5.0..5.0));
        let labels = (0..b).map(|_| rng.gen_range(0..k)).collect();
        (logits, labels)
    }

    proptest! {
        #[test]
        fn gradients_sum_to_zero_and_loss_non_negative(seed in any::<u64>(), s in 0.5f64..30.0) {
            let (logits, labels) = random_case(seed);
            let k = logits.ncols();
            let margins: Vec<f64> = (0..k).map(|c| 0.1 * c as f64).collect();
            let spec = LdamSpec::new(margins, s).unwrap();
            for out in [
                softmax_cross_entropy(logits.view(), &labels, None).unwrap(),
                ldam_loss(logits.view(), &labels, &spec, None).unwrap(),
            ] {
                prop_assert!(out.loss >= 0.0 && out.loss.is_finite());
                for row in out.dlogits.outer_iter() {
                    prop_assert!(row.sum().abs() < 1e-6);
                }
            }
        }

        #[test]
        fn batch_loss_is_mean_of_single_losses(seed in any::<u64>()) {
            let (logits, labels) = random_case(seed);
            let k = logits.ncols();
            let w = ClassWeights::normalized((1..=k).map(|c| c as f64).collect()).unwrap();
            let spec = LdamSpec::new(vec![0.2; k], 4.0).unwrap();
            let batch = ldam_loss(logits.view(), &labels, &spec, Some(&w)).unwrap().loss;
            let singles: f64 = (0..labels.len())
                .map(|i| {
                    let row = logits.slice(ndarray::s![i..i + 1, ..]);
                    ldam_loss(row, &labels[i..i + 1], &spec, Some(&w)).unwrap().loss
                })
                .sum::<f64>() / labels.len() as f64;
            prop_assert!((batch - singles).abs() < 1e-9);
        }

        #[test]
        fn margins_non_increasing_and_scale_free(
            counts in proptest::collection::vec(1usize..2000, 1..8),
            m in 1usize..5,
        ) {
            let margins = ldam_margins(&hist(&counts), 0.5).unwrap();
            let mut idx: Vec<usize> = (0..counts.len()).collect();
            idx.sort_by_key(|&i| counts[i]);
            for w in idx.windows(2) {
                prop_assert!(margins[w[0]] >= margins[w[1]]);
            }
            let scaled: Vec<usize> = counts.iter().map(|&n| n * m.pow(4)).collect();
            let rescaled = ldam_margins(&hist(&scaled), 0.5).unwrap();
            for (a, b) in margins.iter().zip(&rescaled) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((margins.iter().copied().fold(0.0, f64::max) - 0.5).abs() < 1e-15);
        }

        #[test]
        fn weights_sum_to_num_classes(counts in proptest::collection::vec(1usize..5000, 1..10), beta in 0.0f64..0.9999) {
            let h = hist(&counts);
            for w in [inverse_frequency_weights(&h).unwrap(), effective_number_weights(&h, beta).unwrap()] {
                let total: f64 = w.as_slice().iter().sum();
                prop_assert!((total - counts.len() as f64).abs() < 1e-9);
                prop_assert!(w.as_slice().iter().all(|&v| v > 0.0));
            }
        }
    }
}
