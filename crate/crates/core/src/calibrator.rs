//! Binary logistic model for the local development potential.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parcel_attrs::AttributeVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    LnSize,
    Compactness,
    AccessibilityKm,
    PoiDensityNorm,
}

impl Covariate {
    pub const ALL: [Covariate; 4] = [
        Covariate::LnSize,
        Covariate::Compactness,
        Covariate::AccessibilityKm,
        Covariate::PoiDensityNorm,
    ];

    /// Compactness is left out: it was not a significant predictor.
    pub const DEFAULT: [Covariate; 3] = [
        Covariate::LnSize,
        Covariate::AccessibilityKm,
        Covariate::PoiDensityNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::LnSize => "ln_size",
            Covariate::Compactness => "compactness",
            Covariate::AccessibilityKm => "accessibility_km",
            Covariate::PoiDensityNorm => "poi_density_norm",
        }
    }

    pub fn value(self, a: &AttributeVector) -> f64 {
        match self {
            Covariate::LnSize => a.ln_size,
            Covariate::Compactness => a.compactness,
            Covariate::AccessibilityKm => a.accessibility_km,
            Covariate::PoiDensityNorm => a.poi_density_norm,
        }
    }

    fn set(self, a: &mut AttributeVector, v: f64) {
        match self {
            Covariate::LnSize => a.ln_size = v,
            Covariate::Compactness => a.compactness = v,
            Covariate::AccessibilityKm => a.accessibility_km = v,
            Covariate::PoiDensityNorm => a.poi_density_norm = v,
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Covariate::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown covariate `{s}`")))
    }
}

pub fn parse_covariates(list: &str) -> Result<Vec<Covariate>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Numerically stable logistic function.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub covariates: Vec<Covariate>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LogisticModel {
    pub fn new(covariates: Vec<Covariate>, intercept: f64, coefficients: Vec<f64>) -> Result<Self> {
        let m = Self {
            covariates,
            intercept,
            coefficients,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.covariates.len() != self.coefficients.len() {
            return Err(Error::Config(format!(
                "{} covariates but {} coefficients",
                self.covariates.len(),
                self.coefficients.len()
            )));
        }
        if !self.intercept.is_finite() || self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("model coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Beijing 2010 parcel calibration: ln size, distance to center, POI
    /// density. Distance units were not published; this crate uses km.
    pub fn beijing2010() -> Self {
        Self {
            covariates: Covariate::DEFAULT.to_vec(),
            intercept: 5.359,
            coefficients: vec![-0.306, -0.099, 3.431],
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "beijing2010" => Some(Self::beijing2010()),
            _ => None,
        }
    }

    pub fn linear_predictor(&self, attrs: &AttributeVector) -> f64 {
        self.intercept
            + self
                .covariates
                .iter()
                .zip(&self.coefficients)
                .map(|(c, a)| a * c.value(attrs))
                .sum::<f64>()
    }

    pub fn predict(&self, attrs: &AttributeVector) -> f64 {
        logistic(self.linear_predictor(attrs))
    }

    pub fn negated(&self) -> Self {
        Self {
            covariates: self.covariates.clone(),
            intercept: -self.intercept,
            coefficients: self.coefficients.iter().map(|c| -c).collect(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledRow {
    pub attrs: AttributeVector,
    pub urban: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// L2 weight on the slopes; the intercept is not penalized.
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-6,
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Intercept first, then one per covariate.
    pub standard_errors: Vec<f64>,
    /// At cutoff 0.5.
    pub accuracy: f64,
}

const CHUNK: usize = 4096;

struct Accum {
    ll: f64,
    grad: DVector<f64>,
    info: DMatrix<f64>,
}

/// Log-likelihood, score and observed information over the design matrix,
/// reduced in fixed chunk order.
fn accumulate(x: &[f64], y: &[bool], beta: &DVector<f64>, with_derivs: bool) -> Accum {
    let p = beta.len();
    let partials: Vec<Accum> = x
        .par_chunks(CHUNK * p)
        .zip(y.par_chunks(CHUNK))
        .map(|(xc, yc)| {
            let mut acc = Accum {
                ll: 0.0,
                grad: DVector::zeros(p),
                info: DMatrix::zeros(p, p),
            };
            for (row, &yi) in xc.chunks_exact(p).zip(yc) {
                let z: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                acc.ll -= if yi { softplus(-z) } else { softplus(z) };
                if with_derivs {
                    let mu = logistic(z);
                    let r = f64::from(u8::from(yi)) - mu;
                    let w = mu * (1.0 - mu);
                    for j in 0..p {
                        acc.grad[j] += r * row[j];
                        for k in 0..=j {
                            acc.info[(j, k)] += w * row[j] * row[k];
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum {
        ll: 0.0,
        grad: DVector::zeros(p),
        info: DMatrix::zeros(p, p),
    };
    for a in partials {
        total.ll += a.ll;
        total.grad += a.grad;
        total.info += a.info;
    }
    for j in 0..p {
        for k in 0..j {
            total.info[(k, j)] = total.info[(j, k)];
        }
    }
    total
}

fn penalty(beta: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * lambda * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Penalized maximum likelihood by damped Newton iterations.
pub fn fit_logistic(
    rows: &[LabeledRow],
    covariates: &[Covariate],
    options: &FitOptions,
) -> Result<(LogisticModel, FitReport)> {
    let urban = rows.iter().filter(|r| r.urban).count();
    let minority = urban.min(rows.len() - urban);
    if minority < 2 {
        return Err(Error::InsufficientData { needed: 2, got: minority });
    }
    if covariates.is_empty() {
        return Err(Error::Config("at least one covariate is required".into()));
    }
    for c in covariates {
        let (lo, hi) = rows.iter().map(|r| c.value(&r.attrs)).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), v| (lo.min(v), hi.max(v)),
        );
        if !(hi > lo) {
            return Err(Error::Config(format!("covariate {c} is constant across all samples")));
        }
    }

    let p = covariates.len() + 1;
    let x: Vec<f64> = rows
        .iter()
        .flat_map(|r| std::iter::once(1.0).chain(covariates.iter().map(|c| c.value(&r.attrs))))
        .collect();
    let y: Vec<bool> = rows.iter().map(|r| r.urban).collect();
    let lambda = options.lambda;
    let hint = if lambda == 0.0 {
        " (the classes may be perfectly separated; use a positive regularization weight)"
    } else {
        ""
    };

    let mut beta = DVector::zeros(p);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let acc = accumulate(&x, &y, &beta, true);
        let current = acc.ll - penalty(&beta, lambda);
        let mut grad = acc.grad;
        let mut info = acc.info;
        for j in 1..p {
            grad[j] -= lambda * beta[j];
            info[(j, j)] += lambda;
        }
        let Some(chol) = info.cholesky() else {
            return Err(Error::NonConvergence { iterations, hint });
        };
        let delta = chol.solve(&grad);
        let mut step = 1.0;
        let mut next = &beta + &delta;
        for _ in 0..40 {
            let cand = accumulate(&x, &y, &next, false).ll - penalty(&next, lambda);
            if cand.is_finite() && cand >= current - 1e-12 * current.abs() {
                break;
            }
            step *= 0.5;
            next = &beta + &delta * step;
        }
        let change = (&next - &beta).amax();
        beta = next;
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::NonConvergence { iterations, hint });
        }
        if change < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations, hint });
    }

    let acc = accumulate(&x, &y, &beta, true);
    let mut info = acc.info;
    for j in 1..p {
        info[(j, j)] += lambda;
    }
    let cov = info
        .try_inverse()
        .ok_or(Error::NonConvergence { iterations, hint })?;
    let standard_errors = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    let model = LogisticModel::new(covariates.to_vec(), beta[0], beta.iter().skip(1).copied().collect())?;
    let accuracy = classification_accuracy(&model, rows, 0.5)?;
    Ok((
        model,
        FitReport {
            iterations,
            log_likelihood: acc.ll,
            standard_errors,
            accuracy,
        },
    ))
}

/// Share of rows whose predicted label (probability strictly above
/// `cutoff`) matches the observed one.
pub fn classification_accuracy(model: &LogisticModel, rows: &[LabeledRow], cutoff: f64) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no labeled rows"));
    }
    let hits = rows
        .iter()
        .filter(|r| (model.predict(&r.attrs) > cutoff) == r.urban)
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Reads labeled samples: one column per covariate name plus `urban` (0/1).
pub fn read_samples_csv(path: &Path, covariates: &[Covariate]) -> Result<Vec<LabeledRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column `{name}`", path.display())))
    };
    let cols: Vec<(Covariate, usize)> = covariates
        .iter()
        .map(|c| col(c.name()).map(|i| (*c, i)))
        .collect::<Result<_>>()?;
    let label_col = col("urban")?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Input {
            path: path.to_path_buf(),
            feature: format!("row {}", line + 1),
            reason: what.to_string(),
        };
        let mut attrs = AttributeVector::default();
        for &(c, i) in &cols {
            let v: f64 = rec.get(i).unwrap_or("").parse().map_err(|_| bad(c.name()))?;
            c.set(&mut attrs, v);
        }
        let urban = match rec.get(label_col).unwrap_or("") {
            "1" | "true" | "urban" => true,
            "0" | "false" | "non_urban" => false,
            _ => return Err(bad("urban label must be 0 or 1")),
        };
        rows.push(LabeledRow { attrs, urban });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn attrs(ln_size: f64, acc: f64, poi: f64) -> AttributeVector {
        AttributeVector {
            ln_size,
            compactness: 20.0,
            accessibility_km: acc,
            poi_density_norm: poi,
        }
    }

    #[test]
    fn midpoint_and_tails() {
        assert_eq!(logistic(0.0), 0.5);
        let t = logistic(-50.0);
        assert!(t > 0.0 && t < 1e-21);
        assert_eq!(logistic(700.0), 1.0);
        assert!(logistic(-700.0) > 0.0);
        assert!(logistic(-700.0).is_finite());
    }

    #[test]
    fn preset_hand_evaluation() {
        let m = LogisticModel::beijing2010();
        let a = attrs(10.0, 5.0, 0.5);
        assert_relative_eq!(m.linear_predictor(&a), 3.5195, epsilon = 1e-12);
        let expected = 1.0 / (1.0 + (-3.5195f64).exp());
        assert_relative_eq!(m.predict(&a), expected, epsilon = 1e-12);
    }

    #[test]
    fn model_json_roundtrip() {
        let m = LogisticModel::beijing2010();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"covariates\":[\"ln_size\",\"accessibility_km\",\"poi_density_norm\"]"));
        let back: LogisticModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(LogisticModel::new(vec![Covariate::LnSize], 0.0, vec![]).is_err());
    }

    #[test]
    fn accuracy_counts() {
        // intercept only model outputting 0.9
        let m = LogisticModel::new(vec![Covariate::LnSize], (0.9f64 / 0.1).ln(), vec![0.0]).unwrap();
        let urban: Vec<_> = (0..5).map(|i| LabeledRow { attrs: attrs(i as f64, 0., 0.), urban: true }).collect();
        let non: Vec<_> = urban.iter().map(|r| LabeledRow { urban: false, ..*r }).collect();
        assert_eq!(classification_accuracy(&m, &urban, 0.5).unwrap(), 1.0);
        assert_eq!(classification_accuracy(&m, &non, 0.5).unwrap(), 0.0);
        assert!(matches!(classification_accuracy(&m, &[], 0.5), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn half_model_accuracy_is_non_urban_share() {
        let m = LogisticModel::new(vec![Covariate::LnSize], 0.0, vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<_> = (0..997)
            .map(|i| LabeledRow { attrs: attrs(i as f64, 0., 0.), urban: rng.gen_bool(0.37) })
            .collect();
        let non_urban = rows.iter().filter(|r| !r.urban).count() as f64 / rows.len() as f64;
        assert_eq!(classification_accuracy(&m, &rows, 0.5).unwrap(), non_urban);
    }

    #[test]
    fn symmetric_data_has_zero_intercept() {
        let mut rows = Vec::new();
        for i in 1..=50 {
            let x = i as f64 / 10.0;
            // noisy labels so the data is not separable
            let y = i % 3 != 0;
            rows.push(LabeledRow { attrs: attrs(x, 0., 0.), urban: y });
            rows.push(LabeledRow { attrs: attrs(-x, 0., 0.), urban: !y });
        }
        let (m, rep) = fit_logistic(&rows, &[Covariate::LnSize], &FitOptions::default()).unwrap();
        assert!(m.intercept.abs() < 1e-8, "intercept {}", m.intercept);
        assert!(m.coefficients[0] > 0.0);
        assert!(rep.standard_errors.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    fn separable() -> Vec<LabeledRow> {
        (0..40)
            .map(|i| LabeledRow { attrs: attrs(i as f64, 0., 0.), urban: i >= 20 })
            .collect()
    }

    #[test]
    fn separation_without_penalty_fails() {
        let opts = FitOptions { lambda: 0.0, ..Default::default() };
        match fit_logistic(&separable(), &[Covariate::LnSize], &opts) {
            Err(Error::NonConvergence { hint, .. }) => assert!(hint.contains("regularization")),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn separation_with_penalty_converges() {
        let opts = FitOptions { lambda: 0.1, ..Default::default() };
        let (m, rep) = fit_logistic(&separable(), &[Covariate::LnSize], &opts).unwrap();
        assert!(m.coefficients[0] > 0.0);
        assert_eq!(rep.accuracy, 1.0);
    }

    #[test]
    fn constant_covariate_rejected() {
        let rows: Vec<_> = (0..10).map(|i| LabeledRow { attrs: attrs(i as f64, 3., 0.), urban: i % 2 == 0 }).collect();
        assert!(matches!(
            fit_logistic(&rows, &[Covariate::LnSize, Covariate::AccessibilityKm], &FitOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn too_few_of_one_label() {
        let rows: Vec<_> = (0..10).map(|i| LabeledRow { attrs: attrs(i as f64, 0., 0.), urban: i != 0 }).collect();
        assert!(matches!(
            fit_logistic(&rows, &[Covariate::LnSize], &FitOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn samples_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "ln_size,accessibility_km,poi_density_norm,urban\n9.0,2.5,0.4,1\n8.0,10,0.1,0\n").unwrap();
        let rows = read_samples_csv(&p, &Covariate::DEFAULT).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].urban && !rows[1].urban);
        assert_eq!(rows[1].attrs.accessibility_km, 10.0);
        assert!(read_samples_csv(&p, &[Covariate::Compactness]).is_err());
    }

    proptest! {
        #[test]
        fn negation_symmetry(l in 0.0..16.0f64, d in 0.0..80.0f64, poi in 0.0..1.0f64) {
            let m = LogisticModel::beijing2010();
            let a = attrs(l, d, poi);
            prop_assert!((m.predict(&a) + m.negated().predict(&a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_covariates(l in 0.0..16.0f64, d in 0.0..80.0f64, poi in 0.0..0.9f64, h in 0.01..0.1f64) {
            let m = LogisticModel::beijing2010();
            let base = m.predict(&attrs(l, d, poi));
            prop_assert!(m.predict(&attrs(l + h, d, poi)) < base);
            prop_assert!(m.predict(&attrs(l, d + h, poi)) < base);
            prop_assert!(m.predict(&attrs(l, d, poi + h)) > base);
        }
    }
}
