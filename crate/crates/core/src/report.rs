//! Evaluation and dequantization-gap reports.
//!
//! Every per-example estimate draws from `Rng::new(seed).split(i)`, so a
//! report is a pure function of model, data, estimators and seed.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::dequant::{bits_per_dim, estimate, Dequantizer, Estimator};
use crate::error::{Error, Result};
use crate::flow::SubsetFlowModel;
use crate::numerics::Rng;

/// Mean and standard error of per-example values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanSe { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return MeanSe { mean, stderr: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        MeanSe { mean, stderr: (var / n as f64).sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub estimator: Estimator,
    /// Bits per dimension, or the gap to exact in bits per dimension.
    pub value: MeanSe,
    /// Per-example values behind `value`.
    pub per_example: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub title: &'static str,
    pub rows: Vec<ReportRow>,
}

fn label(e: Estimator) -> String {
    match e {
        Estimator::Iwbo(k) => format!("IWBO({k})"),
        Estimator::Elbo => "ELBO".into(),
        Estimator::Exact => "Exact".into(),
    }
}

impl Report {
    pub fn row(&self, estimator: Estimator) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    /// Human table at three decimals followed by one
    /// `estimator,k,bits_per_dim,stderr` line per row at full precision.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>10} {:>8}", "estimator", self.title, "se");
        for r in &self.rows {
            let _ = writeln!(s, "{:<12} {:>10.3} {:>8.3}", label(r.estimator), r.value.mean, r.value.stderr);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "estimator,k,bits_per_dim,stderr");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:?},{:?}", r.estimator.name(), r.estimator.k(), r.value.mean, r.value.stderr);
        }
        s
    }
}

fn check_data(model: &SubsetFlowModel, data: &Dataset) -> Result<()> {
    if data.dims() != model.dims() || data.levels() != model.levels() {
        return Err(Error::Format(format!(
            "data is D={} K={} but the model expects D={} K={}",
            data.dims(),
            data.levels(),
            model.dims(),
            model.levels()
        )));
    }
    if data.is_empty() {
        return Err(Error::Format("dataset has no examples".into()));
    }
    Ok(())
}

/// Per-example log-likelihood estimates (nats) for one estimator.
pub fn per_example(
    model: &SubsetFlowModel,
    deq: &Dequantizer,
    data: &Dataset,
    estimator: Estimator,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let root = Rng::new(seed);
    (0..data.len())
        .map(|i| {
            let v = estimate(model, deq, &data.row(i), estimator, mc_samples, &mut root.split(i as u64))?;
            if v.is_nan() {
                return Err(Error::Numeric(format!("{} estimate is NaN for example {i}", estimator.name())));
            }
            Ok(v)
        })
        .collect()
}

fn require_estimators(model: &SubsetFlowModel, estimators: &[Estimator], mc_samples: usize) -> Result<()> {
    if estimators.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    if mc_samples == 0 {
        return Err(Error::Config("mc_samples must be positive".into()));
    }
    if estimators.contains(&Estimator::Exact) {
        model.require_exact()?;
    }
    Ok(())
}

/// Bits/dim for each estimator, averaged over the dataset.
pub fn evaluate(
    model: &SubsetFlowModel,
    deq: &Dequantizer,
    data: &Dataset,
    estimators: &[Estimator],
    mc_samples: usize,
    seed: u64,
) -> Result<Report> {
    require_estimators(model, estimators, mc_samples)?;
    check_data(model, data)?;
    let dims = model.dims();
    let mut rows = Vec::new();
    for &e in estimators {
        let bpd: Vec<f64> =
            per_example(model, deq, data, e, mc_samples, seed)?.into_iter().map(|v| bits_per_dim(v, dims)).collect();
        rows.push(ReportRow { estimator: e, value: MeanSe::of(&bpd), per_example: bpd });
    }
    Ok(Report { title: "bits/dim", rows })
}

/// Gap `exact − estimate` in bits/dim for each bound, averaged over the
/// dataset. `Estimator::Exact` entries are skipped.
pub fn gap_report(
    model: &SubsetFlowModel,
    deq: &Dequantizer,
    data: &Dataset,
    estimators: &[Estimator],
    mc_samples: usize,
    seed: u64,
) -> Result<Report> {
    model.require_exact()?;
    check_data(model, data)?;
    let bounds: Vec<Estimator> = estimators.iter().copied().filter(|e| *e != Estimator::Exact).collect();
    require_estimators(model, &bounds, mc_samples)?;
    let dims = model.dims();
    let exact = per_example(model, deq, data, Estimator::Exact, mc_samples, seed)?;
    let mut rows = Vec::new();
    for e in bounds {
        let est = per_example(model, deq, data, e, mc_samples, seed)?;
        // Bits/dim of a log-likelihood difference, sign flipped so the gap is ≥ 0.
        let gaps: Vec<f64> = exact.iter().zip(&est).map(|(a, b)| -bits_per_dim(a - b, dims)).collect();
        rows.push(ReportRow { estimator: e, value: MeanSe::of(&gaps), per_example: gaps });
    }
    Ok(Report { title: "gap", rows })
}
