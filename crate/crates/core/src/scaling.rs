//! Power-law scaling fits `L(C) = c_m·C^(-alpha_c)` over (compute, loss)
//! observations, Pareto frontiers and per-language fit tables.
//!
//! Compute is in PF-days throughout. Fits are ordinary least squares in
//! log-log space, so `rss` is a sum of squared log residuals.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub compute: f64,
    pub loss: f64,
    pub model_size: Option<f64>,
    pub language: Option<String>,
}

impl ScalingPoint {
    pub fn new(compute: f64, loss: f64) -> Self {
        Self {
            compute,
            loss,
            model_size: None,
            language: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c_m: f64,
    pub alpha_c: f64,
    pub rss: f64,
    pub n_points: usize,
}

impl PowerLawFit {
    /// An exact law with no fit diagnostics.
    pub fn law(c_m: f64, alpha_c: f64) -> Self {
        Self {
            c_m,
            alpha_c,
            rss: 0.0,
            n_points: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageFitRow {
    pub language: String,
    /// Share of the corpus in percent, when known.
    pub proportion: Option<f64>,
    pub fit: PowerLawFit,
}

/// Points achieving the best loss seen so far, by increasing compute.
pub fn pareto_frontier(points: &[ScalingPoint]) -> Vec<ScalingPoint> {
    let mut sorted: Vec<&ScalingPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.compute
            .total_cmp(&b.compute)
            .then(a.loss.total_cmp(&b.loss))
    });
    let mut best = f64::INFINITY;
    let mut out = Vec::new();
    for p in sorted {
        if p.loss < best {
            best = p.loss;
            out.push(p.clone());
        }
    }
    out
}

pub fn fit_power_law(points: &[ScalingPoint]) -> Result<PowerLawFit> {
    if let Some(bad) = points.iter().find(|p| !(p.compute > 0.0 && p.loss > 0.0)) {
        return Err(Error::Domain(format!(
            "compute and loss must be positive, got ({}, {})",
            bad.compute, bad.loss
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.compute.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.loss.ln()).collect();
    let mean_x = stats::mean(&xs).unwrap_or(0.0);
    let mean_y = stats::mean(&ys).unwrap_or(0.0);
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let distinct = {
        let mut c: Vec<f64> = points.iter().map(|p| p.compute).collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c.len()
    };
    if distinct < 2 || sxx == 0.0 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 distinct compute values, got {distinct}"
        )));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rss = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(PowerLawFit {
        c_m: intercept.exp(),
        alpha_c: -slope,
        rss,
        n_points: points.len(),
    })
}

pub fn predict_loss(fit: &PowerLawFit, compute: f64) -> f64 {
    fit.c_m * compute.powf(-fit.alpha_c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FitMode {
    /// Fit the Pareto frontier only.
    #[default]
    Frontier,
    AllPoints,
}

#[derive(Debug)]
pub struct LanguageFit {
    pub language: String,
    pub frontier: Vec<ScalingPoint>,
    pub result: Result<LanguageFitRow>,
}

/// Groups points by language and fits each group. A degenerate group yields
/// an error entry; the others are still fitted. Output is sorted by language.
pub fn fit_per_language(
    points: &[ScalingPoint],
    mode: FitMode,
    proportions: &HashMap<String, f64>,
) -> Vec<LanguageFit> {
    let mut groups: BTreeMap<&str, Vec<ScalingPoint>> = BTreeMap::new();
    for p in points {
        let lang = p.language.as_deref().unwrap_or("");
        groups.entry(lang).or_default().push(p.clone());
    }
    groups
        .into_iter()
        .map(|(lang, pts)| {
            let frontier = pareto_frontier(&pts);
            let used = match mode {
                FitMode::Frontier => &frontier,
                FitMode::AllPoints => &pts,
            };
            let result = fit_power_law(used).map(|fit| LanguageFitRow {
                language: lang.to_string(),
                proportion: proportions.get(lang).copied(),
                fit,
            });
            LanguageFit {
                language: lang.to_string(),
                frontier,
                result,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Dispersion {
    pub mean: f64,
    pub std_dev: f64,
    pub n_rows: usize,
}

/// Mean and population standard deviation of `alpha_c` over rows whose
/// proportion is at least `weight_threshold` percent.
pub fn exponent_dispersion(rows: &[LanguageFitRow], weight_threshold: f64) -> Result<Dispersion> {
    let alphas: Vec<f64> = rows
        .iter()
        .filter(|r| r.proportion.is_some_and(|p| p >= weight_threshold))
        .map(|r| r.fit.alpha_c)
        .collect();
    match (stats::mean(&alphas), stats::std_dev(&alphas)) {
        (Some(mean), Some(std_dev)) => Ok(Dispersion {
            mean,
            std_dev,
            n_rows: alphas.len(),
        }),
        _ => Err(Error::EmptySelection(format!(
            "no rows with proportion >= {weight_threshold}%"
        ))),
    }
}

#[derive(Deserialize)]
struct FitTableRecord {
    language: String,
    proportion: f64,
    alpha_c: f64,
    c_m: f64,
}

/// Reads a `language,proportion,alpha_c,c_m` table.
pub fn read_fit_table(reader: impl Read) -> Result<Vec<LanguageFitRow>> {
    let mut rdr = csv_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let r: FitTableRecord = rec?;
        if !(r.proportion > 0.0 && r.proportion <= 100.0) {
            return Err(Error::Validation(format!(
                "{}: proportion {} outside (0, 100]",
                r.language, r.proportion
            )));
        }
        rows.push(LanguageFitRow {
            language: r.language,
            proportion: Some(r.proportion),
            fit: PowerLawFit::law(r.c_m, r.alpha_c),
        });
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct PointRecord {
    language: String,
    compute_pf_days: f64,
    loss: f64,
}

/// Reads a `language,compute_pf_days,loss` observation file.
pub fn read_points_csv(reader: impl Read) -> Result<Vec<ScalingPoint>> {
    let mut rdr = csv_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let r: PointRecord = rec?;
        if !(r.compute_pf_days > 0.0 && r.loss > 0.0) {
            return Err(Error::Validation(format!(
                "record {}: compute and loss must be positive",
                i + 1
            )));
        }
        out.push(ScalingPoint {
            compute: r.compute_pf_days,
            loss: r.loss,
            model_size: None,
            language: Some(r.language),
        });
    }
    Ok(out)
}

pub const FIT_CSV_HEADER: &str = "language,proportion,alpha_c,c_m,rss,n_points";

pub fn fit_rows_to_csv(rows: &[LanguageFitRow]) -> String {
    let mut out = String::from(FIT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let prop = r.proportion.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6e},{}\n",
            csv_field(&r.language),
            prop,
            r.fit.alpha_c,
            r.fit.c_m,
            r.fit.rss,
            r.fit.n_points
        ));
    }
    out
}

pub fn points_to_csv(points: &[ScalingPoint]) -> String {
    let mut out = String::from("language,compute_pf_days,loss\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.9e},{:.9e}\n",
            csv_field(p.language.as_deref().unwrap_or("")),
            p.compute,
            p.loss
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader)
}

/// Shape of a synthetic sweep: several model sizes, each a training curve
/// that touches the envelope `law` once and lies above it elsewhere.
/// Checkpoints below `compute_min` are dropped, so the smallest model
/// contributes only its tangent point.
#[derive(Clone, Debug)]
pub struct SyntheticSweep {
    pub compute_min: f64,
    pub compute_max: f64,
    pub n_models: usize,
    pub checkpoints: usize,
    /// Decades of compute each curve spans before its tangent point.
    pub span_decades: f64,
    /// Curvature of a run's loss above the envelope, per squared log unit.
    pub curvature: f64,
    /// Standard deviation of multiplicative log-noise.
    pub noise_sigma: f64,
}

impl Default for SyntheticSweep {
    fn default() -> Self {
        Self {
            compute_min: 1.0,
            compute_max: 1_000.0,
            n_models: 6,
            checkpoints: 8,
            span_decades: 1.0,
            curvature: 0.02,
            noise_sigma: 0.005,
        }
    }
}

impl SyntheticSweep {
    pub fn generate<R: Rng>(
        &self,
        law: &PowerLawFit,
        language: &str,
        rng: &mut R,
    ) -> Vec<ScalingPoint> {
        let noise = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
        let (lo, hi) = (self.compute_min.ln(), self.compute_max.ln());
        let span = self.span_decades * std::f64::consts::LN_10;
        let mut out = Vec::with_capacity(self.n_models * self.checkpoints);
        for k in 0..self.n_models {
            let frac = if self.n_models > 1 {
                k as f64 / (self.n_models - 1) as f64
            } else {
                1.0
            };
            let tangent = lo + frac * (hi - lo);
            for j in 0..self.checkpoints {
                let t = if self.checkpoints > 1 {
                    j as f64 / (self.checkpoints - 1) as f64
                } else {
                    1.0
                };
                let log_c = tangent - span * (1.0 - t);
                if log_c < lo - 1e-12 {
                    continue;
                }
                let c = log_c.exp();
                let excess = self.curvature * (log_c - tangent).powi(2);
                let loss = predict_loss(law, c) * (1.0 + excess) * noise.sample(rng).exp();
                out.push(ScalingPoint {
                    compute: c,
                    loss,
                    model_size: Some(k as f64),
                    language: Some(language.to_string()),
                });
            }
        }
        out
    }
}
