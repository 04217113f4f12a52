//! Temperature-style language sampling: `p_l ∝ q_l^alpha` with `q_l` the
//! natural share of language `l`. `alpha < 1` flattens the distribution,
//! downsampling frequent languages and upsampling rare ones.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageShare {
    pub language: String,
    pub natural_size: f64,
    pub natural_prop: f64,
    pub sampled_prob: f64,
}

fn check(sizes: &[(String, f64)], alpha: f64) -> Result<f64> {
    if sizes.is_empty() {
        return Err(Error::Domain("no languages given".into()));
    }
    if let Some((lang, w)) = sizes.iter().find(|(_, w)| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::Domain(format!(
            "weight for {lang} must be positive, got {w}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    Ok(sizes.iter().map(|(_, w)| w).sum())
}

/// Sampling probabilities in input order. `alpha = 1` returns the natural
/// shares unchanged and `alpha = 0` the uniform distribution, both exactly.
pub fn sampling_probs(sizes: &[(String, f64)], alpha: f64) -> Result<Vec<LanguageShare>> {
    let total = check(sizes, alpha)?;
    let scaled: Vec<f64> = if alpha == 1.0 {
        sizes.iter().map(|(_, w)| w / total).collect()
    } else {
        sizes.iter().map(|(_, w)| (w / total).powf(alpha)).collect()
    };
    let norm: f64 = if alpha == 1.0 {
        1.0
    } else {
        scaled.iter().sum()
    };
    Ok(sizes
        .iter()
        .zip(scaled)
        .map(|((language, w), s)| LanguageShare {
            language: language.clone(),
            natural_size: *w,
            natural_prop: w / total,
            sampled_prob: s / norm,
        })
        .collect())
}

/// `p_l / q_l` per language.
pub fn upsampling_ratio(sizes: &[(String, f64)], alpha: f64) -> Result<Vec<(String, f64)>> {
    Ok(sampling_probs(sizes, alpha)?
        .into_iter()
        .map(|s| {
            let r = if alpha == 1.0 {
                1.0
            } else {
                s.sampled_prob / s.natural_prop
            };
            (s.language, r)
        })
        .collect())
}

/// Integer token budget per language by largest-remainder apportionment.
/// The allocations always sum to `total_tokens`; remainder ties go to the
/// earlier language.
pub fn allocate_tokens(total_tokens: u64, probs: &[(String, f64)]) -> Result<Vec<(String, u64)>> {
    if probs.is_empty() {
        return Err(Error::Domain("no languages given".into()));
    }
    if let Some((lang, p)) = probs.iter().find(|(_, p)| !(*p >= 0.0 && p.is_finite())) {
        return Err(Error::Domain(format!(
            "probability for {lang} is invalid: {p}"
        )));
    }
    let sum: f64 = probs.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }

    let quotas: Vec<f64> = probs
        .iter()
        .map(|(_, p)| total_tokens as f64 * p / sum)
        .collect();
    let mut alloc: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = alloc.iter().sum();

    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    if assigned <= total_tokens {
        let mut left = total_tokens - assigned;
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            alloc[i] += 1;
            left -= 1;
        }
    } else {
        // Rounding pushed the floors over the total; take back from the
        // smallest remainders.
        let mut extra = assigned - total_tokens;
        for &i in order.iter().rev().cycle() {
            if extra == 0 {
                break;
            }
            if alloc[i] > 0 {
                alloc[i] -= 1;
                extra -= 1;
            }
        }
    }
    Ok(probs.iter().map(|(l, _)| l.clone()).zip(alloc).collect())
}

#[derive(Deserialize)]
struct WeightRecord {
    language: String,
    weight: f64,
}

/// Reads a `language,weight` file.
pub fn read_weights_csv(reader: impl Read) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let r: WeightRecord = rec?;
        out.push((r.language, r.weight));
    }
    Ok(out)
}

pub const SAMPLE_CSV_HEADER: &str = "language,natural_prop,sampled_prob,tokens";

pub fn sample_table_csv(shares: &[LanguageShare], tokens: &[(String, u64)]) -> String {
    let mut out = String::from(SAMPLE_CSV_HEADER);
    out.push('\n');
    for (s, (_, t)) in shares.iter().zip(tokens) {
        let lang = if s.language.contains([',', '"']) {
            format!("\"{}\"", s.language.replace('"', "\"\""))
        } else {
            s.language.clone()
        };
        out.push_str(&format!(
            "{lang},{:.10},{:.10},{t}\n",
            s.natural_prop, s.sampled_prob
        ));
    }
    out
}
