//! Regenerates the synthetic scaling-law fixtures:
//!
//! ```text
//! cargo run -p archplan-core --example generate_fixtures -- crates/core/fixtures
//! ```
//!
//! Raw (compute, loss) runs are not published, so each language gets a seeded
//! sweep of training curves whose envelope is its published power law.

use std::fs;
use std::path::PathBuf;

use archplan_core::fixtures::LANGUAGE_FITS;
use archplan_core::scaling::{points_to_csv, read_fit_table, PowerLawFit, SyntheticSweep};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exponent of the monolingual English frontier.
const ENGLISH_ALPHA: f64 = 0.046;
const ENGLISH_C_M: f64 = 1.08;
const SEED: u64 = 2022;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/core/fixtures".into()),
    );
    let sweep = SyntheticSweep::default();

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let english = sweep.generate(
        &PowerLawFit::law(ENGLISH_C_M, ENGLISH_ALPHA),
        "English",
        &mut rng,
    );
    let header = format!(
        "# Synthetic English training curves; envelope L = {ENGLISH_C_M}*C^-{ENGLISH_ALPHA} (C in PF-days).\n\
         # Generated by examples/generate_fixtures.rs with seed {SEED}.\n"
    );
    fs::write(
        dir.join("english_frontier_points.csv"),
        header + &points_to_csv(&english),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut all = Vec::new();
    for row in read_fit_table(LANGUAGE_FITS.as_bytes())? {
        all.extend(sweep.generate(&row.fit, &row.language, &mut rng));
    }
    let header = format!(
        "# Synthetic per-language training curves; each envelope is the language's fit in\n\
         # language_fits.csv (C in PF-days). Generated by examples/generate_fixtures.rs with seed {}.\n",
        SEED + 1
    );
    fs::write(
        dir.join("multilingual_points.csv"),
        header + &points_to_csv(&all),
    )?;
    Ok(())
}
