use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use archplan_core::plot::emit_plot_csv;
use archplan_core::scaling::{fit_per_language, fit_rows_to_csv, read_fit_table, read_points_csv};
use archplan_core::{fixtures, FitMode, PlotPoint};
use clap::{Args, ValueEnum};

use crate::output::{emit, read_input};
use crate::Status;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PointsFixture {
    English,
    Multilingual,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct FitArgs {
    /// CSV with header `language,compute_pf_days,loss`.
    #[arg(long, short, group = "source")]
    input: Option<PathBuf>,
    /// Use a bundled synthetic point set instead of a file.
    #[arg(long, value_enum, group = "source")]
    fixture: Option<PointsFixture>,
    /// Fit every point instead of the Pareto frontier.
    #[arg(long)]
    all_points: bool,
    /// `language,proportion,alpha_c,c_m` table supplying corpus proportions.
    /// Defaults to the bundled per-language fit table.
    #[arg(long)]
    proportions: Option<PathBuf>,
    /// Also write each language's frontier as `series,x,y` plot data.
    #[arg(long)]
    frontier: Option<PathBuf>,
    /// Write the fit table here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: FitArgs) -> Result<Status> {
    let text = match (&args.input, args.fixture) {
        (Some(path), _) => read_input(path)?,
        (None, Some(PointsFixture::English)) => fixtures::ENGLISH_FRONTIER_POINTS.to_string(),
        (None, Some(PointsFixture::Multilingual)) => fixtures::MULTILINGUAL_POINTS.to_string(),
        (None, None) => unreachable!("clap requires a point source"),
    };
    let points = read_points_csv(text.as_bytes()).context("reading points")?;

    let table_text = match &args.proportions {
        Some(path) => read_input(path)?,
        None => fixtures::LANGUAGE_FITS.to_string(),
    };
    let proportions: HashMap<String, f64> = read_fit_table(table_text.as_bytes())
        .context("reading proportions")?
        .into_iter()
        .filter_map(|r| r.proportion.map(|p| (r.language, p)))
        .collect();

    let mode = if args.all_points {
        FitMode::AllPoints
    } else {
        FitMode::Frontier
    };
    let fits = fit_per_language(&points, mode, &proportions);

    let mut rows = Vec::new();
    let mut failed = false;
    for fit in &fits {
        match &fit.result {
            Ok(row) => rows.push(row.clone()),
            Err(e) => {
                eprintln!("{}: {e}", display_language(&fit.language));
                failed = true;
            }
        }
    }
    emit(args.output.as_deref(), &fit_rows_to_csv(&rows))?;

    if let Some(path) = &args.frontier {
        let series: Vec<PlotPoint> = fits
            .iter()
            .flat_map(|f| {
                f.frontier
                    .iter()
                    .map(move |p| PlotPoint::new(display_language(&f.language), p.compute, p.loss))
            })
            .collect();
        emit_plot_csv(&series, path)?;
    }
    Ok(if failed {
        Status::ChecksFailed
    } else {
        Status::Ok
    })
}

fn display_language(lang: &str) -> &str {
    if lang.is_empty() {
        "(unlabelled)"
    } else {
        lang
    }
}
