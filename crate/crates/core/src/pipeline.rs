//! End-to-end run: bandwidth selection, decomposition for each spread
//! family, forest analysis, and reports, with a hashed MANIFEST of outputs.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::{exclusion_mask, load_ads, load_visits, AdSchedule, VisitSeries};
use crate::decompose::{compare_models, fit, write_diagnostics, write_rates, write_thetas, DecompositionFit, Diagnostics, FitOptions};
use crate::error::{Error, Result};
use crate::forest::{ad_dataset, analyze_final, build_features, tune, write_error_table, write_importance, write_pdp};
use crate::kernel::{bandwidth_grid, select_bandwidth, SmootherConfig};
use crate::report::{report_ad_window_quantiles, report_theta_density};
use crate::seed::derive_seed;
use crate::spread::SpreadFamily;

const SMOOTHER_STREAM: u64 = 1;
const TUNING_STREAM: u64 = 2;
const FINAL_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub output_dir: PathBuf,
    /// File names relative to `output_dir`, in creation order.
    pub artifacts: Vec<String>,
    pub smoother: SmootherConfig,
    pub theta_family: Option<SpreadFamily>,
    pub warnings: Vec<String>,
}

struct Run<'a> {
    config: &'a RunConfig,
    dir: PathBuf,
    artifacts: Vec<String>,
    warnings: Vec<String>,
    stage: &'static str,
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn write_manifest(&self, status: &str) -> Result<()> {
        let mut text = format!("# adlift {}\n# status: {status}\n", env!("CARGO_PKG_VERSION"));
        for name in &self.artifacts {
            let path = self.dir.join(name);
            match fs::read(&path) {
                Ok(bytes) => text.push_str(&format!("{}  {name}\n", hex::encode(Sha256::digest(&bytes)))),
                Err(_) => text.push_str(&format!("missing  {name}\n")),
            }
        }
        let path = self.dir.join("MANIFEST");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Runs every enabled stage. On failure the artifacts written so far are
/// kept and the MANIFEST records the failing stage.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let dir = config.input.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut run = Run {
        config,
        dir,
        artifacts: Vec::new(),
        warnings: Vec::new(),
        stage: "input",
    };
    match stages(&mut run) {
        Ok((smoother, theta_family)) => {
            run.write_manifest("complete")?;
            Ok(PipelineOutcome {
                output_dir: run.dir,
                artifacts: run.artifacts,
                smoother,
                theta_family,
                warnings: run.warnings,
            })
        }
        Err(e) => {
            // the original error matters more than a manifest write failure
            let _ = run.write_manifest(&format!("failed in {}: {e}", run.stage));
            Err(e)
        }
    }
}

fn stages(run: &mut Run) -> Result<(SmootherConfig, Option<SpreadFamily>)> {
    let config = run.config;
    let series = load_visits(&config.input.visits)?;
    let ads = load_ads(&config.input.ads, &series)?;
    if ads.tie_count() > 0 {
        run.warnings.push(format!("{} ads share their end time with another ad", ads.tie_count()));
    }

    run.stage = "smoother";
    let smoother = if config.stages.smoother {
        select_smoother(run, &series, &ads)?
    } else {
        SmootherConfig::new(config.smoother.kernel, config.smoother.bandwidth)?
    };

    let mut selected = None;
    if config.stages.decompose {
        run.stage = "decompose";
        let chosen = decompose(run, &series, &ads, smoother)?;
        if config.stages.reports {
            run.stage = "reports";
            let density = report_theta_density(&chosen.thetas, config.report.density_bandwidth, config.report.bin_width)?;
            if let Some(w) = &density.warning {
                run.warnings.push(w.clone());
            }
            density.write_csv(run.path("theta_density.csv"))?;
        }
        if config.stages.forest {
            run.stage = "forest";
            forest(run, &series, &ads, &chosen)?;
        }
        selected = Some(chosen.family());
    }

    if config.stages.reports {
        run.stage = "reports";
        let r = &config.report;
        report_ad_window_quantiles(&series, &ads, r.before, r.after, &r.quantiles)?.write_csv(run.path("quantiles.csv"))?;
    }
    Ok((smoother, selected))
}

fn select_smoother(run: &mut Run, series: &VisitSeries, ads: &AdSchedule) -> Result<SmootherConfig> {
    let s = &run.config.smoother;
    let mask = exclusion_mask(series, ads, s.exclusion);
    let grid = bandwidth_grid(&s.kernels, s.bandwidths.iter().copied());
    let report = select_bandwidth(series, &mask, &grid, s.repeats, derive_seed(run.config.seed, SMOOTHER_STREAM))?;
    report.write_csv(run.path("cv_report.csv"))?;
    Ok(report.best)
}

/// Fits the configured families in nesting order, warm-starting Weibull and
/// gamma from the exponential fit and the generalized gamma from the better
/// two-parameter fit, and returns the fit chosen for the lifts.
fn decompose(run: &mut Run, series: &VisitSeries, ads: &AdSchedule, smoother: SmootherConfig) -> Result<DecompositionFit> {
    let d = &run.config.decompose;
    let base = FitOptions {
        cutoff: d.cutoff,
        max_outer: d.max_outer,
        ..FitOptions::default()
    };
    let warm = |from: Option<&DecompositionFit>| FitOptions {
        init_spec: from.map(|f| f.spec),
        init_thetas: from.map(|f| f.thetas.clone()),
        ..base.clone()
    };
    let wanted = |f: SpreadFamily| d.families.contains(&f);

    let mut fits: Vec<DecompositionFit> = Vec::new();
    let exponential = if wanted(SpreadFamily::Exponential) {
        Some(fit(series, ads, smoother, SpreadFamily::Exponential, &base)?)
    } else {
        None
    };
    let mut two_param = Vec::new();
    for family in [SpreadFamily::Weibull, SpreadFamily::Gamma] {
        if wanted(family) {
            two_param.push(fit(series, ads, smoother, family, &warm(exponential.as_ref()))?);
        }
    }
    let gengamma = if wanted(SpreadFamily::GenGamma) {
        let start = two_param.iter().chain(exponential.as_ref()).max_by(|a, b| a.loglik.total_cmp(&b.loglik));
        Some(fit(series, ads, smoother, SpreadFamily::GenGamma, &warm(start))?)
    } else {
        None
    };
    fits.extend(exponential);
    fits.extend(two_param);
    fits.extend(gengamma);

    let comparison = compare_models(&fits);
    for row in comparison.rows.iter() {
        if row.wilks.is_some_and(|w| w.warning) {
            run.warnings.push(format!("{} fit beats the generalized gamma; optimizer may have stalled", row.family));
        }
    }
    comparison.write_csv(run.path("model_comparison.csv"))?;
    for f in &fits {
        let diagnostics = Diagnostics::new(f, ads, Some(comparison.clone()));
        write_diagnostics(run.path(&format!("diagnostics_{}.json", f.family().name())), &diagnostics)?;
        if !f.converged {
            run.warnings.push(format!("{} fit stopped after {} outer iterations", f.family(), f.iterations));
        }
    }

    let family = match d.theta_family.family() {
        Some(family) => family,
        None => comparison.best_by_aic().ok_or_else(|| Error::Numerical("no fitted family to choose from".into()))?,
    };
    let chosen = fits.into_iter().find(|f| f.family() == family).expect("validated against the family list");
    write_thetas(run.path("thetas.csv"), series, ads, &chosen)?;
    write_rates(run.path("rates.csv"), series, &chosen)?;
    Ok(chosen)
}

fn forest(run: &mut Run, series: &VisitSeries, ads: &AdSchedule, chosen: &DecompositionFit) -> Result<()> {
    let f = &run.config.forest;
    let seed = run.config.seed;
    let rows = build_features(chosen, ads, series)?;
    let data = ad_dataset(&rows, f.include_zero)?;
    let (best, report) = tune(&data, &f.grid(), f.tuning_repeats, derive_seed(seed, TUNING_STREAM))?;
    let analysis = analyze_final(&data, &best, f.final_repeats, derive_seed(seed, FINAL_STREAM), f.pdp_points)?;
    if analysis.oob.is_none() {
        run.warnings.push("selected forest uses no subsampling; out-of-bag measures are unavailable".into());
    }
    report.write_grid_csv(run.path("tuning_grid.csv"))?;
    write_error_table(run.path("tuning_report.csv"), Some(&report), &analysis)?;
    write_importance(run.path("importance.csv"), &analysis.importance)?;
    write_pdp(run.path("pdp.csv"), &analysis.pdp)?;
    Ok(())
}

/// Reads the status line of a MANIFEST.
pub fn manifest_status(dir: impl AsRef<Path>) -> Result<String> {
    let path = dir.as_ref().join("MANIFEST");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .find_map(|l| l.strip_prefix("# status: "))
        .map(str::to_string)
        .ok_or_else(|| Error::Invalid("MANIFEST has no status line".into()))
}
