//! Subcommands and the two end-to-end pipelines.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aging_core::diag::{silverman_bandwidth, write_kde_csv, DEFAULT_KDE_POINTS};
use aging_core::ingest::{load_batting, load_people};
use aging_core::lmm::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use aging_core::svg::{Band, LineChart, Series};
use aging_core::{
    apply_dropout, build_panel, curve_mae, fit_lmm, impute, inverse_transform_ops, kde, ks_distance, panel_summary,
    panel_to_curve, pool_curve, predict_mean, simulate_careers, trace_stats, AgingCurve, CareerPanel, CellState,
    CellUse, DensityEstimate, ImputationRun, LmmFit, PooledCurve, SeededRng, TraceTable, TransformSpec,
};
use log::{info, warn};

use crate::config::{Command, PipelineConfig};
use crate::error::CliError;

/// Generating model used by `simulate` and `pipeline-sim` when neither a fit
/// file nor Lahman tables are given. Transformed units.
pub const REFERENCE_BETA: [f64; 4] = [0.72, -0.03, -0.12, 0.0];
pub const REFERENCE_TAU2: f64 = 0.004;
pub const REFERENCE_SIGMA2: f64 = 0.002;

pub const FAILED_MARKER: &str = "FAILED";
pub const MANIFEST: &str = "manifest.toml";

pub fn reference_fit() -> LmmFit {
    LmmFit::from_parameters(REFERENCE_BETA, REFERENCE_TAU2, REFERENCE_SIGMA2).expect("valid reference parameters")
}

/// Output directory with error mapping for every write.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Config(format!("output directory {}: {e}", root.display())))?;
        let marker = root.join(FAILED_MARKER);
        if marker.exists() {
            fs::remove_file(&marker)
                .map_err(|e| CliError::Config(format!("removing stale {}: {e}", marker.display())))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write<F>(&self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> aging_core::Result<()>,
    {
        let path = self.path(name);
        let fail = |message: String| CliError::Output {
            path: path.clone(),
            message,
        };
        let file = File::create(&path).map_err(|e| fail(e.to_string()))?;
        let mut w = BufWriter::new(file);
        body(&mut w).map_err(|e| fail(e.to_string()))?;
        w.flush().map_err(|e| fail(e.to_string()))
    }

    fn text(&self, name: &str, contents: &str) -> Result<(), CliError> {
        self.write(name, |w| Ok(w.write_all(contents.as_bytes())?))
    }

    fn panel(&self, name: &str, panel: &CareerPanel) -> Result<(), CliError> {
        self.write(name, |w| panel.write_csv(w))
    }

    fn curve(&self, name: &str, curve: &AgingCurve) -> Result<(), CliError> {
        self.write(name, |w| curve.write_csv(w))
    }

    fn chart(&self, name: &str, chart: &LineChart) -> Result<(), CliError> {
        self.text(name, &chart.render())
    }
}

/// Numbers behind the simulation study.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub fit: LmmFit,
    pub truth: CareerPanel,
    pub dropped: CareerPanel,
    pub true_curve: AgingCurve,
    pub survivor_curve: AgingCurve,
    pub mae_survivor: f64,
    pub imputation: Option<ImputationSummary>,
}

#[derive(Debug, Clone)]
pub struct ImputationSummary {
    pub run: ImputationRun,
    pub curves: Vec<AgingCurve>,
    pub pooled: PooledCurve,
    pub mae_pooled: f64,
    pub mae_imputed: Vec<f64>,
    /// Imputed values of all chains against the true values of the masked cells.
    pub ks: f64,
    pub traces: TraceTable,
}

/// Numbers behind the MLB application.
#[derive(Debug, Clone)]
pub struct MlbReport {
    pub panel: CareerPanel,
    pub fit: Option<LmmFit>,
    pub observed_curve: AgingCurve,
    pub pooled: PooledCurve,
    pub run: ImputationRun,
    /// Mean over ages 33..=39 (within the grid) of observed-only minus pooled.
    pub late_gap: Option<f64>,
}

#[derive(Debug)]
pub enum Report {
    Sim(Box<SimReport>),
    Mlb(Box<MlbReport>),
    Done,
}

/// Runs `config.command` on a pool of `config.threads` workers. On failure a
/// `FAILED` marker naming the stage is left next to any partial outputs.
pub fn run(config: &PipelineConfig) -> Result<Report, CliError> {
    config.validate()?;
    let out = OutDir::create(&config.out)?;
    out.text(MANIFEST, &manifest(config))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let result = pool.install(|| dispatch(config, &out));
    if let Err(e) = &result {
        let _ = fs::write(
            out.path(FAILED_MARKER),
            format!("stage = {}\nexit_code = {}\nerror = {e}\n", e.stage(), e.exit_code()),
        );
    }
    result
}

fn dispatch(config: &PipelineConfig, out: &OutDir) -> Result<Report, CliError> {
    match config.command {
        Command::Fit => cmd_fit(config, out).map(|_| Report::Done),
        Command::Simulate => {
            let fit = stage_fit(config, out)?;
            stage_simulate(config, out, &fit)?;
            Ok(Report::Done)
        }
        Command::Impute => cmd_impute(config, out).map(|_| Report::Done),
        Command::Curve => cmd_curve(config, out).map(|_| Report::Done),
        Command::PipelineSim => pipeline_sim(config, out).map(|r| Report::Sim(Box::new(r))),
        Command::PipelineMlb => pipeline_mlb(config, out).map(|r| Report::Mlb(Box::new(r))),
    }
}

fn manifest(config: &PipelineConfig) -> String {
    let root = SeededRng::new(config.seed, 0);
    format!(
        "# aging {} run manifest; re-run with `aging run --config {MANIFEST}`\n\
         # streams derived from seed {}: simulate = {}, dropout = {}, imputation chains keyed by (seed, chain)\n{}",
        env!("CARGO_PKG_VERSION"),
        config.seed,
        root.named("simulate").stream_id,
        root.named("dropout").stream_id,
        config.to_toml()
    )
}

fn ingest(config: &PipelineConfig) -> Result<CareerPanel, CliError> {
    let (Some(batting), Some(people)) = (&config.batting, &config.people) else {
        return Err(CliError::Config("missing --batting/--people".into()));
    };
    let batting = load_batting(batting).map_err(CliError::Ingest)?;
    let people = load_people(people).map_err(CliError::Ingest)?;
    let panel = build_panel(
        &batting,
        &people,
        config.grid()?,
        config.ingest.min_pa,
        config.ingest.min_debut,
        config.transform()?,
    )
    .map_err(CliError::Ingest)?;
    info!(
        "{} players after filtering (PA >= {}, debut >= {})",
        panel.n_players(),
        config.ingest.min_pa,
        config.ingest.min_debut
    );
    Ok(panel)
}

fn read_panel(config: &PipelineConfig) -> Result<CareerPanel, CliError> {
    let path = config
        .panel
        .as_ref()
        .ok_or_else(|| CliError::Config("missing --panel".into()))?;
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    CareerPanel::read_csv(BufReader::new(file), config.grid()?, config.transform()?).map_err(CliError::Ingest)
}

fn fit_panel(panel: &CareerPanel) -> Result<LmmFit, CliError> {
    let fit = fit_lmm(panel, DEFAULT_MAX_ITER, DEFAULT_TOL).map_err(CliError::numeric("fit"))?;
    if !fit.converged {
        warn!("mixed model did not converge in {} iterations", fit.iterations);
    }
    if fit.boundary {
        warn!("player variance collapsed to zero");
    }
    Ok(fit)
}

fn cmd_fit(config: &PipelineConfig, out: &OutDir) -> Result<LmmFit, CliError> {
    let panel = if config.batting.is_some() {
        let panel = ingest(config)?;
        out.panel("panel.csv", &panel)?;
        panel
    } else {
        read_panel(config)?
    };
    let fit = fit_panel(&panel)?;
    out.text("fit.txt", &fit.to_kv_string())?;
    Ok(fit)
}

/// Fit used for simulation: a fit file, else a fit to the Lahman tables,
/// else the built-in reference model.
fn stage_fit(config: &PipelineConfig, out: &OutDir) -> Result<LmmFit, CliError> {
    let fit = if let Some(path) = &config.fit {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        LmmFit::from_kv_str(&text).map_err(CliError::config)?
    } else if config.batting.is_some() {
        fit_panel(&ingest(config)?)?
    } else {
        info!("no fit or Lahman tables given; using the reference model");
        reference_fit()
    };
    out.text("fit.txt", &fit.to_kv_string())?;
    Ok(fit)
}

fn stage_simulate(config: &PipelineConfig, out: &OutDir, fit: &LmmFit) -> Result<(CareerPanel, CareerPanel), CliError> {
    let root = SeededRng::new(config.seed, 0);
    let truth = simulate_careers(fit, config.n_players, config.grid()?, &root.named("simulate"))
        .map_err(CliError::numeric("simulate"))?;
    let spec = config.dropout();
    let dropped = apply_dropout(&truth, &spec, &config.transform()?, &root.named("dropout"))
        .map_err(CliError::numeric("dropout"))?;
    out.panel("true_panel.csv", &truth)?;
    out.panel("dropout_panel.csv", &dropped)?;

    let summary = panel_summary(&dropped);
    let mut meta = format!(
        "seed = {}\nstream = {}\nmechanism = \"{}\"\nthreshold = {}\nretire_prob = {}\nretire_age = {}\n\
         early_last_age = {}\nwindow = {}\nn_players = {}\nn_missing = {}\n",
        config.seed,
        root.named("dropout").stream_id,
        spec.mechanism,
        spec.threshold,
        spec.retire_prob,
        spec.retire_age,
        spec.early_last_age,
        spec.window,
        dropped.n_players(),
        dropped.n_missing()
    );
    let fractions: Vec<String> = summary.missing_fraction.iter().map(f64::to_string).collect();
    meta.push_str(&format!("missing_fraction = [{}]\n", fractions.join(", ")));
    out.text("dropout.toml", &meta)?;
    info!(
        "{} dropout masked {} of {} cells",
        spec.mechanism,
        dropped.n_missing(),
        dropped.values().len()
    );
    Ok((truth, dropped))
}

fn stage_impute(
    config: &PipelineConfig,
    out: &OutDir,
    panel: &CareerPanel,
) -> Result<(ImputationRun, TraceTable), CliError> {
    let run = impute(panel, &config.mi()).map_err(CliError::numeric("impute"))?;
    for (c, completed) in run.completed.iter().enumerate() {
        out.panel(&format!("imputed_{}.csv", c + 1), completed)?;
    }
    out.write("traces.csv", |w| run.write_traces_csv(w))?;
    let table = trace_stats(&run);
    trace_charts(out, &table)?;
    density_outputs(config, out, panel, &run)?;
    Ok((run, table))
}

fn cmd_impute(config: &PipelineConfig, out: &OutDir) -> Result<(), CliError> {
    let panel = read_panel(config)?;
    let (_, table) = stage_impute(config, out, &panel)?;
    out.text("trace_summary.txt", &table.summary_text())
}

fn cmd_curve(config: &PipelineConfig, out: &OutDir) -> Result<(), CliError> {
    let panel = read_panel(config)?;
    let curve = panel_to_curve(&panel, &config.loess(), CellUse::ObservedOnly).map_err(CliError::numeric("curve"))?;
    let tspec = config.transform()?;
    let ops = curve.to_ops(&tspec).map_err(CliError::numeric("curve"))?;
    out.curve("curve.csv", &curve)?;
    out.curve("curve_ops.csv", &ops)?;
    let chart = LineChart::new("Aging curve", "age", "OPS").with_series(Series::new("observed", points(&ops)));
    out.chart("curve.svg", &chart)
}

fn curves_for(config: &PipelineConfig, run: &ImputationRun) -> Result<(Vec<AgingCurve>, PooledCurve), CliError> {
    let loess = config.loess();
    let curves = run
        .completed
        .iter()
        .map(|c| panel_to_curve(c, &loess, CellUse::All))
        .collect::<aging_core::Result<Vec<_>>>()
        .map_err(CliError::numeric("curve"))?;
    let pooled = pool_curve(&curves, config.level).map_err(CliError::numeric("pool"))?;
    Ok((curves, pooled))
}

fn write_curve_set(
    config: &PipelineConfig,
    out: &OutDir,
    reference: &[(&str, &AgingCurve)],
    curves: &[AgingCurve],
    pooled: &PooledCurve,
) -> Result<(), CliError> {
    let tspec = config.transform()?;
    for (name, curve) in reference {
        out.curve(&format!("{name}_curve.csv"), curve)?;
        let ops = curve.to_ops(&tspec).map_err(CliError::numeric("curve"))?;
        out.curve(&format!("{name}_curve_ops.csv"), &ops)?;
    }
    for (c, curve) in curves.iter().enumerate() {
        out.curve(&format!("imputed_curve_{}.csv", c + 1), curve)?;
    }
    out.write("pooled_curve.csv", |w| pooled.write_csv(w, None))?;
    out.write("pooled_curve_ops.csv", |w| pooled.write_csv(w, Some(&tspec)))?;

    for (units, file) in [(None, "curves.svg"), (Some(&tspec), "curves_ops.svg")] {
        let convert = |c: &AgingCurve| match units {
            Some(t) => c.to_ops(t).map_err(CliError::numeric("curve")),
            None => Ok(c.clone()),
        };
        let y_label = if units.is_some() { "OPS" } else { "transformed OPS" };
        let mut chart = LineChart::new("Aging curves", "age", y_label);
        let ages: Vec<f64> = pooled.grid.ages().map(f64::from).collect();
        let lower: Vec<f64> = pooled.estimates.iter().map(|e| e.ci_low).collect();
        let upper: Vec<f64> = pooled.estimates.iter().map(|e| e.ci_high).collect();
        let (lower, upper) = match units {
            Some(t) => (to_ops_clamped(&lower, t)?, to_ops_clamped(&upper, t)?),
            None => (lower, upper),
        };
        chart = chart.with_band(Band {
            name: format!("{:.0}% interval", config.level * 100.0),
            x: ages,
            lower,
            upper,
        });
        for (i, curve) in curves.iter().enumerate() {
            let name = if i == 0 { "single imputations" } else { "" };
            chart = chart.with_series(Series::new(name, points(&convert(curve)?)).thin().color("#bbbbbb"));
        }
        for (k, (name, curve)) in reference.iter().enumerate() {
            let s = Series::new(*name, points(&convert(curve)?));
            chart = chart.with_series(if k == 0 { s.color("#000000") } else { s.dashed() });
        }
        chart =
            chart.with_series(Series::new("pooled imputed", points(&convert(&pooled.to_curve())?)).color("#1f77b4"));
        out.chart(file, &chart)?;
    }
    Ok(())
}

fn points(curve: &AgingCurve) -> Vec<(f64, f64)> {
    curve
        .grid
        .ages()
        .map(f64::from)
        .zip(curve.mean.iter().copied())
        .collect()
}

fn to_ops_clamped(values: &[f64], tspec: &TransformSpec) -> Result<Vec<f64>, CliError> {
    values
        .iter()
        .map(|y| inverse_transform_ops(y.clamp(0.0, std::f64::consts::FRAC_PI_2), tspec))
        .collect::<aging_core::Result<Vec<_>>>()
        .map_err(CliError::numeric("diagnostics"))
}

fn trace_charts(out: &OutDir, table: &TraceTable) -> Result<(), CliError> {
    let chains = table.rows.iter().map(|r| r.chain).max().unwrap_or(0);
    for (file, label, stat) in [
        (
            "trace_mean.svg",
            "mean",
            (|r: &aging_core::TraceRow| r.imputed_mean) as fn(&aging_core::TraceRow) -> f64,
        ),
        ("trace_sd.svg", "sd", |r: &aging_core::TraceRow| r.imputed_sd),
    ] {
        let mut chart = LineChart::new(&format!("Imputed values: {label} by iteration"), "iteration", label);
        for c in 1..=chains {
            let pts = table
                .rows
                .iter()
                .filter(|r| r.chain == c)
                .map(|r| (r.iteration as f64, stat(r)))
                .collect();
            chart = chart.with_series(Series::new(format!("chain {c}"), pts));
        }
        out.chart(file, &chart)?;
    }
    Ok(())
}

/// Densities of observed cells and of each chain's imputations on one grid,
/// in transformed and OPS units.
fn density_outputs(
    config: &PipelineConfig,
    out: &OutDir,
    panel: &CareerPanel,
    run: &ImputationRun,
) -> Result<(), CliError> {
    let tspec = config.transform()?;
    let observed: Vec<f64> = panel
        .mask()
        .iter()
        .zip(panel.values())
        .filter(|(m, _)| **m == CellState::Observed)
        .map(|(_, v)| *v)
        .collect();
    let mut sets = vec![("observed".to_string(), observed)];
    for c in 0..run.m() {
        sets.push((format!("imp_{}", c + 1), run.imputed_values(c)));
    }
    let ops_sets = sets
        .iter()
        .map(|(name, v)| Ok((name.clone(), to_ops_clamped(v, &tspec)?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    for (sets, csv_name, svg_name, x_label) in [
        (&sets, "kde.csv", "kde.svg", "transformed OPS"),
        (&ops_sets, "kde_ops.csv", "kde_ops.svg", "OPS"),
    ] {
        let densities = shared_grid_kde(sets)?;
        out.write(csv_name, |w| write_kde_csv(w, &densities))?;
        let mut chart = LineChart::new("Observed and imputed densities", x_label, "density");
        for (name, d) in &densities {
            let s = Series::new(
                name.clone(),
                d.grid.iter().copied().zip(d.density.iter().copied()).collect(),
            );
            chart = chart.with_series(if name == "observed" {
                s.color("#000000")
            } else {
                s.thin()
            });
        }
        out.chart(svg_name, &chart)?;
    }
    Ok(())
}

fn shared_grid_kde(sets: &[(String, Vec<f64>)]) -> Result<Vec<(String, DensityEstimate)>, CliError> {
    let usable: Vec<(&String, &Vec<f64>, f64)> = sets
        .iter()
        .filter_map(|(name, v)| match silverman_bandwidth(v) {
            Ok(h) => Some((name, v, h)),
            Err(e) => {
                warn!("no density for {name}: {e}");
                None
            }
        })
        .collect();
    let h_max = usable.iter().map(|u| u.2).fold(0.0, f64::max);
    let lo = usable
        .iter()
        .flat_map(|u| u.1.iter())
        .copied()
        .fold(f64::INFINITY, f64::min)
        - 3.0 * h_max;
    let hi = usable
        .iter()
        .flat_map(|u| u.1.iter())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        + 3.0 * h_max;
    if !(lo.is_finite() && hi > lo) {
        return Ok(Vec::new());
    }
    let step = (hi - lo) / (DEFAULT_KDE_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..DEFAULT_KDE_POINTS).map(|i| lo + step * i as f64).collect();
    usable
        .into_iter()
        .map(|(name, v, _)| {
            Ok((
                name.clone(),
                kde(v, Some(&grid)).map_err(CliError::numeric("diagnostics"))?,
            ))
        })
        .collect()
}

fn kv_lines(pairs: &[(String, f64)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// fit -> simulate -> dropout -> impute -> curves -> pool -> diagnostics.
pub fn pipeline_sim(config: &PipelineConfig, out: &OutDir) -> Result<SimReport, CliError> {
    let fit = stage_fit(config, out)?;
    let (truth, dropped) = stage_simulate(config, out, &fit)?;
    let loess = config.loess();
    let true_curve = panel_to_curve(&truth, &loess, CellUse::All).map_err(CliError::numeric("curve"))?;
    let survivor_curve = panel_to_curve(&dropped, &loess, CellUse::ObservedOnly).map_err(CliError::numeric("curve"))?;
    let mae_survivor = curve_mae(&survivor_curve, &true_curve).map_err(CliError::numeric("curve"))?;
    let mut mae = vec![("survivor_vs_true".to_string(), mae_survivor)];

    let imputation = if dropped.n_missing() == 0 {
        warn!("dropout removed no cells; skipping imputation");
        out.curve("true_curve.csv", &true_curve)?;
        out.curve("survivor_curve.csv", &survivor_curve)?;
        None
    } else {
        let (run, traces) = stage_impute(config, out, &dropped)?;
        let (curves, pooled) = curves_for(config, &run)?;
        write_curve_set(
            config,
            out,
            &[("true", &true_curve), ("survivor", &survivor_curve)],
            &curves,
            &pooled,
        )?;
        let mae_pooled = curve_mae(&pooled.to_curve(), &true_curve).map_err(CliError::numeric("pool"))?;
        let mae_imputed = curves
            .iter()
            .map(|c| curve_mae(c, &true_curve))
            .collect::<aging_core::Result<Vec<_>>>()
            .map_err(CliError::numeric("curve"))?;
        mae.push(("pooled_vs_true".into(), mae_pooled));
        for (c, v) in mae_imputed.iter().enumerate() {
            mae.push((format!("imputed_{}_vs_true", c + 1), *v));
        }

        let masked_truth: Vec<f64> = dropped
            .mask()
            .iter()
            .zip(truth.values())
            .filter(|(m, _)| **m == CellState::Missing)
            .map(|(_, v)| *v)
            .collect();
        let imputed: Vec<f64> = (0..run.m()).flat_map(|c| run.imputed_values(c)).collect();
        let ks = ks_distance(&imputed, &masked_truth).map_err(CliError::numeric("diagnostics"))?;
        out.text(
            "trace_summary.txt",
            &format!("{}ks_imputed_vs_masked_truth = {ks}\n", traces.summary_text()),
        )?;
        info!(
            "MAE survivor {mae_survivor:.5}, pooled {mae_pooled:.5}; KS {ks:.4}; mixing {:.3}/{:.3}",
            traces.mixing_mean, traces.mixing_sd
        );
        Some(ImputationSummary {
            run,
            curves,
            pooled,
            mae_pooled,
            mae_imputed,
            ks,
            traces,
        })
    };
    out.text("mae.txt", &kv_lines(&mae))?;

    Ok(SimReport {
        fit,
        truth,
        dropped,
        true_curve,
        survivor_curve,
        mae_survivor,
        imputation,
    })
}

/// ingest -> fit -> impute -> curves with and without imputation -> pool.
pub fn pipeline_mlb(config: &PipelineConfig, out: &OutDir) -> Result<MlbReport, CliError> {
    let panel = ingest(config)?;
    out.panel("panel.csv", &panel)?;
    let fit = match fit_lmm(&panel, DEFAULT_MAX_ITER, DEFAULT_TOL) {
        Ok(fit) => {
            out.text("fit.txt", &fit.to_kv_string())?;
            Some(fit)
        }
        Err(e) => {
            warn!("mixed model fit failed: {e}");
            None
        }
    };

    let (run, traces) = stage_impute(config, out, &panel)?;
    out.text("trace_summary.txt", &traces.summary_text())?;
    let observed_curve =
        panel_to_curve(&panel, &config.loess(), CellUse::ObservedOnly).map_err(CliError::numeric("curve"))?;
    let (curves, pooled) = curves_for(config, &run)?;
    write_curve_set(config, out, &[("observed", &observed_curve)], &curves, &pooled)?;

    let late: Vec<f64> = observed_curve
        .grid
        .ages()
        .enumerate()
        .filter(|(_, a)| (33..=39).contains(a))
        .map(|(q, _)| observed_curve.mean[q] - pooled.estimates[q].q_bar)
        .collect();
    let late_gap = (!late.is_empty()).then(|| late.iter().sum::<f64>() / late.len() as f64);

    let mut summary = vec![
        ("n_players".to_string(), panel.n_players() as f64),
        ("n_observed".into(), panel.n_observed() as f64),
        ("n_missing".into(), panel.n_missing() as f64),
    ];
    if let Some(f) = &fit {
        let peak = panel
            .grid()
            .ages()
            .max_by(|a, b| predict_mean(f, *a).total_cmp(&predict_mean(f, *b)))
            .expect("non-empty grid");
        summary.push(("fit_peak_age".into(), f64::from(peak)));
    }
    if let Some(g) = late_gap {
        summary.push(("late_gap_observed_minus_pooled".into(), g));
    }
    out.text("summary.txt", &kv_lines(&summary))?;

    Ok(MlbReport {
        panel,
        fit,
        observed_curve,
        pooled,
        run,
        late_gap,
    })
}
