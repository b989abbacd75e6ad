//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isingrisk::exact::{ExactEngine, DEFAULT_MAX_COMPONENTS};
use isingrisk::inverse::{
    fit, Estimator, FitConfig, FitInit, TyingScheme, DEFAULT_LEARNING_RATE, DEFAULT_TOL_EXACT, DEFAULT_TOL_GIBBS,
    DEFAULT_WINDOW,
};
use isingrisk::meanfield::{independence_reference, mf_forward, mf_inverse};
use isingrisk::model::IsingParameters;
use isingrisk::report::{build_report, RiskReport, SampleSummary};
use isingrisk::sampler::{estimate_moments, run_chains, ChainConfig, ChainInit};
use isingrisk::stats::{
    empirical_moments, ergodic_binned_correlation_pooled, fit_correlation_distance, moments_from_pf_rho,
    pairwise_distances, BinnedCorrelation, CorrelationBin, CorrelationDistanceModel, DistanceUnit, DEFAULT_MIN_PAIRS,
};
use serde::Serialize;

use crate::error::CliError;
use crate::formats::{self, *};

#[derive(Debug, Parser)]
#[command(name = "isingrisk", version, about = "Maximum-entropy joint failure models for regional portfolios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Empirical moments of observed damage states, optionally with a ρ(d) fit.
    Stats(StatsArgs),
    /// Moment targets from failure probabilities and correlations.
    Targets(TargetsArgs),
    /// Fit Ising parameters to moment targets.
    Fit(FitArgs),
    /// Draw Gibbs samples (or streaming summaries) from a fitted model.
    Sample(SampleArgs),
    /// Forward (params file) or inverse (moments file) mean-field approximation.
    Meanfield(MeanfieldArgs),
    /// Risk report from a model and its samples.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Observations CSV (header of ids, one sample per row).
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Portfolio CSV, required with --fit-rho.
    #[arg(long)]
    pub portfolio: Option<PathBuf>,
    /// Also fit ρ(d) = 1/(1 + a·d) to spatially pooled pair correlations.
    #[arg(long, requires_all = ["portfolio", "rho_out"])]
    pub fit_rho: bool,
    #[arg(long)]
    pub rho_out: Option<PathBuf>,
    /// Distance bin width, in --unit.
    #[arg(long, default_value_t = 0.01)]
    pub bin_width: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_PAIRS)]
    pub min_pairs: usize,
    #[arg(long, value_enum, default_value_t = Unit::Km)]
    pub unit: Unit,
}

#[derive(Debug, Args)]
pub struct TargetsArgs {
    /// `id,pf` CSV.
    #[arg(long)]
    pub pf: PathBuf,
    /// Correlation matrix CSV.
    #[arg(long, conflicts_with = "rho_model", required_unless_present = "rho_model")]
    pub rho_matrix: Option<PathBuf>,
    /// ρ(d) model file; needs --portfolio.
    #[arg(long, requires = "portfolio")]
    pub rho_model: Option<PathBuf>,
    #[arg(long)]
    pub portfolio: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Unit {
    Km,
    M,
}

impl From<Unit> for DistanceUnit {
    fn from(u: Unit) -> Self {
        match u {
            Unit::Km => DistanceUnit::Kilometers,
            Unit::M => DistanceUnit::Meters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Tying {
    PerComponent,
    GlobalH,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    Exact,
    Gibbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Init {
    Independent,
    Meanfield,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChainStart {
    AllSafe,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    /// Seed for every random draw; required for sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub chains: usize,
    /// Total sweeps per chain, burn-in included.
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Defaults to a tenth of --sweeps.
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub thinning: usize,
    #[arg(long, value_enum, default_value_t = ChainStart::AllSafe)]
    pub chain_init: ChainStart,
}

impl ChainArgs {
    fn config(&self, default_sweeps: usize) -> Result<ChainConfig, CliError> {
        let seed = self.seed.ok_or_else(|| CliError::input("--seed is required for stochastic commands"))?;
        let sweeps = self.sweeps.unwrap_or(default_sweeps);
        Ok(ChainConfig {
            n_chains: self.chains,
            sweeps,
            burn_in: self.burn_in.unwrap_or(sweeps / 10),
            thinning: self.thinning,
            seed,
            init: match self.chain_init {
                ChainStart::AllSafe => ChainInit::AllSafe,
                ChainStart::Random => ChainInit::RandomUniform,
            },
        })
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub moments: PathBuf,
    /// Parameters output.
    #[arg(long)]
    pub out: PathBuf,
    /// Diagnostics output; defaults to `<out>.diag.json`.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Tying::PerComponent)]
    pub tying: Tying,
    #[arg(long, value_enum, default_value_t = EstimatorKind::Exact)]
    pub estimator: EstimatorKind,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    /// Defaults to 1e-4 (exact) or 5e-3 (gibbs).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Defaults to 10000 (exact) or 1000 (gibbs).
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Gibbs: iterations per averaging block.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = Init::Independent)]
    pub init: Init,
    /// Exact estimator: largest system to enumerate.
    #[arg(long, default_value_t = DEFAULT_MAX_COMPONENTS)]
    pub max_exact: usize,
    #[command(flatten)]
    pub chains: ChainArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write only moments and the failure-count histogram (streamed).
    #[arg(long)]
    pub summary_only: bool,
    #[command(flatten)]
    pub chains: ChainArgs,
}

#[derive(Debug, Args)]
pub struct MeanfieldArgs {
    /// A params file (forward) or a moments file (inverse).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Sample summary file from `sample --summary-only`.
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    pub summary: Option<PathBuf>,
    /// Samples CSV from `sample`.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub portfolio: Option<PathBuf>,
    /// Extra exceedance thresholds k (P[count > k]).
    #[arg(long = "threshold")]
    pub thresholds: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for tab-separated plotting tables.
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
    /// ρ(d) model with bins, for the correlation plot table.
    #[arg(long)]
    pub rho_model: Option<PathBuf>,
}

/// What a command wants reported on the way out.
#[derive(Debug, Default)]
pub struct Outcome {
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    /// Written outputs are complete but the computation did not converge.
    pub not_converged: Option<String>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    args: Vec<String>,
    seed: Option<u64>,
    threads: usize,
    outputs: Vec<String>,
    started_unix_seconds: u64,
    elapsed_seconds: f64,
}

/// Runs one command and writes the metadata sidecar next to its first output.
pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let started = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let (name, outcome) = match &cli.command {
        Command::Stats(a) => ("stats", cmd_stats(a)?),
        Command::Targets(a) => ("targets", cmd_targets(a)?),
        Command::Fit(a) => ("fit", cmd_fit(a)?),
        Command::Sample(a) => ("sample", cmd_sample(a)?),
        Command::Meanfield(a) => ("meanfield", cmd_meanfield(a)?),
        Command::Report(a) => ("report", cmd_report(a)?),
    };
    if let Some(first) = outcome.outputs.first() {
        let meta = Metadata {
            command: name,
            version: env!("CARGO_PKG_VERSION"),
            args: std::env::args().collect(),
            seed: outcome.seed,
            threads: rayon::current_num_threads(),
            outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix_seconds: started,
            elapsed_seconds: clock.elapsed().as_secs_f64(),
        };
        write_json(&sidecar_path(first), &meta)?;
    }
    if let Some(msg) = &outcome.not_converged {
        return Err(CliError::NotConverged(msg.clone()));
    }
    Ok(outcome)
}

fn check_ids(expected: &[String], found: &[String], what: &str) -> Result<(), CliError> {
    if expected.len() != found.len() {
        return Err(CliError::input(format!("{what}: {} components, expected {}", found.len(), expected.len())));
    }
    if let Some(k) = (0..expected.len()).find(|&k| expected[k] != found[k]) {
        return Err(CliError::input(format!("{what}: component {k} is {:?}, expected {:?}", found[k], expected[k])));
    }
    Ok(())
}

pub fn cmd_stats(a: &StatsArgs) -> Result<Outcome, CliError> {
    let (ids, obs) = read_observations(&a.observations)?;
    let moments = empirical_moments(&obs)?;
    write_json(&a.out, &MomentsFile::new(&ids, &moments))?;
    let mut outputs = vec![a.out.clone()];
    if a.fit_rho {
        let portfolio = read_portfolio(a.portfolio.as_deref().expect("clap enforces --portfolio"))?;
        check_ids(&ids, &portfolio.ids(), "portfolio")?;
        let unit = DistanceUnit::from(a.unit);
        let scale = match unit {
            DistanceUnit::Kilometers => 1.0,
            DistanceUnit::Meters => 1000.0,
        };
        let d = pairwise_distances(&portfolio)? * scale;
        let binned = ergodic_binned_correlation_pooled(obs.samples(), &d, a.bin_width, a.min_pairs)?;
        let fit = fit_correlation_distance(&binned, unit)?;
        let rho_out = a.rho_out.clone().expect("clap enforces --rho-out");
        write_json(
            &rho_out,
            &RhoModelFile {
                format_version: FORMAT_VERSION,
                kind: RhoModelFile::KIND.into(),
                a: fit.model.a,
                unit: unit.to_string(),
                objective: Some(fit.objective),
                degenerate: fit.degenerate,
                bin_width: Some(a.bin_width),
                bins: bins_to_records(&binned),
            },
        )?;
        outputs.push(rho_out);
    }
    Ok(Outcome { outputs, ..Default::default() })
}

fn bins_to_records(b: &BinnedCorrelation) -> Vec<BinRecord> {
    b.bins
        .iter()
        .map(|c: &CorrelationBin| BinRecord {
            d_lo: c.d_lo,
            d_hi: c.d_hi,
            mean_distance: c.mean_distance,
            rho: c.rho,
            pair_count: c.pair_count,
        })
        .collect()
}

fn rho_model(f: &RhoModelFile) -> Result<CorrelationDistanceModel, CliError> {
    Ok(CorrelationDistanceModel::new(f.a, f.unit.parse()?)?)
}

pub fn cmd_targets(a: &TargetsArgs) -> Result<Outcome, CliError> {
    let (ids, pf) = read_pf(&a.pf)?;
    let rho = if let Some(path) = &a.rho_matrix {
        let m = read_matrix_csv(path)?;
        if m.nrows() != ids.len() {
            return Err(CliError::input(format!(
                "{}: {}×{} matrix for {} components",
                path.display(),
                m.nrows(),
                m.ncols(),
                ids.len()
            )));
        }
        m
    } else {
        let model = rho_model(&read_rho_model(a.rho_model.as_deref().expect("clap enforces a ρ source"))?)?;
        let portfolio = read_portfolio(a.portfolio.as_deref().expect("clap enforces --portfolio"))?;
        check_ids(&ids, &portfolio.ids(), "portfolio")?;
        model.correlation_matrix(&pairwise_distances(&portfolio)?)
    };
    let moments = moments_from_pf_rho(&pf, &rho).map_err(|e| match e {
        isingrisk::Error::Infeasible { pairs } => {
            let mut msg = format!("{} pair(s) cannot be realized by binary variables:", pairs.len());
            for (i, j, m2) in pairs {
                msg.push_str(&format!(
                    "\n  {} / {}: pf = ({}, {}), rho = {}, implied M2 = {m2}",
                    ids[i],
                    ids[j],
                    pf[i],
                    pf[j],
                    rho[(i, j)]
                ));
            }
            CliError::Infeasible(msg)
        }
        other => other.into(),
    })?;
    write_json(&a.out, &MomentsFile::new(&ids, &moments))?;
    Ok(Outcome { outputs: vec![a.out.clone()], ..Default::default() })
}

fn default_diagnostics(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".diag.json");
    PathBuf::from(s)
}

pub fn cmd_fit(a: &FitArgs) -> Result<Outcome, CliError> {
    let (ids, target) = read_moments(&a.moments)?;
    let (estimator, seed, base) = match a.estimator {
        EstimatorKind::Exact => {
            let engine = ExactEngine::with_limit(a.max_exact)?;
            (Estimator::Exact(engine), None, FitConfig { estimator: Estimator::Exact(engine), ..FitConfig::exact() })
        }
        EstimatorKind::Gibbs => {
            let chains = a.chains.config(1_100)?;
            let seed = chains.seed;
            (Estimator::Gibbs(chains.clone()), Some(seed), FitConfig::gibbs(chains))
        }
    };
    let is_exact = matches!(estimator, Estimator::Exact(_));
    let cfg = FitConfig {
        learning_rate: a.lr,
        tol: a.tol.unwrap_or(if is_exact { DEFAULT_TOL_EXACT } else { DEFAULT_TOL_GIBBS }),
        max_iters: a.max_iters.unwrap_or(base.max_iters),
        init: match a.init {
            Init::Independent => FitInit::Independent,
            Init::Meanfield => FitInit::MeanField,
        },
        window: a.window,
        ..base
    };
    let tying = match a.tying {
        Tying::PerComponent => TyingScheme::default(),
        Tying::GlobalH => TyingScheme::global_field(),
    };
    let result = fit(&target, tying, &cfg)?;
    write_json(&a.out, &ParamsFile::new(&ids, &result.params))?;
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diag_path = a.diagnostics.clone().unwrap_or_else(|| default_diagnostics(&a.out));
    write_json(
        &diag_path,
        &FitDiagnostics {
            header: Header::new(FitDiagnostics::KIND, &ids),
            estimator: if is_exact { "exact" } else { "gibbs" }.into(),
            tying: match a.tying {
                Tying::PerComponent => "per-component",
                Tying::GlobalH => "global-h",
            }
            .into(),
            converged: result.converged,
            iters_used: result.iters_used,
            learning_rate: cfg.learning_rate,
            final_learning_rate: result.final_learning_rate,
            tol: cfg.tol,
            window: cfg.window,
            final_residual: result.final_residual(),
            max_m1_residual: max_abs(&result.final_residuals.dh),
            max_m2_residual: max_abs(result.final_residuals.dj.upper()),
            final_standard_error: result.final_standard_error,
            residual_trajectory: result.residual_trajectory.clone(),
            block_residual_trajectory: result.block_residual_trajectory.clone(),
            log_likelihood_trajectory: result.log_likelihood_trajectory.clone(),
        },
    )?;
    let not_converged = (!result.converged).then(|| {
        format!(
            "fit did not converge after {} iterations (residual {:.3e}, tol {:.1e}); outputs written",
            result.iters_used,
            result.final_residual(),
            cfg.tol
        )
    });
    Ok(Outcome { seed, outputs: vec![a.out.clone(), diag_path], not_converged })
}

pub fn cmd_sample(a: &SampleArgs) -> Result<Outcome, CliError> {
    let (ids, params) = read_params(&a.params)?;
    let cfg = a.chains.config(11_000)?;
    if a.summary_only {
        let est = estimate_moments(&params, &cfg)?;
        let s = SampleSummary::from_estimate(&est);
        let n = params.n();
        let to_opt_rows = |m: &Option<nalgebra::DMatrix<f64>>| m.as_ref().map(formats::to_rows);
        write_json(
            &a.out,
            &SummaryFile {
                header: Header::new(SummaryFile::KIND, &ids),
                samples: est.samples,
                m1: est.moments.m1().to_vec(),
                m2: to_rows(est.moments.m2()),
                m1_se: est.m1_se.clone(),
                m2_se: to_opt_rows(&est.m2_se),
                pf: s.pf,
                count_hist: s.count_hist,
            },
        )?;
        debug_assert_eq!(est.count_hist.len(), n + 1);
    } else {
        let obs = run_chains(&params, &cfg)?;
        write_observations(&a.out, &ids, &obs)?;
    }
    Ok(Outcome { seed: Some(cfg.seed), outputs: vec![a.out.clone()], ..Default::default() })
}

pub fn cmd_meanfield(a: &MeanfieldArgs) -> Result<Outcome, CliError> {
    let kind = read_kind(&a.input)?;
    if kind == ParamsFile::KIND {
        let (ids, params) = read_params(&a.input)?;
        let sol = mf_forward(&params, a.tol, a.max_iters)?;
        write_json(
            &a.out,
            &MeanFieldFile {
                header: Header::new(MeanFieldFile::KIND, &ids),
                m: sol.m.clone(),
                c: sol.c.as_ref().map(to_rows),
                iterations: sol.iterations,
                converged: sol.converged,
            },
        )?;
        let not_converged = (!sol.converged).then(|| {
            format!("mean-field iteration did not converge in {} iterations; outputs written", sol.iterations)
        });
        Ok(Outcome { outputs: vec![a.out.clone()], not_converged, ..Default::default() })
    } else if kind == MomentsFile::KIND {
        let (ids, moments) = read_moments(&a.input)?;
        let params = mf_inverse(&moments, true)?;
        write_json(&a.out, &ParamsFile::new(&ids, &params))?;
        Ok(Outcome { outputs: vec![a.out.clone()], ..Default::default() })
    } else {
        Err(CliError::input(format!("{}: mean field needs a params or moments file, found {kind}", a.input.display())))
    }
}

pub fn cmd_report(a: &ReportArgs) -> Result<Outcome, CliError> {
    let (ids, params) = read_params(&a.params)?;
    let summary = if let Some(path) = &a.summary {
        let f = read_summary(path)?;
        check_ids(&ids, &f.header.ids, &path.display().to_string())?;
        SampleSummary { samples: f.samples, pf: f.pf, count_hist: f.count_hist }
    } else {
        let path = a.samples.as_deref().expect("clap enforces a sample source");
        let (sample_ids, obs) = read_observations(path)?;
        check_ids(&ids, &sample_ids, &path.display().to_string())?;
        SampleSummary::from_observations(&obs)
    };
    let portfolio = a.portfolio.as_deref().map(read_portfolio).transpose()?;
    if let Some(p) = &portfolio {
        check_ids(&ids, &p.ids(), "portfolio")?;
    }
    let report = build_report(&params, &summary, portfolio.as_ref(), &a.thresholds)?;
    let file = report_file(&ids, &params, &report);
    write_json(&a.out, &file)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(dir) = &a.emit_plot_data {
        let rho = a.rho_model.as_deref().map(read_rho_model).transpose()?;
        outputs.extend(emit_plot_data(dir, &file, rho.as_ref())?);
    }
    Ok(Outcome { outputs, ..Default::default() })
}

fn report_file(ids: &[String], params: &IsingParameters, r: &RiskReport) -> ReportFile {
    let names = |order: &[usize]| order.iter().map(|&i| ids[i].clone()).collect();
    ReportFile {
        header: Header::new(ReportFile::KIND, ids),
        samples: r.samples,
        per_component_pf: r.per_component_pf.clone(),
        failure_count_hist: r.failure_count_hist.clone(),
        expected_failures: r.expected_failures,
        mode_failures: r.mode_failures,
        exceedance: r.exceedance.iter().map(|&(k, probability)| Exceedance { k, probability }).collect(),
        h_bar: r.h_bar,
        j_bar: r.j_bar,
        h: params.h().to_vec(),
        avg_interaction: r.avg_interaction.clone(),
        ranking_by_pf: names(&r.ranking_by_pf),
        ranking_by_h: names(&r.ranking_by_h),
        independence_gap: r.independence_gap.clone(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

fn write_tsv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<(), CliError> {
    use std::io::Write;
    let mut w = text_writer(path)?;
    let io = |e: std::io::Error| CliError::input(format!("{}: {e}", path.display()));
    writeln!(w, "{header}").map_err(io)?;
    for r in rows {
        writeln!(w, "{r}").map_err(io)?;
    }
    w.flush().map_err(io)
}

const CURVE_POINTS: usize = 199;

fn emit_plot_data(dir: &Path, r: &ReportFile, rho: Option<&RhoModelFile>) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();

    let path = dir.join("failure_count.tsv");
    let mut tail = 1.0f64;
    write_tsv(
        &path,
        "k\tprobability\texceedance",
        r.failure_count_hist.iter().enumerate().map(|(k, &p)| {
            tail -= p;
            format!("{k}\t{p}\t{}", tail.max(0.0))
        }),
    )?;
    written.push(path);

    let path = dir.join("pf_h.tsv");
    write_tsv(
        &path,
        "id\tpf\th\tgap\tavg_interaction",
        (0..r.header.n).map(|i| {
            format!(
                "{}\t{}\t{}\t{}\t{}",
                r.header.ids[i],
                r.per_component_pf[i],
                r.h[i],
                fmt_opt(r.independence_gap[i]),
                fmt_opt(r.avg_interaction.as_ref().map(|v| v[i]))
            )
        }),
    )?;
    written.push(path);

    let path = dir.join("independence_curve.tsv");
    let rows: Vec<String> = (1..=CURVE_POINTS)
        .map(|k| {
            let pf = k as f64 / (CURVE_POINTS + 1) as f64;
            format!("{pf}\t{}", independence_reference(pf).expect("pf inside (0, 1)"))
        })
        .collect();
    write_tsv(&path, "pf\th", rows.into_iter())?;
    written.push(path);

    if let Some(m) = rho {
        let model = rho_model(m)?;
        let path = dir.join("rho_bins.tsv");
        write_tsv(
            &path,
            "mean_distance\trho\tpair_count",
            m.bins.iter().map(|b| format!("{}\t{}\t{}", b.mean_distance, fmt_opt(b.rho), b.pair_count)),
        )?;
        written.push(path);
        let d_max = m.bins.iter().map(|b| b.d_hi).fold(0.0, f64::max);
        let d_max = if d_max > 0.0 { d_max } else { 10.0 / model.a };
        let path = dir.join("rho_curve.tsv");
        let rows: Vec<String> = (0..=CURVE_POINTS)
            .map(|k| {
                let d = d_max * k as f64 / CURVE_POINTS as f64;
                format!("{d}\t{}", model.rho(d))
            })
            .collect();
        write_tsv(&path, &format!("d_{}\trho", m.unit), rows.into_iter())?;
        written.push(path);
    }
    Ok(written)
}
