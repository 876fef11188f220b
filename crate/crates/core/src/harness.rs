//! Monte Carlo experiments: configuration, replication, journaling and
//! aggregation.
//!
//! Configuration is JSON:
//!
//! ```json
//! {
//!   "experiment": "diffusion-4.1",
//!   "schemes": [[0.01, 50]],
//!   "replicates": 200,
//!   "base_seed": 1,
//!   "refine": 10,
//!   "output_dir": "out",
//!   "workers": "auto",
//!   "keep_replicates": false
//! }
//! ```
//!
//! `truth` and `candidates` may replace or override the named experiment.
//! `truth` is either a registry name or
//! `{"drift": {"slope": -0.5, "intercept": 0}, "scale": {"kind": "constant", "value": 1},
//! "noise": {"kind": "wiener"}, "x0": 0}` (scale kinds: `constant`, `inverse-quadratic`).
//! Candidates are lists of registry names or `{"name": ..., "lower": [...], "upper": [...]}`.
//!
//! Outputs: `frequencies.csv`, `weights.csv`, `aggregate.json`,
//! `timing.json`, `journal.jsonl` and, if requested, `replicates.jsonl`.
//! Indices in CSV files are 1-based.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gql::{fit_scale_obs, FitOptions, Observations};
use crate::limits::{fisher_drift, fisher_scale, optimal_model, StationaryDistribution};
use crate::marginal::{
    expansion_prediction_drift, expansion_prediction_scale, log_marginal_drift, log_marginal_scale, rows_to_matrix,
    ExpansionRecord, PriorDensity,
};
use crate::model::{Candidate, CandidateSet, ParameterDomain, SamplingScheme};
use crate::noise::{NoiseSpec, RngStream};
use crate::optim::OptimOptions;
use crate::qbic::{stepwise_select, QbicReport};
use crate::registry;
use crate::simulate::{euler_path, TrueModel};

/// Abort when more than this fraction of a scheme's replicates fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;
pub const WORKERS_ENV: &str = "SDE_QBIC_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum Workers {
    Count(usize),
    #[default]
    #[serde(with = "auto")]
    Auto,
}

mod auto {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("workers must be a positive integer or \"auto\", got \"{s}\"")))
        }
    }
}

impl Workers {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Self::Count(n)),
            _ => Err(Error::Parse(format!("workers must be a positive integer or \"auto\", got \"{s}\""))),
        }
    }

    pub fn resolve(self) -> usize {
        match self {
            Self::Count(n) => n.max(1),
            Self::Auto => std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDriftSpec {
    pub slope: f64,
    #[serde(default)]
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InlineScale {
    /// `c(x) = value`.
    Constant { value: f64 },
    /// `c(x) = value / (1 + x²)`.
    InverseQuadratic { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSpec {
    Named(String),
    Inline { drift: LinearDriftSpec, scale: InlineScale, noise: NoiseSpec, #[serde(default)] x0: f64 },
}

impl TruthSpec {
    pub fn resolve(&self) -> Result<TrueModel> {
        match self {
            Self::Named(name) => registry::truth(name),
            Self::Inline { drift, scale, noise, x0 } => {
                noise.validate()?;
                let (b, a0) = (drift.slope, drift.intercept);
                let drift_fn = move |x: f64| a0 + b * x;
                let model = match *scale {
                    InlineScale::Constant { value } => TrueModel::new("inline", drift_fn, move |_| value, *noise, *x0),
                    InlineScale::InverseQuadratic { value } => {
                        TrueModel::new("inline", drift_fn, move |x| value / (1.0 + x * x), *noise, *x0)
                    }
                };
                model.check_finite_on_grid(50.0, 1000)?;
                Ok(model)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CandidateRef {
    Named(String),
    Bounded { name: String, lower: Vec<f64>, upper: Vec<f64> },
}

impl CandidateRef {
    pub fn resolve(&self) -> Result<Candidate> {
        match self {
            Self::Named(name) => registry::candidate(name),
            Self::Bounded { name, lower, upper } => {
                let base = registry::candidate(name)?;
                Candidate::new(base.function, ParameterDomain::new(lower.clone(), upper.clone())?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatesSpec {
    pub scales: Vec<CandidateRef>,
    pub drifts: Vec<CandidateRef>,
}

fn default_replicates() -> usize {
    200
}

fn default_seed() -> u64 {
    1
}

fn default_refine() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub truth: Option<TruthSpec>,
    #[serde(default)]
    pub candidates: Option<CandidatesSpec>,
    /// `(h, T)` pairs; empty means the named experiment's defaults.
    #[serde(default)]
    pub schemes: Vec<(f64, f64)>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default = "default_refine")]
    pub refine: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Workers,
    #[serde(default)]
    pub keep_replicates: bool,
}

impl ExperimentConfig {
    pub fn named(name: &str) -> Self {
        Self {
            experiment: Some(name.to_string()),
            truth: None,
            candidates: None,
            schemes: vec![],
            replicates: default_replicates(),
            base_seed: default_seed(),
            refine: default_refine(),
            output_dir: None,
            workers: Workers::Auto,
            keep_replicates: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Everything that determines the results, as canonical JSON.
    fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.workers = Workers::Auto;
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if self.refine == 0 {
            return Err(Error::invalid("refine must be at least 1"));
        }
        let named = self.experiment.as_deref().map(registry::experiment).transpose()?;
        let truth = match (&self.truth, &named) {
            (Some(t), _) => t.resolve()?,
            (None, Some(e)) => e.truth.clone(),
            (None, None) => return Err(Error::invalid("config needs `experiment` or `truth`")),
        };
        let candidates = match (&self.candidates, &named) {
            (Some(c), _) => CandidateSet::new(
                c.scales.iter().map(CandidateRef::resolve).collect::<Result<_>>()?,
                c.drifts.iter().map(CandidateRef::resolve).collect::<Result<_>>()?,
            )?,
            (None, Some(e)) => e.candidates.clone(),
            (None, None) => return Err(Error::invalid("config needs `experiment` or `candidates`")),
        };
        let pairs = match (&self.schemes[..], &named) {
            ([], Some(e)) => e.schemes.clone(),
            ([], None) => return Err(Error::invalid("config needs at least one scheme")),
            (s, _) => s.to_vec(),
        };
        let schemes = pairs.iter().map(|&(h, t)| SamplingScheme::from_horizon(h, t)).collect::<Result<Vec<_>>>()?;
        let label = self.experiment.clone().unwrap_or_else(|| "custom".into());
        Ok(ResolvedExperiment { label, truth, candidates, schemes, refine: self.refine, base_seed: self.base_seed })
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub label: String,
    pub truth: TrueModel,
    pub candidates: CandidateSet,
    pub schemes: Vec<SamplingScheme>,
    pub refine: usize,
    pub base_seed: u64,
}

impl ResolvedExperiment {
    pub fn stream(&self, scheme: &SamplingScheme, replicate: u64) -> RngStream {
        RngStream::for_replicate(self.base_seed, &self.label, scheme.h(), scheme.horizon(), replicate)
    }

    /// Simulates replicate `replicate` of `scheme` and runs the selection.
    pub fn run_replicate(&self, scheme: &SamplingScheme, replicate: u64) -> Result<QbicReport> {
        let path = euler_path(&self.truth, scheme, self.refine, &self.stream(scheme, replicate))?;
        stepwise_select(&path, &self.candidates, &FitOptions::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scheme: usize,
    pub replicate: u64,
    pub outcome: ReplicateOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicateOutcome {
    Selected { scale: usize, drift: usize, weights: Vec<Vec<f64>>, report: Option<Box<QbicReport>> },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeAggregate {
    pub h: f64,
    pub horizon: f64,
    pub n: usize,
    pub completed: usize,
    pub failed: usize,
    /// `counts[m₁][m₂]`.
    pub counts: Vec<Vec<usize>>,
    pub mean_weights: Vec<Vec<f64>>,
    pub failures: Vec<String>,
}

impl SchemeAggregate {
    pub fn frequency(&self, scale: usize, drift: usize) -> f64 {
        self.counts[scale][drift] as f64 / self.completed.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub workers: usize,
    pub replicates_run: usize,
    pub replicates_resumed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub experiment: String,
    pub replicates: usize,
    pub base_seed: u64,
    pub scale_labels: Vec<String>,
    pub drift_labels: Vec<String>,
    pub schemes: Vec<SchemeAggregate>,
    #[serde(skip)]
    pub timing: Option<Timing>,
}

#[derive(Serialize, Deserialize)]
struct JournalHeader {
    config: String,
}

struct Journal {
    writer: Option<Mutex<BufWriter<File>>>,
    done: BTreeMap<(usize, u64), ReplicateRecord>,
}

impl Journal {
    fn open(dir: Option<&FsPath>, fingerprint: &str) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self { writer: None, done: BTreeMap::new() });
        };
        fs::create_dir_all(dir)?;
        let path = dir.join("journal.jsonl");
        let mut done = BTreeMap::new();
        let fresh = !path.exists();
        if !fresh {
            let mut lines = BufReader::new(File::open(&path)?).lines();
            let header: JournalHeader = match lines.next() {
                Some(line) => serde_json::from_str(&line?).map_err(|e| Error::Experiment(format!("journal header: {e}")))?,
                None => JournalHeader { config: fingerprint.to_string() },
            };
            if header.config != fingerprint {
                return Err(Error::Experiment(format!(
                    "{} belongs to a different configuration; use another output directory",
                    path.display()
                )));
            }
            for line in lines {
                // a torn final line from an interrupted run is dropped
                if let Ok(rec) = serde_json::from_str::<ReplicateRecord>(&line?) {
                    done.insert((rec.scheme, rec.replicate), rec);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh || fs::metadata(&path)?.len() == 0 {
            writeln!(file, "{}", serde_json::to_string(&JournalHeader { config: fingerprint.to_string() })?)?;
        } else {
            // make sure the next record starts on its own line
            let text = fs::read(&path)?;
            if text.last() != Some(&b'\n') {
                writeln!(file)?;
            }
        }
        Ok(Self { writer: Some(Mutex::new(BufWriter::new(file))), done })
    }

    fn append(&self, rec: &ReplicateRecord) -> Result<()> {
        if let Some(w) = &self.writer {
            let line = serde_json::to_string(rec)?;
            let mut w = w.lock().expect("journal lock");
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        Ok(())
    }
}

fn run_one(exp: &ResolvedExperiment, scheme_index: usize, replicate: u64, keep: bool) -> ReplicateRecord {
    let outcome = match exp.run_replicate(&exp.schemes[scheme_index], replicate) {
        Ok(r) => ReplicateOutcome::Selected {
            scale: r.selected_scale,
            drift: r.selected_drift,
            weights: r.weights.clone(),
            report: keep.then(|| Box::new(r)),
        },
        Err(e) => ReplicateOutcome::Failed { message: e.to_string() },
    };
    ReplicateRecord { scheme: scheme_index, replicate, outcome }
}

fn aggregate(exp: &ResolvedExperiment, records: &BTreeMap<(usize, u64), ReplicateRecord>) -> Vec<SchemeAggregate> {
    let m1 = exp.candidates.scales.len();
    let m2 = exp.candidates.drifts.len();
    exp.schemes
        .iter()
        .enumerate()
        .map(|(s, scheme)| {
            let mut counts = vec![vec![0usize; m2]; m1];
            let mut sums = vec![vec![0.0f64; m2]; m1];
            let mut failures = Vec::new();
            let mut completed = 0;
            for rec in records.range((s, 0)..=(s, u64::MAX)).map(|(_, r)| r) {
                match &rec.outcome {
                    ReplicateOutcome::Selected { scale, drift, weights, .. } => {
                        completed += 1;
                        counts[*scale][*drift] += 1;
                        for (row, wrow) in sums.iter_mut().zip(weights) {
                            for (a, w) in row.iter_mut().zip(wrow) {
                                *a += w;
                            }
                        }
                    }
                    ReplicateOutcome::Failed { message } => failures.push(format!("replicate {}: {message}", rec.replicate)),
                }
            }
            let mean_weights = sums.into_iter().map(|r| r.into_iter().map(|v| v / completed.max(1) as f64).collect()).collect();
            SchemeAggregate {
                h: scheme.h(),
                horizon: scheme.horizon(),
                n: scheme.n(),
                completed,
                failed: failures.len(),
                counts,
                mean_weights,
                failures,
            }
        })
        .collect()
}

fn write_outputs(dir: &FsPath, report: &AggregateReport, records: &BTreeMap<(usize, u64), ReplicateRecord>, keep: bool) -> Result<()> {
    let mut freq = BufWriter::new(File::create(dir.join("frequencies.csv"))?);
    let mut wts = BufWriter::new(File::create(dir.join("weights.csv"))?);
    writeln!(freq, "scheme,h,T,m1,m2,count")?;
    writeln!(wts, "scheme,h,T,m1,m2,mean_weight")?;
    for (s, agg) in report.schemes.iter().enumerate() {
        for (i, (crow, wrow)) in agg.counts.iter().zip(&agg.mean_weights).enumerate() {
            for (j, (c, w)) in crow.iter().zip(wrow).enumerate() {
                writeln!(freq, "{},{},{},{},{},{c}", s + 1, agg.h, agg.horizon, i + 1, j + 1)?;
                writeln!(wts, "{},{},{},{},{},{w}", s + 1, agg.h, agg.horizon, i + 1, j + 1)?;
            }
        }
    }
    freq.flush()?;
    wts.flush()?;
    fs::write(dir.join("aggregate.json"), serde_json::to_string_pretty(report)? + "\n")?;
    if let Some(t) = &report.timing {
        fs::write(dir.join("timing.json"), serde_json::to_string_pretty(t)? + "\n")?;
    }
    if keep {
        let mut out = BufWriter::new(File::create(dir.join("replicates.jsonl"))?);
        for rec in records.values() {
            writeln!(out, "{}", serde_json::to_string(rec)?)?;
        }
        out.flush()?;
    }
    Ok(())
}

/// Runs every scheme × replicate, resuming from the journal in `output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateReport> {
    let start = Instant::now();
    let exp = config.resolve()?;
    let workers = config.workers.resolve();
    let journal = Journal::open(config.output_dir.as_deref(), &config.fingerprint())?;
    let resumed = journal.done.len();

    let todo: Vec<(usize, u64)> = (0..exp.schemes.len())
        .flat_map(|s| (0..config.replicates as u64).map(move |r| (s, r)))
        .filter(|k| !journal.done.contains_key(k))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Experiment(format!("worker pool: {e}")))?;
    let fresh: Vec<Result<ReplicateRecord>> = pool.install(|| {
        todo.par_iter()
            .map(|&(s, r)| {
                let rec = run_one(&exp, s, r, config.keep_replicates);
                journal.append(&rec)?;
                Ok(rec)
            })
            .collect()
    });
    let mut records = journal.done;
    for rec in fresh {
        let rec = rec?;
        records.insert((rec.scheme, rec.replicate), rec);
    }
    records.retain(|&(s, r), _| s < exp.schemes.len() && r < config.replicates as u64);

    let schemes = aggregate(&exp, &records);
    for agg in &schemes {
        if agg.failed as f64 > MAX_FAILURE_FRACTION * config.replicates as f64 {
            return Err(Error::Experiment(format!(
                "{} of {} replicates failed at (h, T) = ({}, {}); first: {}",
                agg.failed,
                config.replicates,
                agg.h,
                agg.horizon,
                agg.failures.first().map_or("", String::as_str)
            )));
        }
    }
    let report = AggregateReport {
        experiment: exp.label.clone(),
        replicates: config.replicates,
        base_seed: config.base_seed,
        scale_labels: exp.candidates.scale_labels(),
        drift_labels: exp.candidates.drift_labels(),
        schemes,
        timing: Some(Timing {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            workers,
            replicates_run: todo.len(),
            replicates_resumed: resumed,
        }),
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &report, &records, config.keep_replicates)?;
    }
    Ok(report)
}

/// Which contrast a Laplace-expansion study integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionTarget {
    /// Scale candidate index.
    Scale(usize),
    /// Drift candidate index, under the optimal scale.
    Drift(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherSource {
    /// The limit matrix at the optimal parameter.
    Population,
    /// `-(1/rate) ∂²G` at the estimate.
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionStudy {
    pub experiment: String,
    pub target: ExpansionTarget,
    pub schemes: Vec<(f64, f64)>,
    pub replicates: usize,
    pub base_seed: u64,
    pub refine: usize,
    pub fisher: FisherSource,
    pub workers: Workers,
}

impl ExpansionStudy {
    pub fn new(experiment: &str, target: ExpansionTarget, schemes: Vec<(f64, f64)>, replicates: usize) -> Self {
        Self {
            experiment: experiment.to_string(),
            target,
            schemes,
            replicates,
            base_seed: 1,
            refine: 10,
            fisher: FisherSource::Population,
            workers: Workers::Auto,
        }
    }
}

/// Log-marginal by quadrature against the expansion prediction with a
/// uniform prior on the candidate box, one record per scheme × replicate.
pub fn verify_expansion(study: &ExpansionStudy) -> Result<Vec<ExpansionRecord>> {
    let named = registry::experiment(&study.experiment)?;
    let pi0: StationaryDistribution = named.stationary.build(&named.truth)?;
    let limits = optimal_model(&named.candidates, &named.truth, &pi0, &OptimOptions::default())?;
    let big_c = |x: f64| named.truth.scale_at(x);
    let big_a = |x: f64| named.truth.drift_at(x);
    let (scale_idx, drift_idx) = match study.target {
        ExpansionTarget::Scale(i) => (i, None),
        ExpansionTarget::Drift(j) => (limits.m1_star, Some(j)),
    };
    let scale = named
        .candidates
        .scales
        .get(scale_idx)
        .ok_or_else(|| Error::invalid(format!("no scale candidate {}", scale_idx + 1)))?;
    let drift = drift_idx
        .map(|j| named.candidates.drifts.get(j).ok_or_else(|| Error::invalid(format!("no drift candidate {}", j + 1))))
        .transpose()?;
    let gamma_star = &limits.gamma_star[scale_idx];
    let population = match drift {
        None => fisher_scale(&scale.function, gamma_star, &big_c, &pi0)?,
        Some(d) => {
            let j = drift_idx.expect("drift index");
            fisher_drift(&d.function, &limits.alpha_star[j], &scale.function, gamma_star, &big_a, &pi0)?
        }
    };

    let exp = ResolvedExperiment {
        label: format!("{}-expansion", study.experiment),
        truth: named.truth.clone(),
        candidates: named.candidates.clone(),
        schemes: study.schemes.iter().map(|&(h, t)| SamplingScheme::from_horizon(h, t)).collect::<Result<_>>()?,
        refine: study.refine,
        base_seed: study.base_seed,
    };
    let opts = FitOptions::default();
    let jobs: Vec<(usize, u64)> =
        (0..exp.schemes.len()).flat_map(|s| (0..study.replicates as u64).map(move |r| (s, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(study.workers.resolve())
        .build()
        .map_err(|e| Error::Experiment(format!("worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(s, r)| {
                let scheme = &exp.schemes[s];
                let path = euler_path(&exp.truth, scheme, exp.refine, &exp.stream(scheme, r))?;
                let (mv, prior) = match drift {
                    None => {
                        let prior = PriorDensity::uniform(scale.domain.clone())?;
                        (log_marginal_scale(&path, &scale.function, &scale.domain, &prior, &opts)?, prior)
                    }
                    Some(d) => {
                        let prior = PriorDensity::uniform(d.domain.clone())?;
                        let obs = Observations::new(&path);
                        let sf = fit_scale_obs(&obs, &scale.function, &scale.domain, &opts)?;
                        (log_marginal_drift(&path, &d.function, &d.domain, &prior, &scale.function, &sf.gamma_hat, &opts)?, prior)
                    }
                };
                let fisher = match study.fisher {
                    FisherSource::Population => population.clone(),
                    FisherSource::Data => rows_to_matrix(&mv.data_fisher),
                };
                let prior_at = prior.density(&mv.theta_hat);
                let p = mv.theta_hat.len();
                let prediction = match drift {
                    None => expansion_prediction_scale(mv.contrast_at_max, p, scheme.n(), prior_at, &fisher)?,
                    Some(_) => expansion_prediction_drift(mv.contrast_at_max, p, scheme.horizon(), prior_at, &fisher)?,
                };
                Ok(ExpansionRecord {
                    n: scheme.n(),
                    replicate: r,
                    log_marginal: mv.log_marginal,
                    prediction,
                    residual: mv.log_marginal - prediction,
                })
            })
            .collect()
    })
}

/// CSV with header `n,replicate,log_marginal,prediction,residual`.
pub fn write_expansion_csv<W: Write>(records: &[ExpansionRecord], mut out: W) -> Result<()> {
    writeln!(out, "n,replicate,log_marginal,prediction,residual")?;
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.n, r.replicate, r.log_marginal, r.prediction, r.residual)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let c = ExperimentConfig::from_json(r#"{"experiment": "diffusion-4.1", "schemes": [[0.01, 10]], "workers": 3}"#).unwrap();
        assert_eq!(c.workers, Workers::Count(3));
        assert_eq!(c.replicates, 200);
        let c = ExperimentConfig::from_json(r#"{"experiment": "nig-4.2", "workers": "auto"}"#).unwrap();
        assert_eq!(c.workers, Workers::Auto);
        assert_eq!(c.resolve().unwrap().schemes.len(), 4);
        assert!(ExperimentConfig::from_json(r#"{"experiment": "x", "workers": "many"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experimnt": "diffusion-4.1"}"#).is_err());
        assert!(matches!(ExperimentConfig::named("nope").resolve(), Err(Error::UnknownName(_))));
        let bad = ExperimentConfig { schemes: vec![(0.03, 10.0)], ..ExperimentConfig::named("diffusion-4.1") };
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn inline_truth_and_candidates() {
        let c = ExperimentConfig::from_json(
            r#"{
                "truth": {"drift": {"slope": -1}, "scale": {"kind": "inverse-quadratic", "value": 2},
                          "noise": {"kind": "wiener"}, "x0": 0.5},
                "candidates": {"scales": ["levy-scale3", {"name": "levy-scale1", "lower": [0.5], "upper": [3]}],
                               "drifts": ["levy-drift2"]},
                "schemes": [[0.01, 5]]
            }"#,
        )
        .unwrap();
        let e = c.resolve().unwrap();
        assert_eq!(e.truth.scale_at(1.0), 1.0);
        assert_eq!(e.truth.drift_at(2.0), -2.0);
        assert_eq!(e.candidates.scales[1].domain.lower(), &[0.5]);
        assert_eq!(e.schemes[0].n(), 500);
    }

    #[test]
    fn workers_parse() {
        assert_eq!(Workers::parse("4").unwrap(), Workers::Count(4));
        assert_eq!(Workers::parse("auto").unwrap(), Workers::Auto);
        assert!(Workers::parse("0").is_err());
        assert!(Workers::Auto.resolve() >= 1);
    }
}
