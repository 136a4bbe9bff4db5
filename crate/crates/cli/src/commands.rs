use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use infogate::io::{inject_priors, load_stream, stream_to_text, write_jsonl, DatasetStream, Format};
use infogate::solver::{
    dataset_thresholds, run_variant, warm_reference, IncrementRecord, RunSummary, SolverConfig, Variant,
};
use infogate::validate::{run_suite, Fault};
use infogate::{Error, Pose2};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{parse_variants, ConvertArgs, Emit, FileConfig, MitpArgs, Reference, RunArgs, ValidateArgs};

/// A failed command and its exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPositiveDefinite { .. }
            | Error::DowndateBreaksSPD { .. }
            | Error::SBlockNotPositiveDefinite { .. }
            | Error::NonFinite(_) => Failure::Numerical(e.to_string()),
            Error::InvalidConfig(m) => Failure::Usage(m),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

/// Options of one `run` invocation after merging flags over the config file.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub datasets: Vec<PathBuf>,
    #[serde(skip)]
    pub format: Option<Format>,
    pub variants: Vec<Variant>,
    pub tau_d: Option<f64>,
    pub tau_eta: Option<f64>,
    pub tau_gn: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    #[serde(skip)]
    pub emit: Emit,
    #[serde(skip)]
    pub reference: Reference,
}

impl RunConfig {
    pub fn resolve(args: RunArgs) -> Result<Self, Failure> {
        let file: FileConfig = match &args.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
                toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let datasets = if args.datasets.is_empty() { file.datasets } else { args.datasets };
        if datasets.is_empty() {
            return Err(Failure::Usage("at least one --dataset is required".into()));
        }
        let format = match (args.format, file.format) {
            (Some(f), _) => Some(f),
            (None, Some(s)) => Some(s.parse().map_err(Failure::Usage)?),
            (None, None) => None,
        };
        let names = if !args.variants.is_empty() {
            args.variants
        } else if !file.variants.is_empty() {
            file.variants
        } else {
            vec![Variant::GniSpoIgg.name().to_string()]
        };
        let variants = parse_variants(&names).map_err(Failure::Usage)?;
        let cfg = RunConfig {
            datasets,
            format,
            variants,
            tau_d: args.tau_d.or(file.tau_d),
            tau_eta: args.tau_eta.or(file.tau_eta),
            tau_gn: args.tau_gn.or(file.tau_gn),
            seed: args.seed.or(file.seed).unwrap_or(0),
            out: args.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            jobs: args.jobs.or(file.jobs).unwrap_or(1).max(1),
            emit: args.emit.or(file.emit).unwrap_or(Emit::Both),
            reference: args.reference.or(file.reference).unwrap_or(Reference::Batch),
        };
        if cfg.tau_d.is_some_and(|v| !(v > 0.0)) || cfg.tau_eta.is_some_and(|v| !(v > 0.0)) {
            return Err(Failure::Usage("thresholds must be positive".into()));
        }
        if cfg.tau_gn == Some(0) {
            return Err(Failure::Usage("--tau-gn must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// Solver settings for `dataset`: explicit thresholds, else the
    /// dataset's tuned pair, else the defaults.
    pub fn solver_config(&self, dataset: &str) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some((d, e)) = dataset_thresholds(dataset) {
            c.tau_d = d;
            c.tau_eta = e;
        }
        c.tau_d = self.tau_d.unwrap_or(c.tau_d);
        c.tau_eta = self.tau_eta.unwrap_or(c.tau_eta);
        c.tau_gn = self.tau_gn.unwrap_or(c.tau_gn);
        c
    }
}

/// One CSV row.
#[derive(Debug, Serialize)]
struct Row {
    t: usize,
    n_edges: usize,
    delta_eta: f64,
    gated: bool,
    gn_iters: usize,
    active_max: usize,
    nchi2: f64,
    ate: Option<f64>,
    flops_update: u64,
    flops_solve: u64,
    cum_flops_update: u64,
    cum_flops_solve: u64,
}

impl From<&IncrementRecord> for Row {
    fn from(r: &IncrementRecord) -> Self {
        Row {
            t: r.t,
            n_edges: r.n_new_edges,
            delta_eta: r.delta_eta,
            gated: r.gated_global,
            gn_iters: r.gn_iters,
            active_max: r.active_max(),
            nchi2: r.nchi2,
            ate: r.ate,
            flops_update: r.flops_update,
            flops_solve: r.flops_solve,
            cum_flops_update: r.cum_flops_update,
            cum_flops_solve: r.cum_flops_solve,
        }
    }
}

pub fn increments_csv(records: &[IncrementRecord]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(Row::from(r)).map_err(|e| Failure::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Failure::Data(e.to_string()))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    summary: &'a RunSummary,
    tau_d: f64,
    tau_eta: f64,
    tau_gn: usize,
    seed: u64,
    reference: Option<ReferenceInfo>,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct ReferenceInfo {
    nchi2: f64,
    iterations: usize,
    converged: bool,
}

struct Loaded {
    stream: DatasetStream,
    reference: Option<Vec<Pose2>>,
    info: Option<ReferenceInfo>,
}

fn load(cfg: &RunConfig, path: &Path) -> Result<Loaded, Failure> {
    let stream = load_stream(path, cfg.format)?;
    let (reference, info) = match cfg.reference {
        Reference::None => (None, None),
        Reference::Initial => (Some(stream.initial.clone()), None),
        Reference::Batch => {
            let b = warm_reference(&stream, &cfg.solver_config(&stream.name))?;
            let info = ReferenceInfo {
                nchi2: infogate::solver::stream_nchi2(&stream, &b.poses),
                iterations: b.iterations,
                converged: b.converged,
            };
            log::info!("{}: reference Nχ² {:.6e} after {} iterations", stream.name, info.nchi2, info.iterations);
            (Some(b.poses), Some(info))
        }
    };
    Ok(Loaded { stream, reference, info })
}

fn run_pair(cfg: &RunConfig, data: &Loaded, variant: Variant, dir: &Path) -> Result<RunSummary, Failure> {
    let solver = cfg.solver_config(&data.stream.name);
    let result = run_variant(variant, &data.stream, &solver, data.reference.as_deref())?;
    if matches!(cfg.emit, Emit::Csv | Emit::Both) {
        write_file(&dir.join("increments.csv"), &increments_csv(&result.records)?)?;
    }
    if matches!(cfg.emit, Emit::Json | Emit::Both) {
        let file = SummaryFile {
            summary: &result.summary,
            tau_d: solver.tau_d,
            tau_eta: solver.tau_eta,
            tau_gn: variant.configure(&solver).tau_gn,
            seed: cfg.seed,
            reference: data.info,
        };
        let json = serde_json::to_string_pretty(&file).map_err(|e| Failure::Data(e.to_string()))?;
        write_file(&dir.join("summary.json"), json.as_bytes())?;
    }
    Ok(result.summary)
}

/// Runs every (dataset, variant) pair. A single pair writes straight into
/// the output directory; several pairs get `<out>/<dataset>/<variant>/`.
pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<RunSummary>, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(|| {
        let loaded: Vec<Loaded> = cfg.datasets.par_iter().map(|p| load(cfg, p)).collect::<Result<_, _>>()?;
        let single = loaded.len() == 1 && cfg.variants.len() == 1;
        let mut names: HashMap<&str, usize> = HashMap::new();
        let dirs: Vec<PathBuf> = loaded
            .iter()
            .map(|l| {
                let k = names.entry(l.stream.name.as_str()).or_insert(0);
                *k += 1;
                let name = if *k == 1 { l.stream.name.clone() } else { format!("{}-{}", l.stream.name, k) };
                cfg.out.join(name)
            })
            .collect();
        let pairs: Vec<(usize, Variant)> =
            (0..loaded.len()).flat_map(|d| cfg.variants.iter().map(move |&v| (d, v))).collect();
        pairs
            .par_iter()
            .map(|&(d, v)| {
                let dir = if single { cfg.out.clone() } else { dirs[d].join(v.name()) };
                let s = run_pair(cfg, &loaded[d], v, &dir)?;
                log::info!("{} {}: final Nχ² {:.6e}", s.dataset, s.variant, s.final_nchi2);
                Ok(s)
            })
            .collect()
    })
}

pub fn cmd_make_mitp(a: &MitpArgs) -> Result<DatasetStream, Failure> {
    if a.every == 0 {
        return Err(Failure::Usage("--every must be at least 1".into()));
    }
    if !(a.sigma >= 0.0) {
        return Err(Failure::Usage("--sigma must be non-negative".into()));
    }
    let mit = load_stream(&a.dataset, a.format)?;
    let mut base = SolverConfig::default();
    if let Some((d, e)) = dataset_thresholds("mit") {
        base.tau_d = d;
        base.tau_eta = e;
    }
    let reference = warm_reference(&mit, &base)?;
    let mut s = inject_priors(&mit, &reference.poses, a.every, a.sigma, a.seed);
    s.name = format!("{}-p", mit.name);
    s.initial = reference.poses;
    write_file(&a.out, write_jsonl(&s).as_bytes())?;
    Ok(s)
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<(), Failure> {
    let stream = load_stream(&a.dataset, a.format)?;
    let to = a
        .to
        .or_else(|| Format::from_path(&a.out))
        .ok_or_else(|| Failure::Usage(format!("cannot infer the output format of {}", a.out.display())))?;
    let text = stream_to_text(&stream, to)?;
    write_file(&a.out, text.as_bytes())
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<(), Failure> {
    if a.scale == 0 {
        return Err(Failure::Usage("--scale must be at least 1".into()));
    }
    let fault = if a.inject_fault { Fault::SkipCorrection } else { Fault::None };
    let report = run_suite(a.scale, a.seed, a.graphs, fault);
    for c in &report.checks {
        println!("{:22} runs {:5}  max error {:.3e}", c.name, c.runs, c.max_error);
    }
    if let Some(dir) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Data(e.to_string()))?;
        write_file(&dir.join("report.json"), json.as_bytes())?;
        for f in &report.failures {
            write_file(&dir.join(format!("repro-{}.jsonl", f.check)), f.reproducer.as_bytes())?;
        }
    }
    if report.passed() {
        println!("all checks passed on {} graphs", report.graphs);
        return Ok(());
    }
    for f in &report.failures {
        eprintln!("FAILED {} on graph {} (seed {}): {}", f.check, f.graph, f.graph_seed, f.detail);
        eprintln!("reproducer:\n{}", f.reproducer);
    }
    Err(Failure::Numerical(format!("{} check(s) failed", report.failures.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_resolve_from_dataset_then_flags() {
        let cfg = RunConfig::resolve(RunArgs {
            datasets: vec!["FR079.graph".into()],
            tau_gn: Some(5),
            ..RunArgs::default()
        })
        .unwrap();
        let s = cfg.solver_config("FR079");
        assert_eq!((s.tau_d, s.tau_eta, s.tau_gn), (1e-4, 0.6, 5));
        let s = cfg.solver_config("unknown");
        assert_eq!((s.tau_d, s.tau_eta), (1e-3, 1.0));
        assert_eq!(cfg.variants, vec![Variant::GniSpoIgg]);
    }

    #[test]
    fn usage_errors() {
        assert!(matches!(RunConfig::resolve(RunArgs::default()), Err(Failure::Usage(_))));
        let bad = RunArgs {
            datasets: vec!["a.g2o".into()],
            variants: vec!["GN7".into()],
            ..RunArgs::default()
        };
        assert_eq!(RunConfig::resolve(bad).unwrap_err().code(), 1);
        let bad = RunArgs {
            datasets: vec!["a.g2o".into()],
            tau_d: Some(-1.0),
            ..RunArgs::default()
        };
        assert!(matches!(RunConfig::resolve(bad), Err(Failure::Usage(_))));
    }

    #[test]
    fn error_classes() {
        assert_eq!(Failure::from(Error::NotPositiveDefinite { column: 3 }).code(), 3);
        assert_eq!(Failure::from(Error::Io("x".into())).code(), 2);
        assert_eq!(
            Failure::from(Error::MalformedRecord {
                line: 1,
                reason: "x".into()
            })
            .code(),
            2
        );
    }
}
