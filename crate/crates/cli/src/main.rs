//! `ssd-autotune`: cluster block I/O traces, prune the SSD parameter space,
//! and learn configurations for a target workload.
//!
//! ```sh
//! ssd-autotune generate --profile seqread --records 60000 --out traces/seqread.trace
//! ssd-autotune cluster --traces traces --db store
//! ssd-autotune tune --workload traces/seqread.trace --db store --capacity 512GiB
//! ```

mod config_json;
mod table;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssd_autotune::clustering::ClusterError;
use ssd_autotune::confdb::{ConfDb, DbError, ENV_DB};
use ssd_autotune::paramspace::{Configuration, Constraints, FlashType, Interface, ParamError, ParamSpace};
use ssd_autotune::pruning::{PruneError, PruneSettings};
use ssd_autotune::simssd::SimError;
use ssd_autotune::trace::{generate_synthetic_trace, parse_trace, write_trace, IoRecord, Profile, TraceError};
use ssd_autotune::tuner::{
    prune_workload, register_workloads, tune_workload, write_history, Evaluator, Perf, SimEvaluator,
    TuneWorkloadError, TunerError, TunerSettings, Workload,
};

use table::Table;

#[derive(Parser)]
#[command(name = "ssd-autotune", version, about = "Learn SSD configurations for block I/O workloads")]
struct Cli {
    /// Parameter catalog (JSON); the built-in catalog when omitted
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a directory of traces into the store
    Cluster {
        #[arg(long)]
        traces: PathBuf,
        #[command(flatten)]
        db: DbArg,
        /// Lines of `<trace file stem> <label>`
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Coarse and fine parameter pruning on one workload
    Prune {
        #[arg(long)]
        workload: PathBuf,
        #[command(flatten)]
        db: DbArg,
        #[command(flatten)]
        cons: ConsArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Baseline configuration (JSON); the reference drive when omitted
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Search for a configuration tuned to one workload
    Tune {
        #[arg(long)]
        workload: PathBuf,
        #[command(flatten)]
        db: DbArg,
        #[command(flatten)]
        cons: ConsArgs,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        #[arg(long, default_value_t = 0.9)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cap on outer search iterations
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Tuning history as NDJSON
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the best configuration as JSON
        #[arg(long)]
        config_out: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Simulate a configuration on every workload and grade it
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Workload traces; the store's representative traces when omitted
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long, env = ENV_DB)]
        db: Option<PathBuf>,
        #[command(flatten)]
        cons: ConsArgs,
        /// Target workload id; the first workload when omitted
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        #[arg(long, default_value_t = 0.9)]
        beta: f64,
    },
    /// Inspect the store
    Db {
        #[command(subcommand)]
        action: DbAction,
    },
    /// Write a synthetic trace
    Generate {
        /// seqread, randread, seqwrite, randwrite or mixed<percent reads>
        #[arg(long)]
        profile: Profile,
        #[arg(long, default_value_t = 60_000)]
        records: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DbAction {
    Ls {
        #[command(flatten)]
        db: DbArg,
    },
    Show {
        cluster_id: String,
        #[command(flatten)]
        db: DbArg,
    },
}

#[derive(Args)]
struct DbArg {
    /// Store root
    #[arg(long = "db", env = ENV_DB)]
    root: PathBuf,
}

#[derive(Args)]
struct ConsArgs {
    /// Target capacity, in bytes or with a K/M/G/T(iB) suffix
    #[arg(long, default_value = "512GiB", value_parser = parse_capacity)]
    capacity: u64,
    #[arg(long, default_value = "nvme")]
    interface: Interface,
    #[arg(long, default_value = "mlc")]
    flash: FlashType,
    /// Allowed relative deviation from the capacity
    #[arg(long, default_value_t = Constraints::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

impl ConsArgs {
    fn constraints(&self) -> Result<Constraints, Failure> {
        Ok(Constraints::with_tolerance(self.capacity, self.interface, self.flash, self.tolerance)?)
    }
}

fn parse_capacity(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let shift = match unit.to_ascii_lowercase().as_str() {
        "" | "b" => 0,
        "k" | "kib" => 10,
        "m" | "mib" => 20,
        "g" | "gib" => 30,
        "t" | "tib" => 40,
        _ => return Err(format!("unknown unit {unit:?}")),
    };
    let n: f64 = num.trim().parse().map_err(|_| format!("bad capacity {s:?}"))?;
    let bytes = n * (1u64 << shift) as f64;
    if !(bytes >= 1.0 && bytes < u64::MAX as f64) {
        return Err(format!("capacity {s:?} out of range"));
    }
    Ok(bytes.round() as u64)
}

/// A failure with a stable code for `error: <code>: <message>`.
#[derive(Debug)]
struct Failure {
    code: &'static str,
    message: String,
}

impl Failure {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<DbError> for Failure {
    fn from(e: DbError) -> Self {
        let code = match e {
            DbError::Locked(_) => "db_locked",
            DbError::Missing(_) => "not_found",
            DbError::Io { .. } => "io",
            _ => "db",
        };
        Failure::new(code, e.to_string())
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Failure::new("trace", e.to_string())
    }
}

impl From<ParamError> for Failure {
    fn from(e: ParamError) -> Self {
        Failure::new("invalid_argument", e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::ConstraintViolation { .. } => "constraint_violation",
            _ => "simulation",
        };
        Failure::new(code, e.to_string())
    }
}

impl From<TunerError> for Failure {
    fn from(e: TunerError) -> Self {
        match e {
            TunerError::Sim(s) => s.into(),
            TunerError::Infeasible => Failure::new("constraint_violation", e.to_string()),
            TunerError::InvalidSettings(_) => Failure::new("invalid_argument", e.to_string()),
            _ => Failure::new("tuner", e.to_string()),
        }
    }
}

impl From<PruneError> for Failure {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::Sim(s) => s.into(),
            PruneError::InfeasibleBaseline => Failure::new("constraint_violation", e.to_string()),
            _ => Failure::new("prune", e.to_string()),
        }
    }
}

impl From<ClusterError> for Failure {
    fn from(e: ClusterError) -> Self {
        Failure::new("cluster", e.to_string())
    }
}

impl From<TuneWorkloadError> for Failure {
    fn from(e: TuneWorkloadError) -> Self {
        match e {
            TuneWorkloadError::Db(e) => e.into(),
            TuneWorkloadError::Tuner(e) => e.into(),
            TuneWorkloadError::Cluster(e) => e.into(),
            TuneWorkloadError::Trace(e) => e.into(),
            TuneWorkloadError::Prune(e) => e.into(),
            TuneWorkloadError::NoFeasibleReference => Failure::new("constraint_violation", e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("io", format!("{}: {e}", path.display()))
}

fn load_trace(path: &Path) -> Result<Vec<IoRecord>, Failure> {
    let f = fs::File::open(path).map_err(io_failure(path))?;
    parse_trace(BufReader::new(f)).map_err(|e| Failure::new("trace", format!("{}: {e}", path.display())))
}

/// Regular, non-hidden files of `dir`, sorted by name.
fn trace_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(io_failure(dir))? {
        let path = e.map_err(io_failure(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if !path.is_file() || name.starts_with('.') {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name).to_string();
        out.push((stem, path));
    }
    out.sort();
    if out.is_empty() {
        return Err(Failure::new("invalid_argument", format!("no trace files in {}", dir.display())));
    }
    Ok(out)
}

fn load_labels(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(name), Some(label), None) => {
                out.insert(name.to_string(), label.to_string());
            }
            _ => {
                return Err(Failure::new(
                    "invalid_argument",
                    format!("{}:{}: expected `<name> <label>`", path.display(), i + 1),
                ))
            }
        }
    }
    Ok(out)
}

fn load_catalog(path: Option<&Path>) -> Result<ParamSpace, Failure> {
    match path {
        None => Ok(ParamSpace::default_catalog()),
        Some(p) => Ok(ParamSpace::from_json(&fs::read_to_string(p).map_err(io_failure(p))?)?),
    }
}

fn load_config(space: &ParamSpace, path: &Path) -> Result<Configuration, Failure> {
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    config_json::parse(space, &space.reference_config(), &text)
        .map_err(|m| Failure::new("invalid_argument", format!("{}: {m}", path.display())))
}

fn fmt_grade(g: f64) -> String {
    format!("{g:+.4}")
}

fn cmd_cluster(traces: &Path, root: &Path, labels: Option<&Path>, seed: u64) -> Result<(), Failure> {
    let corpus: Vec<(String, Vec<IoRecord>)> = trace_files(traces)?
        .into_iter()
        .map(|(name, path)| Ok((name, load_trace(&path)?)))
        .collect::<Result<_, Failure>>()?;
    let labels = labels.map(load_labels).transpose()?;
    let mut db = ConfDb::open(root)?;
    let rows = register_workloads(&mut db, &corpus, labels.as_ref(), seed)?;
    let mut t = Table::new(["Workload", "Windows", "Cluster", "Matched"]);
    for r in rows {
        t.row([r.name, r.windows.to_string(), r.cluster_id, if r.matched { "yes" } else { "new" }.into()]);
    }
    print!("{}", t.render());
    println!();
    let mut t = Table::new(["Cluster", "Members", "Center", "Spread"]);
    if let Some(model) = db.cluster_model() {
        for c in &model.clusters {
            t.row([
                c.cluster_id.clone(),
                c.member_count.to_string(),
                format!("({:.3}, {:.3})", c.center[0], c.center[1]),
                format!("{:.3}", c.mean_intra_distance),
            ]);
        }
    }
    print!("{}", t.render());
    Ok(())
}

fn cmd_prune(
    space: &ParamSpace,
    workload: &Path,
    root: &Path,
    cons: &Constraints,
    seed: u64,
    reference: Option<&Path>,
) -> Result<(), Failure> {
    let trace = load_trace(workload)?;
    let reference = reference.map(|p| load_config(space, p)).transpose()?;
    let mut db = ConfDb::open(root)?;
    let settings = PruneSettings {
        seed,
        ..PruneSettings::default()
    };
    let out = prune_workload(space, &trace, cons, &settings, &mut db, reference.as_ref())?;
    let rep = &out.report;
    println!("cluster  {}{}", out.cluster_id, if out.matched { "" } else { " (new)" });
    let mut t = Table::new(["Parameter", "Status", "Score"]);
    for p in space.params() {
        let n = &p.name;
        let status = if rep.fixed.contains(n) {
            "fixed"
        } else if rep.insensitive_coarse.contains(n) {
            "insensitive"
        } else if rep.dropped_fine.contains(n) {
            "dropped"
        } else {
            "kept"
        };
        let score = rep.coefficients.get(n).map_or("-".into(), |s| format!("{s:.4}"));
        t.row([n.clone(), status.into(), score]);
    }
    print!("{}", t.render());
    for w in &rep.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn perf_cells(p: Option<&Perf>) -> (String, String) {
    p.map_or(("-".into(), "-".into()), |p| {
        (format!("{:.2}", p.latency_us), format!("{:.2}", p.throughput_mbps))
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_tune(
    space: &ParamSpace,
    workload: &Path,
    root: &Path,
    cons: &Constraints,
    settings: &TunerSettings,
    out: Option<&Path>,
    config_out: Option<&Path>,
    reference: Option<&Path>,
) -> Result<(), Failure> {
    let trace = load_trace(workload)?;
    let reference = reference.map(|p| load_config(space, p)).transpose()?;
    let mut db = ConfDb::open(root)?;
    let rep = tune_workload(space, &trace, cons, settings, &mut db, reference.as_ref())?;
    let best = &rep.outcome.best;
    let stop = if rep.outcome.converged {
        "converged"
    } else if rep.outcome.stalled {
        "stalled"
    } else {
        "iteration cap"
    };
    println!("cluster           {}{}", rep.cluster_id, if rep.matched { "" } else { " (new)" });
    println!("outer iterations  {} ({stop})", rep.outcome.outer_iterations);
    println!("reference grade   {}", fmt_grade(rep.reference.grade));
    println!("best grade        {}", fmt_grade(best.grade));
    let (rl, rt) = perf_cells(rep.reference.per_workload.get(&rep.cluster_id));
    let (bl, bt) = perf_cells(best.per_workload.get(&rep.cluster_id));
    println!("latency (us)      {rl} -> {bl}");
    println!("throughput (MB/s) {rt} -> {bt}");
    println!();
    let mut t = Table::new(["Parameter", "Reference", "Tuned", "Note"]);
    for p in space.params() {
        let r = space.display_value(&rep.reference.config, &p.name);
        let b = space.display_value(&best.config, &p.name);
        let mark = if rep.frozen.contains(&p.name) {
            "frozen"
        } else if r != b {
            "*"
        } else {
            ""
        };
        t.row([p.name.clone(), r, b, mark.into()]);
    }
    print!("{}", t.render());

    if let Some(path) = out {
        let mut f = fs::File::create(path).map_err(io_failure(path))?;
        write_history(&mut f, &rep.outcome.history).map_err(io_failure(path))?;
        f.flush().map_err(io_failure(path))?;
    }
    if let Some(path) = config_out {
        fs::write(path, config_json::render(space, &best.config) + "\n").map_err(io_failure(path))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_validate(
    space: &ParamSpace,
    config: &Path,
    traces: Option<&Path>,
    root: Option<&Path>,
    cons: &Constraints,
    target: Option<&str>,
    alpha: f64,
    beta: f64,
) -> Result<(), Failure> {
    let config = load_config(space, config)?;
    if !space.satisfies(&config, cons) {
        return Err(Failure::new(
            "constraint_violation",
            format!(
                "raw capacity {} bytes outside {} bytes +/- {}",
                space.raw_capacity(&config),
                cons.capacity_bytes,
                cons.capacity_tolerance
            ),
        ));
    }
    let workloads: Vec<(String, Vec<IoRecord>)> = match (traces, root) {
        (Some(dir), _) => trace_files(dir)?
            .into_iter()
            .map(|(name, path)| Ok((name, load_trace(&path)?)))
            .collect::<Result<_, Failure>>()?,
        (None, Some(root)) => {
            let db = ConfDb::open_read_only(root)?;
            let mut out = Vec::new();
            for id in db.list_clusters()? {
                let e = db.get(&id)?.ok_or_else(|| Failure::new("not_found", id.clone()))?;
                if let Some(rel) = &e.cluster_meta.representative_trace {
                    out.push((id, db.load_trace(rel)?));
                }
            }
            out
        }
        (None, None) => return Err(Failure::new("invalid_argument", "need --traces or --db")),
    };
    if workloads.is_empty() {
        return Err(Failure::new("invalid_argument", "no workloads to validate on"));
    }
    let target = target.map_or_else(|| workloads[0].0.clone(), str::to_string);
    if !workloads.iter().any(|(id, _)| *id == target) {
        return Err(Failure::new("not_found", format!("no workload {target:?}")));
    }
    let reference_config = space
        .nearest_feasible(&space.reference_config(), cons)
        .ok_or_else(|| Failure::new("constraint_violation", "no reference configuration satisfies the constraints"))?;
    let mut eval = SimEvaluator {
        space,
        constraints: *cons,
        target: target.clone(),
        workloads: workloads
            .iter()
            .map(|(id, t)| Workload {
                id: id.clone(),
                trace: t,
                reference: Perf {
                    latency_us: 1.0,
                    throughput_mbps: 1.0,
                },
            })
            .collect(),
        alpha,
        beta,
        warmup: TunerSettings::default().warmup,
    };
    let ref_perf = eval.measure(&reference_config)?;
    for (w, p) in eval.workloads.iter_mut().zip(ref_perf) {
        w.reference = p;
    }
    let rec = eval.evaluate(&config)?;
    let mut t = Table::new(["Workload", "Latency (us)", "Ref latency", "Throughput (MB/s)", "Ref throughput", "Goal"]);
    for w in &eval.workloads {
        let p = rec.per_workload[&w.id];
        let name = if w.id == target { format!("{} (target)", w.id) } else { w.id.clone() };
        t.row([
            name,
            format!("{:.2}", p.latency_us),
            format!("{:.2}", w.reference.latency_us),
            format!("{:.2}", p.throughput_mbps),
            format!("{:.2}", w.reference.throughput_mbps),
            fmt_grade(rec.goal_per_workload[&w.id]),
        ]);
    }
    print!("{}", t.render());
    println!("grade  {}", fmt_grade(rec.grade));
    Ok(())
}

fn cmd_db_ls(root: &Path) -> Result<(), Failure> {
    let db = ConfDb::open_read_only(root)?;
    let mut t = Table::new(["Cluster", "Members", "Records", "Best grade", "Pruned"]);
    for id in db.list_clusters()? {
        let Some(e) = db.get(&id)? else { continue };
        let best = e
            .records
            .iter()
            .filter(|r| r.validated)
            .map(|r| r.grade)
            .min_by(f64::total_cmp)
            .map_or("-".into(), fmt_grade);
        t.row([
            id,
            e.cluster_meta.member_count.to_string(),
            e.records.len().to_string(),
            best,
            if e.prune_report.is_some() { "yes" } else { "no" }.into(),
        ]);
    }
    print!("{}", t.render());
    Ok(())
}

fn cmd_db_show(space: &ParamSpace, root: &Path, id: &str) -> Result<(), Failure> {
    let db = ConfDb::open_read_only(root)?;
    let e = db
        .get(id)?
        .ok_or_else(|| Failure::new("not_found", format!("no entry for cluster {id:?}")))?;
    let m = &e.cluster_meta;
    println!("cluster         {}", e.cluster_id);
    println!("members         {}", m.member_count);
    println!("center          ({:.4}, {:.4})", m.center[0], m.center[1]);
    println!("spread          {:.4}", m.mean_intra_distance);
    println!("trace           {}", m.representative_trace.as_deref().unwrap_or("-"));
    println!("records         {}", e.records.len());
    if let Some(p) = &e.prune_report {
        println!("searchable      {}", p.searchable().join(", "));
        println!("frozen          {}", p.frozen().join(", "));
    }
    if !e.reference_perf.is_empty() {
        println!();
        let mut t = Table::new(["Workload", "Ref latency (us)", "Ref throughput (MB/s)"]);
        for (w, p) in &e.reference_perf {
            t.row([w.clone(), format!("{:.2}", p.latency_us), format!("{:.2}", p.throughput_mbps)]);
        }
        print!("{}", t.render());
    }
    if let Some(best) = e.records.iter().filter(|r| r.validated).min_by(|a, b| a.grade.total_cmp(&b.grade)) {
        println!();
        println!("best grade      {}", fmt_grade(best.grade));
        let mut t = Table::new(["Parameter", "Value"]);
        for p in space.params() {
            t.row([p.name.clone(), space.display_value(&best.config, &p.name)]);
        }
        print!("{}", t.render());
    }
    Ok(())
}

fn cmd_generate(profile: Profile, records: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    if records == 0 {
        return Err(Failure::new("invalid_argument", "--records must be positive"));
    }
    let t = generate_synthetic_trace(profile, records, seed);
    let mut buf = Vec::new();
    write_trace(&mut buf, &t).map_err(io_failure(out))?;
    fs::write(out, buf).map_err(io_failure(out))?;
    println!("wrote {records} {} records to {}", profile.name(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let space = load_catalog(cli.catalog.as_deref())?;
    match cli.command {
        Command::Cluster { traces, db, labels, seed } => cmd_cluster(&traces, &db.root, labels.as_deref(), seed),
        Command::Prune {
            workload,
            db,
            cons,
            seed,
            reference,
        } => cmd_prune(&space, &workload, &db.root, &cons.constraints()?, seed, reference.as_deref()),
        Command::Tune {
            workload,
            db,
            cons,
            alpha,
            beta,
            seed,
            max_iterations,
            out,
            config_out,
            reference,
        } => {
            let defaults = TunerSettings::default();
            let max = max_iterations.unwrap_or(defaults.max_outer_iterations);
            let settings = TunerSettings {
                alpha,
                beta,
                rng_seed: seed,
                max_outer_iterations: max,
                min_outer_iterations: defaults.min_outer_iterations.min(max),
                ..defaults
            };
            cmd_tune(
                &space,
                &workload,
                &db.root,
                &cons.constraints()?,
                &settings,
                out.as_deref(),
                config_out.as_deref(),
                reference.as_deref(),
            )
        }
        Command::Validate {
            config,
            traces,
            db,
            cons,
            target,
            alpha,
            beta,
        } => cmd_validate(
            &space,
            &config,
            traces.as_deref(),
            db.as_deref(),
            &cons.constraints()?,
            target.as_deref(),
            alpha,
            beta,
        ),
        Command::Db { action } => match action {
            DbAction::Ls { db } => cmd_db_ls(&db.root),
            DbAction::Show { cluster_id, db } => cmd_db_show(&space, &db.root, &cluster_id),
        },
        Command::Generate {
            profile,
            records,
            seed,
            out,
        } => cmd_generate(profile, records, seed, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.code, f.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
