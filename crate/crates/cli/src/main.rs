//! `hfwave-lab`: identity suites, transport audits, initial-data audits and
//! lambda scans for the multiphase high-frequency ansatz.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hfwave::experiments::{
    burnett_scan, constraint_scan, identity_suite, initial_data_audit, ricci_scan, transport_audit, weak_limit_decay,
    Scenario, ScanReport, Series, SeriesPoint, WeakLimitCase,
};
use hfwave::hierarchy::Trig;
use hfwave::initialdata::{constraint_residual, ConformalData};
use hfwave::phases::HarmonicWord;
use hfwave::{LabError, Sym3};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "hfwave-lab", version, about = "Checks and lambda scans for multiphase high-frequency waves")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = "HFWAVE_OUT", default_value = "hfwave-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    /// Scenario JSON; defaults to the built-in two-phase flat scenario.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Threshold override `name=value`, e.g. `order=0.85` (repeatable).
    #[arg(long = "threshold", value_name = "NAME=VALUE")]
    thresholds: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Slot {
    F21,
    F22,
    F2pm,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Unknown {
    Phi2,
    X2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TrigArg {
    Cos,
    Sin,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pointwise property suites: transparency, P_v round trip, Pbar laws,
    /// frame laws, seed energy, transport energy, recombination, curvature.
    VerifyIdentities {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        rng: u64,
    },
    /// Propagation audits of the transported profiles.
    Transport {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 16)]
        footpoints: usize,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
    },
    /// Seed to slice data plus polarization and corrector audits.
    BuildInitialData {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// FD Ricci harmonics of g_lambda against the order-0 prediction.
    RicciScan {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Remove hierarchy slots (informational run).
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<Slot>,
    },
    /// Constraint harmonics of the oscillatory initial data.
    ConstraintScan {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Drop conformal unknowns (informational run).
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<Unknown>,
    },
    /// Decay of oscillatory integrals of a slice word.
    WeakLimit {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Word such as `A-B`, `2A+B` or `u0-u1`.
        #[arg(long, default_value = "A")]
        word: String,
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = TrigArg::Sin)]
        trig: TrigArg,
        /// Also run the stationary-phase control.
        #[arg(long)]
        control: bool,
    },
    /// Sup-norm scaling and constant-word leakage of g_lambda - g0.
    BurnettScan {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Merge JSON reports.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "merged")]
        name: String,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Numeric(String),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Config(_) | LabError::InvalidScale(_) | LabError::InvalidSeed(_) | LabError::InvalidDirection(_) => {
                Failure::Config(e.to_string())
            }
            e => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("output: {e}"))
    }
}

fn apply_thresholds(scn: &mut Scenario, overrides: &[String]) -> Result<(), Failure> {
    if overrides.is_empty() {
        return Ok(());
    }
    let mut v = serde_json::to_value(scn.thresholds).map_err(|e| Failure::Config(e.to_string()))?;
    for o in overrides {
        let (k, val) = o.split_once('=').ok_or_else(|| Failure::Config(format!("threshold {o:?}: expected NAME=VALUE")))?;
        let x: f64 = val.trim().parse().map_err(|_| Failure::Config(format!("threshold {o:?}: bad number")))?;
        let obj = v.as_object_mut().expect("thresholds serialize to an object");
        if !obj.contains_key(k.trim()) {
            return Err(Failure::Config(format!("unknown threshold {k:?}")));
        }
        obj.insert(k.trim().to_string(), serde_json::json!(x));
    }
    scn.thresholds = serde_json::from_value(v).map_err(|e| Failure::Config(e.to_string()))?;
    Ok(())
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, Failure> {
    let mut scn = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => Scenario::default(),
    };
    apply_thresholds(&mut scn, &args.thresholds)?;
    scn.validate()?;
    Ok(scn)
}

fn stamp(mut rep: ScanReport, scn: &Scenario) -> ScanReport {
    rep.meta.config_hash = output::config_hash(scn);
    rep.meta.rng_seed = scn.rng_seed;
    rep
}

fn finish(rep: &ScanReport, out: &Path, stem: &str) -> Result<bool, Failure> {
    output::emit_report(rep, out, stem)?;
    for s in &rep.series {
        let last = s.points.last().map_or(f64::NAN, |p| p.value);
        let fit = s.fit.map(|f| format!(" order {:.3}", f.order)).unwrap_or_default();
        let pass = match s.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "info",
        };
        println!("{pass:4} {}/{}/{} last {last:.3e}{fit}", s.kind, s.word, s.slot);
    }
    for n in &rep.meta.notes {
        println!("note: {n}");
    }
    let fails = rep.failures();
    for s in &fails {
        eprintln!("failed: {}/{}/{}", s.kind, s.word, s.slot);
    }
    println!("wrote {}", out.join(format!("{stem}.json")).display());
    Ok(fails.is_empty())
}

fn single(kind: &str, word: &str, slot: &str, value: f64, tol: Option<f64>) -> Series {
    let s = Series::new(kind, word, slot, vec![SeriesPoint { lambda: 0.0, value }]);
    match tol {
        Some(t) => s.with_bound(t),
        None => s,
    }
}

#[derive(Serialize)]
struct SliceSample {
    lambda: f64,
    point: [f64; 3],
    g: Sym3,
    k: Sym3,
    h: f64,
    m: [f64; 3],
}

fn slice_samples(scn: &Scenario) -> Result<Vec<SliceSample>, Failure> {
    let slice = scn.slice()?;
    let mut out = Vec::new();
    for &lam in &scn.lambdas {
        let cd = ConformalData::new(slice.clone(), lam, scn.conformal)?;
        for x in &scn.points {
            let r = constraint_residual(&|y| cd.g(y), &|y| cd.k(y), x, lam / scn.eta)?;
            out.push(SliceSample { lambda: lam, point: *x, g: cd.g(x)?, k: cd.k(x)?, h: r.h, m: r.m });
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let out = cli.out;
    match cli.command {
        Command::VerifyIdentities { samples, rng } => {
            if samples == 0 {
                return Err(Failure::Config("samples must be positive".into()));
            }
            let checks = identity_suite(samples, rng)?;
            let mut rep = ScanReport::new(rng);
            for c in &checks {
                rep.series.push(single("identity", &c.name, "max_residual", c.max_residual, Some(c.tolerance)));
            }
            rep.meta.config_hash = output::config_hash(&(samples, rng));
            finish(&rep, &out, "identities")
        }
        Command::Transport { scenario, footpoints, t_end } => {
            let scn = load_scenario(&scenario)?;
            let audits = transport_audit(&scn, footpoints, t_end)?;
            let tol = scn.thresholds.identity * 10.0;
            let mut rep = ScanReport::new(scn.rng_seed);
            for a in &audits {
                let w = format!("u{}", a.phase);
                rep.series.push(single("transport", &w, "pol", a.pol, Some(tol)));
                rep.series.push(single("transport", &w, "l_lbar", a.l_lbar, Some(tol)));
                rep.series.push(single("transport", &w, "energy", a.energy, Some(tol)));
            }
            finish(&stamp(rep, &scn), &out, "transport")
        }
        Command::BuildInitialData { scenario } => {
            let scn = load_scenario(&scenario)?;
            let audit = initial_data_audit(&scn)?;
            let samples = slice_samples(&scn)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("initial_data_slice.json");
            std::fs::write(&path, serde_json::to_string_pretty(&samples).map_err(std::io::Error::other)?)?;
            println!("wrote {}", path.display());
            finish(&stamp(audit.to_report(&scn.thresholds, scn.rng_seed), &scn), &out, "initial_data")
        }
        Command::RicciScan { scenario, ablate } => {
            let mut scn = load_scenario(&scenario)?;
            for s in &ablate {
                match s {
                    Slot::F21 => scn.include.f21 = false,
                    Slot::F22 => scn.include.f22 = false,
                    Slot::F2pm => scn.include.f2pm = false,
                }
            }
            finish(&stamp(ricci_scan(&scn)?, &scn), &out, "ricci_scan")
        }
        Command::ConstraintScan { scenario, ablate } => {
            let mut scn = load_scenario(&scenario)?;
            for u in &ablate {
                match u {
                    Unknown::Phi2 => scn.conformal.phi2 = false,
                    Unknown::X2 => scn.conformal.x2 = false,
                }
            }
            finish(&stamp(constraint_scan(&scn)?, &scn), &out, "constraint_scan")
        }
        Command::WeakLimit { scenario, word, lambda, trig, control } => {
            let scn = load_scenario(&scenario)?;
            let w: HarmonicWord = word.parse()?;
            let lambdas = lambda.unwrap_or_else(|| scn.lambdas.clone());
            let trig = match trig {
                TrigArg::Cos => Trig::Cos,
                TrigArg::Sin => Trig::Sin,
            };
            let mut cases = vec![WeakLimitCase::scenario_word(&scn, &w, trig)?];
            if control {
                cases.push(WeakLimitCase::stationary_control(scn.radius));
            }
            let mut rep = ScanReport::new(scn.rng_seed);
            for c in &cases {
                let r = weak_limit_decay(c, &lambdas)?;
                println!("{}: order {:.4} (r2 {:.4}){}", r.name, r.fit.order, r.fit.r2, if r.stationary { " [stationary]" } else { "" });
                if r.stationary {
                    rep.meta.notes.push(format!("{}: stationary phase, min |grad z| = {:.2e}", r.name, r.min_grad));
                }
                rep.series.push(r.to_series(&scn.thresholds));
            }
            finish(&stamp(rep, &scn), &out, "weak_limit")
        }
        Command::BurnettScan { scenario } => {
            let scn = load_scenario(&scenario)?;
            finish(&stamp(burnett_scan(&scn)?, &scn), &out, "burnett_scan")
        }
        Command::Report { inputs, name } => {
            let mut merged = ScanReport::default();
            for (i, p) in inputs.iter().enumerate() {
                let r = output::read_report(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                if i == 0 {
                    merged.meta = r.meta.clone();
                    merged.meta.notes.clear();
                } else if r.meta.schema != merged.meta.schema {
                    return Err(Failure::Config(format!("{}: schema {} differs", p.display(), r.meta.schema)));
                }
                merged.merge(r);
            }
            finish(&merged, &out, &name)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(1)
        }
    }
}
