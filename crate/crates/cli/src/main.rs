use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use simbarrier::corpus;
use simbarrier::document::{load_problem, BarrierDocument, Loaded, ReportDocument, VerifyDocument};
use simbarrier::engine::{self, RunConfig, Status};
use simbarrier::verify::{self, Verdict};

#[derive(Parser)]
#[command(name = "simbarrier", version, about = "Barrier certificates from simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a barrier for a problem document.
    Synth {
        problem: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Check given barrier coefficients against a problem.
    Verify {
        problem: PathBuf,
        #[arg(long)]
        barrier: PathBuf,
        #[arg(long)]
        min_box_width: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every problem document in a directory and print a table.
    Bench {
        dir: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Emit benchmark problem documents.
    Gen {
        /// Scalable family member of dimension 2l+1.
        #[arg(long, conflicts_with = "corpus")]
        scalable: Option<usize>,
        /// Write every bundled benchmark into this directory.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunOpts {
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    bloat: Option<f64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_verify: bool,
    #[arg(long)]
    delta_min: Option<f64>,
    #[arg(long)]
    min_box_width: Option<f64>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl RunOpts {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), Failure> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(v) if !(v.is_finite() && v > 0.0) => Err(Failure::usage(format!("--{name} must be positive"))),
            _ => Ok(v),
        };
        if let Some(v) = positive("sigma", self.sigma)? {
            cfg.sigma = v;
        }
        if let Some(v) = self.bloat {
            if !(v.is_finite() && v >= 1.0) {
                return Err(Failure::usage("--bloat must be at least 1"));
            }
            cfg.bloat = v;
        }
        if let Some(v) = self.starts {
            if v == 0 {
                return Err(Failure::usage("--starts must be at least 1"));
            }
            cfg.starts = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = positive("delta-min", self.delta_min)? {
            cfg.delta_min = v;
        }
        if let Some(v) = positive("min-box-width", self.min_box_width)? {
            cfg.verifier.min_width = v;
        }
        if self.no_verify {
            cfg.verify = false;
        }
        Ok(())
    }
}

/// Exit code 2 with a message.
struct Failure(String);

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure(msg.into())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    load_problem(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn emit(text: &str, to: Option<&Path>) -> Result<(), Failure> {
    match to {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| Failure(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn success(status: Status, verdict: Option<&Verdict>) -> bool {
    status == Status::BarrierFound && verdict.is_none_or(Verdict::is_verified)
}

fn synth(path: &Path, opts: &RunOpts) -> Result<ExitCode, Failure> {
    let loaded = load(path)?;
    let mut cfg = loaded.run;
    opts.apply(&mut cfg)?;
    let report = engine::run(&loaded.problem, &loaded.template, &cfg)
        .map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let doc = ReportDocument::new(&loaded.problem, &loaded.template, &cfg, &report);
    emit(&doc.to_json(), opts.report.as_deref())?;
    eprintln!(
        "{}: {:?} after {} iterations ({} segments, {:.2} s)",
        loaded.problem.name, report.status, report.iterations, report.segments, report.timings.total
    );
    let ok = success(report.status, doc.verdict.as_ref());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn verify_only(problem: &Path, barrier: &Path, min_width: Option<f64>, out: Option<&Path>) -> Result<ExitCode, Failure> {
    let loaded = load(problem)?;
    let doc = BarrierDocument::from_json(&read(barrier)?).map_err(|e| Failure(format!("{}: {e}", barrier.display())))?;
    let (t, p) = doc
        .params(&loaded.problem)
        .map_err(|e| Failure(format!("{}: {e}", barrier.display())))?;
    let mut cfg = loaded.run.verifier;
    if let Some(w) = min_width {
        if !(w.is_finite() && w > 0.0) {
            return Err(Failure::usage("--min-box-width must be positive"));
        }
        cfg.min_width = w;
    }
    let report = verify::verify(&loaded.problem, &t, &p, &cfg);
    emit(&VerifyDocument::new(&loaded.problem, &report).to_json(), out)?;
    eprintln!("{}: {:?} ({:.2} s)", loaded.problem.name, report.verdict, report.seconds);
    Ok(if report.verdict.is_verified() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn bench(dir: &Path, opts: &RunOpts) -> Result<ExitCode, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let loaded: Vec<(PathBuf, Loaded)> = files
        .into_iter()
        .map(|f| load(&f).map(|l| (f, l)))
        .collect::<Result<_, _>>()?;

    println!(
        "{:<14} {:>3} {:>5} {:>5} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}  {:<15} verdict",
        "problem", "dim", "k", "iter", "segs", "sim", "cand", "ce", "verif", "total", "status"
    );
    let mut all_ok = true;
    let mut reports = Vec::new();
    for (file, l) in &loaded {
        let mut cfg = l.run;
        opts.apply(&mut cfg)?;
        let r = engine::run(&l.problem, &l.template, &cfg).map_err(|e| Failure(format!("{}: {e}", file.display())))?;
        let doc = ReportDocument::new(&l.problem, &l.template, &cfg, &r);
        let verdict = match &doc.verdict {
            None => "-".to_string(),
            Some(Verdict::Verified) => "verified".into(),
            Some(Verdict::Refuted { condition, .. }) => format!("refuted ({condition:?})"),
            Some(Verdict::Unknown { condition, .. }) => format!("unknown ({condition:?})"),
        };
        let t = r.timings;
        println!(
            "{:<14} {:>3} {:>5} {:>5} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}  {:<15} {}",
            l.problem.name,
            l.problem.n(),
            l.template.param_count(),
            r.iterations,
            r.segments,
            t.simulation,
            t.candidate,
            t.counterexample,
            t.verification,
            t.total,
            format!("{:?}", r.status),
            verdict
        );
        all_ok &= success(r.status, doc.verdict.as_ref());
        reports.push(doc);
    }
    if let Some(path) = &opts.report {
        let text = serde_json::to_string_pretty(&json!({
            "schema": "simbarrier/bench/1",
            "reports": reports,
        }))
        .expect("reports serialize");
        emit(&text, Some(path))?;
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn gen(scalable: Option<usize>, dir: Option<&Path>) -> Result<ExitCode, Failure> {
    match (scalable, dir) {
        (Some(0), _) => Err(Failure::usage("--scalable needs l >= 1")),
        (Some(l), _) => {
            println!("{}", corpus::scalable(l).to_json());
            Ok(ExitCode::SUCCESS)
        }
        (None, Some(dir)) => {
            fs::create_dir_all(dir).map_err(|e| Failure(format!("{}: {e}", dir.display())))?;
            for (name, doc) in corpus::all() {
                emit(&doc.to_json(), Some(&dir.join(name)))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        (None, None) => Err(Failure::usage("gen: pass --scalable <l> or --corpus <dir>")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Synth { problem, opts } => synth(problem, opts),
        Command::Verify {
            problem,
            barrier,
            min_box_width,
            report,
        } => verify_only(problem, barrier, *min_box_width, report.as_deref()),
        Command::Bench { dir, opts } => bench(dir, opts),
        Command::Gen { scalable, corpus } => gen(*scalable, corpus.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
