use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kserver::bits::BitStream;
use kserver::harness::{self, ExperimentConfig, Format, GeneratorSpec, HarnessError, Instance, Mode};

#[derive(Parser)]
#[command(name = "kserver", about = "Randomized k-server experiments on trees and finite metrics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a pipeline and write ledger and summary.
    Run(Opts),
    /// Write the request trace only.
    Generate(Opts),
    /// Exact offline optimum of a trace.
    Opt(Opts),
    /// Run with every per-step check enabled.
    Audit(Opts),
}

#[derive(Args)]
struct Opts {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    tau: Option<i64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Request trace JSON (`{"initial": [...], "requests": [...]}`).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    audit: bool,
    #[arg(long, default_value = "csv")]
    format: Format,
}

impl Opts {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if self.m.is_some() {
            c.m = self.m;
        }
        if self.tau.is_some() {
            c.tau = self.tau;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(p) = &self.trace {
            c.generator = GeneratorSpec::File { path: p.display().to_string() };
        }
        c.audit |= self.audit;
        Ok(c)
    }
}

fn write_json(path: &std::path::Path, v: &impl serde::Serialize) -> Result<(), HarnessError> {
    let dir = path.parent().unwrap_or(std::path::Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    std::fs::write(path, serde_json::to_string_pretty(v).expect("serializable") + "\n").map_err(|e| HarnessError::Io(e.to_string()))
}

fn execute(cmd: Cmd) -> Result<usize, HarnessError> {
    match cmd {
        Cmd::Run(o) | Cmd::Audit(o) => {
            let c = o.config()?;
            let out = harness::run(&c)?;
            out.write(&o.out, o.format)?;
            let s = &out.summary;
            println!("{}", serde_json::to_string(&serde_json::json!({
                "mode": s.mode, "steps": s.steps, "cost": kserver::rat::fmt(&s.cost),
                "opt": s.opt, "ratio": s.ratio, "bits": s.bits.total, "violations": s.violations,
            })).expect("serializable"));
            for v in &s.violation_log {
                eprintln!("violation: {v}");
            }
            Ok(s.violations)
        }
        Cmd::Generate(o) => {
            let t = harness::generate(&o.config()?)?;
            write_json(&o.out.join("trace.json"), &t)?;
            println!("{} requests written to {}", t.len(), o.out.join("trace.json").display());
            Ok(0)
        }
        Cmd::Opt(o) => {
            let c = o.config()?;
            let t = harness::generate(&c)?;
            let inst = Instance::build(&c, &mut BitStream::new(c.seed))?;
            let opt = harness::optimum(&inst, &t, usize::MAX)?.expect("no limit");
            println!("{}", serde_json::json!({ "steps": t.len(), "opt": kserver::rat::fmt(&opt) }));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.cmd {
        Cmd::Audit(mut o) => {
            o.audit = true;
            Cmd::Audit(o)
        }
        c => c,
    };
    match execute(cmd) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_violation() { 2 } else { 1 })
        }
    }
}
