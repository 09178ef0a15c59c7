//! Command-line front end: one-shot solves, closed-loop runs, gait
//! inspection and benchmark sweeps written as CSV.

pub mod bench;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use biconmp::admm::AdmmSolver;
use biconmp::gait::{make_cyclic_plan, PlanRequest};
use biconmp::scenario::{PlanningContext, Scenario};
use biconmp::sim::run_closed_loop;
use clap::{Parser, ValueEnum};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Solve,
    Mpc,
    Gait,
    BenchKnots,
    BenchFreq,
    BenchPush,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "biconmp", version, about = "Bi-convex centroidal MPC for legged robots")]
pub struct Args {
    /// Scenario JSON file, or a preset name (hover, stand, trot, jump, bound).
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "solve")]
    pub mode: Mode,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eps_dyn: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub replan_hz: Option<f64>,
    /// Freeze simulated time while the planner runs.
    #[arg(long)]
    pub sequential: bool,
    /// Random starts per knot count in bench-knots.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
}

/// Everything a command needs, resolved and checked.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub out: PathBuf,
    pub seed: u64,
    pub mode: Mode,
    pub runs: usize,
    pub trace: bool,
    /// Whether `--eps-dyn` was given explicitly.
    pub eps_overridden: bool,
}

impl RunManifest {
    pub fn from_args(args: &Args) -> anyhow::Result<Self> {
        let mut scenario = load_scenario(&args.scenario)?;
        if let Some(rho) = args.rho {
            scenario.admm.rho = rho;
        }
        if let Some(eps) = args.eps_dyn {
            scenario.admm.eps_dyn = eps;
        }
        if let Some(n) = args.max_iter {
            scenario.admm.max_iter = n;
        }
        if let Some(hz) = args.replan_hz {
            scenario.mpc.replan_hz = hz;
        }
        if args.sequential {
            scenario.mpc.sequential = true;
        }
        scenario.validate()?;
        fs::create_dir_all(&args.out)?;
        let probe = args.out.join(".write-probe");
        File::create(&probe)?;
        fs::remove_file(&probe)?;
        Ok(Self {
            scenario,
            out: args.out.clone(),
            seed: args.seed,
            mode: args.mode,
            runs: args.runs,
            trace: std::env::var("BICONMP_TRACE").is_ok_and(|v| v == "1"),
            eps_overridden: args.eps_dyn.is_some(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Scenario for the MPC cost and push studies.
    fn study_scenario(&self) -> Scenario {
        let mut s = self.scenario.clone();
        if !self.eps_overridden {
            s.admm.eps_dyn = bench::STUDY_EPS_DYN;
        }
        s.mpc.sequential = true;
        s
    }
}

pub fn load_scenario(arg: &str) -> anyhow::Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path)?;
        return Scenario::from_json(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()));
    }
    Scenario::preset(arg).ok_or_else(|| anyhow::anyhow!("scenario `{arg}` is neither a file nor a preset"))
}

/// Parse, run, report. Returns the process exit code.
pub fn run(args: &Args) -> i32 {
    let manifest = match RunManifest::from_args(args) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let result = match manifest.mode {
        Mode::Solve => cmd_solve(&manifest),
        Mode::Mpc => cmd_mpc(&manifest),
        Mode::Gait => cmd_gait(&manifest),
        Mode::BenchKnots => cmd_bench_knots(&manifest),
        Mode::BenchFreq => cmd_bench_freq(&manifest),
        Mode::BenchPush => cmd_bench_push(&manifest),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    })
}

fn csv_row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn cmd_solve(m: &RunManifest) -> anyhow::Result<i32> {
    let s = &m.scenario;
    let ctx = PlanningContext {
        v_des: s.nominal.v_des,
        ..PlanningContext::at_rest(s.initial_state())
    };
    let spec = s.problem(&ctx)?;
    let start = Instant::now();
    let res = AdmmSolver::new().solve(&spec, None, &s.admm)?;
    let wall_us = start.elapsed().as_secs_f64() * 1e6;

    let mut w = BufWriter::new(File::create(m.path("trajectory.csv"))?);
    let mut header = String::from("knot,t,cx,cy,cz,vx,vy,vz,kx,ky,kz");
    for j in 0..spec.n_eff() {
        write!(header, ",f{j}x,f{j}y,f{j}z")?;
    }
    writeln!(w, "{header}")?;
    for (t, knot) in res.x.knots.iter().enumerate() {
        let mut vals = vec![t as f64, t as f64 * spec.dt()];
        vals.extend(knot.as_array());
        for j in 0..spec.n_eff() {
            let f = if t < spec.horizon() { res.f.get(t, j) } else { Default::default() };
            vals.extend(f.iter().copied());
        }
        writeln!(w, "{}", csv_row(vals))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(m.path("trace.jsonl"))?);
    for rec in &res.trace {
        let line = serde_json::to_string(rec)?;
        writeln!(w, "{line}")?;
        if m.trace {
            eprintln!("{line}");
        }
    }
    w.flush()?;

    let summary = json!({
        "converged": res.converged,
        "iterations": res.iterations,
        "violation": res.violation(),
        "objective": res.objective,
        "wall_us": wall_us,
        "horizon": spec.horizon(),
    });
    fs::write(m.path("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(if res.converged { EXIT_OK } else { EXIT_MAX_ITER })
}

pub fn cmd_mpc(m: &RunManifest) -> anyhow::Result<i32> {
    let log = run_closed_loop(&m.scenario)?;
    log.write_csv(BufWriter::new(File::create(m.path("mpc.csv"))?))?;
    let summary = log.summary()?;
    let mut doc = serde_json::to_value(&summary)?;
    doc["max_box_excursion"] = json!(log.max_box_excursion);
    doc["exhausted_ticks"] = json!(log.exhausted_ticks);
    fs::write(m.path("summary.json"), serde_json::to_string_pretty(&doc)?)?;
    if m.trace {
        let mut w = BufWriter::new(File::create(m.path("replans.jsonl"))?);
        for r in &log.replans {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        w.flush()?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_gait(m: &RunManifest) -> anyhow::Result<i32> {
    let s = &m.scenario;
    let gait = s.gait_params()?;
    let x0 = s.initial_state();
    let horizon = s.mpc.horizon(&gait);
    let plan = make_cyclic_plan(
        &gait,
        &PlanRequest {
            hips: &s.effectors,
            t_elapsed: 0.0,
            com: x0.c,
            v_actual: x0.cdot,
            v_des: s.nominal.v_des,
            raibert_gain: s.raibert_gain,
            current_footholds: None,
            horizon: Some(horizon),
        },
    )?;
    let mut w = BufWriter::new(File::create(m.path("gait.csv"))?);
    let mut header = String::from("step,t");
    for j in 0..gait.n_eff() {
        write!(header, ",c{j},p{j}x,p{j}y,p{j}z")?;
    }
    writeln!(w, "{header}")?;
    for t in 0..plan.horizon {
        let mut vals = vec![t as f64, t as f64 * gait.dt];
        for j in 0..gait.n_eff() {
            vals.push(if plan.is_active(t, j) { 1.0 } else { 0.0 });
            vals.extend(plan.positions[t][j].iter().copied());
        }
        writeln!(w, "{}", csv_row(vals))?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

pub fn cmd_bench_knots(m: &RunManifest) -> anyhow::Result<i32> {
    let rows = bench::bench_knots(&m.scenario, &bench::KNOT_COUNTS, m.runs, m.seed)?;
    let mut w = BufWriter::new(File::create(m.path("bench_knots.csv"))?);
    writeln!(w, "{}", bench::perturbation_note())?;
    writeln!(w, "# seed: {}, runs per row: {}", m.seed, m.runs)?;
    writeln!(w, "knots,mean_us,std_us,mean_violation,converged")?;
    for r in &rows {
        writeln!(w, "{},{},{},{},{}", r.knots, r.mean_us, r.std_us, r.mean_violation, r.converged)?;
    }
    w.flush()?;
    let x: Vec<f64> = rows.iter().map(|r| r.knots as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_us).collect();
    let (slope, intercept, r2) = bench::linear_fit(&x, &y);
    eprintln!("fit: {slope:.1} us/knot + {intercept:.1} us, r2 {r2:.4}");
    Ok(EXIT_OK)
}

pub fn cmd_bench_freq(m: &RunManifest) -> anyhow::Result<i32> {
    let rows = bench::bench_freq(&m.study_scenario(), &bench::FREQS);
    let mut w = BufWriter::new(File::create(m.path("bench_freq.csv"))?);
    writeln!(w, "replan_hz,mean_cost,tracking_error,mean_violation,failed_replans")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.replan_hz, r.mean_cost, r.tracking_error, r.mean_violation, r.failed_replans
        )?;
    }
    w.flush()?;
    Ok(if rows.iter().all(|r| r.mean_cost.is_nan()) { EXIT_ERROR } else { EXIT_OK })
}

pub fn cmd_bench_push(m: &RunManifest) -> anyhow::Result<i32> {
    let rows = bench::bench_push(&m.study_scenario(), &bench::PUSH_FREQS);
    let mut w = BufWriter::new(File::create(m.path("bench_push.csv"))?);
    writeln!(w, "replan_hz,max_push_n")?;
    for r in &rows {
        writeln!(w, "{},{}", r.replan_hz, r.max_push)?;
    }
    w.flush()?;
    Ok(if rows.iter().all(|r| r.max_push.is_nan()) { EXIT_ERROR } else { EXIT_OK })
}
