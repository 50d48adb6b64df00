//! Subcommand implementations.

use crate::config::{GridSpec, RunConfig, SolverSettings};
use crate::error::{CliError, CliResult};
use crate::output::{
    load_solution, to_json, write_atomic, write_solution, SolveConfig, SolveRecord,
};
use infogame::dualcheck::{run_dualcheck, DualCheckReport};
use infogame::model::{GameModel, ModelConfig};
use infogame::oracle::{classical_backward, one_sided_recursion, OneSidedValue, TreeGame};
use infogame::simplex::SimplexGrid;
use infogame::simulator::{
    feedback_from_field, parse_simplex, payoff_pq, preset_strategy, rationals_to_f64, step_count,
    Estimate, NoiseKind, PureStrategy, RandomStrategy, Side, SimConfig, StrategyProfile,
};
use infogame::solver::solve;
use infogame::transform::{cav_q, vex_p};
use infogame::GameError;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

fn emit(out: Option<&Path>, json: &str) -> CliResult<()> {
    match out {
        Some(path) => write_atomic(path, json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn parse_vector(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("cannot parse {v:?} as a number")))
        })
        .collect()
}

pub fn run_solve(config: &Path, overrides: &SolverSettings, out: &Path) -> CliResult<SolveRecord> {
    let cfg = RunConfig::load(config)?;
    let model = cfg.build_model()?;
    let grid = GridSpec::resolve(&model, &cfg.solver.merged(overrides))?;
    let grids = grid.grids(&model)?;
    let start = Instant::now();
    let sol = solve(&model, &grids, grid.dt, grid.t0)?;
    let record = SolveRecord {
        command: "solve".into(),
        config: SolveConfig {
            model: cfg.model.clone(),
            grid,
        },
        input_sha256: cfg.input_sha256.clone(),
        boundary_policy: grids.state.boundary_policy().into(),
        diagnostics: sol.diagnostics.clone(),
        slices: vec![],
    };
    let record = write_solution(out, record, &sol)?;
    let d = &sol.diagnostics;
    eprintln!(
        "solved {} nodes x {} steps (dt = {}, cfl = {:.3}) in {:.3}s; projection residual {:.3e}, isaacs gap {:.3e}",
        grids.len(),
        d.steps,
        d.dt,
        d.cfl_number,
        start.elapsed().as_secs_f64(),
        d.max_projection_residual,
        d.isaacs_gap
    );
    Ok(record)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NoiseArg {
    Gaussian,
    Rademacher,
}

impl From<NoiseArg> for NoiseKind {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Gaussian => NoiseKind::Gaussian,
            NoiseArg::Rademacher => NoiseKind::Rademacher,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulateOptions {
    pub config: PathBuf,
    pub p: Option<String>,
    pub q: Option<String>,
    pub samples: usize,
    pub seed: Option<u64>,
    pub h: Option<f64>,
    pub delta: Option<f64>,
    pub strategy: String,
    pub strategy_ii: Option<String>,
    pub x0: Option<String>,
    pub noise: NoiseArg,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    model: &'a ModelConfig,
    p: Vec<String>,
    q: Vec<String>,
    samples: usize,
    seed: u64,
    h: f64,
    delta: f64,
    x0: Vec<f64>,
    noise: NoiseArg,
    strategy: &'a str,
    strategy_ii: &'a str,
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    command: &'static str,
    config: SimulateConfig<'a>,
    input_sha256: &'a str,
    estimate: f64,
    stderr: f64,
    per_type_breakdown: Vec<Vec<Estimate>>,
}

fn uniform_prior(k: usize) -> String {
    vec![format!("1/{k}"); k].join(",")
}

fn side_strategies(
    spec: &str,
    model: &Arc<GameModel>,
    side: Side,
    delay: usize,
    p0: &[f64],
    q0: &[f64],
) -> CliResult<Vec<RandomStrategy>> {
    let count = match side {
        Side::First => model.i_count(),
        Side::Second => model.j_count(),
    };
    let same = |s: PureStrategy| vec![RandomStrategy::pure(s); count];
    if spec == "constant" {
        return Ok(same(preset_strategy(model, "constant", side, delay)?));
    }
    if let Some(k) = spec.strip_prefix("constant:") {
        let k: usize = k
            .parse()
            .map_err(|_| CliError::Config(format!("bad control index in {spec:?}")))?;
        let len = if side == Side::First {
            model.u_set().len()
        } else {
            model.v_set().len()
        };
        if k >= len {
            return Err(CliError::Config(format!(
                "control index {k} is out of range (set has {len})"
            )));
        }
        return Ok(same(PureStrategy::constant(side, delay, k)?));
    }
    if let Some(name) = spec.strip_prefix("preset:") {
        return Ok(same(preset_strategy(model, name, side, delay)?));
    }
    if let Some(dir) = spec.strip_prefix("feedback:") {
        let loaded = load_solution(Path::new(dir))?;
        if loaded.record.config.model != *model.config() {
            return Err(CliError::Config(format!(
                "solution in {dir} was computed for a different model"
            )));
        }
        let (alpha, beta) = feedback_from_field(model, &Arc::new(loaded.solution), p0, q0, delay)?;
        return Ok(if side == Side::First { alpha } else { beta });
    }
    Err(CliError::Config(format!(
        "unknown strategy {spec:?}; use constant, constant:<k>, preset:<name> or feedback:<dir>"
    )))
}

pub fn run_simulate(o: &SimulateOptions) -> CliResult<()> {
    let cfg = RunConfig::load(&o.config)?;
    let model = Arc::new(cfg.build_model()?);
    if o.samples == 0 {
        return Err(CliError::Config("--samples must be at least 1".into()));
    }
    let h = o.h.unwrap_or(model.horizon() / 100.0);
    step_count(model.horizon(), h)?;
    let delta = o.delta.unwrap_or(h);
    let ratio = delta / h;
    let delay = ratio.round();
    if delay < 1.0 || (ratio - delay).abs() > 1e-9 * delay {
        return Err(CliError::Config(format!(
            "delta = {delta} is not a positive multiple of h = {h}"
        )));
    }
    let delay = delay as usize;
    let p_text =
        o.p.clone()
            .unwrap_or_else(|| uniform_prior(model.i_count()));
    let q_text =
        o.q.clone()
            .unwrap_or_else(|| uniform_prior(model.j_count()));
    let (p_exact, q_exact) = (parse_simplex(&p_text)?, parse_simplex(&q_text)?);
    let (p, q) = (rationals_to_f64(&p_exact), rationals_to_f64(&q_exact));
    let x0 = match &o.x0 {
        Some(s) => parse_vector(s)?,
        None => vec![0.0; model.state_dim()],
    };
    let seed = o.seed.or(cfg.seed).unwrap_or(0);
    let spec_ii = o.strategy_ii.clone().unwrap_or_else(|| o.strategy.clone());
    let alpha = side_strategies(&o.strategy, &model, Side::First, delay, &p, &q)?;
    let beta = side_strategies(&spec_ii, &model, Side::Second, delay, &p, &q)?;
    let profile = StrategyProfile::new(&model, alpha, beta)?;
    let sim = SimConfig {
        h,
        x0: x0.clone(),
        samples: o.samples,
        seed,
        noise: o.noise.into(),
    };
    let start = Instant::now();
    let report = payoff_pq(&model, &p, &q, &profile, &sim)?;
    eprintln!(
        "simulated {} paths in {:.3}s",
        o.samples,
        start.elapsed().as_secs_f64()
    );
    let out = SimulateReport {
        command: "simulate",
        config: SimulateConfig {
            model: &cfg.model,
            p: p_exact.iter().map(|r| r.to_string()).collect(),
            q: q_exact.iter().map(|r| r.to_string()).collect(),
            samples: o.samples,
            seed,
            h,
            delta,
            x0,
            noise: o.noise,
            strategy: &o.strategy,
            strategy_ii: &spec_ii,
        },
        input_sha256: &cfg.input_sha256,
        estimate: report.estimate,
        stderr: report.stderr,
        per_type_breakdown: report.per_type,
    };
    emit(o.out.as_deref(), &to_json(&out))
}

#[derive(Serialize)]
struct CheckOutput<'a> {
    command: &'static str,
    config: &'a SolveConfig,
    input_sha256: &'a str,
    passed: bool,
    #[serde(flatten)]
    report: &'a DualCheckReport,
}

pub fn run_check(dir: &Path, tol: Option<f64>, out: Option<&Path>) -> CliResult<DualCheckReport> {
    let loaded = load_solution(dir)?;
    let report = run_dualcheck(&loaded.model, &loaded.solution, tol)?;
    let json = to_json(&CheckOutput {
        command: "check",
        config: &loaded.record.config,
        input_sha256: &loaded.record.input_sha256,
        passed: report.passed(),
        report: &report,
    });
    let target = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("check.json"));
    write_atomic(&target, json.as_bytes())?;
    print!("{json}");
    if !report.passed() {
        return Err(CliError::CheckFailed(format!(
            "dual residuals outside tolerance {}: super {}, sub {}, {} disagreements",
            report.tolerance,
            report.supersolution_residual,
            report.subsolution_residual,
            report.crosscheck_disagreements
        )));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EnvelopeMode {
    /// Lower convex envelope.
    Vex,
    /// Upper concave envelope.
    Cav,
}

/// Reads `p_1, …, p_I, w` rows on a simplex lattice and writes the same rows
/// with an `envelope` column appended, in lattice order.
pub fn run_convexify(input: &Path, out: &Path, mode: EnvelopeMode) -> CliResult<()> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", input.display()));
    let mut rdr = csv::Reader::from_path(input).map_err(|e| bad(e.to_string()))?;
    let width = rdr.headers().map_err(|e| bad(e.to_string()))?.len();
    if width < 2 {
        return Err(bad("need columns p_1..p_I and a value column".into()));
    }
    let dim = width - 1;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number {s:?}")))
            })
            .collect::<CliResult<_>>()?;
        rows.push(nums);
    }
    let resolution = if dim == 1 {
        1
    } else {
        SimplexGrid::resolution_for_count(dim, rows.len()).ok_or_else(|| {
            bad(format!(
                "{} rows do not form a simplex lattice in dimension {dim}",
                rows.len()
            ))
        })?
    };
    let grid = SimplexGrid::new(dim, resolution)?;
    let mut w = vec![f64::NAN; grid.len()];
    for r in &rows {
        let idx = grid
            .locate(&r[..dim])
            .ok_or_else(|| bad(format!("point {:?} is not on the lattice", &r[..dim])))?;
        if !w[idx].is_nan() {
            return Err(bad(format!("point {:?} appears twice", &r[..dim])));
        }
        if !r[dim].is_finite() {
            return Err(GameError::NonFinite {
                value: r[dim],
                location: format!("p = {:?}", &r[..dim]),
            }
            .into());
        }
        w[idx] = r[dim];
    }
    let env = match mode {
        EnvelopeMode::Vex => vex_p(&grid, &w),
        EnvelopeMode::Cav => cav_q(&grid, &w),
    };
    let mut text = (1..=dim)
        .map(|i| format!("p_{i}"))
        .collect::<Vec<_>>()
        .join(",");
    text.push_str(",w,envelope\n");
    for k in 0..grid.len() {
        for v in grid.point(k) {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{},{}\n", w[k], env[k]));
    }
    write_atomic(out, text.as_bytes())?;
    let gap = w
        .iter()
        .zip(&env)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    eprintln!(
        "{} lattice points (resolution {resolution}); largest |w - envelope| = {gap}",
        grid.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct OracleConfig<'a> {
    model: &'a ModelConfig,
    h: f64,
    steps: usize,
    pgrid: usize,
    x0: Vec<f64>,
}

#[derive(Serialize)]
struct OracleReport<'a> {
    command: &'static str,
    config: OracleConfig<'a>,
    input_sha256: &'a str,
    /// Classical values per payoff pair `(g_ij, ℓ_ij)`.
    classical: Vec<Vec<f64>>,
    /// One-sided recursion on the `p` lattice (only for `J = 1`).
    one_sided: Option<OneSidedValue>,
}

pub fn run_oracle(
    config: &Path,
    steps: Option<usize>,
    h: Option<f64>,
    pgrid: usize,
    x0: Option<&str>,
    out: Option<&Path>,
) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let model = cfg.build_model()?;
    let h = match (h, steps) {
        (Some(h), _) => h,
        (None, Some(k)) if k > 0 => model.horizon() / k as f64,
        _ => return Err(CliError::Config("give --h or a positive --steps".into())),
    };
    let k = step_count(model.horizon(), h)?;
    if steps.is_some_and(|s| s != k) {
        return Err(CliError::Config(format!(
            "--steps {} does not match T / h = {k}",
            steps.unwrap_or(0)
        )));
    }
    let x0 = match x0 {
        Some(s) => parse_vector(s)?,
        None => vec![0.0; model.state_dim()],
    };
    let tree = TreeGame::new(&model, h, &x0)?;
    let classical = (0..model.i_count())
        .map(|i| {
            (0..model.j_count())
                .map(|j| classical_backward(&tree, i, j))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let one_sided = if model.j_count() == 1 {
        Some(one_sided_recursion(&tree, pgrid)?)
    } else {
        None
    };
    let report = OracleReport {
        command: "oracle",
        config: OracleConfig {
            model: &cfg.model,
            h,
            steps: k,
            pgrid,
            x0,
        },
        input_sha256: &cfg.input_sha256,
        classical,
        one_sided,
    };
    emit(out, &to_json(&report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_and_priors() {
        assert_eq!(parse_vector("1, -0.5").unwrap(), vec![1.0, -0.5]);
        assert!(parse_vector("a").is_err());
        assert_eq!(uniform_prior(3), "1/3,1/3,1/3");
        assert!(parse_simplex(&uniform_prior(3)).is_ok());
    }

    #[test]
    fn convexify_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("w.csv");
        std::fs::write(
            &input,
            "p_1,p_2,w\n1,0,1\n0.75,0.25,0.2\n0.5,0.5,0.6\n0.25,0.75,0.1\n0,1,1\n",
        )
        .unwrap();
        let out = dir.path().join("env.csv");
        run_convexify(&input, &out, EnvelopeMode::Vex).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("p_1,p_2,w,envelope\n"));
        assert!(text.contains("0.5,0.5,0.6,0.15"));
        std::fs::write(&input, "p_1,p_2,w\n1,0,1\n0.3,0.7,2\n").unwrap();
        assert!(run_convexify(&input, &out, EnvelopeMode::Vex).is_err());
    }
}
