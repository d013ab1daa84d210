use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use trades_core::game::OracleSolution;
use trades_core::grid::{evaluate_voltages, write_price_csv, CaseStudy, GridUnits};
use trades_core::trades::{
    self, baseline_diminishing, fit_rate, random_profile, RateFit, StopReason, Verdict,
};
use trades_core::{
    solve_ne_oracle, validate_assumptions, IterationTrace, OracleOptions, RunOutcome, StepSchedule,
    TradesConfig,
};

use crate::config::{ExperimentConfig, Scenario};
use crate::output::{create_dir, write_atomic, write_json};
use crate::scenario::{assemble, summarize_graph, Assembled, GraphSummary, Instance, Seeds};
use crate::{CliError, EXIT_FAIL, EXIT_OK};

const ORACLE_MAX_ITER: usize = 200_000;
const VALIDATE_SAMPLES: usize = 200;
const MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub seeds: Seeds,
    pub graph: GraphSummary,
    pub oracle: Option<OracleSolution>,
    pub trades: trades_core::ConvergenceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub units: Option<GridUnits>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case_study: Option<CaseSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub schedule: StepSchedule,
    pub steps: usize,
    pub final_err_x: Option<f64>,
    pub final_step_norm: f64,
    pub fit: RateFit,
}

/// Voltage deviations `|v - v0 - sigma_ref|_H^2` for the base case `x = 0`,
/// the equilibrium, and the last TRADES iterate, plus the estimate-error
/// decay.
#[derive(Debug, Clone, Serialize)]
pub struct CaseSummary {
    pub base_deviation: f64,
    pub ne_deviation: f64,
    pub final_deviation: f64,
    /// `ne_deviation < base_deviation`.
    pub improves_on_base: bool,
    pub est_err_peak: f64,
    pub est_err_final: f64,
    /// `log10(peak / final)`.
    pub est_err_decades: f64,
}

pub struct CaseArtifacts {
    pub case: CaseStudy,
    pub summary: CaseSummary,
    pub v_base: DVector<f64>,
    pub v_ne: DVector<f64>,
    pub v_final: DVector<f64>,
}

pub struct RunArtifacts {
    pub outcome: RunOutcome,
    pub report: RunReport,
    pub baseline_trace: Option<IterationTrace>,
    pub case: Option<CaseArtifacts>,
}

impl RunArtifacts {
    pub fn passed(&self) -> bool {
        self.report.trades.verdict == Verdict::Pass
    }
}

fn oracle(cfg: &ExperimentConfig, asm: &Assembled) -> Result<Option<OracleSolution>, CliError> {
    if !cfg.oracle {
        return Ok(None);
    }
    let opts = OracleOptions {
        gamma: None,
        tol: cfg.oracle_tol,
        max_iter: ORACLE_MAX_ITER,
    };
    Ok(Some(solve_ne_oracle(asm.game(), &opts)?))
}

/// Assembles the scenario and runs TRADES (plus the oracle and baseline when
/// enabled) without touching the filesystem.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts, CliError> {
    cfg.validate()?;
    let asm = assemble(cfg)?;
    let graph = summarize_graph(cfg, &asm.graph)?;
    let oracle = oracle(cfg, &asm)?;
    let x_star = oracle.as_ref().map(|o| &o.x);
    let x0 = random_profile(asm.game(), cfg.trades.seed);
    let outcome = trades::run(asm.game(), &asm.graph, &cfg.trades, &x0, x_star)?;

    let (baseline_trace, baseline) = if cfg.baseline.enabled {
        let b = &cfg.baseline;
        let trace = baseline_diminishing(
            asm.game(),
            &asm.graph,
            &b.schedule,
            &x0,
            b.steps,
            cfg.trades.trace_stride,
            x_star,
        )?;
        let series = if trace.has_errors() {
            &trace.err_x
        } else {
            &trace.step_norm
        };
        let summary = BaselineSummary {
            schedule: b.schedule,
            steps: b.steps,
            final_err_x: trace.has_errors().then(|| *trace.err_x.last().unwrap()),
            final_step_norm: *trace.step_norm.last().unwrap(),
            fit: fit_rate(&trace.t, series),
        };
        (Some(trace), Some(summary))
    } else {
        (None, None)
    };

    let case = match asm.instance {
        Instance::Voltage(case) => Some(case_artifacts(*case, &outcome, x_star)?),
        Instance::Affine(_) => None,
    };
    let report = RunReport {
        scenario: cfg.scenario,
        seeds: Seeds::of(cfg),
        graph,
        oracle,
        trades: outcome.report.clone(),
        units: (cfg.scenario == Scenario::Voltage).then_some(cfg.voltage.units),
        baseline,
        case_study: case.as_ref().map(|c| c.summary.clone()),
    };
    Ok(RunArtifacts {
        outcome,
        report,
        baseline_trace,
        case,
    })
}

fn case_artifacts(
    case: CaseStudy,
    outcome: &RunOutcome,
    x_star: Option<&trades_core::StrategyProfile>,
) -> Result<CaseArtifacts, CliError> {
    let eval = |x: &trades_core::StrategyProfile| {
        evaluate_voltages(&case.model, &case.agents, &case.game_config, x)
    };
    let zero = trades_core::StrategyProfile::zeros(&case.game.dims());
    let base = eval(&zero)?;
    let last = eval(&outcome.state.x)?;
    let ne = match x_star {
        Some(x) => eval(x)?,
        None => last.clone(),
    };
    let est = &outcome.trace.est_err_max;
    let peak = est.iter().copied().fold(0.0, f64::max);
    let final_est = est.last().copied().unwrap_or(f64::NAN);
    let summary = CaseSummary {
        base_deviation: base.deviation,
        ne_deviation: ne.deviation,
        final_deviation: last.deviation,
        improves_on_base: ne.deviation < base.deviation,
        est_err_peak: peak,
        est_err_final: final_est,
        est_err_decades: (peak / final_est).log10(),
    };
    Ok(CaseArtifacts {
        case,
        summary,
        v_base: base.v,
        v_ne: ne.v,
        v_final: last.v,
    })
}

fn write_run_outputs(cfg: &ExperimentConfig, art: &RunArtifacts) -> Result<(), CliError> {
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    write_atomic(dir, "trace.csv", |w| art.outcome.trace.write_csv(w))?;
    if let Some(trace) = &art.baseline_trace {
        write_atomic(dir, "baseline_trace.csv", |w| trace.write_csv(w))?;
    }
    write_json(dir, "report.json", &art.report)?;
    write_atomic(dir, "config.echo", |w| {
        w.write_all(cfg.to_toml().as_bytes())
    })
}

fn print_verdict(report: &trades_core::ConvergenceReport) {
    let verdict = match report.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
    };
    println!(
        "{verdict}: stop = {:?}, iterations = {}, a2 = {:.4e}, R^2 = {:.4}",
        report.stop, report.iterations, report.fit.a2, report.fit.r_squared
    );
    if let Some(e) = report.final_err_x {
        println!("final |x - x*| = {e:.3e}");
    }
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let art = run_experiment(cfg)?;
    write_run_outputs(cfg, &art)?;
    print_verdict(&art.report.trades);
    Ok(if art.passed() { EXIT_OK } else { EXIT_FAIL })
}

/// Same as `run` on the voltage scenario, plus voltage profiles and the
/// generated instance data.
pub fn case_study(cfg: &ExperimentConfig) -> Result<RunArtifacts, CliError> {
    if cfg.scenario != Scenario::Voltage {
        return Err(CliError::Usage(
            "case-study needs scenario = \"voltage\"".into(),
        ));
    }
    run_experiment(cfg)
}

pub fn cmd_case_study(cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let art = case_study(cfg)?;
    write_run_outputs(cfg, &art)?;
    let c = art.case.as_ref().expect("voltage scenario carries a case");
    let dir = &cfg.out_dir;
    let (nb, t) = (c.case.model.n_buses(), c.case.model.horizon);
    write_atomic(dir, "voltages.csv", |w| {
        writeln!(w, "bus,t,v_base,v_ne,v_final")?;
        for b in 0..nb {
            for k in 0..t {
                let i = b * t + k;
                writeln!(w, "{b},{k},{},{},{}", c.v_base[i], c.v_ne[i], c.v_final[i])?;
            }
        }
        Ok(())
    })?;
    write_atomic(dir, "network.csv", |w| c.case.network.write_csv(w))?;
    write_atomic(dir, "prices.csv", |w| {
        write_price_csv(&c.case.game_config.price, w)
    })?;
    write_json(dir, "agents.json", &c.case.agents)?;

    print_verdict(&art.report.trades);
    let s = &c.summary;
    println!(
        "deviation: base {:.4e}, equilibrium {:.4e}; estimate error {:.3e} -> {:.3e} ({:.1} decades)",
        s.base_deviation, s.ne_deviation, s.est_err_peak, s.est_err_final, s.est_err_decades
    );
    Ok(if art.passed() && s.improves_on_base {
        EXIT_OK
    } else {
        EXIT_FAIL
    })
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub gamma: f64,
    pub delta: f64,
    pub converged: bool,
    pub a2: f64,
    /// First logged iteration with error at most `sweep.tol`.
    pub iters: Option<usize>,
    pub stop: StopReason,
    pub trace: IterationTrace,
}

/// Runs every `(gamma, delta)` cell from the same initial profile, in
/// parallel. Cells come back in row-major grid order.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>, CliError> {
    cfg.validate()?;
    cfg.validate_sweep()?;
    let asm = assemble(cfg)?;
    let oracle = oracle(cfg, &asm)?;
    let x_star = oracle.as_ref().map(|o| &o.x);
    let x0 = random_profile(asm.game(), cfg.trades.seed);
    let grid: Vec<(f64, f64)> = cfg
        .sweep
        .gammas
        .iter()
        .flat_map(|&g| cfg.sweep.deltas.iter().map(move |&d| (g, d)))
        .collect();
    grid.par_iter()
        .map(|&(gamma, delta)| {
            let tc = TradesConfig {
                gamma,
                delta,
                ..cfg.trades.clone()
            };
            let out = trades::run(asm.game(), &asm.graph, &tc, &x0, x_star)?;
            let tr = &out.trace;
            let hit = |k: usize| match x_star {
                Some(_) => tr.err_x[k] <= cfg.sweep.tol,
                None => tr.step_norm[k] / delta <= cfg.sweep.tol,
            };
            let iters = (0..tr.len()).find(|&k| hit(k)).map(|k| tr.t[k]);
            Ok(SweepCell {
                gamma,
                delta,
                converged: iters.is_some() && out.report.stop != StopReason::NonFinite,
                a2: out.report.fit.a2,
                iters,
                stop: out.report.stop,
                trace: out.trace,
            })
        })
        .collect()
}

pub fn cell_file_name(gi: usize, di: usize) -> String {
    format!("cell_g{gi:02}_d{di:02}.csv")
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let cells = sweep(cfg)?;
    let dir = &cfg.out_dir;
    let cell_dir = dir.join("cells");
    create_dir(&cell_dir)?;
    let nd = cfg.sweep.deltas.len();
    cells.par_iter().enumerate().try_for_each(|(k, c)| {
        write_atomic(&cell_dir, &cell_file_name(k / nd, k % nd), |w| {
            c.trace.write_csv(w)
        })
    })?;
    let mut summary = String::from("gamma,delta,converged,a2,iters\n");
    for c in &cells {
        let iters = c.iters.map(|i| i.to_string()).unwrap_or_default();
        summary.push_str(&format!(
            "{},{},{},{:e},{iters}\n",
            c.gamma, c.delta, c.converged, c.a2
        ));
    }
    write_atomic(dir, "sweep.csv", |w| w.write_all(summary.as_bytes()))?;
    write_atomic(dir, "config.echo", |w| {
        w.write_all(cfg.to_toml().as_bytes())
    })?;
    print!("{summary}");
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn push(&mut self, name: &'static str, pass: bool, detail: String) {
        self.checks.push(Check { name, pass, detail });
    }
}

/// Assumption and graph checks without iterating. Assembly failures (an
/// indefinite penalty, an infeasible charging target) become failed checks.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationReport, CliError> {
    cfg.validate()?;
    let mut rep = ValidationReport::default();
    let asm = match assemble(cfg) {
        Ok(asm) => asm,
        Err(CliError::Core(e)) => {
            let detail = match e {
                trades_core::Error::NotPositiveDefinite { name: "H" } => {
                    format!("indefinite penalty: {e}")
                }
                e => e.to_string(),
            };
            rep.push("game assembly", false, detail);
            return Ok(rep);
        }
        Err(e) => return Err(e),
    };

    let a = validate_assumptions(asm.game(), VALIDATE_SAMPLES, cfg.trades.seed)?;
    let how = |exact: bool| if exact { "exact" } else { "sampled" };
    rep.push(
        "strong monotonicity",
        a.mu > 0.0,
        format!(
            "mu = {:.6e} ({}), sampled lower bound {:.6e}",
            a.mu,
            how(a.mu_exact),
            a.mu_sampled
        ),
    );
    rep.push(
        "Lipschitz continuity",
        a.lipschitz.is_finite() && a.beta_total.is_finite(),
        format!(
            "L = {:.6e} ({}), beta_total = {:.3e}, beta_aggregate = {:.3e}, beta_rule = {:.3e}",
            a.lipschitz,
            how(a.lipschitz_exact),
            a.beta_total,
            a.beta_aggregate,
            a.beta_rule
        ),
    );
    let rule_violations: Vec<&String> = a
        .violations
        .iter()
        .filter(|v| v.contains("aggregation rule"))
        .collect();
    rep.push(
        "aggregation rules",
        rule_violations.is_empty(),
        match rule_violations.first() {
            Some(v) => v.to_string(),
            None => "within declared Lipschitz bounds".into(),
        },
    );

    let g = summarize_graph(cfg, &asm.graph)?;
    rep.push(
        "strong connectivity",
        g.strongly_connected,
        format!(
            "{} agents, {} edges, {} component(s)",
            g.agents,
            g.edges,
            asm.graph.scc_count()
        ),
    );
    rep.push(
        "doubly stochastic weights",
        g.stochasticity_residual <= 1e-10,
        format!("max row/column sum error {:.3e}", g.stochasticity_residual),
    );
    rep.push(
        "spectral gap",
        g.rho_disagreement < 1.0,
        format!(
            "rho = {:.6}, gap = {:.6}, largest singular value off consensus = {:.6}",
            g.rho_disagreement,
            1.0 - g.rho_disagreement,
            g.singular_disagreement
        ),
    );

    let mut worst: f64 = 0.0;
    let mut failure = None;
    for (i, p) in asm.game().players().iter().enumerate() {
        match p.projector.project(&vec![0.0; p.dim()]) {
            Ok(w) => worst = worst.max(p.projector.membership_residual(w.as_slice())),
            Err(e) => {
                failure.get_or_insert(format!("agent {i}: {e}"));
            }
        }
    }
    rep.push(
        "feasible sets nonempty",
        failure.is_none() && worst <= MEMBERSHIP_TOL,
        failure.unwrap_or_else(|| {
            format!("certificate points found, max membership residual {worst:.3e}")
        }),
    );
    rep.push(
        "projector idempotence",
        a.projector_idempotence <= trades_core::game::IDEMPOTENCE_TOL,
        format!("max |P(P(v)) - P(v)| = {:.3e}", a.projector_idempotence),
    );
    Ok(rep)
}

pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let rep = validate(cfg)?;
    for c in &rep.checks {
        println!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(if rep.passed() { EXIT_OK } else { EXIT_FAIL })
}
