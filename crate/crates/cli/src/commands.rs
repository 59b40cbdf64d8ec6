use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mfg_evo::dist::StatePolicyDist;
use mfg_evo::dynamics::{integrate, IntegrateOptions};
use mfg_evo::equilibria::{
    check_full_potential, solve_congestion_equilibrium, solve_msne_by_dynamics, verify_msne, CongestionOptions,
    ResourceModel, SolveOptions,
};
use mfg_evo::game::{validate_game, Game, GameSpec};
use mfg_evo::io::load_spec;
use mfg_evo::par::Exec;
use mfg_evo::revision::{make_smith, ProtocolConfig, ProtocolParams, RevisionProtocol};
use mfg_evo::scenarios::{congestion, example3, mac};
use mfg_evo::sim::{convergence_study, simulate, write_study_csv, SimOptions, StudyOptions};
use mfg_evo::Error;
use serde_json::json;

use crate::config::{Settings, Target};
use crate::Failure;

const DEFAULT_SIM_GRID: f64 = 0.1;

fn domain(e: Error) -> Failure {
    Failure::Domain(e.to_string())
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Domain(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_fail(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_fail(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_fail(path, e))
}

fn out_dir(s: &Settings) -> Result<&Path, Failure> {
    fs::create_dir_all(&s.out).map_err(|e| io_fail(&s.out, e))?;
    Ok(&s.out)
}

fn scenario_name(s: &Settings) -> Option<&str> {
    match &s.target {
        Target::Scenario(name) => Some(name.as_str()),
        Target::Spec(_) => None,
    }
}

/// Loads the spec; unreadable or malformed files are usage failures.
fn load(s: &Settings) -> Result<GameSpec, Failure> {
    match &s.target {
        Target::Spec(path) => load_spec(path).map_err(|e| Failure::Usage(e.to_string())),
        Target::Scenario(name) => match name.as_str() {
            "example3" => Ok(example3::spec()),
            "mac" => mac::build_mac(&s.mac).map_err(|e| Failure::Usage(e.to_string())),
            "congestion-demo" => Ok(congestion::congestion_spec(congestion::default_rewards())),
            other => Err(Failure::Usage(format!("unknown scenario {other:?}"))),
        },
    }
}

fn build_game(s: &Settings) -> Result<Game, Failure> {
    let spec = load(s)?;
    let report = validate_game(&spec);
    if !report.is_clean() {
        return Err(Failure::Domain(format!("game spec is invalid:\n{report}")));
    }
    Game::new(spec).map_err(domain)
}

/// Protocol from the settings, else dissatisfaction with `K = 2` for the example and
/// Smith elsewhere; `equilibrium` always defaults to Smith.
fn protocols(s: &Settings, game: &Game, for_equilibrium: bool) -> Result<Vec<RevisionProtocol>, Failure> {
    let cfg = match &s.protocol {
        Some(p) => p.clone(),
        None if !for_equilibrium && scenario_name(s) == Some("example3") => ProtocolConfig {
            family: "dissatisfaction".into(),
            params: ProtocolParams { k: Some(example3::K) },
            strict: s.strict,
        },
        None => return Ok(vec![make_smith().strict(s.strict); game.n_classes()]),
    };
    let p = cfg.build().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(vec![p; game.n_classes()])
}

fn initial(s: &Settings, game: &Game) -> Result<StatePolicyDist, Failure> {
    let name = s.init.as_str();
    let scenario = scenario_name(s);
    match name {
        "uniform" => Ok(game.uniform_dist()),
        "fig1" | "fig2" if scenario == Some("example3") => {
            let ex = example3::build();
            Ok(if name == "fig1" { ex.mu_fig1 } else { ex.mu_fig2 })
        }
        "msne" if scenario == Some("mac") => {
            let x = mac::solve_mac_msne(&s.mac, s.tol).map_err(domain)?.x;
            mac::mac_lift(game, x).map_err(domain)
        }
        "fig1" | "fig2" | "msne" => Err(Failure::Usage(format!("--init {name} is not available for this game"))),
        list => {
            let values = list
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Failure::Usage(format!("--init: expected a name or comma-separated numbers, got {list:?}")))?;
            StatePolicyDist::new(game.state_policy_layout().clone(), game.masses(), values)
                .map_err(|e| Failure::Usage(format!("--init: {e}")))
        }
    }
}

pub fn validate(s: &Settings) -> Result<(), Failure> {
    let spec = load(s)?;
    let report = validate_game(&spec);
    print!("{report}");
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::Domain(format!("{} violation(s)", report.violations.len())))
    }
}

pub fn integrate_cmd(s: &Settings) -> Result<(), Failure> {
    let game = build_game(s)?;
    let protocols = protocols(s, &game, false)?;
    let mu0 = initial(s, &game)?;
    let mut opts = IntegrateOptions::new(s.horizon);
    if let Some(h) = s.step {
        opts = opts.step(h);
    }
    let record = integrate(&game, &mu0, &protocols, &opts).map_err(domain)?;
    let dir = out_dir(s)?;
    let path = dir.join("trajectory.csv");
    record.write_csv(&game, create(&path)?).map_err(domain)?;
    let path = dir.join("diagnostics.csv");
    record.write_diagnostics_csv(&game, create(&path)?).map_err(domain)?;

    let mut cert = verify_msne(&game, record.endpoint(), s.tol).map_err(domain)?;
    let at_rest = cert.check_rest_point(&game, &protocols).map_err(domain)?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "horizon": s.horizon,
            "step": record.step,
            "samples": record.times.len(),
            "protocol": protocols[0].name(),
            "final_residual": record.final_residual(),
            "certificate": cert.to_json(),
        }),
    )?;
    println!("samples: {}", record.times.len());
    println!("final residual: {:e}", record.final_residual());
    println!("msne: {} (max gap {:e}), rest point: {}", cert.is_msne, cert.max_gap(), at_rest);
    Ok(())
}

pub fn simulate_cmd(s: &Settings) -> Result<(), Failure> {
    let game = build_game(s)?;
    let protocols = protocols(s, &game, false)?;
    let mu0 = initial(s, &game)?;
    let grid_step = s.step.unwrap_or(DEFAULT_SIM_GRID);
    let dir = out_dir(s)?;

    if let Some(ns) = &s.ns {
        let opts = StudyOptions {
            ns: ns.clone(),
            replications: s.reps,
            horizon: s.horizon,
            grid_step,
            seed: s.seed,
            exec: Exec::Parallel,
        };
        let rows = convergence_study(&game, &protocols, &mu0, &opts).map_err(domain)?;
        let path = dir.join("study.csv");
        write_study_csv(&rows, create(&path)?).map_err(domain)?;
        let path = dir.join("study_summary.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["N", "mean_sup_deviation", "std_error"]).map_err(|e| io_fail(&path, e))?;
        println!("N\tmean sup deviation\tstd error");
        for r in &rows {
            w.write_record([r.n.to_string(), r.mean_sup_deviation.to_string(), r.std_error.to_string()])
                .map_err(|e| io_fail(&path, e))?;
            println!("{}\t{:.6}\t{:.6}", r.n, r.mean_sup_deviation, r.std_error);
        }
        w.flush().map_err(|e| io_fail(&path, e))?;
        return Ok(());
    }

    let runs = Exec::Parallel.map(s.reps, |r| {
        let opts = SimOptions::new(s.n, s.horizon, grid_step).seed(s.seed).stream(r as u64).strict(s.strict);
        simulate(&game, &protocols, &mu0, &opts)
    });
    let path = dir.join("summary.csv");
    let mut summary = csv::Writer::from_writer(create(&path)?);
    summary
        .write_record(["rep", "n", "action_events", "revision_events", "switches", "assumption3_warnings"])
        .map_err(|e| io_fail(&path, e))?;
    for (r, run) in runs.into_iter().enumerate() {
        let traj = run.map_err(domain)?;
        let rep_path = dir.join(format!("rep_{r:03}.csv"));
        traj.write_csv(&game, create(&rep_path)?).map_err(domain)?;
        summary
            .write_record([
                r.to_string(),
                traj.n.to_string(),
                traj.action_events.to_string(),
                traj.revision_events.to_string(),
                traj.switches.to_string(),
                traj.assumption3_warnings.to_string(),
            ])
            .map_err(|e| io_fail(&path, e))?;
        if traj.assumption3_warnings > 0 {
            eprintln!(
                "warning: replication {r}: {} revision events had switch rates above the revision rate",
                traj.assumption3_warnings
            );
        }
    }
    summary.flush().map_err(|e| io_fail(&path, e))?;
    println!("wrote {} replication(s) to {}", s.reps, dir.display());
    Ok(())
}

pub fn equilibrium_cmd(s: &Settings) -> Result<(), Failure> {
    match scenario_name(s) {
        Some("mac") => mac_equilibrium(s),
        Some("congestion-demo") => congestion_equilibrium(s),
        _ => general_equilibrium(s),
    }
}

fn solve_options(s: &Settings, multistart: usize) -> SolveOptions {
    SolveOptions { multistart, tol: s.tol, seed: s.seed, step: s.step, ..SolveOptions::default() }
}

fn general_equilibrium(s: &Settings) -> Result<(), Failure> {
    let game = build_game(s)?;
    let protocols = protocols(s, &game, true)?;
    let report = solve_msne_by_dynamics(&game, &protocols, &solve_options(s, s.multistart.unwrap_or(16))).map_err(domain)?;
    let dir = out_dir(s)?;
    let defects = report.defects().count();
    let starts: Vec<_> = report
        .outcomes
        .iter()
        .map(|o| {
            json!({
                "start": o.start,
                "converged": o.rest.converged,
                "residual": o.rest.residual,
                "time": o.time,
                "certified": o.certificate.is_some(),
                "defect": o.defect,
                "error": o.error,
            })
        })
        .collect();
    write_json(
        &dir.join("equilibria.json"),
        &json!({
            "protocol": protocols[0].name(),
            "certified": report.certified.iter().map(|c| c.to_json()).collect::<Vec<_>>(),
            "starts": starts,
            "defects": defects,
        }),
    )?;
    println!("certified MSNE: {}", report.certified.len());
    for (i, c) in report.certified.iter().enumerate() {
        println!("  #{i}: marginals {:?}, max gap {:e}", c.marginals, c.max_gap());
    }
    println!("non-converged starts: {}, defects: {}", report.non_converged(), defects);
    if report.certified.is_empty() {
        return Err(Failure::Domain("no certified MSNE found".into()));
    }
    if defects > 0 {
        return Err(Failure::Domain(format!("{defects} rest point(s) failed MSNE certification")));
    }
    Ok(())
}

fn mac_equilibrium(s: &Settings) -> Result<(), Failure> {
    let p = &s.mac;
    let msne = mac::solve_mac_msne(p, s.tol).map_err(domain)?;
    let bsne = mac::solve_mac_bsne(p, s.tol).map_err(domain)?;
    let dir = out_dir(s)?;

    let k = s.grid - 1;
    let at = |i: usize| i as f64 / k as f64;
    let path = dir.join("payoff_grid.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["q", "h", "J"]).map_err(|e| io_fail(&path, e))?;
    for i in 0..=k {
        for j in 0..=k {
            let (q, h) = (at(i), at(j));
            let v = mac::mac_deviation_payoff(q, h, p);
            w.write_record([q.to_string(), h.to_string(), v.to_string()]).map_err(|e| io_fail(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_fail(&path, e))?;
    let path = dir.join("mixed_payoffs.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["x", "J_u1", "J_u0"]).map_err(|e| io_fail(&path, e))?;
    for i in 0..=k {
        let x = at(i);
        let (j1, j0) = mac::mac_mixed_payoffs(x, p);
        w.write_record([x.to_string(), j1.to_string(), j0.to_string()]).map_err(|e| io_fail(&path, e))?;
    }
    w.flush().map_err(|e| io_fail(&path, e))?;

    let game = build_game(s)?;
    let protocols = protocols(s, &game, true)?;
    let report = solve_msne_by_dynamics(&game, &protocols, &solve_options(s, s.multistart.unwrap_or(8))).map_err(domain)?;
    let dynamic: Vec<f64> = report.certified.iter().map(|c| c.marginals[0][mac::U_LOW]).collect();
    write_json(
        &dir.join("mac_equilibria.json"),
        &json!({
            "params": p,
            "msne": msne,
            "bsne": bsne,
            "protocol": protocols[0].name(),
            "dynamics_msne_low_power_share": dynamic,
            "dynamics_defects": report.defects().count(),
        }),
    )?;
    println!("x* = {} (J_u1 - J_u0 = {:e})", msne.x, msne.payoff_difference);
    println!("h* = {} (best deviation gain {:e})", bsne.h, bsne.deviation_gain);
    println!("dynamics ({}): certified low-power shares {:?}", protocols[0].name(), dynamic);
    if report.certified.is_empty() {
        return Err(Failure::Domain("dynamics found no certified MSNE".into()));
    }
    Ok(())
}

fn congestion_equilibrium(s: &Settings) -> Result<(), Failure> {
    let game = build_game(s)?;
    let model = ResourceModel::from_game(&game).map_err(domain)?;
    let opts = CongestionOptions {
        multistart: s.multistart.unwrap_or(10),
        seed: s.seed,
        ..CongestionOptions::default()
    };
    let sol = solve_congestion_equilibrium(&game, &model, &opts).map_err(domain)?;
    let check = check_full_potential(&game, &model, 50, s.seed).map_err(domain)?;
    let dir = out_dir(s)?;
    let names: Vec<&str> = game.spec().resources.iter().map(|r| r.name.as_str()).collect();
    write_json(
        &dir.join("congestion.json"),
        &json!({
            "resources": names,
            "flows": sol.flows,
            "potential": sol.potential,
            "flow_spread": sol.flow_spread,
            "certificate": sol.certificate.to_json(),
            "potential_check": { "points": check.points, "max_rel_error": check.max_rel_error, "passed": check.passed },
        }),
    )?;
    println!("flows: {}", names.iter().zip(&sol.flows).map(|(n, f)| format!("{n}={f}")).collect::<Vec<_>>().join(", "));
    println!("potential: {}", sol.potential);
    println!("flow spread over {} starts: {:e}", sol.starts.len(), sol.flow_spread);
    println!("potential gradient check: max rel error {:e} ({})", check.max_rel_error, if check.passed { "ok" } else { "FAILED" });
    if !sol.certificate.is_msne {
        return Err(Failure::Domain("potential maximizer failed MSNE certification".into()));
    }
    Ok(())
}
