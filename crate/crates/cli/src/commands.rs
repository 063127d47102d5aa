//! Subcommand implementations. Each writes its result files into the run's
//! output directory and returns a one-line summary.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use ttn::canonical::canonicalize_with;
use ttn::crosscheck::{
    default_params, random_product_state, routing_bound_holds, routing_table, run_suite, CheckOutcome, RoutingRow,
    BALANCED_LOG_FACTOR, CATERPILLAR_LINEAR_FACTOR, SUITES,
};
use ttn::gates::named_matrix;
use ttn::locc::{
    cluster_topology, run_locc, run_locc_branch, tree_cluster_state, wire_pattern, MeasurementPattern, RandomSource,
    Transcript, TreeGraph,
};
use ttn::tebd::{evolve_imag, evolve_real, EvolutionReport, ImagConfig, TebdConfig};
use ttn::topology::{validate, TopologySpec, ValidationReport};
use ttn::{
    check_canonical, energy, expectation, hamiltonian_library, rdm1, HamiltonianSpec, LayoutKind, TreeTopology,
    Truncation, TtnState, C64,
};

use crate::config::{EvolveConfig, Format};
use crate::{CliError, Command, Run};

type CliResult<T> = Result<T, CliError>;

const CANONICAL_TOL: f64 = 1e-10;

pub fn execute(cmd: Command, run: &Run) -> CliResult<String> {
    match cmd {
        Command::Validate => validate_cmd(run),
        Command::Canonicalize => canonicalize_cmd(run),
        Command::Evolve => evolve_cmd(run),
        Command::GroundState => ground_state_cmd(run),
        Command::Mbqc => mbqc_cmd(run),
        Command::OracleCheck => oracle_check_cmd(run),
        Command::BenchRouting => bench_routing_cmd(run),
    }
}

fn rng(run: &Run) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(run.seed)
}

fn write(run: &Run, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(&run.output).map_err(|e| CliError::Config(format!("{}: {e}", run.output.display())))?;
    let path = run.output.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn write_json(run: &Run, name: &str, value: &impl Serialize) -> CliResult<PathBuf> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    write(run, name, &(text + "\n"))
}

fn write_report(run: &Run, report: &EvolutionReport) -> CliResult<PathBuf> {
    match run.format {
        Format::Csv => write(run, "report.csv", &report.to_csv()),
        Format::Json => write_json(run, "report.json", &report.records),
    }
}

fn local_dim(run: &Run) -> usize {
    run.config.d.unwrap_or(2)
}

fn truncation(run: &Run) -> Truncation {
    let t = &run.config.truncation;
    Truncation::new(run.flags.chi_max.or(t.chi_max), run.flags.cutoff.or(t.cutoff).unwrap_or(0.0))
}

fn layout_kind(name: &str) -> Option<LayoutKind> {
    match name {
        "caterpillar" => Some(LayoutKind::Caterpillar),
        "balanced-binary" | "balanced" => Some(LayoutKind::BalancedBinary),
        _ => None,
    }
}

/// Parse and validate an edge-list file, naming every violated invariant.
fn topology_from_text(text: &str, origin: &Path) -> CliResult<TreeTopology> {
    let spec = TopologySpec::parse(text).map_err(|e| CliError::Validation(format!("{}: {e}", origin.display())))?;
    let report = validate(&spec);
    if !report.is_valid() {
        return Err(CliError::Validation(format!("{}: {}", origin.display(), report.violations.join("; "))));
    }
    Ok(TreeTopology::from_spec(&spec)?)
}

fn topology(run: &Run, n_hint: Option<usize>) -> CliResult<TreeTopology> {
    let cfg = run.config.topology.clone().unwrap_or_default();
    if let Some(file) = &cfg.file {
        return topology_from_text(&run.config.read(file)?, &run.config.resolve(file));
    }
    let n = cfg.n.or(n_hint).ok_or_else(|| CliError::Config("topology.n is required".into()))?;
    let layout = cfg.layout.as_deref().unwrap_or("caterpillar");
    match (layout, layout_kind(layout)) {
        (_, Some(kind)) => Ok(TreeTopology::layout(kind, n)?),
        ("random", None) => Ok(TreeTopology::random(n, &mut rng(run))?),
        _ => Err(CliError::Config(format!("unknown layout {layout:?}"))),
    }
}

fn hamiltonian(run: &Run, n: usize) -> CliResult<HamiltonianSpec> {
    let cfg = run.config.hamiltonian.clone().ok_or_else(|| CliError::Config("missing [hamiltonian]".into()))?;
    let h = match (&cfg.file, &cfg.model) {
        (Some(file), _) => HamiltonianSpec::from_json(&run.config.read(file)?, Some(n))?,
        (None, Some(model)) => hamiltonian_library(model, n, cfg.params())?,
        (None, None) => return Err(CliError::Config("hamiltonian needs `model` or `file`".into())),
    };
    if h.n != n {
        return Err(CliError::Config(format!("hamiltonian acts on {} sites, topology has {n}", h.n)));
    }
    Ok(h)
}

/// The configured initial state; `default_kind` applies when none is named.
fn initial_state(run: &Run, default_kind: &str) -> CliResult<TtnState> {
    let cfg = run.config.state.clone().unwrap_or_default();
    if let Some(file) = &cfg.file {
        return Ok(TtnState::from_json(&run.config.read(file)?)?);
    }
    let topo = topology(run, None)?;
    let d = local_dim(run);
    let kind = cfg.kind.as_deref().unwrap_or(default_kind);
    let mut r = rng(run);
    Ok(match kind {
        "zero" => TtnState::zero_state(topo, d)?,
        "plus" => {
            let amp = 1.0 / (d as f64).sqrt();
            let local = vec![C64::new(amp, 0.0); d];
            TtnState::product_state(topo.clone(), d, &vec![local; topo.num_qudits()])?
        }
        "random" => TtnState::random(topo, d, cfg.bond.unwrap_or(2), &mut r)?,
        "random-product" => random_product_state(topo, d, &mut r)?,
        other => return Err(CliError::Config(format!("unknown state kind {other:?}"))),
    })
}

fn canonical_ready(mut s: TtnState) -> CliResult<TtnState> {
    if !s.is_canonical() {
        canonicalize_with(&mut s, Truncation::NONE)?;
    }
    Ok(s)
}

fn pauli_z_profile(s: &TtnState) -> CliResult<Vec<f64>> {
    let z = named_matrix("Z")?;
    (0..s.num_qudits()).map(|q| Ok(expectation(s, &z, &[q])?)).collect()
}

#[derive(Serialize)]
struct StateCheck {
    n: usize,
    d: usize,
    max_rank: usize,
    canonical_flag: bool,
    normalized_flag: bool,
    canonical_deviation: f64,
    violations: Vec<String>,
}

fn check_state(s: &TtnState) -> CliResult<StateCheck> {
    let report = check_canonical(s, CANONICAL_TOL)?;
    let mut violations = vec![];
    if s.is_canonical() && !report.passes() {
        violations.push(format!(
            "state is flagged canonical but deviates by {:.3e} (tolerance {CANONICAL_TOL:.0e})",
            report.max_deviation()
        ));
    }
    if s.is_normalized() && report.norm_deviation > CANONICAL_TOL {
        violations.push(format!("state is flagged normalized but its norm deviates by {:.3e}", report.norm_deviation));
    }
    Ok(StateCheck {
        n: s.num_qudits(),
        d: s.local_dim(),
        max_rank: s.chi_max_observed(),
        canonical_flag: s.is_canonical(),
        normalized_flag: s.is_normalized(),
        canonical_deviation: report.max_deviation(),
        violations,
    })
}

fn validate_cmd(run: &Run) -> CliResult<String> {
    let cfg = &run.config;
    let input = match (&run.flags.input, cfg.state.as_ref().and_then(|s| s.file.clone()), cfg.topology.as_ref().and_then(|t| t.file.clone())) {
        (Some(p), _, _) => Some(p.clone()),
        (None, Some(p), _) | (None, None, Some(p)) => Some(cfg.resolve(&p)),
        _ => None,
    };
    let (source, topo_report, state_check, mut violations) = match input {
        Some(path) => {
            let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if text.trim_start().starts_with('{') {
                match TtnState::from_json(&text) {
                    Ok(s) => {
                        let topo = validate(&s.topology().to_spec());
                        let check = check_state(&s)?;
                        let v = topo.violations.iter().chain(&check.violations).cloned().collect();
                        (path, Some(topo), Some(check), v)
                    }
                    Err(e) => (path, None, None, vec![e.to_string()]),
                }
            } else {
                match TopologySpec::parse(&text) {
                    Ok(spec) => {
                        let r = validate(&spec);
                        let v = r.violations.clone();
                        (path, Some(r), None, v)
                    }
                    Err(e) => (path, None, None, vec![e.to_string()]),
                }
            }
        }
        None => {
            let topo = topology(run, None)?;
            let r: ValidationReport = validate(&topo.to_spec());
            let v = r.violations.clone();
            (PathBuf::from("<config>"), Some(r), None, v)
        }
    };
    if let (Some(_), Some(r)) = (&cfg.hamiltonian, &topo_report) {
        if let Err(e) = hamiltonian(run, r.n) {
            violations.push(e.to_string());
        }
    }
    let valid = violations.is_empty();
    write_json(
        run,
        "validation.json",
        &json!({
            "input": source.display().to_string(),
            "valid": valid,
            "violations": violations,
            "topology": topo_report,
            "state": state_check,
        }),
    )?;
    if valid {
        Ok(format!("validate: {} is valid", source.display()))
    } else {
        Err(CliError::Validation(format!("{}: {}", source.display(), violations.join("; "))))
    }
}

fn canonicalize_cmd(run: &Run) -> CliResult<String> {
    let mut s = match &run.flags.input {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            TtnState::from_json(&text)?
        }
        None => initial_state(run, "random")?,
    };
    // `+ 0.0` turns a negative zero into a plain zero.
    let discarded = canonicalize_with(&mut s, truncation(run))?.max(0.0) + 0.0;
    let report = check_canonical(&s, CANONICAL_TOL)?;
    let topo = s.topology().clone();
    let mut edges = vec![];
    let mut csv = String::from("edge,index,weight\n");
    for e in topo.internal_edges() {
        let w = s.schmidt_spectrum(e)?.to_vec();
        let entropy: f64 = w.iter().map(|x| x * x).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
        for (k, x) in w.iter().enumerate() {
            csv.push_str(&format!("{e},{k},{x:.17e}\n"));
        }
        edges.push(json!({
            "edge": e,
            "side_a": topo.bipartition_of(e)?.side_a,
            "rank": w.len(),
            "entropy": entropy,
            "weights": w,
        }));
    }
    write(run, "state.json", &s.to_json()?)?;
    match run.format {
        Format::Csv => write(run, "spectra.csv", &csv)?,
        Format::Json => write_json(run, "spectra.json", &edges)?,
    };
    write_json(
        run,
        "canonicalize.json",
        &json!({
            "n": s.num_qudits(),
            "d": s.local_dim(),
            "discarded_weight": discarded,
            "max_deviation": report.max_deviation(),
            "passes": report.passes(),
            "edges": edges,
        }),
    )?;
    if !report.passes() {
        return Err(CliError::Numerical(format!("canonical check deviates by {:.3e}", report.max_deviation())));
    }
    Ok(format!(
        "canonicalize: {} edges, max rank {}, discarded {discarded:.3e}, deviation {:.2e}",
        edges.len(),
        s.chi_max_observed(),
        report.max_deviation()
    ))
}

fn evolve_cmd(run: &Run) -> CliResult<String> {
    let mut ec: EvolveConfig = run.config.evolve.clone().unwrap_or_default();
    ec.dt = run.flags.dt.unwrap_or(ec.dt);
    ec.order = run.flags.order.unwrap_or(ec.order);
    let mut s = canonical_ready(initial_state(run, "zero")?)?;
    let h = hamiltonian(run, s.num_qudits())?;
    let trunc = truncation(run);
    let report = evolve_real(&mut s, &h, ec.t, TebdConfig::new(ec.dt, ec.order, trunc))?;
    let first = report.records.first().map_or(f64::NAN, |r| r.energy);
    let last = report.last().cloned().ok_or_else(|| CliError::Numerical("empty evolution".into()))?;
    write_report(run, &report)?;
    write(run, "state.json", &s.to_json()?)?;
    write_json(
        run,
        "evolve.json",
        &json!({
            "n": s.num_qudits(),
            "t": ec.t,
            "dt": ec.dt,
            "order": ec.order,
            "chi_max": trunc.max_rank,
            "steps": last.step,
            "initial_energy": first,
            "final_energy": last.energy,
            "max_rank": last.max_rank,
            "discarded": last.discarded,
            "z": pauli_z_profile(&s)?,
        }),
    )?;
    Ok(format!("evolve: t={} in {} steps, energy {:.10} → {:.10}, max rank {}", ec.t, last.step, first, last.energy, last.max_rank))
}

fn ground_state_cmd(run: &Run) -> CliResult<String> {
    let mut ic: ImagConfig = run.config.ground_state.clone().unwrap_or_default();
    if let Some(dt) = run.flags.dt {
        ic.dt_start = dt;
        ic.dt_end = dt;
    }
    ic.order = run.flags.order.unwrap_or(ic.order);
    let trunc = truncation(run);
    ic.max_rank = trunc.max_rank.or(ic.max_rank);
    if run.flags.cutoff.is_some() || run.config.truncation.cutoff.is_some() {
        ic.cutoff = trunc.cutoff;
    }
    let mut s = canonical_ready(initial_state(run, "random-product")?)?;
    let h = hamiltonian(run, s.num_qudits())?;
    let res = evolve_imag(&mut s, &h, &ic)?;
    let final_energy = energy(&s, &h)?;
    let reference = run.config.reference.clone().unwrap_or_default();
    let error = reference.energy.map(|e| (res.energy - e).abs());
    write_report(run, &res.report)?;
    write(run, "state.json", &s.to_json()?)?;
    write_json(
        run,
        "ground-state.json",
        &json!({
            "n": s.num_qudits(),
            "energy": res.energy,
            "final_state_energy": final_energy,
            "converged": res.converged,
            "steps": res.report.last().map_or(0, |r| r.step),
            "max_rank": s.chi_max_observed(),
            "reference_energy": reference.energy,
            "error": error,
            "tolerance": reference.tolerance,
            "config": ic,
        }),
    )?;
    if !res.converged {
        eprintln!("ttn: ground-state: final stage hit its step cap before meeting tol {:.1e}", ic.tol);
    }
    let summary = format!(
        "ground-state: E = {:.10}{}, {} steps, max rank {}",
        res.energy,
        error.map_or(String::new(), |e| format!(" (error {e:.2e})")),
        res.report.last().map_or(0, |r| r.step),
        s.chi_max_observed()
    );
    match (error, reference.tolerance) {
        (Some(e), Some(tol)) if !(e <= tol) => {
            Err(CliError::Validation(format!("energy error {e:.3e} exceeds tolerance {tol:.1e}")))
        }
        _ => Ok(summary),
    }
}

fn graph(run: &Run) -> CliResult<TreeGraph> {
    let m = run.config.mbqc.clone().unwrap_or_default();
    if let Some(edges) = m.edges {
        let n = m.n.unwrap_or(edges.len() + 1);
        return Ok(TreeGraph::new(n, edges)?);
    }
    let n = m.n.ok_or_else(|| CliError::Config("mbqc.n is required".into()))?;
    match m.graph.as_deref().unwrap_or("path") {
        "path" => Ok(TreeGraph::path(n)?),
        "star" => Ok(TreeGraph::star(n)?),
        "random" => Ok(TreeGraph::random(n, &mut rng(run))?),
        other => Err(CliError::Config(format!("unknown graph {other:?}"))),
    }
}

fn matrix_json(m: &DMatrix<C64>) -> serde_json::Value {
    let rows = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| f(&m[(r, c)])).collect()).collect()
    };
    json!({ "re": rows(|z| z.re), "im": rows(|z| z.im) })
}

fn mbqc_cmd(run: &Run) -> CliResult<String> {
    let m = run.config.mbqc.clone().ok_or_else(|| CliError::Config("missing [mbqc]".into()))?;
    let g = graph(run)?;
    let n = g.num_vertices();
    let pattern = match (&m.pattern, &m.wire_angles) {
        (Some(file), _) => MeasurementPattern::from_json(&run.config.read(file)?)?,
        (None, Some(angles)) => wire_pattern(angles),
        (None, None) => return Err(CliError::Config("mbqc needs `pattern` or `wire_angles`".into())),
    };
    pattern.validate(n)?;
    let topo = match m.layout.as_deref().unwrap_or("adapted") {
        "adapted" => cluster_topology(&g)?,
        name => match layout_kind(name) {
            Some(kind) => TreeTopology::layout(kind, n)?,
            None => {
                let p = PathBuf::from(name);
                topology_from_text(&run.config.read(&p)?, &run.config.resolve(&p))?
            }
        },
    };
    let mut s = tree_cluster_state(&g, topo)?;
    let cluster_rank = s.chi_max_observed();
    let transcript: Transcript = match &m.branch {
        Some(outcomes) => run_locc_branch(&mut s, &pattern, outcomes)?
            .ok_or_else(|| CliError::Validation(format!("branch {outcomes:?} has zero probability")))?,
        None => run_locc(&mut s, &pattern, &mut RandomSource::new(run.seed))?,
    };
    let measured: Vec<usize> = pattern.steps.iter().map(|st| st.target).collect();
    let outputs = (0..n)
        .filter(|q| !measured.contains(q))
        .map(|q| Ok(json!({ "qubit": q, "rdm": matrix_json(&rdm1(&s, q)?.matrix) })))
        .collect::<CliResult<Vec<_>>>()?;
    write(run, "transcript.jsonl", &transcript.to_json_lines())?;
    write(run, "state.json", &s.to_json()?)?;
    write_json(
        run,
        "mbqc.json",
        &json!({
            "n": n,
            "edges": g.edges(),
            "cluster_rank": cluster_rank,
            "rng": RandomSource::ALGORITHM,
            "seed": run.seed,
            "outcomes": transcript.outcomes(),
            "probability": transcript.probability(),
            "final_max_rank": s.chi_max_observed(),
            "outputs": outputs,
        }),
    )?;
    Ok(format!(
        "mbqc: {n} qubits, cluster rank {cluster_rank}, outcomes {:?}, probability {:.6}",
        transcript.outcomes(),
        transcript.probability()
    ))
}

fn oracle_check_cmd(run: &Run) -> CliResult<String> {
    let oc = run.config.oracle_check.clone().unwrap_or_default();
    let suites: Vec<String> = match (run.flags.suite.is_empty(), oc.suites.is_empty()) {
        (false, _) => run.flags.suite.clone(),
        (true, false) => oc.suites.clone(),
        (true, true) => SUITES.iter().map(|s| s.to_string()).collect(),
    };
    let n = run.flags.n.or(oc.n);
    let mut results: Vec<CheckOutcome> = vec![];
    for name in &suites {
        let mut p = default_params(name, n, run.seed)?;
        if let Some(t) = oc.trials {
            p.trials = t;
        }
        results.push(run_suite(name, &p)?);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    write_json(run, "oracle-check.json", &json!({ "seed": run.seed, "passed": failed.is_empty(), "results": results }))?;
    for r in &results {
        eprintln!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if failed.is_empty() {
        Ok(format!("oracle-check: {} suites passed", results.len()))
    } else {
        Err(CliError::Validation(format!("suites failed: {}", failed.join(", "))))
    }
}

fn bench_routing_cmd(run: &Run) -> CliResult<String> {
    let bc = run.config.bench_routing.clone().unwrap_or_default();
    let rows: Vec<RoutingRow> = routing_table(&bc.ns, bc.gates, run.seed)?;
    let passed = rows.iter().all(routing_bound_holds);
    match run.format {
        Format::Csv => {
            let mut csv = String::from("layout,n,max_path,mean_swaps\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{},{:.6}\n", r.layout, r.n, r.max_path, r.mean_swaps));
            }
            write(run, "routing.csv", &csv)?
        }
        Format::Json => write_json(run, "routing.json", &rows)?,
    };
    write_json(
        run,
        "bench-routing.json",
        &json!({
            "seed": run.seed,
            "gates": bc.gates,
            "balanced_log_factor": BALANCED_LOG_FACTOR,
            "caterpillar_linear_factor": CATERPILLAR_LINEAR_FACTOR,
            "passed": passed,
            "rows": rows,
        }),
    )?;
    let paths = |layout: &str| rows.iter().filter(|r| r.layout == layout).map(|r| r.max_path.to_string()).collect::<Vec<_>>().join(" ");
    let summary = format!("bench-routing: caterpillar paths [{}], balanced-binary paths [{}]", paths("caterpillar"), paths("balanced-binary"));
    if passed {
        Ok(summary)
    } else {
        Err(CliError::Validation(format!("path-length bounds violated; {summary}")))
    }
}
