//! Real- and imaginary-time evolution by Suzuki–Trotter gate sequences.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::canonical::canonicalize_with;
use crate::error::{TtnError, TtnResult};
use crate::gates::{apply_gate, GateOp, GateOptions, NonUnitaryPolicy};
use crate::hamiltonian::HamiltonianSpec;
use crate::observables::energy;
use crate::state::TtnState;
use crate::tensor::{eigh, Truncation};

/// Allowed energy rise per imaginary-time step at fixed `dt`.
pub const ENERGY_RISE_TOL: f64 = 1e-8;

/// `exp(−i h τ)` (real time) or `exp(−h τ)` (imaginary time).
pub fn term_exponential(h: &DMatrix<C64>, tau: f64, imaginary: bool) -> TtnResult<DMatrix<C64>> {
    let (vals, vecs) = eigh(h)?;
    let phases: Vec<C64> = vals
        .iter()
        .map(|&l| if imaginary { C64::new((-l * tau).exp(), 0.0) } else { C64::from_polar(1.0, -l * tau) })
        .collect();
    let n = vals.len();
    let scaled = DMatrix::from_fn(n, n, |r, c| vecs[(r, c)] * phases[c]);
    Ok(scaled * vecs.adjoint())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledGate {
    /// Index into the Hamiltonian's term list.
    pub term: usize,
    /// Fraction of `dt` carried by this gate.
    pub coefficient: f64,
    pub gate: GateOp,
}

/// One Trotter step as layers of gates with pairwise disjoint supports.
#[derive(Clone, Debug, PartialEq)]
pub struct TrotterSchedule {
    pub order: u8,
    pub dt: f64,
    pub imaginary: bool,
    pub layers: Vec<Vec<ScheduledGate>>,
}

impl TrotterSchedule {
    pub fn gates(&self) -> impl Iterator<Item = &ScheduledGate> {
        self.layers.iter().flatten()
    }

    pub fn num_gates(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

/// Trotter step for `h`. Terms run in `(min site, max site)` order; the
/// second-order step is the forward sweep at `dt/2` followed by the reverse
/// sweep at `dt/2`, with the two middle half-steps fused.
pub fn trotter_schedule(h: &HamiltonianSpec, dt: f64, order: u8, imaginary: bool) -> TtnResult<TrotterSchedule> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(TtnError::InvalidArgument(format!("time step must be finite and nonzero, got {dt}")));
    }
    if imaginary && dt < 0.0 {
        return Err(TtnError::InvalidArgument("imaginary time step must be positive".into()));
    }
    let mut order_idx: Vec<usize> = (0..h.terms.len()).collect();
    order_idx.sort_by_key(|&k| {
        let s = &h.terms[k].sites;
        (*s.iter().min().expect("nonempty"), *s.iter().max().expect("nonempty"))
    });
    let sequence: Vec<(usize, f64)> = match order {
        1 => order_idx.iter().map(|&k| (k, 1.0)).collect(),
        2 => {
            let mut seq: Vec<(usize, f64)> = order_idx.iter().map(|&k| (k, 0.5)).collect();
            for &k in order_idx.iter().rev() {
                match seq.last_mut() {
                    Some(last) if last.0 == k => last.1 += 0.5,
                    _ => seq.push((k, 0.5)),
                }
            }
            seq
        }
        _ => return Err(TtnError::InvalidArgument(format!("Trotter order must be 1 or 2, got {order}"))),
    };
    let mut layers: Vec<Vec<ScheduledGate>> = Vec::new();
    for (term, coefficient) in sequence {
        let t = &h.terms[term];
        let gate = GateOp::new(term_exponential(&t.matrix, dt * coefficient, imaginary)?, t.sites.clone(), h.d)?;
        let sg = ScheduledGate { term, coefficient, gate };
        // Only consecutive gates share a layer, so layering preserves the
        // operator product.
        match layers.last_mut() {
            Some(layer) if layer.iter().all(|g| disjoint(&g.gate, &sg.gate)) => layer.push(sg),
            _ => layers.push(vec![sg]),
        }
    }
    Ok(TrotterSchedule { order, dt, imaginary, layers })
}

fn disjoint(a: &GateOp, b: &GateOp) -> bool {
    a.targets().iter().all(|q| !b.targets().contains(q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub max_rank: usize,
    /// Cumulative discarded weight.
    pub discarded: f64,
    /// Wall time since the evolution started.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvolutionReport {
    pub records: Vec<StepRecord>,
}

impl EvolutionReport {
    pub const CSV_HEADER: &'static str = "step,time,energy,max_rank,discarded,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.12},{:.15e},{},{:.6e},{:.6}\n",
                r.step, r.time, r.energy, r.max_rank, r.discarded, r.seconds
            ));
        }
        out
    }

    /// CSV without the wall-time column, for reproducibility comparisons.
    pub fn to_csv_untimed(&self) -> String {
        self.to_csv().lines().map(|l| l.rsplit_once(',').map_or(l, |(a, _)| a).to_string() + "\n").collect()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

/// Stepping parameters shared by both evolutions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TebdConfig {
    pub dt: f64,
    pub order: u8,
    pub trunc: Truncation,
}

impl TebdConfig {
    pub fn new(dt: f64, order: u8, trunc: Truncation) -> Self {
        Self { dt, order, trunc }
    }
}

struct Stepper {
    start: Instant,
    discarded: f64,
    step: usize,
    time: f64,
}

impl Stepper {
    fn new() -> Self {
        Self { start: Instant::now(), discarded: 0.0, step: 0, time: 0.0 }
    }

    fn run(&mut self, s: &mut TtnState, sched: &TrotterSchedule, trunc: Truncation, policy: NonUnitaryPolicy) -> TtnResult<()> {
        let opts = GateOptions { trunc, non_unitary: policy };
        for layer in &sched.layers {
            for g in layer {
                self.discarded += apply_gate(s, &g.gate, opts)?.discarded;
                if policy == NonUnitaryPolicy::Resweep && !s.is_canonical() {
                    self.discarded += canonicalize_with(s, trunc)?;
                }
            }
            if !s.is_canonical() {
                self.discarded += canonicalize_with(s, trunc)?;
            }
        }
        if s.tensors.iter().any(|t| t.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(TtnError::NonFinite(format!("state after step {}", self.step + 1)));
        }
        self.step += 1;
        self.time += sched.dt;
        Ok(())
    }

    fn record(&self, s: &TtnState, h: &HamiltonianSpec) -> TtnResult<StepRecord> {
        let e = energy(s, h)?;
        if !e.is_finite() {
            return Err(TtnError::NonFinite(format!("energy at step {}", self.step)));
        }
        Ok(StepRecord {
            step: self.step,
            time: self.time,
            energy: e,
            max_rank: s.chi_max_observed(),
            discarded: self.discarded,
            seconds: self.start.elapsed().as_secs_f64(),
        })
    }
}

fn require_canonical(s: &TtnState) -> TtnResult<()> {
    if s.is_canonical() {
        Ok(())
    } else {
        Err(TtnError::NotCanonical)
    }
}

/// Evolve by `exp(−iHt)` with `⌈t/dt⌉` equal steps of `t / ⌈t/dt⌉`.
/// Record 0 is the initial state.
pub fn evolve_real(s: &mut TtnState, h: &HamiltonianSpec, t: f64, cfg: TebdConfig) -> TtnResult<EvolutionReport> {
    require_canonical(s)?;
    if !(t.is_finite() && t >= 0.0) || !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(TtnError::InvalidArgument(format!("need t ≥ 0 and dt > 0, got t={t}, dt={}", cfg.dt)));
    }
    let steps = (t / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let mut stepper = Stepper::new();
    let mut report = EvolutionReport { records: vec![stepper.record(s, h)?] };
    if steps == 0 || h.terms.is_empty() {
        return Ok(report);
    }
    let sched = trotter_schedule(h, t / steps as f64, cfg.order, false)?;
    for _ in 0..steps {
        stepper.run(s, &sched, cfg.trunc, NonUnitaryPolicy::Resweep)?;
        report.records.push(stepper.record(s, h)?);
    }
    Ok(report)
}

/// Imaginary-time controls: a geometric `dt` schedule and an energy-rate
/// stopping rule applied at each `dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagConfig {
    pub dt_start: f64,
    pub dt_end: f64,
    /// Ratio between successive time steps, in `(0, 1)`.
    pub dt_factor: f64,
    /// A stage ends once `|ΔE| / dt` falls below this.
    pub tol: f64,
    pub max_steps_per_dt: usize,
    pub order: u8,
    pub max_rank: Option<usize>,
    pub cutoff: f64,
    /// Sweep after every gate (`false`) or once per gate layer (`true`).
    pub defer_sweeps: bool,
}

impl Default for ImagConfig {
    fn default() -> Self {
        Self {
            dt_start: 0.1,
            dt_end: 0.001,
            dt_factor: 0.1,
            tol: 1e-8,
            max_steps_per_dt: 5000,
            order: 2,
            max_rank: None,
            cutoff: 0.0,
            defer_sweeps: false,
        }
    }
}

impl ImagConfig {
    pub fn dt_schedule(&self) -> TtnResult<Vec<f64>> {
        let ok = self.dt_start > 0.0 && self.dt_end > 0.0 && self.dt_end <= self.dt_start;
        if !ok || !(self.dt_factor > 0.0 && self.dt_factor < 1.0) {
            return Err(TtnError::InvalidArgument("need 0 < dt_end ≤ dt_start and 0 < dt_factor < 1".into()));
        }
        let mut out = vec![];
        let mut dt = self.dt_start;
        while dt > self.dt_end * (1.0 + 1e-9) {
            out.push(dt);
            dt *= self.dt_factor;
        }
        out.push(self.dt_end);
        Ok(out)
    }

    fn trunc(&self) -> Truncation {
        Truncation::new(self.max_rank, self.cutoff)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundStateResult {
    pub energy: f64,
    /// Whether the final stage met the tolerance before its step cap.
    pub converged: bool,
    pub report: EvolutionReport,
}

/// Imaginary-time evolution `exp(−Hτ)` toward the ground state.
pub fn evolve_imag(s: &mut TtnState, h: &HamiltonianSpec, cfg: &ImagConfig) -> TtnResult<GroundStateResult> {
    require_canonical(s)?;
    let schedule = cfg.dt_schedule()?;
    let trunc = cfg.trunc();
    let policy = if cfg.defer_sweeps { NonUnitaryPolicy::Defer } else { NonUnitaryPolicy::Resweep };
    let mut stepper = Stepper::new();
    let mut report = EvolutionReport { records: vec![stepper.record(s, h)?] };
    let mut converged = h.terms.is_empty();
    if converged {
        return Ok(GroundStateResult { energy: report.records[0].energy, converged, report });
    }
    for dt in schedule {
        let sched = trotter_schedule(h, dt, cfg.order, true)?;
        converged = false;
        let mut prev = report.last().expect("initial record").energy;
        for k in 0..cfg.max_steps_per_dt {
            stepper.run(s, &sched, trunc, policy)?;
            let rec = stepper.record(s, h)?;
            let e = rec.energy;
            report.records.push(rec);
            // The first step at a new dt may move toward a different
            // Trotter fixed point; monotonicity is checked afterwards.
            if k > 0 && e - prev > ENERGY_RISE_TOL {
                return Err(TtnError::EnergyIncrease { step: stepper.step, increase: e - prev });
            }
            let rate = (e - prev).abs() / dt;
            prev = e;
            if rate < cfg.tol {
                converged = true;
                break;
            }
        }
    }
    let energy = report.last().expect("records").energy;
    Ok(GroundStateResult { energy, converged, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::check_canonical;
    use crate::gates::named_matrix;
    use crate::hamiltonian::{hamiltonian_library, ModelParams, Term};
    use crate::observables::{fidelity, local_profile};
    use crate::oracle;
    use crate::state::Statevector;
    use crate::topology::TreeTopology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tfim(n: usize) -> HamiltonianSpec {
        hamiltonian_library("tfim-chain", n, ModelParams::default()).unwrap()
    }

    fn random_state(topo: TreeTopology, seed: u64) -> (TtnState, Statevector) {
        let v = Statevector::random(topo.num_qudits(), 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (TtnState::from_statevector(&v, topo).unwrap(), v)
    }

    fn field(n: usize, name: &str, coeff: f64) -> HamiltonianSpec {
        let m = named_matrix(name).unwrap() * C64::new(coeff, 0.0);
        HamiltonianSpec::new("field", n, 2, (0..n).map(|i| Term { sites: vec![i], matrix: m.clone() }).collect()).unwrap()
    }

    #[test]
    fn exponential_is_unitary_and_exact() {
        let z = named_matrix("Z").unwrap();
        let u = term_exponential(&z, 0.3, false).unwrap();
        assert!((u[(0, 0)] - C64::from_polar(1.0, -0.3)).norm() < 1e-15);
        assert!((u[(1, 1)] - C64::from_polar(1.0, 0.3)).norm() < 1e-15);
        let p = term_exponential(&z, 0.3, true).unwrap();
        assert!((p[(0, 0)].re - (-0.3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn schedule_layers_are_disjoint_and_cover_terms() {
        let h = tfim(6);
        for order in [1, 2] {
            let s = trotter_schedule(&h, 0.1, order, false).unwrap();
            let mut weight = vec![0.0; h.terms.len()];
            for g in s.gates() {
                weight[g.term] += g.coefficient;
            }
            assert!(weight.iter().all(|&w| (w - 1.0).abs() < 1e-15));
            for layer in &s.layers {
                for (i, a) in layer.iter().enumerate() {
                    assert!(layer[i + 1..].iter().all(|b| disjoint(&a.gate, &b.gate)));
                }
            }
        }
        assert!(trotter_schedule(&h, 0.1, 3, false).is_err());
        assert!(trotter_schedule(&h, 0.0, 1, false).is_err());
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let (mut s, v) = random_state(TreeTopology::caterpillar(5).unwrap(), 1);
        let report = evolve_real(&mut s, &HamiltonianSpec::zero(5, 2), 1.0, TebdConfig::new(0.1, 2, Truncation::NONE)).unwrap();
        assert_eq!(report.records.len(), 1);
        assert!((fidelity(&s, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_field_rotation_is_exact() {
        let (mut s, v) = random_state(TreeTopology::balanced_binary(4).unwrap(), 2);
        let h = HamiltonianSpec::new("z", 4, 2, vec![Term { sites: vec![1], matrix: named_matrix("Z").unwrap() }]).unwrap();
        evolve_real(&mut s, &h, 0.77, TebdConfig::new(0.1, 1, Truncation::NONE)).unwrap();
        let want = oracle::sv_evolve_exact(&v, &h, 0.77, false).unwrap();
        assert!((fidelity(&s, &want).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn commuting_terms_are_exact_at_first_order() {
        let (mut s, v) = random_state(TreeTopology::caterpillar(5).unwrap(), 3);
        let h = hamiltonian_library("long-range-ising", 5, ModelParams { g: 0.0, ..Default::default() }).unwrap();
        evolve_real(&mut s, &h, 0.5, TebdConfig::new(0.5, 1, Truncation::NONE)).unwrap();
        let want = oracle::sv_evolve_exact(&v, &h, 0.5, false).unwrap();
        assert!((fidelity(&s, &want).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn real_time_conserves_energy_of_commuting_model() {
        let (mut s, _) = random_state(TreeTopology::balanced_binary(6).unwrap(), 4);
        let h = hamiltonian_library("long-range-ising", 6, ModelParams { g: 0.0, ..Default::default() }).unwrap();
        let report = evolve_real(&mut s, &h, 1.0, TebdConfig::new(0.01, 2, Truncation::NONE)).unwrap();
        assert_eq!(report.records.len(), 101);
        let e0 = report.records[0].energy;
        assert!(report.records.iter().all(|r| (r.energy - e0).abs() < 1e-8));
        assert!(check_canonical(&s, 1e-9).unwrap().passes());
    }

    #[test]
    fn real_time_matches_the_trotter_circuit() {
        // With noncommuting terms ⟨H⟩ drifts by the Trotter error; the
        // simulation must still reproduce the gate circuit exactly.
        let (mut s, mut v) = random_state(TreeTopology::balanced_binary(6).unwrap(), 4);
        let h = tfim(6);
        let report = evolve_real(&mut s, &h, 1.0, TebdConfig::new(0.01, 2, Truncation::NONE)).unwrap();
        let sched = trotter_schedule(&h, 0.01, 2, false).unwrap();
        for rec in &report.records[1..] {
            for g in sched.gates() {
                v = oracle::sv_apply_gate(&v, &g.gate).unwrap();
            }
            assert!((rec.energy - oracle::sv_energy(&v, &h).unwrap()).abs() < 1e-8);
        }
        assert!((s.to_statevector().unwrap().norm() - 1.0).abs() < 1e-8);
        assert!((fidelity(&s, &v).unwrap() - 1.0).abs() < 1e-8);
        assert!(report.records.windows(2).all(|w| w[1].discarded >= w[0].discarded));
    }

    #[test]
    fn tfim_real_time_tracks_oracle() {
        let (mut s, v) = random_state(TreeTopology::balanced_binary(6).unwrap(), 5);
        let h = tfim(6);
        evolve_real(&mut s, &h, 0.5, TebdConfig::new(0.01, 2, Truncation::NONE)).unwrap();
        let want = oracle::sv_evolve_exact(&v, &h, 0.5, false).unwrap();
        let z = named_matrix("Z").unwrap();
        let got = local_profile(&s, &z).unwrap();
        for (q, g) in got.iter().enumerate() {
            let w = oracle::sv_expectation(&want, &z, &[q]).unwrap().re;
            assert!((g - w).abs() < 1e-4);
        }
    }

    #[test]
    fn field_ground_state() {
        let topo = TreeTopology::caterpillar(4).unwrap();
        let (mut s, _) = random_state(topo, 6);
        let cfg = ImagConfig { dt_start: 0.5, dt_end: 0.05, ..Default::default() };
        let r = evolve_imag(&mut s, &field(4, "Z", 1.0), &cfg).unwrap();
        assert!((r.energy + 4.0).abs() < 1e-8, "{}", r.energy);
        assert!(r.converged);
    }

    #[test]
    fn single_bond_ground_state() {
        let topo = TreeTopology::caterpillar(3).unwrap();
        let (mut s, _) = random_state(topo, 7);
        let h = HamiltonianSpec::new("zz", 3, 2, vec![Term { sites: vec![0, 2], matrix: named_matrix("ZZ").unwrap() }]).unwrap();
        let cfg = ImagConfig { dt_start: 0.5, dt_end: 0.05, ..Default::default() };
        let r = evolve_imag(&mut s, &h, &cfg).unwrap();
        assert!((r.energy + 1.0).abs() < 1e-8);
    }

    #[test]
    fn deferred_sweeps_agree() {
        let h = tfim(5);
        let cfg = ImagConfig { dt_start: 0.1, dt_end: 0.01, ..Default::default() };
        let (mut a, _) = random_state(TreeTopology::caterpillar(5).unwrap(), 8);
        let mut b = a.clone();
        let ra = evolve_imag(&mut a, &h, &cfg).unwrap();
        let rb = evolve_imag(&mut b, &h, &ImagConfig { defer_sweeps: true, ..cfg }).unwrap();
        assert!((ra.energy - rb.energy).abs() < 1e-8);
        let (e0, _) = oracle::sv_ground_state(&h).unwrap();
        assert!((ra.energy - e0).abs() < 1e-4);
    }

    #[test]
    fn imaginary_energy_is_monotone() {
        let h = tfim(6);
        let (mut s, _) = random_state(TreeTopology::balanced_binary(6).unwrap(), 9);
        let cfg = ImagConfig { dt_start: 0.05, dt_end: 0.05, max_steps_per_dt: 200, ..Default::default() };
        let r = evolve_imag(&mut s, &h, &cfg).unwrap();
        assert!(r.report.records.windows(2).all(|w| w[1].energy <= w[0].energy + ENERGY_RISE_TOL));
    }

    #[test]
    fn csv_layout() {
        let (mut s, _) = random_state(TreeTopology::caterpillar(4).unwrap(), 10);
        let r = evolve_real(&mut s, &tfim(4), 0.2, TebdConfig::new(0.1, 1, Truncation::NONE)).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with(EvolutionReport::CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
        assert!(r.to_csv_untimed().lines().all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn dt_schedule_is_geometric() {
        let cfg = ImagConfig { dt_start: 0.1, dt_end: 0.001, dt_factor: 0.1, ..Default::default() };
        let s = cfg.dt_schedule().unwrap();
        assert_eq!(s.len(), 3);
        assert!((s[1] - 0.01).abs() < 1e-15 && s[2] == 0.001);
        assert!(ImagConfig { dt_factor: 1.5, ..Default::default() }.dt_schedule().is_err());
    }
}
