//! Self-verification suites behind `focc check`.
//!
//! Every property is a named, seeded randomized test that reports pass or
//! fail with a short diagnostic. The fast level runs reduced counts; the
//! full level runs the counts the acceptance criteria name.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::gradcheck::check_coordinates;
use crate::autodiff::{log_add_exp, Tape, Tensor};
use crate::error::Result;
use crate::flow::{Maf, MafConfig};
use crate::focce::{FocceConfig, FocceNet, ObjectiveMode};
use crate::lattice::{self, LocalProbTable};
use crate::nn::ParamStore;
use crate::rng::{normal, seeded};
use crate::streaming::{self, ChunkParams, ContextSchedule, FoccTable};
use crate::training::decode::{beam_decode, exhaustive_map, greedy_decode, sequence_count, DecodeOptions};
use crate::training::{total_objective, ObjectiveKind, ObjectiveOptions, ObjectiveWeights};
use crate::transducer::{TransducerConfig, TransducerNet};

pub const FORWARD_ORACLE: &str = "forward-oracle-equivalence";
pub const STREAMING_ORACLE: &str = "streaming-oracle-equivalence";
pub const REDUCTIONS: &str = "reduction-identities";
pub const GRADIENTS: &str = "gradient-finite-difference";
pub const ISOLATION: &str = "stop-gradient-isolation";
pub const FLOW: &str = "flow-correctness";
pub const CAUSALITY: &str = "causality-probes";
pub const DECODER: &str = "decoder-oracle";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

/// Trial counts for one suite run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counts {
    pub tables: usize,
    pub seeds: usize,
    pub probes: usize,
    pub models: usize,
}

impl Level {
    pub fn counts(self) -> Counts {
        match self {
            Level::Fast => Counts {
                tables: 60,
                seeds: 4,
                probes: 15,
                models: 30,
            },
            Level::Full => Counts {
                tables: 200,
                seeds: 20,
                probes: 50,
                models: 100,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub level: Level,
    pub passed: bool,
    pub properties: Vec<PropertyReport>,
}

impl SuiteReport {
    pub fn failing(&self) -> Vec<&str> {
        self.properties.iter().filter(|p| !p.passed).map(|p| p.name.as_str()).collect()
    }

    pub fn human(&self) -> String {
        let mut out = String::new();
        for p in &self.properties {
            out.push_str(&format!(
                "[{}] {:<30} {:>7.2}s  {}\n",
                if p.passed { "PASS" } else { "FAIL" },
                p.name,
                p.seconds,
                p.detail
            ));
        }
        out.push_str(if self.passed { "all properties hold\n" } else { "FAILED\n" });
        out
    }
}

type Outcome = std::result::Result<String, String>;

fn timed(name: &str, f: impl FnOnce() -> Outcome) -> PropertyReport {
    let start = Instant::now();
    let outcome = f();
    let seconds = start.elapsed().as_secs_f64();
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    PropertyReport {
        name: name.into(),
        passed,
        detail,
        seconds,
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

/// Likelihood under test for the forward oracle property.
pub type LikelihoodFn<'a> = &'a dyn Fn(&LocalProbTable) -> Result<f64>;

fn random_table<R: Rng>(rng: &mut R, max_t: usize, max_u: usize, max_v: usize) -> LocalProbTable {
    let t = rng.random_range(1..=max_t);
    let u = rng.random_range(0..=max_u);
    let v = rng.random_range(1..=max_v);
    LocalProbTable::random(rng, t, u, v, 1.5)
}

/// DP likelihood against monotonic-path enumeration, `T <= 6, U <= 4, V <= 5`.
pub fn forward_oracle(tables: usize, seed: u64, likelihood: LikelihoodFn<'_>) -> PropertyReport {
    timed(FORWARD_ORACLE, || {
        let mut rng = seeded(seed);
        let mut worst: f64 = 0.0;
        for i in 0..tables {
            let table = random_table(&mut rng, 6, 4, 5);
            let dp = likelihood(&table).map_err(fail)?;
            let brute = lattice::oracle_enumerate(&table).map_err(fail)?;
            let err = (dp - brute).abs();
            if !(err <= 1e-10) {
                return Err(format!(
                    "table {i} (T={}, U={}): dp {dp} vs enumeration {brute}",
                    table.frames(),
                    table.target_len()
                ));
            }
            worst = worst.max(err);
        }
        Ok(format!("{tables} tables, max |diff| {worst:.1e}"))
    })
}

fn random_schedule<R: Rng>(rng: &mut R, frames: usize) -> Result<ContextSchedule> {
    let c = rng.random_range(1..=3);
    let r = rng.random_range(0..=1);
    ContextSchedule::new(c, r, frames)
}

/// FoCC-weighted recursion against gamma-weighted path enumeration.
pub fn streaming_oracle(tables: usize, seed: u64) -> PropertyReport {
    timed(STREAMING_ORACLE, || {
        let mut rng = seeded(seed);
        let mut worst: f64 = 0.0;
        let mut with_boundaries = 0;
        for i in 0..tables {
            let table = random_table(&mut rng, 6, 4, 5);
            let schedule = random_schedule(&mut rng, table.frames()).map_err(fail)?;
            let focc = FoccTable::random(&mut rng, &schedule, table.target_len(), 1.0);
            with_boundaries += usize::from(!schedule.boundaries().is_empty());
            let dp = streaming::modified_likelihood(&table, &schedule, &focc, true).map_err(fail)?;
            let brute = streaming::oracle_enumerate(&table, &focc).map_err(fail)?;
            let err = (dp - brute).abs();
            if !(err <= 1e-10) {
                return Err(format!("table {i}: recursion {dp} vs enumeration {brute}"));
            }
            worst = worst.max(err);
        }
        Ok(format!(
            "{tables} tables ({with_boundaries} with boundaries), max |diff| {worst:.1e}"
        ))
    })
}

pub fn tiny_transducer_config(stack: usize) -> TransducerConfig {
    TransducerConfig {
        stack,
        feature_dim: 3,
        vocab: 4,
        encoder_dim: 6,
        encoder_layers: 2,
        kernel: 3,
        predictor_dim: 4,
        predictor_context: 2,
        joiner_dim: 6,
    }
}

pub fn tiny_focce_config(stack: usize) -> FocceConfig {
    FocceConfig {
        stack,
        feature_dim: 3,
        vocab: 4,
        encoder_dim: 5,
        encoder_layers: 2,
        kernel: 3,
        predictor_dim: 4,
        flow_depth: 2,
        flow_blocks: 2,
        flow_hidden: 8,
        scale_clamp: 3.0,
        objective_mode: ObjectiveMode::Log,
    }
}

/// Estimator with non-zero output heads so the flow is not the identity.
pub fn tiny_focce(seed: u64, stack: usize, chunk: ChunkParams) -> Result<FocceNet> {
    let mut rng = seeded(seed);
    let mut net = FocceNet::new(&mut rng, tiny_focce_config(stack), chunk)?;
    for id in net.flow().head_params() {
        for v in net.params_mut().get_mut(id).values_mut() {
            *v = 0.3 * normal(&mut rng);
        }
    }
    Ok(net)
}

fn features<R: Rng>(rng: &mut R, frames: usize, dim: usize) -> Tensor {
    Tensor::from_parts(vec![frames, dim], (0..frames * dim).map(|_| normal(rng)).collect())
}

fn labels<R: Rng>(rng: &mut R, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(1..=vocab)).collect()
}

/// One tiny random problem shared by the gradient and isolation suites.
struct Problem {
    theta: TransducerNet,
    omega: FocceNet,
    x: Tensor,
    y: Vec<usize>,
    chunk: ChunkParams,
}

impl Problem {
    fn new(seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let chunk = ChunkParams {
            chunk_size: 2,
            right_context: 0,
        };
        let theta = TransducerNet::new(&mut rng, tiny_transducer_config(1))?;
        let omega = tiny_focce(seed.wrapping_add(1000), 1, chunk)?;
        let t = rng.random_range(3..=4);
        let u = rng.random_range(0..=2);
        Ok(Self {
            theta,
            omega,
            x: features(&mut rng, t, 3),
            y: labels(&mut rng, u, 4),
            chunk,
        })
    }

    fn schedule(&self) -> Result<ContextSchedule> {
        self.chunk.schedule(self.x.shape()[0])
    }

    /// `log gamma` values from the estimator, as a constant tensor.
    fn log_gamma(&self, lambda: f64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.omega.params().bind(&mut tape, false);
        let out = self.omega.densities(&mut tape, &p, &self.x, &self.y, &self.schedule()?)?;
        let lg = self.omega.log_gamma(&mut tape, &out, lambda)?;
        Ok(tape.value(lg).clone())
    }
}

/// Deformed (`gamma = None`) or modified likelihood of `theta`, with its
/// parameter gradient when `trainable`.
fn theta_likelihood(
    theta: &TransducerNet,
    x: &Tensor,
    y: &[usize],
    schedule: &ContextSchedule,
    gamma: Option<&Tensor>,
    trainable: bool,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let p = theta.params().bind(&mut tape, trainable);
    let joint = theta.joint(&mut tape, &p, x, y, schedule)?;
    let lat = theta.lattice_vars(&mut tape, &joint, y)?;
    let ll = match gamma {
        None => streaming::deformed_likelihood_var(&mut tape, &lat)?,
        Some(g) => {
            let g = tape.constant(g.clone());
            streaming::modified_likelihood_var(&mut tape, &lat, schedule, g, true)?
        }
    };
    let value = tape.value(ll).values()[0];
    if !trainable {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(ll)?;
    Ok((value, p.gradients(&grads).iter().flat_map(|t| t.values().to_vec()).collect()))
}

fn focce_objective(omega: &FocceNet, x: &Tensor, y: &[usize], schedule: &ContextSchedule, trainable: bool) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let p = omega.params().bind(&mut tape, trainable);
    let out = omega.densities(&mut tape, &p, x, y, schedule)?;
    let obj = omega.objective(&mut tape, &out)?;
    let value = tape.value(obj).values()[0];
    if !trainable {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(obj)?;
    Ok((value, p.gradients(&grads).iter().flat_map(|t| t.values().to_vec()).collect()))
}

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;
const FD_TOL: f64 = 1e-3;

/// Reverse-mode gradients against central differences over every
/// parameter coordinate.
pub fn gradient_suite(seeds: usize, base_seed: u64) -> PropertyReport {
    timed(GRADIENTS, || {
        let mut worst: f64 = 0.0;
        let mut coords = 0usize;
        for s in 0..seeds {
            let seed = base_seed + s as u64;
            let mut pb = Problem::new(seed).map_err(fail)?;
            let schedule = pb.schedule().map_err(fail)?;
            let gamma = pb.log_gamma(0.5).map_err(fail)?;
            let (x, y) = (pb.x.clone(), pb.y.clone());
            let flat = pb.theta.params().flatten();
            for (label, g) in [("deformed", None), ("modified", Some(&gamma))] {
                let (_, analytic) = theta_likelihood(&pb.theta, &x, &y, &schedule, g, true).map_err(fail)?;
                let theta = &mut pb.theta;
                let mut f = |w: &[f64]| {
                    theta.params_mut().set_flat(w).expect("flat length");
                    theta_likelihood(theta, &x, &y, &schedule, g, false).map(|r| r.0).unwrap_or(f64::NAN)
                };
                let report = check_coordinates(&mut f, &flat, &analytic, None, FD_STEP, FD_FLOOR);
                pb.theta.params_mut().set_flat(&flat).map_err(fail)?;
                if !report.passes(FD_TOL) {
                    return Err(format!("seed {seed}, {label} likelihood wrt theta: {report:?}"));
                }
                worst = worst.max(report.max_rel_error);
                coords += flat.len();
            }
            let flat = pb.omega.params().flatten();
            let (_, analytic) = focce_objective(&pb.omega, &x, &y, &schedule, true).map_err(fail)?;
            let omega = &mut pb.omega;
            let mut f = |w: &[f64]| {
                omega.params_mut().set_flat(w).expect("flat length");
                focce_objective(omega, &x, &y, &schedule, false).map(|r| r.0).unwrap_or(f64::NAN)
            };
            let report = check_coordinates(&mut f, &flat, &analytic, None, FD_STEP, FD_FLOOR);
            if !report.passes(FD_TOL) {
                return Err(format!("seed {seed}, FoCCE objective wrt omega: {report:?}"));
            }
            worst = worst.max(report.max_rel_error);
            coords += flat.len();
        }
        Ok(format!("{seeds} seeds, {coords} coordinates, max rel err {worst:.1e}"))
    })
}

/// `dL_mod/d omega` and `dL_chi/d theta` are exactly zero, with both
/// networks trainable on one tape and `lambda_gamma > 0`.
pub fn isolation_suite(seeds: usize, base_seed: u64) -> PropertyReport {
    timed(ISOLATION, || {
        let weights = ObjectiveWeights {
            lambda_mod: 1.0,
            lambda_chi: 0.7,
            lambda_gamma: 0.5,
        };
        let opts = ObjectiveOptions {
            trainable: true,
            gamma_active: true,
            with_deformed: false,
        };
        for s in 0..seeds {
            let seed = base_seed + s as u64;
            let pb = Problem::new(seed).map_err(fail)?;
            let obj = total_objective(&pb.theta, Some(&pb.omega), &pb.x, &pb.y, pb.chunk, &weights, ObjectiveKind::FocceModified, opts)
                .map_err(fail)?;
            let omega = obj.omega.as_ref().ok_or("omega not bound")?;
            let g_mod = obj.tape.backward(obj.modified).map_err(fail)?;
            if let Some(bad) = omega.gradients(&g_mod).iter().position(|t| t.values().iter().any(|&v| v != 0.0)) {
                return Err(format!("seed {seed}: d L_mod / d omega nonzero in tensor {bad}"));
            }
            let focce = obj.focce.ok_or("no FoCCE term")?;
            let g_chi = obj.tape.backward(focce).map_err(fail)?;
            if let Some(bad) = obj.theta.gradients(&g_chi).iter().position(|t| t.values().iter().any(|&v| v != 0.0)) {
                return Err(format!("seed {seed}: d L_chi / d theta nonzero in tensor {bad}"));
            }
            // The cross terms are zero for the right reason: each network
            // does receive gradient from its own term.
            let own = omega.gradients(&g_chi).iter().any(|t| t.values().iter().any(|&v| v != 0.0))
                && obj.theta.gradients(&g_mod).iter().any(|t| t.values().iter().any(|&v| v != 0.0));
            if !own {
                return Err(format!("seed {seed}: a network received no gradient from its own term"));
            }
        }
        Ok(format!("{seeds} seeds, cross gradients exactly zero"))
    })
}

/// The three reductions: zero `log gamma`, a single chunk, and
/// `lambda_gamma = 0` training gradients.
pub fn reduction_suite(tables: usize, seeds: usize, base_seed: u64) -> PropertyReport {
    timed(REDUCTIONS, || {
        let mut rng = seeded(base_seed);
        let mut worst_a: f64 = 0.0;
        for i in 0..tables {
            let table = random_table(&mut rng, 6, 4, 5);
            let schedule = random_schedule(&mut rng, table.frames()).map_err(fail)?;
            let zero = FoccTable::zeros(table.frames(), table.target_len());
            let m = streaming::modified_likelihood(&table, &schedule, &zero, true).map_err(fail)?;
            let d = streaming::deformed_likelihood(&table).map_err(fail)?;
            if !((m - d).abs() <= 1e-12) {
                return Err(format!("(a) table {i}: modified {m} vs deformed {d}"));
            }
            worst_a = worst_a.max((m - d).abs());
        }
        for s in 0..seeds {
            let seed = base_seed + 1 + s as u64;
            let mut rng = seeded(seed);
            let t = rng.random_range(1..=6);
            let c = rng.random_range(t..=t + 2);
            let chunk = ChunkParams {
                chunk_size: c,
                right_context: 0,
            };
            let theta = TransducerNet::new(&mut rng, tiny_transducer_config(1)).map_err(fail)?;
            let omega = tiny_focce(seed, 1, chunk).map_err(fail)?;
            let x = features(&mut rng, t, 3);
            let u = rng.random_range(0..=3);
            let y = labels(&mut rng, u, 4);
            let schedule = chunk.schedule(t).map_err(fail)?;
            let mut tape = Tape::new();
            let p = omega.params().bind(&mut tape, false);
            let out = omega.densities(&mut tape, &p, &x, &y, &schedule).map_err(fail)?;
            let lg = omega.log_gamma(&mut tape, &out, 0.25).map_err(fail)?;
            let lg = tape.value(lg).clone();
            let (m, _) = theta_likelihood(&theta, &x, &y, &schedule, Some(&lg), false).map_err(fail)?;
            let (d, _) = theta_likelihood(&theta, &x, &y, &schedule, None, false).map_err(fail)?;
            let full = ContextSchedule::new(t, t, t).map_err(fail)?;
            let table = theta.build_prob_table(&x, &y, &full).map_err(fail)?;
            let plain = lattice::likelihood(&table).map_err(fail)?;
            if m != d || (d - plain).abs() > 1e-12 {
                return Err(format!("(b) seed {seed}, C={c} >= T={t}: modified {m}, deformed {d}, full {plain}"));
            }

            let weights = ObjectiveWeights {
                lambda_mod: 1.0,
                lambda_chi: 0.3,
                lambda_gamma: 0.0,
            };
            let opts = ObjectiveOptions {
                trainable: true,
                gamma_active: true,
                with_deformed: false,
            };
            let pb = Problem::new(seed).map_err(fail)?;
            let a = total_objective(&pb.theta, Some(&pb.omega), &pb.x, &pb.y, pb.chunk, &weights, ObjectiveKind::FocceModified, opts)
                .map_err(fail)?;
            let b = total_objective(&pb.theta, None, &pb.x, &pb.y, pb.chunk, &weights, ObjectiveKind::DeformedBaseline, opts)
                .map_err(fail)?;
            let (ga, _) = a.gradients().map_err(fail)?;
            let (gb, _) = b.gradients().map_err(fail)?;
            if ga != gb {
                return Err(format!("(c) seed {seed}: theta gradients differ at lambda_gamma = 0"));
            }
        }
        Ok(format!(
            "(a) {tables} tables max |diff| {worst_a:.1e}; (b), (c) exact over {seeds} seeds"
        ))
    })
}

fn random_flow(dim: usize, cond_dim: usize, depth: usize, group: usize, seed: u64, head_scale: f64) -> Result<(ParamStore, Maf)> {
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    let flow = Maf::new(
        &mut store,
        &mut rng,
        "flow",
        MafConfig {
            dim,
            cond_dim,
            hidden: 8,
            blocks: 2,
            depth,
            group,
            scale_clamp: 3.0,
        },
    )?;
    for id in flow.head_params() {
        for v in store.get_mut(id).values_mut() {
            *v = head_scale * normal(&mut rng);
        }
    }
    Ok((store, flow))
}

/// Round trip, log-determinant against a numerical Jacobian, density
/// normalization on a grid, and the identity value at the origin.
pub fn flow_suite(seeds: usize, base_seed: u64) -> PropertyReport {
    timed(FLOW, || {
        let (mut rt, mut jac): (f64, f64) = (0.0, 0.0);
        for s in 0..seeds {
            let seed = base_seed + s as u64;
            let mut rng = seeded(seed);
            let dim = 1 + s % 4;
            let cond_dim = s % 3;
            let (store, flow) = random_flow(dim, cond_dim, 1 + s % 2, 1, seed, 0.5).map_err(fail)?;
            let v: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let c: Vec<f64> = (0..cond_dim).map(|_| normal(&mut rng)).collect();
            let (z, log_det) = flow.forward(&store, &v, &c);
            let back = flow.inverse(&store, &z, &c);
            let err = v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if !(err <= 1e-8) {
                return Err(format!("seed {seed}: round-trip error {err:.2e}"));
            }
            rt = rt.max(err);
            let h = 1e-5;
            let mut j = DMatrix::<f64>::zeros(dim, dim);
            for col in 0..dim {
                let mut up = v.clone();
                let mut down = v.clone();
                up[col] += h;
                down[col] -= h;
                let (zu, _) = flow.forward(&store, &up, &c);
                let (zd, _) = flow.forward(&store, &down, &c);
                for row in 0..dim {
                    j[(row, col)] = (zu[row] - zd[row]) / (2.0 * h);
                }
            }
            let numeric = j.determinant().abs().ln();
            let rel = (numeric - log_det).abs() / log_det.abs().max(1e-3);
            if !(rel <= 1e-5) {
                return Err(format!("seed {seed}: log-det {log_det} vs numerical {numeric}"));
            }
            jac = jac.max(rel);
        }

        let mut worst_mass: f64 = 0.0;
        for (k, dim) in [1usize, 2].into_iter().enumerate() {
            let (store, flow) = random_flow(dim, 1, 2, 1, base_seed + 100 + k as u64, 0.2).map_err(fail)?;
            let c = [0.3];
            let (lo, hi, n) = (-16.0, 16.0, if dim == 1 { 4000 } else { 640 });
            let step = (hi - lo) / n as f64;
            let mid = |i: usize| lo + (i as f64 + 0.5) * step;
            let mut log_mass = f64::NEG_INFINITY;
            if dim == 1 {
                for i in 0..n {
                    log_mass = log_add_exp(log_mass, flow.log_density_f64(&store, &[mid(i)], &c));
                }
            } else {
                for i in 0..n {
                    for j in 0..n {
                        log_mass = log_add_exp(log_mass, flow.log_density_f64(&store, &[mid(i), mid(j)], &c));
                    }
                }
            }
            let mass = (log_mass + dim as f64 * step.ln()).exp();
            if !((mass - 1.0).abs() <= 2e-2) {
                return Err(format!("dim {dim}: density integrates to {mass}"));
            }
            worst_mass = worst_mass.max((mass - 1.0).abs());
        }

        let mut store = ParamStore::new();
        let flow = Maf::new(
            &mut store,
            &mut seeded(base_seed),
            "identity",
            MafConfig {
                dim: 2,
                cond_dim: 3,
                hidden: 8,
                blocks: 2,
                depth: 1,
                group: 2,
                scale_clamp: 3.0,
            },
        )
        .map_err(fail)?;
        let at_zero = flow.log_density_f64(&store, &[0.0, 0.0], &[0.4, -1.0, 2.0]);
        if !((at_zero + 1.837877).abs() <= 1e-6) {
            return Err(format!("identity flow at the origin gives {at_zero}"));
        }
        Ok(format!(
            "round trip {rt:.1e}, log-det rel {jac:.1e}, |mass - 1| {worst_mass:.1e}, identity {at_zero:.6}"
        ))
    })
}

fn rows_equal(a: &Tensor, b: &Tensor, rows: usize) -> bool {
    let w = a.shape()[1];
    a.values()[..rows * w]
        .iter()
        .zip(&b.values()[..rows * w])
        .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Perturbing any raw frame past `e(t)` leaves every output at frames
/// `<= t` bit-identical, for both encoders and the probability table.
pub fn causality_suite(probes: usize, base_seed: u64) -> PropertyReport {
    timed(CAUSALITY, || {
        let mut rng = seeded(base_seed);
        for probe in 0..probes {
            let stack = rng.random_range(1..=2);
            let chunk = ChunkParams {
                chunk_size: rng.random_range(1..=3),
                right_context: rng.random_range(0..=1),
            };
            let theta = TransducerNet::new(&mut rng, tiny_transducer_config(stack)).map_err(fail)?;
            let omega = tiny_focce(base_seed + probe as u64, stack, chunk).map_err(fail)?;
            let raw_len = rng.random_range(6..=14);
            let x = features(&mut rng, raw_len, 3);
            let frames = raw_len.div_ceil(stack);
            let schedule = chunk.schedule(frames).map_err(fail)?;
            let candidates: Vec<usize> = (1..=frames).filter(|&t| schedule.end(t) * stack < raw_len).collect();
            if candidates.is_empty() {
                continue;
            }
            let t = candidates[rng.random_range(0..candidates.len())];
            let first_hidden = schedule.end(t) * stack;
            let r = rng.random_range(first_hidden..raw_len);
            let mut x2 = x.clone();
            for v in &mut x2.values_mut()[r * 3..(r + 1) * 3] {
                *v += 3.0 * normal(&mut rng);
            }
            let y = labels(&mut rng, 2, 4);

            let encode_theta = |input: &Tensor| -> Result<Tensor> {
                let mut tape = Tape::new();
                let p = theta.params().bind(&mut tape, false);
                let f = theta.encode(&mut tape, &p, &theta.stack(input)?, &schedule)?;
                Ok(tape.value(f).clone())
            };
            let encode_omega = |input: &Tensor| -> Result<Tensor> {
                let mut tape = Tape::new();
                let p = omega.params().bind(&mut tape, false);
                let f = omega.encode(&mut tape, &p, &omega.stack(input)?, &schedule)?;
                Ok(tape.value(f).clone())
            };
            let table = |input: &Tensor| -> Result<Tensor> {
                let pt = theta.build_prob_table(input, &y, &schedule)?;
                let (lb, ll) = (pt.log_blank(), pt.log_label());
                let u1 = y.len() + 1;
                let v = theta.config().vocab;
                let mut out = Vec::with_capacity(frames * u1 * (v + 1));
                for tt in 0..frames {
                    for u in 0..u1 {
                        out.push(lb.values()[tt * u1 + u]);
                        out.extend_from_slice(&ll.values()[(tt * u1 + u) * v..(tt * u1 + u + 1) * v]);
                    }
                }
                Ok(Tensor::from_parts(vec![frames, u1 * (v + 1)], out))
            };
            for (what, f) in [
                ("theta encoder", &encode_theta as &dyn Fn(&Tensor) -> Result<Tensor>),
                ("omega encoder", &encode_omega),
                ("probability table", &table),
            ] {
                let a = f(&x).map_err(fail)?;
                let b = f(&x2).map_err(fail)?;
                if !rows_equal(&a, &b, t) {
                    return Err(format!(
                        "probe {probe}: {what} output at frames <= {t} changed when raw frame {} (past e(t)={}) moved",
                        r + 1,
                        schedule.end(t)
                    ));
                }
            }
        }
        Ok(format!("{probes} probes, both encoders and the table bit-identical"))
    })
}

/// Random tiny transducer with sharpened parameters.
pub fn random_decoder_model(seed: u64, vocab: usize) -> Result<TransducerNet> {
    let mut rng = seeded(seed);
    let mut cfg = tiny_transducer_config(1);
    cfg.vocab = vocab;
    let mut net = TransducerNet::new(&mut rng, cfg)?;
    let flat: Vec<f64> = net.params().flatten().iter().map(|_| 1.5 * normal(&mut rng)).collect();
    net.params_mut().set_flat(&flat)?;
    Ok(net)
}

/// Exhaustive-width beam against enumeration MAP, and width 1 against greedy.
pub fn decoder_suite(models: usize, base_seed: u64) -> PropertyReport {
    timed(DECODER, || {
        let mut rng = seeded(base_seed);
        let mut map_checked = 0;
        for m in 0..models {
            let vocab = rng.random_range(1..=3);
            let t = rng.random_range(1..=4);
            let net = random_decoder_model(base_seed + m as u64, vocab).map_err(fail)?;
            let x = features(&mut rng, t, 3);
            let schedule = ContextSchedule::new(rng.random_range(1..=2), 0, t).map_err(fail)?;

            let opts = DecodeOptions::default();
            let mut scorer = net.scorer(&x, &schedule).map_err(fail)?;
            let greedy = greedy_decode(&mut scorer, &opts);
            let beam1 = beam_decode(&mut scorer, 1, &opts).map_err(fail)?;
            if greedy != beam1 {
                return Err(format!("model {m}: greedy {greedy:?} vs beam-1 {beam1:?}"));
            }

            let max_len = 2;
            let exhaustive = DecodeOptions {
                max_symbols_per_frame: max_len,
                max_output_len: max_len,
            };
            let width = sequence_count(vocab, max_len) * 2;
            let beam = beam_decode(&mut scorer, width, &exhaustive).map_err(fail)?;
            let (map, map_score) = exhaustive_map(&mut scorer, max_len).map_err(fail)?;
            let beam_score = crate::training::sequence_log_likelihood(&mut scorer, &beam).map_err(fail)?;
            if beam != map && (beam_score - map_score).abs() > 1e-12 {
                return Err(format!(
                    "model {m}: exhaustive beam {beam:?} ({beam_score}) vs MAP {map:?} ({map_score})"
                ));
            }
            map_checked += 1;
        }
        Ok(format!("{models} models: beam 1 == greedy, {map_checked} exhaustive MAP matches"))
    })
}

/// Runs every suite at `level`. `likelihood` replaces the DP likelihood in
/// the forward oracle property.
pub fn run_suite(level: Level, likelihood: Option<LikelihoodFn<'_>>) -> SuiteReport {
    let c = level.counts();
    let dp: LikelihoodFn<'_> = &lattice::likelihood;
    let properties = vec![
        forward_oracle(c.tables, 11, likelihood.unwrap_or(dp)),
        streaming_oracle(c.tables, 12),
        reduction_suite(c.tables, c.seeds, 13),
        gradient_suite(c.seeds, 14),
        isolation_suite(c.seeds, 15),
        flow_suite(c.seeds, 16),
        causality_suite(c.probes, 17),
        decoder_suite(c.models, 18),
    ];
    SuiteReport {
        level,
        passed: properties.iter().all(|p| p.passed),
        properties,
    }
}

/// A forward recursion with the sign of the label term flipped, for
/// checking that the oracle suite catches such a defect.
pub fn sign_flipped_likelihood(table: &LocalProbTable) -> Result<f64> {
    let (t_len, u1) = (table.frames(), table.target_len() + 1);
    let mut alpha = vec![f64::NEG_INFINITY; t_len * u1];
    for t in 0..t_len {
        for u in 0..u1 {
            let mut a = if t == 0 && u == 0 { 0.0 } else { f64::NEG_INFINITY };
            if t > 0 {
                a = log_add_exp(a, alpha[(t - 1) * u1 + u] + table.log_blank_at(t - 1, u));
            }
            if u > 0 {
                a = log_add_exp(a, alpha[t * u1 + u - 1] - table.log_emit_at(t, u - 1));
            }
            alpha[t * u1 + u] = a;
        }
    }
    Ok(alpha[t_len * u1 - 1] + table.log_blank_at(t_len - 1, u1 - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutation_is_caught_and_named() {
        let report = forward_oracle(20, 1, &sign_flipped_likelihood);
        assert!(!report.passed);
        assert_eq!(report.name, FORWARD_ORACLE);
        let clean = forward_oracle(20, 1, &lattice::likelihood);
        assert!(clean.passed, "{}", clean.detail);
    }

    #[test]
    fn fast_suite_passes() {
        let report = run_suite(Level::Fast, None);
        assert!(report.passed, "{}", report.human());
    }
}
