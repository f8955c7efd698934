use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deepdmd::KoopmanModel;
use crate::error::{Error, Result};
use crate::numerics::DEFAULT_MAX_CONDITION;
use crate::ssprog::map::{ConstraintForm, FixedPointConfig, SteadyStateEvaluator};
use crate::systems::UniformBox;

/// Maximize one state coordinate's predicted equilibrium over a box of
/// constant inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateProblem {
    pub target_index: usize,
    pub input_box: UniformBox,
    pub constraint_form: ConstraintForm,
}

impl SteadyStateProblem {
    pub fn validate(&self, model: &KoopmanModel) -> Result<()> {
        self.input_box.validate()?;
        if self.target_index >= model.state_dim() {
            return Err(Error::Config(format!(
                "target index {} out of range for {} states",
                self.target_index,
                model.state_dim()
            )));
        }
        if self.input_box.dim() != model.input_dim() {
            return Err(Error::Dimension(format!(
                "input box has {} channels, model has {} inputs",
                self.input_box.dim(),
                model.input_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    pub max_iterations: usize,
    /// Stop once a step moves every coordinate less than this.
    pub step_tolerance: f64,
    /// Central-difference step as a fraction of each channel's width.
    pub fd_relative_step: f64,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Objective spread below which the landscape counts as flat.
    pub flat_tolerance: f64,
    pub seed: u64,
    pub fixed_point: FixedPointConfig,
    pub max_condition: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_starts: 16,
            max_iterations: 200,
            step_tolerance: 1e-9,
            fd_relative_step: 1e-6,
            armijo: 1e-4,
            max_backtracks: 60,
            flat_tolerance: 1e-12,
            seed: 0,
            fixed_point: FixedPointConfig::default(),
            max_condition: DEFAULT_MAX_CONDITION,
        }
    }
}

/// One multi-start refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub u_initial: Vec<f64>,
    pub initial_value: Option<f64>,
    pub u_final: Vec<f64>,
    /// Predicted target value at `u_final`.
    pub value: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateSolution {
    pub u_star: Vec<f64>,
    pub predicted_lifted_equilibrium: Vec<f64>,
    pub predicted_value: f64,
    /// Filled in by verification against the true system.
    pub achieved_value: Option<f64>,
    pub target_index: usize,
    pub constraint_form: ConstraintForm,
    pub conditioning: f64,
    /// Residual of the one-step map at the returned equilibrium.
    pub equilibrium_residual: f64,
    /// Every evaluated start gave the same objective to within tolerance.
    pub flat_landscape: bool,
    pub starts: Vec<StartRecord>,
}

/// Latin-hypercube points in `b`: one per stratum in every channel.
pub fn latin_hypercube(b: &UniformBox, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; b.dim()]; n];
    for d in 0..b.dim() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in points.iter_mut().zip(strata) {
            let frac = (s as f64 + rng.random::<f64>()) / n as f64;
            p[d] = (b.lo[d] + frac * b.width(d)).clamp(b.lo[d], b.hi[d]);
        }
    }
    points
}

struct Refiner<'a> {
    eval: SteadyStateEvaluator<'a>,
    target: usize,
    input_box: &'a UniformBox,
    cfg: &'a OptimizerConfig,
}

impl Refiner<'_> {
    fn f(&self, u: &[f64]) -> Result<f64> {
        self.eval.objective(u, self.target)
    }

    /// Central differences, falling back to one-sided ones when an
    /// evaluation just outside the box fails.
    fn gradient(&self, u: &[f64], fu: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; u.len()];
        let mut probe = u.to_vec();
        for d in 0..u.len() {
            let h = self.cfg.fd_relative_step * self.input_box.width(d);
            probe[d] = u[d] + h;
            let plus = self.f(&probe);
            probe[d] = u[d] - h;
            let minus = self.f(&probe);
            probe[d] = u[d];
            g[d] = match (plus, minus) {
                (Ok(p), Ok(m)) => (p - m) / (2.0 * h),
                (Ok(p), Err(_)) => (p - fu) / h,
                (Err(_), Ok(m)) => (fu - m) / h,
                (Err(e), Err(_)) => return Err(e),
            };
        }
        Ok(g)
    }

    fn refine(&self, u0: Vec<f64>) -> StartRecord {
        let mut rec = StartRecord {
            u_initial: u0.clone(),
            initial_value: None,
            u_final: u0.clone(),
            value: None,
            iterations: 0,
            converged: false,
            error: None,
        };
        let mut u = u0;
        let mut fu = match self.f(&u) {
            Ok(v) => v,
            Err(e) => {
                rec.error = Some(e.to_string());
                return rec;
            }
        };
        rec.initial_value = Some(-fu);
        // Steps are scaled by width² so every channel moves on the same
        // relative scale.
        let w2: Vec<f64> = (0..u.len()).map(|d| self.input_box.width(d).powi(2)).collect();
        let mut alpha = f64::NAN;
        for it in 1..=self.cfg.max_iterations {
            rec.iterations = it;
            let g = match self.gradient(&u, fu) {
                Ok(g) => g,
                Err(e) => {
                    rec.error = Some(e.to_string());
                    break;
                }
            };
            let gs = g
                .iter()
                .zip(&w2)
                .map(|(gi, wi)| (gi * wi.sqrt()).abs())
                .fold(0.0, f64::max);
            if gs == 0.0 {
                rec.converged = true;
                break;
            }
            if !alpha.is_finite() {
                // First trial step crosses the whole box.
                alpha = 1.0 / gs;
            } else {
                alpha *= 4.0;
            }
            let mut accepted = None;
            for _ in 0..self.cfg.max_backtracks {
                let mut cand: Vec<f64> = u
                    .iter()
                    .zip(&g)
                    .zip(&w2)
                    .map(|((ui, gi), wi)| ui - alpha * wi * gi)
                    .collect();
                self.input_box.project(&mut cand);
                let decrease: f64 = g.iter().zip(&cand).zip(&u).map(|((gi, c), ui)| gi * (c - ui)).sum();
                if let Ok(fc) = self.f(&cand) {
                    if fc <= fu + self.cfg.armijo * decrease {
                        accepted = Some((cand, fc));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((cand, fc)) = accepted else {
                // No descent along the projected gradient: stationary.
                rec.converged = true;
                break;
            };
            let step = cand
                .iter()
                .zip(&u)
                .enumerate()
                .map(|(d, (c, ui))| (c - ui).abs() / self.input_box.width(d))
                .fold(0.0, f64::max);
            u = cand;
            fu = fc;
            if step < self.cfg.step_tolerance {
                rec.converged = true;
                break;
            }
        }
        rec.u_final = u;
        rec.value = Some(-fu);
        rec
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

fn ties(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Multi-start projected gradient over the box. Starts run in parallel;
/// the winner is the highest predicted value, ties going to the
/// lexicographically smallest input.
pub fn solve(model: &KoopmanModel, problem: &SteadyStateProblem, cfg: &OptimizerConfig) -> Result<SteadyStateSolution> {
    problem.validate(model)?;
    if cfg.n_starts == 0 {
        return Err(Error::Config("n_starts must be positive".into()));
    }
    let eval = SteadyStateEvaluator::with_settings(model, problem.constraint_form, cfg.fixed_point, cfg.max_condition)?;
    let refiner = Refiner {
        eval,
        target: problem.target_index,
        input_box: &problem.input_box,
        cfg,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts_u = latin_hypercube(&problem.input_box, cfg.n_starts, &mut rng);
    let starts: Vec<StartRecord> = starts_u.into_par_iter().map(|u0| refiner.refine(u0)).collect();

    let mut best: Option<&StartRecord> = None;
    for s in starts.iter().filter(|s| s.value.is_some()) {
        let v = s.value.expect("filtered");
        best = match best {
            None => Some(s),
            Some(b) => {
                let bv = b.value.expect("filtered");
                if ties(v, bv, cfg.flat_tolerance) {
                    Some(if lex_less(&s.u_final, &b.u_final) { s } else { b })
                } else if v > bv {
                    Some(s)
                } else {
                    Some(b)
                }
            }
        };
    }
    let Some(best) = best else {
        return Err(Error::Unsolvable {
            starts: starts.len(),
            last: starts.iter().rev().find_map(|s| s.error.clone()).unwrap_or_default(),
        });
    };
    let u_star = best.u_final.clone();
    let eq = refiner.eval.evaluate(&u_star)?;
    let predicted_value = eq.lifted[problem.target_index];

    let values: Vec<f64> = starts
        .iter()
        .flat_map(|s| s.initial_value.into_iter().chain(s.value))
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flat_landscape = ties(lo, hi, cfg.flat_tolerance);

    Ok(SteadyStateSolution {
        equilibrium_residual: refiner.eval.equilibrium_residual(&eq.lifted, &u_star),
        u_star,
        predicted_value,
        achieved_value: None,
        target_index: problem.target_index,
        constraint_form: problem.constraint_form,
        conditioning: eq.condition,
        flat_landscape,
        predicted_lifted_equilibrium: eq.lifted,
        starts,
    })
}
