use serde::{Deserialize, Serialize};

use crate::deepdmd::{KoopmanModel, MixedLifting, UNIT_EIGENVALUE_TOL};
use crate::error::{Error, Result};
use crate::numerics::linalg::closest_to_unity;
use crate::numerics::{eigenvalues, CheckedLu, Matrix, DEFAULT_MAX_CONDITION};
use crate::observables::mu_from_lifted;

/// How the equilibrium condition is closed in the lifted space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintForm {
    /// `(I − K_x)·z = K_u·ψ_u(u)`; only for models without mixed terms.
    NoMixed,
    /// `(I − K_x − K_xu·M_u(u))·z = K_u·ψ_u(u)`; needs dictionary mixed terms.
    SeparatedInU,
    /// `z = (I − K_x)⁻¹·[K_xu·ψ_xu(x_e, u) + K_u·ψ_u(u)]` with `x_e` the
    /// read-out of `z`, solved by damped fixed-point iteration.
    SeparatedInX,
}

impl ConstraintForm {
    pub const ALL: [Self; 3] = [Self::NoMixed, Self::SeparatedInU, Self::SeparatedInX];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoMixed => "no_mixed",
            Self::SeparatedInU => "separated_in_u",
            Self::SeparatedInX => "separated_in_x",
        }
    }
}

impl std::str::FromStr for ConstraintForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown constraint form {s:?}")))
    }
}

/// Settings for the inner iteration of [`ConstraintForm::SeparatedInX`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    /// Weight on the new iterate; 1 is the undamped map.
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

/// A predicted lifted equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    /// `ψ_x(x_e)`.
    pub lifted: Vec<f64>,
    /// 1-norm condition estimate of the solved system.
    pub condition: f64,
    /// Inner iterations; 0 for the direct forms.
    pub iterations: usize,
}

impl Equilibrium {
    pub fn state(&self, n: usize) -> &[f64] {
        &self.lifted[..n]
    }
}

fn check_unit_eigenvalue(m: &Matrix) -> Result<()> {
    if let Some(((re, im), d)) = closest_to_unity(&eigenvalues(m)?) {
        if d < UNIT_EIGENVALUE_TOL {
            return Err(Error::UnitEigenvalue {
                re,
                im,
                tolerance: UNIT_EIGENVALUE_TOL,
            });
        }
    }
    Ok(())
}

fn identity_minus(m: &Matrix) -> Matrix {
    let mut a = m.scale(-1.0);
    for i in 0..a.rows() {
        a[(i, i)] += 1.0;
    }
    a
}

/// Evaluates equilibria of one model under one form, factoring `I − K_x`
/// once.
#[derive(Debug, Clone)]
pub struct SteadyStateEvaluator<'a> {
    model: &'a KoopmanModel,
    form: ConstraintForm,
    base: Option<CheckedLu>,
    fixed_point: FixedPointConfig,
    max_condition: f64,
}

impl<'a> SteadyStateEvaluator<'a> {
    pub fn new(model: &'a KoopmanModel, form: ConstraintForm) -> Result<Self> {
        Self::with_settings(model, form, FixedPointConfig::default(), DEFAULT_MAX_CONDITION)
    }

    /// Checks that `form` applies to `model` and that `K_x` has no
    /// eigenvalue near 1.
    pub fn with_settings(
        model: &'a KoopmanModel,
        form: ConstraintForm,
        fixed_point: FixedPointConfig,
        max_condition: f64,
    ) -> Result<Self> {
        let unavailable = |reason: &str| {
            Err(Error::FormUnavailable {
                form: form.name(),
                reason: reason.to_string(),
            })
        };
        match (form, model.psi_xu()) {
            (ConstraintForm::NoMixed, Some(_)) => {
                return unavailable("the model has mixed terms; dropping K_xu would change the equilibrium")
            }
            (ConstraintForm::SeparatedInU, None) => return unavailable("the model has no mixed terms"),
            (ConstraintForm::SeparatedInU, Some(MixedLifting::Learned { .. })) => {
                return unavailable("learned mixed observables do not factor as M_u(u)·ψ_x(x)")
            }
            _ => {}
        }
        if !(fixed_point.damping > 0.0 && fixed_point.damping <= 1.0) {
            return Err(Error::Config("fixed-point damping must lie in (0, 1]".into()));
        }
        check_unit_eigenvalue(model.k_x())?;
        let base = match form {
            ConstraintForm::SeparatedInU => None,
            _ => Some(CheckedLu::new(&identity_minus(model.k_x()), max_condition)?),
        };
        Ok(Self {
            model,
            form,
            base,
            fixed_point,
            max_condition,
        })
    }

    pub fn model(&self) -> &KoopmanModel {
        self.model
    }

    pub fn form(&self) -> ConstraintForm {
        self.form
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Equilibrium> {
        let model = self.model;
        if u.len() != model.input_dim() {
            return Err(Error::Dimension(format!(
                "input has length {}, model has {} inputs",
                u.len(),
                model.input_dim()
            )));
        }
        let psi_u = model.lift_input(u);
        let forcing = model.k_u().matvec(&psi_u);
        match self.form {
            ConstraintForm::NoMixed => {
                let base = self.base.as_ref().expect("factored at construction");
                Ok(Equilibrium {
                    lifted: base.solve_vec(&forcing),
                    condition: base.condition,
                    iterations: 0,
                })
            }
            ConstraintForm::SeparatedInU => {
                let k_xu = model.k_xu().expect("checked at construction");
                let effective = model.k_x().add(&k_xu.matmul(&mu_from_lifted(&psi_u, model.n_l())));
                check_unit_eigenvalue(&effective)?;
                let lu = CheckedLu::new(&identity_minus(&effective), self.max_condition)?;
                Ok(Equilibrium {
                    lifted: lu.solve_vec(&forcing),
                    condition: lu.condition,
                    iterations: 0,
                })
            }
            ConstraintForm::SeparatedInX => self.fixed_point(u, &forcing),
        }
    }

    fn fixed_point(&self, u: &[f64], forcing: &[f64]) -> Result<Equilibrium> {
        let model = self.model;
        let base = self.base.as_ref().expect("factored at construction");
        let n = model.state_dim();
        let Some(k_xu) = model.k_xu() else {
            return Ok(Equilibrium {
                lifted: base.solve_vec(forcing),
                condition: base.condition,
                iterations: 0,
            });
        };
        let solve_at = |x: &[f64]| -> Result<Vec<f64>> {
            let mixed = model.lift_mixed(x, u).expect("mixed lifting present");
            let rhs: Vec<f64> = forcing.iter().zip(k_xu.matvec(&mixed)).map(|(a, b)| a + b).collect();
            let z = base.solve_vec(&rhs);
            if z.iter().all(|v| v.is_finite()) {
                Ok(z)
            } else {
                Err(Error::NonFinite("fixed-point iterate".into()))
            }
        };
        // Start from the equilibrium with the mixed terms switched off.
        let start = base.solve_vec(forcing)[..n].to_vec();
        let FixedPointConfig {
            damping,
            tolerance,
            max_iterations,
        } = self.fixed_point;
        let finish = |x: &[f64], iterations: usize| -> Result<Equilibrium> {
            // One more undamped pass so the lifted vector matches its read-out.
            Ok(Equilibrium {
                lifted: solve_at(x)?,
                condition: base.condition,
                iterations,
            })
        };

        let mut x = start.clone();
        let mut change = f64::INFINITY;
        for it in 1..=max_iterations {
            let Ok(z) = solve_at(&x) else {
                change = f64::INFINITY;
                break;
            };
            change = 0.0;
            let mut scale: f64 = 1.0;
            for (xi, zi) in x.iter_mut().zip(&z[..n]) {
                let next = (1.0 - damping) * *xi + damping * zi;
                change = change.max((next - *xi).abs());
                scale = scale.max(next.abs());
                *xi = next;
            }
            if !change.is_finite() {
                break;
            }
            if change <= tolerance * scale {
                return finish(&x, it);
            }
        }

        // The damped map is not a contraction everywhere; fall back to Newton
        // on the state read-out, r(x) = x − G(x), from the same start.
        let residual = |x: &[f64]| -> Option<Vec<f64>> {
            let z = solve_at(x).ok()?;
            Some(x.iter().zip(&z[..n]).map(|(a, b)| a - b).collect())
        };
        let norm = |r: &[f64]| r.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut x = start;
        let Some(mut r) = residual(&x) else {
            return Err(Error::FixedPoint {
                iterations: max_iterations,
                change,
            });
        };
        for it in 1..=max_iterations {
            let scale = norm(&x).max(1.0);
            if norm(&r) <= tolerance * scale {
                return finish(&x, max_iterations + it);
            }
            // Central differences are exact inside one linear piece of the
            // ReLU lifting, which is where Newton converges.
            let mut jac = Matrix::zeros(n, n);
            for j in 0..n {
                let h = 1e-7 * x[j].abs().max(1.0);
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let (Some(rp), Some(rm)) = (residual(&xp), residual(&xm)) else {
                    break;
                };
                for i in 0..n {
                    jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let Ok(lu) = CheckedLu::new(&jac, self.max_condition) else {
                break;
            };
            let step = lu.solve_vec(&r);
            let current = norm(&r);
            let mut t = 1.0;
            let mut accepted = false;
            while t >= 1e-6 {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                if let Some(rt) = residual(&trial) {
                    if norm(&rt) < current {
                        x = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::FixedPoint {
            iterations: max_iterations,
            change,
        })
    }

    /// `−ê_iᵀ·ψ_x(x_e)`.
    pub fn objective(&self, u: &[f64], target: usize) -> Result<f64> {
        Ok(-self.evaluate(u)?.lifted[target])
    }

    /// `‖z − (K_x·z + K_xu·ψ_xu + K_u·ψ_u(u))‖_∞` with the mixed term formed
    /// the way this evaluator's form writes it.
    pub fn equilibrium_residual(&self, z: &[f64], u: &[f64]) -> f64 {
        let model = self.model;
        let psi_u = model.lift_input(u);
        let mut next = model.k_x().matvec(z);
        if let Some(k_xu) = model.k_xu() {
            let mixed = match self.form {
                ConstraintForm::SeparatedInU => mu_from_lifted(&psi_u, model.n_l()).matvec(z),
                _ => model
                    .lift_mixed(&z[..model.state_dim()], u)
                    .expect("mixed lifting present"),
            };
            next.iter_mut().zip(k_xu.matvec(&mixed)).for_each(|(a, b)| *a += b);
        }
        next.iter_mut()
            .zip(model.k_u().matvec(&psi_u))
            .for_each(|(a, b)| *a += b);
        z.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `ψ_x(x_e)` for a constant input `u`.
pub fn steady_state_map(model: &KoopmanModel, u: &[f64], form: ConstraintForm) -> Result<Vec<f64>> {
    Ok(SteadyStateEvaluator::new(model, form)?.evaluate(u)?.lifted)
}

/// `−ψ_x(x_e)[target]`; by inclusiveness this is minus a physical state.
pub fn objective(model: &KoopmanModel, u: &[f64], target: usize, form: ConstraintForm) -> Result<f64> {
    if target >= model.state_dim() {
        return Err(Error::Config(format!(
            "target index {target} out of range for {} states",
            model.state_dim()
        )));
    }
    SteadyStateEvaluator::new(model, form)?.objective(u, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deepdmd::Lifting;
    use crate::dmdc::LinearModel;

    pub(crate) fn scalar(a: f64, b: f64) -> KoopmanModel {
        KoopmanModel::from_linear(&LinearModel {
            a: Matrix::from_diag(&[a]),
            b: Matrix::from_diag(&[b]),
            fit_residual: 0.0,
            rank: 2,
            rank_deficient: false,
        })
        .unwrap()
    }

    /// `x⁺ = a·x + c·x·u + b·u` with identity observables and the exact
    /// dictionary mixed term `x·u`.
    fn bilinear(a: f64, c: f64, b: f64) -> KoopmanModel {
        KoopmanModel::new(
            Lifting::identity(1).unwrap(),
            Lifting::identity(1).unwrap(),
            Some(MixedLifting::Dictionary),
            Matrix::from_diag(&[a]),
            Some(Matrix::from_diag(&[c])),
            Matrix::from_diag(&[b]),
        )
        .unwrap()
    }

    #[test]
    fn scalar_examples() {
        let m = scalar(0.5, 1.0);
        assert!((steady_state_map(&m, &[2.0], ConstraintForm::NoMixed).unwrap()[0] - 4.0).abs() < 1e-14);
        assert!((objective(&m, &[2.0], 0, ConstraintForm::NoMixed).unwrap() + 4.0).abs() < 1e-14);
        let zero = scalar(0.5, 0.0);
        for u in [0.0, 3.0, -7.0] {
            assert_eq!(
                steady_state_map(&zero, &[u], ConstraintForm::SeparatedInX).unwrap(),
                vec![0.0]
            );
        }
        assert!(objective(&m, &[2.0], 1, ConstraintForm::NoMixed).is_err());
    }

    #[test]
    fn unit_eigenvalue_is_refused() {
        let m = scalar(1.0, 1.0);
        assert!(matches!(
            steady_state_map(&m, &[1.0], ConstraintForm::NoMixed),
            Err(Error::UnitEigenvalue { .. })
        ));
    }

    #[test]
    fn forms_must_match_the_mixed_terms() {
        let lin = scalar(0.5, 1.0);
        assert!(matches!(
            steady_state_map(&lin, &[1.0], ConstraintForm::SeparatedInU),
            Err(Error::FormUnavailable { .. })
        ));
        let bil = bilinear(0.5, 0.1, 1.0);
        assert!(matches!(
            steady_state_map(&bil, &[1.0], ConstraintForm::NoMixed),
            Err(Error::FormUnavailable { .. })
        ));
        assert_eq!(
            "separated_in_x".parse::<ConstraintForm>().unwrap(),
            ConstraintForm::SeparatedInX
        );
        assert!("mixed".parse::<ConstraintForm>().is_err());
    }

    #[test]
    fn separated_forms_agree_on_a_bilinear_model() {
        let (a, c, b) = (0.4, 0.05, 1.0);
        let m = bilinear(a, c, b);
        for u in [0.0, 0.5, 1.0, 2.5, 4.0] {
            let exact = b * u / (1.0 - a - c * u);
            let in_u = SteadyStateEvaluator::new(&m, ConstraintForm::SeparatedInU).unwrap();
            let in_x = SteadyStateEvaluator::new(&m, ConstraintForm::SeparatedInX).unwrap();
            let zu = in_u.evaluate(&[u]).unwrap().lifted;
            let zx = in_x.evaluate(&[u]).unwrap().lifted;
            assert!((zu[0] - exact).abs() < 1e-12, "u = {u}");
            assert!((zx[0] - zu[0]).abs() < 1e-8, "u = {u}: {} vs {}", zx[0], zu[0]);
            assert!(in_u.equilibrium_residual(&zu, &[u]) < 1e-12);
            assert!(in_x.equilibrium_residual(&zx, &[u]) < 1e-8);
        }
    }

    #[test]
    fn newton_recovers_a_fixed_point_the_iteration_misses() {
        // Undamped, the map x ↦ 1 − x cycles between 1 and 0.
        let cycling = bilinear(0.0, -1.0, 1.0);
        // With damping 0.5 the map x ↦ −4x + 1 still has slope −1.5.
        let repelling = bilinear(0.0, -5.0, 1.0);
        for (m, damping, expected) in [(&cycling, 1.0, 0.5), (&repelling, 0.5, 1.0 / 6.0)] {
            let e = SteadyStateEvaluator::with_settings(
                m,
                ConstraintForm::SeparatedInX,
                FixedPointConfig {
                    damping,
                    ..FixedPointConfig::default()
                },
                DEFAULT_MAX_CONDITION,
            )
            .unwrap();
            let eq = e.evaluate(&[1.0]).unwrap();
            assert!((eq.lifted[0] - expected).abs() < 1e-9, "{} vs {expected}", eq.lifted[0]);
            assert!(eq.iterations > FixedPointConfig::default().max_iterations);
            assert!(e.equilibrium_residual(&eq.lifted, &[1.0]) < 1e-9);
        }
    }

    #[test]
    fn missing_fixed_point_is_an_error() {
        // x = x + 1 has no solution.
        let m = bilinear(0.0, 1.0, 1.0);
        let e = SteadyStateEvaluator::new(&m, ConstraintForm::SeparatedInX).unwrap();
        assert!(matches!(e.evaluate(&[1.0]), Err(Error::FixedPoint { .. })));
    }
}
