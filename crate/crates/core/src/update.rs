//! Information-form (iterated) ESKF measurement update.
//!
//! Measurements are accumulated as `Hᵀ R⁻¹ H` and `Hᵀ R⁻¹ z` so that scans
//! with hundreds of residual rows never need an `m × m` inverse. Residuals
//! follow the convention `z = h(x) - y` and `H = ∂z/∂δx`, so the correction is
//! `δx = -K z - (I - K H) J⁻¹ (x̂ᵏ ⊟ x̂)` with
//! `K = (Hᵀ R⁻¹ H + P⁻¹)⁻¹ Hᵀ R⁻¹`.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::ins::{idx, symmetrize, ErrorCovariance, ErrorVector, NavState, ERROR_DIM};
use crate::manifold::right_jacobian;

/// One residual block with its Jacobian and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<const D: usize> {
    pub residual: SVector<f64, D>,
    pub jacobian: SMatrix<f64, D, ERROR_DIM>,
    pub covariance: SMatrix<f64, D, D>,
}

/// Running sums of `Hᵀ R⁻¹ H` and `Hᵀ R⁻¹ z`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoAccumulator {
    pub information: ErrorCovariance,
    pub weighted_residual: ErrorVector,
    pub blocks: usize,
    pub rows: usize,
}

impl Default for InfoAccumulator {
    fn default() -> Self {
        InfoAccumulator {
            information: ErrorCovariance::zeros(),
            weighted_residual: ErrorVector::zeros(),
            blocks: 0,
            rows: 0,
        }
    }
}

impl InfoAccumulator {
    pub fn add<const D: usize>(&mut self, obs: &Observation<D>) -> Result<()> {
        let r_inv = obs
            .covariance
            .try_inverse()
            .ok_or(Error::Numerical("singular measurement covariance"))?;
        let ht_rinv = obs.jacobian.transpose() * r_inv;
        self.information += ht_rinv * obs.jacobian;
        self.weighted_residual += ht_rinv * obs.residual;
        self.blocks += 1;
        self.rows += D;
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.blocks == 0
    }
}

/// Settings shared by every measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig {
    pub max_iterations: usize,
    /// Stop when `|δx| <` this.
    pub tolerance: f64,
    /// Use the exact right-Jacobian for the prior pull-back instead of identity.
    pub exact_prior_jacobian: bool,
    /// Joseph-form covariance update.
    pub joseph: bool,
    /// When false the extrinsic error states are held fixed.
    pub estimate_extrinsics: bool,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            max_iterations: 5,
            tolerance: 1e-4,
            exact_prior_jacobian: false,
            joseph: false,
            estimate_extrinsics: false,
        }
    }
}

impl UpdateConfig {
    fn active_dim(&self) -> usize {
        if self.estimate_extrinsics {
            ERROR_DIM
        } else {
            idx::EXT_ROT
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub state: NavState,
    pub covariance: ErrorCovariance,
    pub iterations: usize,
    pub converged: bool,
    /// Residual blocks used at the final iterate.
    pub blocks: usize,
}

/// Inverse of the prior pull-back Jacobian for error `e = x̂ᵏ ⊟ x̂`.
fn pullback_inverse(e: &ErrorVector, exact: bool) -> ErrorCovariance {
    let mut j = ErrorCovariance::identity();
    if exact {
        for i in [idx::ATT, idx::EXT_ROT] {
            let phi = e.fixed_rows::<3>(i).into_owned();
            let jr: Matrix3<f64> = right_jacobian(&phi);
            j.fixed_view_mut::<3, 3>(i, i).copy_from(&jr);
        }
    }
    j
}

fn sub(m: &ErrorCovariance, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| m[(r, c)])
}

/// Iterated ESKF update. `linearize` re-associates and stacks the residual
/// blocks at each iterate; returning `None` (or an empty accumulator) on the
/// first iterate means "not enough measurements" and yields `Ok(None)`.
pub fn iterated_update<F>(
    prior: &NavState,
    p: &ErrorCovariance,
    cfg: &UpdateConfig,
    mut linearize: F,
) -> Result<Option<UpdateOutcome>>
where
    F: FnMut(&NavState) -> Result<Option<InfoAccumulator>>,
{
    let n = cfg.active_dim();
    let mut x = *prior;
    let mut last: Option<(InfoAccumulator, DMatrix<f64>, Cholesky<f64, nalgebra::Dyn>)> = None;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..cfg.max_iterations.max(1) {
        let acc = match linearize(&x)? {
            Some(acc) if !acc.is_empty() => acc,
            _ => break,
        };
        iterations += 1;

        let e = x.boxminus(prior);
        let j_inv = pullback_inverse(&e, cfg.exact_prior_jacobian);
        let p_k = if cfg.exact_prior_jacobian { j_inv * p * j_inv.transpose() } else { *p };
        let p_k = sub(&p_k, n);
        let p_inv = p_k
            .clone()
            .cholesky()
            .ok_or(Error::Numerical("prior covariance not positive definite"))?
            .inverse();

        let info = sub(&acc.information, n);
        let lambda = &info + &p_inv;
        let chol = lambda
            .cholesky()
            .ok_or(Error::Numerical("posterior information not positive definite"))?;
        let pulled = j_inv * e;
        let rhs = DVector::from_fn(n, |i, _| acc.weighted_residual[i])
            + &p_inv * DVector::from_fn(n, |i, _| pulled[i]);
        let step = -chol.solve(&rhs);

        let mut dx = ErrorVector::zeros();
        dx.rows_mut(0, n).copy_from(&step);
        x = x.boxplus(&dx);
        last = Some((acc, p_k, chol));
        if dx.norm() < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let Some((acc, p_k, chol)) = last else {
        return Ok(None);
    };

    let info = sub(&acc.information, n);
    let gain_h = chol.solve(&info); // K H = Λ⁻¹ Hᵀ R⁻¹ H
    let a = DMatrix::<f64>::identity(n, n) - &gain_h;
    let active_post = if cfg.joseph {
        let lambda_inv = chol.inverse();
        &a * &p_k * a.transpose() + &lambda_inv * &info * &lambda_inv
    } else {
        &a * &p_k
    };

    let mut post = *p;
    for r in 0..n {
        for c in 0..n {
            post[(r, c)] = active_post[(r, c)];
        }
    }
    if n < ERROR_DIM {
        // Cross terms with held states follow (I - K H) P_af.
        let m = ERROR_DIM - n;
        let p_af = DMatrix::from_fn(n, m, |r, c| p[(r, n + c)]);
        let cross = &a * p_af;
        for r in 0..n {
            for c in 0..m {
                post[(r, n + c)] = cross[(r, c)];
                post[(n + c, r)] = cross[(r, c)];
            }
        }
    }

    Ok(Some(UpdateOutcome {
        state: x,
        covariance: symmetrize(&post),
        iterations,
        converged,
        blocks: acc.blocks,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector3, DMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng) -> ErrorCovariance {
        let a = ErrorCovariance::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let mut p = a * a.transpose() + ErrorCovariance::identity() * 0.05;
        // Held extrinsic block uncorrelated with the rest.
        for r in 0..ERROR_DIM {
            for c in 0..ERROR_DIM {
                if (r >= idx::EXT_ROT) != (c >= idx::EXT_ROT) {
                    p[(r, c)] = 0.0;
                }
            }
        }
        p
    }

    /// Position-only linear observations `z = H_p (p - p0) - y`.
    fn linear_problem(rng: &mut impl Rng, m: usize) -> (Vec<Observation<3>>, NavState) {
        let prior = NavState { position: Vector3::new(1.0, -2.0, 0.5), ..NavState::default() };
        let obs = (0..m)
            .map(|_| {
                let mut h = SMatrix::<f64, 3, ERROR_DIM>::zeros();
                let hp = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0)) + Matrix3::identity();
                h.fixed_view_mut::<3, 3>(0, idx::POS).copy_from(&hp);
                let y = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let l = Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
                Observation { residual: y, jacobian: h, covariance: l * l.transpose() + Matrix3::identity() * 0.1 }
            })
            .collect();
        (obs, prior)
    }

    #[test]
    fn linear_problem_matches_textbook_kalman() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = random_spd(&mut rng);
        let (obs, prior) = linear_problem(&mut rng, 8);
        let linearize = |x: &NavState| {
            let mut acc = InfoAccumulator::default();
            for o in &obs {
                let hp = o.jacobian.fixed_view::<3, 3>(0, idx::POS).into_owned();
                let z = hp * x.position - o.residual;
                acc.add(&Observation { residual: z, ..o.clone() })?;
            }
            Ok(Some(acc))
        };
        let cfg = UpdateConfig::default();
        let out = iterated_update(&prior, &p, &cfg, linearize).unwrap().unwrap();

        // Textbook Kalman filter on the 15-state active system.
        let n = idx::EXT_ROT;
        let m = 3 * obs.len();
        let mut h = DMatrix::zeros(m, n);
        let mut r = DMatrix::zeros(m, m);
        let mut z = DVector::zeros(m);
        for (k, o) in obs.iter().enumerate() {
            for i in 0..3 {
                for j in 0..n {
                    h[(3 * k + i, j)] = o.jacobian[(i, j)];
                }
                for j in 0..3 {
                    r[(3 * k + i, 3 * k + j)] = o.covariance[(i, j)];
                }
            }
            let hp = o.jacobian.fixed_view::<3, 3>(0, idx::POS).into_owned();
            z.rows_mut(3 * k, 3).copy_from(&(hp * prior.position - o.residual));
        }
        let pa = DMatrix::from_fn(n, n, |i, j| p[(i, j)]);
        let s = &h * &pa * h.transpose() + &r;
        let k = &pa * h.transpose() * s.try_inverse().unwrap();
        let dx = -(&k * &z);
        let p_post = (DMatrix::identity(n, n) - &k * &h) * &pa;

        let expect = prior.boxplus(&{
            let mut v = ErrorVector::zeros();
            v.rows_mut(0, n).copy_from(&dx);
            v
        });
        assert!((out.state.position - expect.position).norm() < 1e-9);
        assert!(out.state.attitude.angle_to(&expect.attitude) < 1e-9);
        assert!((out.state.velocity - expect.velocity).norm() < 1e-9);
        for i in 0..n {
            for j in 0..n {
                assert!((out.covariance[(i, j)] - p_post[(i, j)]).abs() < 1e-9);
            }
        }
        // Held block untouched.
        assert_eq!(out.covariance[(idx::EXT_POS, idx::EXT_POS)], p[(idx::EXT_POS, idx::EXT_POS)]);
        assert!(out.converged && out.iterations <= 2);
    }

    #[test]
    fn joseph_matches_simple_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_spd(&mut rng);
        let (obs, prior) = linear_problem(&mut rng, 4);
        let lin = |_: &NavState| {
            let mut acc = InfoAccumulator::default();
            for o in &obs {
                acc.add(o)?;
            }
            Ok(Some(acc))
        };
        let simple = iterated_update(&prior, &p, &UpdateConfig { max_iterations: 1, ..Default::default() }, lin).unwrap().unwrap();
        let joseph = iterated_update(&prior, &p, &UpdateConfig { max_iterations: 1, joseph: true, ..Default::default() }, lin).unwrap().unwrap();
        assert!((simple.covariance - joseph.covariance).abs().max() < 1e-10);
        let eig = joseph.covariance.symmetric_eigenvalues();
        assert!(eig.min() > -1e-9);
    }

    #[test]
    fn missing_measurements_skip_update() {
        let p = ErrorCovariance::identity();
        let out = iterated_update(&NavState::default(), &p, &UpdateConfig::default(), |_| Ok(None)).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn estimating_extrinsics_updates_full_state() {
        let p = ErrorCovariance::identity();
        let mut h = SMatrix::<f64, 1, ERROR_DIM>::zeros();
        h[idx::EXT_POS] = 1.0;
        let obs = Observation { residual: SVector::<f64, 1>::new(1.0), jacobian: h, covariance: SMatrix::<f64, 1, 1>::new(1.0) };
        let lin = |_: &NavState| {
            let mut acc = InfoAccumulator::default();
            acc.add(&obs)?;
            Ok(Some(acc))
        };
        let cfg = UpdateConfig { max_iterations: 1, estimate_extrinsics: true, ..Default::default() };
        let out = iterated_update(&NavState::default(), &p, &cfg, lin).unwrap().unwrap();
        assert!((out.state.ext_translation.x + 0.5).abs() < 1e-12);
        assert!((out.covariance[(idx::EXT_POS, idx::EXT_POS)] - 0.5).abs() < 1e-12);
        let frozen = iterated_update(&NavState::default(), &p, &UpdateConfig { max_iterations: 1, ..Default::default() }, lin).unwrap().unwrap();
        assert_eq!(frozen.state.ext_translation, Vector3::zeros());
    }
}
