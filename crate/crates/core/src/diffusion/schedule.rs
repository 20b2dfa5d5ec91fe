use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::Grid;

/// Linear-β noise schedule. Index 0 is the clean boundary (`β_0 = 0`,
/// `ᾱ_0 = 1`); steps run `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule<T> {
    betas: Vec<T>,
    alpha_bars: Vec<T>,
}

impl<T: Real> DiffusionSchedule<T> {
    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> T {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> T {
        T::one() - self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bars[t]
    }

    fn check(&self, t: usize, lo: usize) -> Result<()> {
        ensure!(
            (lo..=self.steps()).contains(&t),
            "timestep {t} outside [{lo}, {}]",
            self.steps()
        );
        Ok(())
    }
}

/// `β_t` linear from `beta_first` (t=1) to `beta_last` (t=T); `ᾱ` by
/// cumulative product.
pub fn make_schedule<T: Real>(steps: usize, beta_first: f64, beta_last: f64) -> Result<DiffusionSchedule<T>> {
    ensure!(steps >= 1, "schedule needs at least one step");
    ensure!(
        0.0 < beta_first && beta_first <= beta_last && beta_last < 1.0,
        "need 0 < β_first ≤ β_last < 1, got [{beta_first}, {beta_last}]"
    );
    let mut betas = vec![T::zero()];
    for i in 0..steps {
        let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
        betas.push(T::lit(beta_first + (beta_last - beta_first) * frac));
    }
    let mut alpha_bars = vec![T::one()];
    for t in 1..=steps {
        let prev = alpha_bars[t - 1];
        alpha_bars.push(prev * (T::one() - betas[t]));
    }
    Ok(DiffusionSchedule { betas, alpha_bars })
}

impl<T: Real> Default for DiffusionSchedule<T> {
    fn default() -> Self {
        make_schedule(20, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// `a·x + b·y`.
pub fn lincomb<T: Real>(a: T, x: &Grid<T>, b: T, y: &Grid<T>) -> Grid<T> {
    x.zip_map(y, |u, v| a * u + b * v)
}

fn check_pair<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<()> {
    ensure!(a.same_shape(b), "latent and noise shapes differ: {:?} vs {:?}", a.dims(), b.dims());
    Ok(())
}

/// `x_t = √ᾱ_t x_0 + √(1−ᾱ_t) ε`, for `0 ≤ t ≤ T`.
pub fn ddpm_forward_sample<T: Real>(
    x0: &Grid<T>,
    t: usize,
    eps: &Grid<T>,
    sched: &DiffusionSchedule<T>,
) -> Result<Grid<T>> {
    sched.check(t, 0)?;
    check_pair(x0, eps)?;
    let ab = sched.alpha_bar(t);
    Ok(lincomb(ab.sqrt(), x0, (T::one() - ab).sqrt(), eps))
}

/// `x̂_0 = (x_t − √(1−ᾱ_t) ε_pred) / √ᾱ_t`.
pub fn predict_x0<T: Real>(x_t: &Grid<T>, eps_pred: &Grid<T>, t: usize, sched: &DiffusionSchedule<T>) -> Result<Grid<T>> {
    sched.check(t, 0)?;
    check_pair(x_t, eps_pred)?;
    let ab = sched.alpha_bar(t);
    let inv = T::one() / ab.sqrt();
    Ok(lincomb(inv, x_t, -(T::one() - ab).sqrt() * inv, eps_pred))
}

/// One ancestral step
///
/// ```text
/// x_{t−1} = √ᾱ_{t−1} β_t / (1−ᾱ_t) · x̂_0 + (1−ᾱ_{t−1}) (√α_t x_t + β_t ε) / (1−ᾱ_t)
/// ```
///
/// with `ε = eps_new`.
pub fn ddpm_step<T: Real>(
    x_t: &Grid<T>,
    eps_pred: &Grid<T>,
    t: usize,
    eps_new: &Grid<T>,
    sched: &DiffusionSchedule<T>,
) -> Result<Grid<T>> {
    sched.check(t, 1)?;
    check_pair(x_t, eps_new)?;
    let x0 = predict_x0(x_t, eps_pred, t, sched)?;
    let (ab, ab_prev, beta) = (sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.beta(t));
    let denom = T::one() - ab;
    let c0 = ab_prev.sqrt() * beta / denom;
    let c1 = (T::one() - ab_prev) / denom;
    let sa = sched.alpha(t).sqrt();
    let mut out = x0;
    for ((o, &x), &e) in out.data_mut().iter_mut().zip(x_t.data()).zip(eps_new.data()) {
        *o = c0 * *o + c1 * (sa * x + beta * e);
    }
    Ok(out)
}

/// `x_{t−1} = √ᾱ_{t−1} x̂_0 + √(1−ᾱ_{t−1}) ε_pred`.
pub fn ddim_step<T: Real>(x_t: &Grid<T>, eps_pred: &Grid<T>, t: usize, sched: &DiffusionSchedule<T>) -> Result<Grid<T>> {
    sched.check(t, 1)?;
    let x0 = predict_x0(x_t, eps_pred, t, sched)?;
    let ab_prev = sched.alpha_bar(t - 1);
    Ok(lincomb(ab_prev.sqrt(), &x0, (T::one() - ab_prev).sqrt(), eps_pred))
}

/// Inverse of [`ddim_step`] for a fixed `ε`: from `x_{t−1}` to `x_t`.
pub fn ddim_inversion_step<T: Real>(
    x_prev: &Grid<T>,
    eps_pred: &Grid<T>,
    t: usize,
    sched: &DiffusionSchedule<T>,
) -> Result<Grid<T>> {
    sched.check(t, 1)?;
    let x0 = predict_x0(x_prev, eps_pred, t - 1, sched)?;
    let ab = sched.alpha_bar(t);
    Ok(lincomb(ab.sqrt(), &x0, (T::one() - ab).sqrt(), eps_pred))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = make_schedule::<f64>(1, 0.1, 0.1).unwrap();
        assert_eq!(s.alpha_bar(1), 0.9);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn invalid_ranges() {
        assert!(make_schedule::<f64>(10, 0.02, 0.01).is_err());
        assert!(make_schedule::<f64>(0, 0.01, 0.02).is_err());
        assert!(make_schedule::<f64>(10, 0.0, 0.02).is_err());
    }

    #[test]
    fn forward_sample_range() {
        let s = DiffusionSchedule::<f64>::default();
        let x = Grid::filled(1, 1, 1, 2.0);
        assert_eq!(ddpm_forward_sample(&x, 0, &x, &s).unwrap(), x);
        assert!(ddpm_forward_sample(&x, 21, &x, &s).is_err());
    }

    #[test]
    fn ddpm_last_step_returns_prediction() {
        let s = DiffusionSchedule::<f64>::default();
        let x = Grid::from_vec(1, 2, 1, vec![0.3, -1.2]).unwrap();
        let e = Grid::from_vec(1, 2, 1, vec![0.5, 0.1]).unwrap();
        let n = Grid::from_vec(1, 2, 1, vec![9.0, -9.0]).unwrap();
        let out = ddpm_step(&x, &e, 1, &n, &s).unwrap();
        let x0 = predict_x0(&x, &e, 1, &s).unwrap();
        assert!(out.max_abs_diff(&x0) < 1e-12);
    }
}
