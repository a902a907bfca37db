use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{KernelError, ParamStore, Scalar, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Approximate number of coordinates probed; every tensor gets at least
    /// a few. All coordinates are probed when the store is smaller.
    pub coordinates: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            coordinates: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<T> {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: T,
    pub coordinates_checked: usize,
    /// Parameter name and flat index where the largest error occurred.
    pub worst: Option<(String, usize)>,
}

/// Compares tape gradients of `f` against central differences with step `eps`.
pub fn grad_check<T, F>(
    f: F,
    params: &ParamStore<T>,
    eps: T,
) -> Result<GradCheckReport<T>, KernelError>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &ParamStore<T>) -> Result<Var<'t, T>, KernelError>,
{
    grad_check_with(f, params, eps, GradCheckOptions::default())
}

pub fn grad_check_with<T, F>(
    f: F,
    params: &ParamStore<T>,
    eps: T,
    options: GradCheckOptions,
) -> Result<GradCheckReport<T>, KernelError>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &ParamStore<T>) -> Result<Var<'t, T>, KernelError>,
{
    if !(T::lit(1e-7)..=T::lit(1e-3)).contains(&eps) {
        return Err(KernelError::InvalidArgument(format!(
            "eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let analytic = {
        let tape = Tape::new();
        let loss = f(&tape, params)?;
        tape.backward(loss, params)?
    };
    let evaluate = |store: &ParamStore<T>| -> Result<T, KernelError> {
        let tape = Tape::new();
        let value = f(&tape, store)?.item()?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(KernelError::NonFinite { op: "grad_check" })
        }
    };

    let total = params.coordinate_count().max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut probe = params.clone();
    let floor = T::lit(1e-8);
    let two_eps = eps + eps;
    let mut report = GradCheckReport {
        max_rel_error: T::zero(),
        coordinates_checked: 0,
        worst: None,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let len = params.get(&name).map_or(0, |t| t.len());
        let share = (options.coordinates * len).div_ceil(total).max(4).min(len);
        let mut picked = index::sample(&mut rng, len, share).into_vec();
        picked.sort_unstable();
        for idx in picked {
            let original = params.get(&name).expect("name from store").data()[idx];
            let slot = |store: &mut ParamStore<T>, v: T| {
                store.get_mut(&name).expect("name from store").data_mut()[idx] = v;
            };
            slot(&mut probe, original + eps);
            let plus = evaluate(&probe)?;
            slot(&mut probe, original - eps);
            let minus = evaluate(&probe)?;
            slot(&mut probe, original);
            let numeric = (plus - minus) / two_eps;
            let exact = analytic.get(&name).expect("gradient per entry").data()[idx];
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(floor);
            report.coordinates_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}
