use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per parameter tensor (all of them if fewer exist).
    pub samples_per_param: usize,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, samples_per_param: 50, tolerance: 1e-4, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub group: String,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` against central finite differences of `loss` on a
/// random subsample of coordinates of every parameter in `groups`.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(
    params: &ParamStore<f64>,
    analytic: &Grads<f64>,
    mut loss: F,
    groups: &[(String, Vec<ParamId>)],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut report = Vec::with_capacity(groups.len());
    for (group, ids) in groups {
        let mut worst = GroupError { group: group.clone(), max_rel_error: 0.0, worst_param: String::new(), worst_index: 0, checked: 0 };
        for &id in ids {
            let n = params.get(id).len();
            let picks: Vec<usize> = if n <= cfg.samples_per_param {
                (0..n).collect()
            } else {
                let mut v = sample(&mut rng, n, cfg.samples_per_param).into_vec();
                v.sort_unstable();
                v
            };
            for i in picks {
                let orig = params.get(id).data()[i];
                work.get_mut(id).data_mut()[i] = orig + cfg.step;
                let up = loss(&work)?;
                work.get_mut(id).data_mut()[i] = orig - cfg.step;
                let down = loss(&work)?;
                work.get_mut(id).data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * cfg.step);
                let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
                if !numeric.is_finite() || !a.is_finite() {
                    return Err(Error::non_finite(format!(
                        "gradient check of `{}`[{i}]: analytic {a}, numeric {numeric}",
                        params.name(id)
                    )));
                }
                let rel = Float::abs(a - numeric) / a.abs().max(numeric.abs()).max(cfg.floor);
                worst.checked += 1;
                if rel > worst.max_rel_error || worst.worst_param.is_empty() {
                    worst.max_rel_error = rel;
                    worst.worst_param = String::from(params.name(id));
                    worst.worst_index = i;
                }
            }
        }
        report.push(worst);
    }
    let passed = report.iter().all(|g| g.max_rel_error < cfg.tolerance);
    Ok(GradCheckReport { groups: report, tolerance: cfg.tolerance, passed })
}
