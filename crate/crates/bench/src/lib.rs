//! Input generators shared by the benchmarks.

use rand::Rng;
use rand_distr::StandardNormal;
use shm_core::calibration::{init_params, update_matrix, variant_calibration, CalibrationVariant, Dims, ShmParams};
use shm_core::memory::{CalMatrix, ContextInput, UpdMatrix};
use shm_core::rng::rng_from_seed;
use shm_core::Real;

pub struct Workload {
    pub params: ShmParams,
    pub xs: Vec<ContextInput>,
    pub cs: Vec<CalMatrix>,
    pub us: Vec<UpdMatrix>,
}

/// Stable-calibration inputs for `t` steps of an `h×h` memory with `D = 8`.
pub fn workload(t: usize, h: usize, seed: u64) -> Workload {
    let d = 8;
    let mut rng = rng_from_seed(seed);
    let params = init_params(Dims::new(d, h, 128).expect("valid dims"), CalibrationVariant::ShmRandomTheta, &mut rng)
        .expect("valid params");
    let xs: Vec<ContextInput> =
        (0..t).map(|_| ContextInput((0..d).map(|_| rng.sample::<Real, _>(StandardNormal)).collect())).collect();
    let cs = xs.iter().map(|x| variant_calibration(&params, x, &mut rng).expect("valid context").c).collect();
    let us = xs.iter().map(|x| update_matrix(&params, x)).collect();
    Workload { params, xs, cs, us }
}
