use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p_value: f64,
}

/// Pooled two-proportion z-test of `k1/n1` against `k2/n2`, two-sided.
pub fn two_proportion_z_test(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<ZTest> {
    if n1 == 0 || n2 == 0 || k1 > n1 || k2 > n2 {
        return Err(Error::Contract(format!(
            "invalid counts ({k1}/{n1}, {k2}/{n2})"
        )));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1f + n2f);
    if pooled == 0.0 || pooled == 1.0 {
        return Err(Error::DegenerateTest(format!(
            "pooled proportion is {pooled}; the test statistic is undefined"
        )));
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    let z = (k1 as f64 / n1f - k2 as f64 / n2f) / se;
    Ok(ZTest {
        z,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
    })
}
