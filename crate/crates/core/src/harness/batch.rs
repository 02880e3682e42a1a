use super::{run_scenario, HarnessError, MetricsReport, ScenarioConfig};

pub const DEFAULT_SWEEP_ARITIES: [u32; 4] = [2, 4, 6, 8];

/// Runs independent scenarios one after another. Results keep input order.
pub fn run_batch_sequential(configs: &[ScenarioConfig]) -> Vec<Result<MetricsReport, HarnessError>> {
    configs.iter().map(run_scenario).collect()
}

/// Runs independent scenarios across the rayon pool when the `parallel`
/// feature is on. Results keep input order either way.
#[cfg(feature = "parallel")]
pub fn run_batch(configs: &[ScenarioConfig]) -> Vec<Result<MetricsReport, HarnessError>> {
    use rayon::prelude::*;
    configs.par_iter().map(run_scenario).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_batch(configs: &[ScenarioConfig]) -> Vec<Result<MetricsReport, HarnessError>> {
    run_batch_sequential(configs)
}

/// One report per arity, everything else held fixed.
pub fn arity_sweep(config: &ScenarioConfig, arities: &[u32]) -> Result<Vec<MetricsReport>, HarnessError> {
    let configs: Vec<ScenarioConfig> = arities.iter().map(|&arity| ScenarioConfig { arity, ..*config }).collect();
    run_batch(&configs).into_iter().collect()
}
