//! Benchmark fixtures shared by the criterion targets.

use areal_core::model::{simulate, Hyperparameters, SimulationTruth};
use areal_core::{AdjacencyGraph, ModelSpec, PanelData};

/// Simulated panel on a `rows × cols` lattice over `years` years, all blocks on, E = 20.
pub fn lattice_panel(rows: usize, cols: usize, years: usize, seed: u64) -> (ModelSpec, PanelData) {
    let spec = ModelSpec::default();
    let graph = AdjacencyGraph::lattice(rows, cols);
    let years: Vec<i32> = (0..years as i32).collect();
    let pairs: Vec<_> = spec.active_blocks().into_iter().map(|b| (b, 10.0)).collect();
    let truth = SimulationTruth {
        intercept: 0.0,
        coefficients: vec![],
        trend: 0.0,
        hyperparameters: Hyperparameters::from_precisions(&pairs).expect("positive precisions"),
    };
    let cells = graph.len() * years.len();
    let sim = simulate(&spec, &truth, &graph, &years, &vec![20.0; cells], vec![], seed).expect("simulation");
    (spec, sim.panel)
}
