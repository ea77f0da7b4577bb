//! Incentive-compatibility and participation checks on interim tables.

use serde::{Deserialize, Serialize};

/// Interim view of a direct mechanism for one firm: expected quantity
/// `Q(θ) = E[r(q + κ)]` and expected transfer `T(θ)` on an increasing grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterimTable {
    pub theta: Vec<f64>,
    pub quantity: Vec<f64>,
    pub transfer: Vec<f64>,
}

impl InterimTable {
    /// `(Q, T)` at `θ`, linear between grid points and clamped at the ends.
    pub fn at(&self, theta: f64) -> (f64, f64) {
        let xs = &self.theta;
        let last = xs.len() - 1;
        if theta <= xs[0] {
            return (self.quantity[0], self.transfer[0]);
        }
        if theta >= xs[last] {
            return (self.quantity[last], self.transfer[last]);
        }
        let k = xs.partition_point(|&t| t <= theta) - 1;
        let w = (theta - xs[k]) / (xs[k + 1] - xs[k]);
        let lerp = |v: &[f64]| v[k] + (v[k + 1] - v[k]) * w;
        (lerp(&self.quantity), lerp(&self.transfer))
    }

    /// Interim profit of type `θ` reporting `report`.
    pub fn payoff(&self, theta: f64, report: f64) -> f64 {
        let (q, t) = self.at(report);
        t - theta * q
    }
}

/// Largest gain from misreporting over `types × reports`; zero when truthful
/// reporting is optimal everywhere on the grids.
pub fn verify_ic(table: &InterimTable, types: &[f64], reports: &[f64]) -> f64 {
    let rows: Vec<(f64, f64)> = reports.iter().map(|&r| table.at(r)).collect();
    let mut worst: f64 = 0.0;
    for &theta in types {
        let truthful = table.payoff(theta, theta);
        let best = rows.iter().map(|&(q, t)| t - theta * q).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best - truthful);
    }
    worst
}

/// Smallest truthful interim profit over `types`.
pub fn verify_ir(table: &InterimTable, types: &[f64]) -> f64 {
    types.iter().map(|&t| table.payoff(t, t)).fold(f64::INFINITY, f64::min)
}

/// Largest increase of `Q` between adjacent grid points (zero if nonincreasing).
pub fn monotonicity_violation(quantity: &[f64]) -> f64 {
    quantity.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// `T(θ) = θQ(θ) + sign·∫_θ^θ̄ Q`, trapezoid on the grid.
///
/// `sign = 1` is the envelope formula with a zero base transfer; the
/// opposite sign is kept only to demonstrate that it breaks participation.
pub fn envelope_transfers(theta: &[f64], quantity: &[f64], sign: f64) -> Vec<f64> {
    let n = theta.len();
    let mut tail = vec![0.0; n];
    for k in (0..n.saturating_sub(1)).rev() {
        tail[k] = tail[k + 1] + 0.5 * (quantity[k] + quantity[k + 1]) * (theta[k + 1] - theta[k]);
    }
    (0..n).map(|k| theta[k] * quantity[k] + sign * tail[k]).collect()
}
