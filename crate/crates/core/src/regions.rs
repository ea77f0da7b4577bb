//! Entrant regions of a two-firm price-cap structure over the price square.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instance::{EntrantSet, MarketInstance};
use crate::mechanism::select_entrants;

/// `E^P(s)` at the centers of a `resolution × resolution` grid on `[0, v_max]²`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMap {
    pub resolution: usize,
    pub v_max: f64,
    /// Row-major: `cells[row * resolution + col]` is the set at
    /// `s1 = center(col)`, `s2 = center(row)`.
    pub cells: Vec<u32>,
}

impl RegionMap {
    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.resolution as f64 * self.v_max
    }

    pub fn at(&self, col: usize, row: usize) -> EntrantSet {
        EntrantSet(self.cells[row * self.resolution + col])
    }

    /// `(s1, s2, bitmask)` for every cell, rows of increasing `s2`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, u32)> + '_ {
        (0..self.resolution).flat_map(move |row| {
            (0..self.resolution).map(move |col| (self.center(col), self.center(row), self.at(col, row).0))
        })
    }

    pub fn regions(&self) -> BTreeSet<u32> {
        self.cells.iter().copied().collect()
    }

    /// First column in `row` where firm 1 is not admitted.
    pub fn exit_column(&self, row: usize) -> usize {
        (0..self.resolution).find(|&c| !self.at(c, row).contains(0)).unwrap_or(self.resolution)
    }

    /// True when each firm's membership, along its own price axis, is a
    /// prefix: admitted up to some price and never again above it.
    pub fn downward_closed(&self) -> bool {
        let r = self.resolution;
        let axis_ok = |member: &dyn Fn(usize, usize) -> bool| {
            (0..r).all(|line| {
                let exit = (0..r).find(|&k| !member(line, k)).unwrap_or(r);
                (exit..r).all(|k| !member(line, k))
            })
        };
        axis_ok(&|row, col| self.at(col, row).contains(0))
            && axis_ok(&|col, row| self.at(col, row).contains(1))
    }
}

pub fn region_map(inst: &MarketInstance, resolution: usize) -> Result<RegionMap> {
    if inst.n() != 2 {
        return Err(Error::Precondition(format!("region maps need two firms, got {}", inst.n())));
    }
    let v_max = inst.v_max();
    let center = |k: usize| (k as f64 + 0.5) / resolution as f64 * v_max;
    let cells = (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| select_entrants(inst, &[center(idx % resolution), center(idx / resolution)]).0)
        .collect();
    Ok(RegionMap { resolution, v_max, cells })
}

/// Largest common price `d` at which both firms are admitted at `(d, d)`.
pub fn diagonal_threshold(inst: &MarketInstance) -> f64 {
    let both = EntrantSet::full(2);
    let (mut lo, mut hi) = (0.0, inst.v_max());
    if select_entrants(inst, &[lo, lo]) != both {
        return 0.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if select_entrants(inst, &[mid, mid]) == both {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
