//! Basins of attraction on a rectangular grid of initial conditions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify, finish_settle, Fingerprint, SettleOptions, StroboscopicMap, CLASSIFY_TOL};
use crate::dynamics::{State, System};
use crate::error::{Error, Result};
use crate::output::fmt_f64;

/// Attractor index into the registry, or `None` for an unclassified cell.
pub type Label = Option<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub v_range: (f64, f64),
    pub nx: usize,
    pub nv: usize,
    /// A cell is captured early once its stroboscopic iterates stay within
    /// this distance of one registered orbit, following its cyclic order,
    /// for two full orbital periods.
    #[serde(default = "default_capture_tol")]
    pub capture_tol: f64,
}

fn default_capture_tol() -> f64 {
    1e-3
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x_range: (-2.0, 2.0), v_range: (-2.0, 2.0), nx: 500, nv: 500, capture_tol: default_capture_tol() }
    }
}

impl GridSpec {
    pub fn square(x_range: (f64, f64), v_range: (f64, f64), n: usize) -> Self {
        Self { x_range, v_range, nx: n, nv: n, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.nv == 0 {
            return Err(Error::domain("basin grid resolution must be positive"));
        }
        if !(self.x_range.1 > self.x_range.0) || !(self.v_range.1 > self.v_range.0) {
            return Err(Error::domain("basin grid ranges must be increasing"));
        }
        if !(self.capture_tol >= 0.0) {
            return Err(Error::domain("capture_tol must be non-negative"));
        }
        Ok(())
    }

    /// Centre of cell `(i, j)`, `i` along `x` and `j` along `v`.
    pub fn cell_center(&self, i: usize, j: usize) -> State {
        let dx = (self.x_range.1 - self.x_range.0) / self.nx as f64;
        let dv = (self.v_range.1 - self.v_range.0) / self.nv as f64;
        State::new(self.x_range.0 + (i as f64 + 0.5) * dx, self.v_range.0 + (j as f64 + 0.5) * dv)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinGrid {
    pub grid: GridSpec,
    pub registry: Vec<Fingerprint>,
    /// Row-major over `v`: index `j * nx + i`.
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinSummary {
    pub registry: Vec<Fingerprint>,
    /// Cells per registry entry, in registry order.
    pub counts: Vec<usize>,
    pub unclassified: usize,
}

impl BasinGrid {
    pub fn label(&self, i: usize, j: usize) -> Label {
        self.labels[j * self.grid.nx + i]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.registry.len()];
        for l in self.labels.iter().flatten() {
            counts[*l] += 1;
        }
        counts
    }

    pub fn unclassified(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn summary(&self) -> BasinSummary {
        BasinSummary { registry: self.registry.clone(), counts: self.counts(), unclassified: self.unclassified() }
    }

    /// CSV `x,v,label` with cell centres; unclassified cells get label `-1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,v,label")?;
        for j in 0..self.grid.nv {
            for i in 0..self.grid.nx {
                let c = self.grid.cell_center(i, j);
                let label = self.label(i, j).map_or(-1, |l| l as i64);
                writeln!(w, "{},{},{}", fmt_f64(c.x), fmt_f64(c.v), label)?;
            }
        }
        Ok(())
    }
}

/// Follows stroboscopic iterates against the registry, one period at a time.
struct Capture<'r> {
    registry: &'r [Fingerprint],
    tol: f64,
    current: Option<(usize, usize)>,
    streak: usize,
}

impl<'r> Capture<'r> {
    fn nearest(&self, z: State) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (a, fp) in self.registry.iter().enumerate() {
            if fp.period_multiple().is_none() {
                continue;
            }
            for (k, p) in fp.poincare_points.iter().enumerate() {
                let d = (z - *p).norm();
                if d < self.tol && best.is_none_or(|b| d < b.2) {
                    best = Some((a, k, d));
                }
            }
        }
        best.map(|(a, k, _)| (a, k))
    }

    /// Feed the next iterate; returns the attractor once the streak is long enough.
    fn feed(&mut self, z: State) -> Option<usize> {
        let hit = self.nearest(z);
        let follows = match (self.current, hit) {
            (Some((a0, k0)), Some((a1, k1))) => {
                let p = self.registry[a0].poincare_points.len();
                a0 == a1 && k1 == (k0 + 1) % p
            }
            _ => false,
        };
        self.streak = match hit {
            Some(_) if follows => self.streak + 1,
            Some(_) => 1,
            None => 0,
        };
        self.current = hit;
        let (a, _) = hit?;
        (self.streak > 2 * self.registry[a].poincare_points.len()).then_some(a)
    }
}

/// Settle one initial condition and classify it against `registry`.
pub fn classify_initial(
    map: &StroboscopicMap<'_>,
    y0: State,
    registry: &[Fingerprint],
    opts: &SettleOptions,
    capture_tol: f64,
) -> Result<Label> {
    let mut capture = Capture { registry, tol: capture_tol, current: None, streak: 0 };
    let mut z = y0;
    for _ in 0..opts.n_transient {
        z = map.apply(z)?;
        if capture_tol > 0.0 {
            if let Some(a) = capture.feed(z) {
                return Ok(Some(a));
            }
        }
    }
    let fp = finish_settle(map, z, opts)?;
    Ok(classify(&fp, registry, CLASSIFY_TOL))
}

/// Label every cell of `grid`. Cells are processed in parallel; the result
/// does not depend on the number of workers.
pub fn basin_grid(sys: &System, grid: &GridSpec, registry: &[Fingerprint], opts: &SettleOptions) -> Result<BasinGrid> {
    grid.validate()?;
    opts.validate()?;
    if registry.is_empty() {
        return Err(Error::domain("basin computation needs a non-empty attractor registry"));
    }
    let map = StroboscopicMap::new(sys, opts.step);
    let labels = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let y0 = grid.cell_center(idx % grid.nx, idx / grid.nx);
            match classify_initial(&map, y0, registry, opts, grid.capture_tol) {
                Ok(label) => Ok(label),
                Err(Error::Diverged { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BasinGrid { grid: *grid, registry: registry.to_vec(), labels })
}
