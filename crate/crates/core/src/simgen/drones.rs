use serde::{Deserialize, Serialize};

use crate::table::{num, Table};

pub const DRONES: usize = 16;
pub const TARGET: [f64; 2] = [8.0, 8.0];
pub const NO_FLY_CENTER: [f64; 2] = [5.0, 5.0];
pub const NO_FLY_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneLayout {
    pub positions: Vec<[f64; 2]>,
    pub target: [f64; 2],
    pub no_fly_center: [f64; 2],
    pub no_fly_radius: f64,
    pub trust: Vec<f64>,
    pub conflicts: Vec<f64>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Default for DroneLayout {
    /// Drone 0 flies straight through the zone, drone 1 sits next to the
    /// target but is untrusted, drone 2 has a schedule conflict, drone 15 is
    /// far but clean, and drones 3 to 14 form an outer ring behind it.
    fn default() -> Self {
        let mut positions = vec![[0.0; 2]; DRONES];
        positions[0] = [2.0, 2.0];
        positions[1] = [7.8, 7.8];
        positions[2] = [7.5, 7.3];
        positions[15] = [8.0, -1.2];
        for (i, p) in positions.iter_mut().enumerate().take(15).skip(3) {
            let deg = 250.0 + 90.0 * (i - 3) as f64 / 11.0;
            let rad = f64::to_radians(deg);
            *p = [TARGET[0] + 10.5 * rad.cos(), TARGET[1] + 10.5 * rad.sin()];
        }
        let mut trust = vec![1.0; DRONES];
        trust[1] = 0.01;
        let mut conflicts = vec![0.0; DRONES];
        conflicts[2] = 1.0;
        Self {
            positions,
            target: TARGET,
            no_fly_center: NO_FLY_CENTER,
            no_fly_radius: NO_FLY_RADIUS,
            trust,
            conflicts,
        }
    }
}

impl DroneLayout {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distance_to_target(&self, drone: usize) -> f64 {
        dist(self.positions[drone], self.target)
    }

    /// Points `start + t (target - start)` for `samples` evenly spaced `t`
    /// in `[0, 1]`, endpoints included.
    pub fn path_samples(&self, drone: usize, samples: usize) -> Vec<[f64; 2]> {
        let [x0, y0] = self.positions[drone];
        let [x1, y1] = self.target;
        let denom = (samples.max(2) - 1) as f64;
        (0..samples)
            .map(|k| {
                let t = k as f64 / denom;
                [x0 + t * (x1 - x0), y0 + t * (y1 - y0)]
            })
            .collect()
    }

    /// Smallest distance from the sampled path to the no-fly center.
    pub fn path_clearance(&self, drone: usize, samples: usize) -> f64 {
        self.path_samples(drone, samples)
            .into_iter()
            .map(|p| dist(p, self.no_fly_center))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["drone", "x", "y", "distance", "trust", "conflict"]);
        for i in 0..self.len() {
            t.push(vec![
                i.to_string(),
                num(self.positions[i][0]),
                num(self.positions[i][1]),
                num(self.distance_to_target(i)),
                num(self.trust[i]),
                num(self.conflicts[i]),
            ]);
        }
        t
    }
}

/// One failed geometric requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutViolation(pub String);

/// Densely samples every path and checks the roles each drone must play.
pub fn layout_oracle(layout: &DroneLayout) -> Vec<LayoutViolation> {
    const SAMPLES: usize = 1000;
    let mut out = Vec::new();
    let mut fail = |msg: String| out.push(LayoutViolation(msg));
    if layout.len() != DRONES {
        fail(format!("expected {DRONES} drones, got {}", layout.len()));
        return out;
    }
    let r = layout.no_fly_radius;
    if layout.path_clearance(0, SAMPLES) >= r {
        fail("drone 0 path does not enter the no-fly zone".into());
    }
    if layout.path_clearance(15, SAMPLES) <= r {
        fail("drone 15 path enters the no-fly zone".into());
    }
    for i in 1..15 {
        if layout.path_clearance(i, SAMPLES) <= r {
            fail(format!("drone {i} path enters the no-fly zone"));
        }
    }
    let d15 = layout.distance_to_target(15);
    if (d15 - 9.2).abs() > 1e-9 {
        fail(format!("drone 15 distance {d15} != 9.2"));
    }
    for i in 3..15 {
        if layout.distance_to_target(i) <= d15 {
            fail(format!("drone {i} is not farther than drone 15"));
        }
    }
    let nearest = (0..DRONES)
        .min_by(|&a, &b| {
            layout
                .distance_to_target(a)
                .total_cmp(&layout.distance_to_target(b))
        })
        .unwrap_or(0);
    if nearest != 1 {
        fail(format!("nearest drone is {nearest}, expected 1"));
    }
    if (layout.distance_to_target(1) - 0.2828).abs() > 1e-3 {
        fail("drone 1 distance is not about 0.28".into());
    }
    for i in 0..DRONES {
        let (trust, conflict) = (layout.trust[i], layout.conflicts[i]);
        let want_trust = if i == 1 { 0.01 } else { 1.0 };
        let want_conflict = if i == 2 { 1.0 } else { 0.0 };
        if trust != want_trust || conflict != want_conflict {
            fail(format!(
                "drone {i} trust/conflict ({trust}, {conflict}) unexpected"
            ));
        }
    }
    out
}
