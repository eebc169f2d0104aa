//! Network geometry and per-slot Rayleigh channel draws.
//!
//! RRHs sit at the centres of mutually adjacent pointy-top hexagonal cells.
//! Terminals are dropped uniformly over the union of the cells. Channels are
//! `h = g * d^(-alpha/2)` with `g ~ CN(0, 1)`, so `E|h|^2 = d^(-alpha)`.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::seeds;

pub type Complex64 = Complex<f64>;
pub type CMatrix = DMatrix<Complex64>;

/// Far-field guard applied to every distance used in power computations.
pub const MIN_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub rrh_positions: Vec<Position>,
    pub it_positions: Vec<Position>,
    pub et_positions: Vec<Position>,
    pub hex_side: f64,
}

/// Distance with the [`MIN_DISTANCE`] clamp applied.
pub fn clamp_distance(d: f64) -> f64 {
    d.max(MIN_DISTANCE)
}

impl NetworkTopology {
    pub fn n_rrh(&self) -> usize {
        self.rrh_positions.len()
    }

    pub fn n_it(&self) -> usize {
        self.it_positions.len()
    }

    pub fn n_et(&self) -> usize {
        self.et_positions.len()
    }

    pub fn it_distance(&self, rrh: usize, it: usize) -> f64 {
        self.rrh_positions[rrh].distance(&self.it_positions[it])
    }

    pub fn et_distance(&self, rrh: usize, et: usize) -> f64 {
        self.rrh_positions[rrh].distance(&self.et_positions[et])
    }

    /// Nearest RRH to `et` and the raw (unclamped) distance to it. Ties go to
    /// the lowest RRH index.
    pub fn assigned_rrh(&self, et: usize) -> (usize, f64) {
        nearest(&self.rrh_positions, &self.et_positions[et])
    }

    /// True when `p` lies inside (or on the border of) some cell.
    pub fn contains(&self, p: &Position) -> bool {
        self.rrh_positions
            .iter()
            .any(|c| in_hexagon(p.x - c.x, p.y - c.y, self.hex_side))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rrh_positions.is_empty() {
            return Err(param("topology needs at least one RRH"));
        }
        if self.it_positions.is_empty() {
            return Err(param("topology needs at least one IT"));
        }
        if !(self.hex_side.is_finite() && self.hex_side > 0.0) {
            return Err(param("hex_side must be positive"));
        }
        let all = self
            .rrh_positions
            .iter()
            .chain(&self.it_positions)
            .chain(&self.et_positions);
        if all.clone().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(param("non-finite coordinate in topology"));
        }
        for p in self.it_positions.iter().chain(&self.et_positions) {
            if !self.contains(p) {
                return Err(param(format!(
                    "terminal at ({}, {}) lies outside every cell",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let topo: NetworkTopology =
            serde_json::from_str(text).map_err(|e| param(format!("topology json: {e}")))?;
        topo.validate()?;
        Ok(topo)
    }
}

fn nearest(centres: &[Position], p: &Position) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (n, c) in centres.iter().enumerate() {
        let d = c.distance(p);
        if d < best.1 {
            best = (n, d);
        }
    }
    best
}

// Pointy-top hexagon with circumradius `side`: edge normals at 0, 60, 120 deg.
fn in_hexagon(dx: f64, dy: f64, side: f64) -> bool {
    let apothem = side * 3f64.sqrt() / 2.0;
    let tol = 1e-9 * side.max(1.0);
    let s3 = 3f64.sqrt() / 2.0;
    dx.abs() <= apothem + tol
        && (0.5 * dx + s3 * dy).abs() <= apothem + tol
        && (-0.5 * dx + s3 * dy).abs() <= apothem + tol
}

/// Hex-lattice centres, the first three forming a triangle of mutually
/// adjacent cells, the rest added by distance from that triangle's centroid.
fn rrh_centres(n: usize, spacing: f64) -> Vec<Position> {
    let k = (n as f64).sqrt().ceil() as i64 + 2;
    let u = (spacing, 0.0);
    let v = (spacing / 2.0, spacing * 3f64.sqrt() / 2.0);
    let centroid = (spacing / 2.0, spacing * 3f64.sqrt() / 6.0);
    let mut pts = Vec::new();
    for a in -k..=k {
        for b in -k..=k {
            let x = a as f64 * u.0 + b as f64 * v.0;
            let y = a as f64 * u.1 + b as f64 * v.1;
            let r = (x - centroid.0).hypot(y - centroid.1);
            // quantized radius so lattice ties compare exactly
            let rq = (r / spacing * 1e6).round() as i64;
            let ang = (y - centroid.1).atan2(x - centroid.0);
            pts.push((rq, ang, Position::new(x, y)));
        }
    }
    pts.sort_by(|p, q| p.0.cmp(&q.0).then(p.1.total_cmp(&q.1)));
    pts.into_iter().take(n).map(|p| p.2).collect()
}

pub fn generate_topology(
    seed: u64,
    n_rrh: usize,
    n_it: usize,
    n_et: usize,
    inter_rrh_distance: f64,
) -> Result<NetworkTopology> {
    if n_rrh < 1 {
        return Err(param("n_rrh must be at least 1"));
    }
    if n_it < 1 {
        return Err(param("n_it must be at least 1"));
    }
    if !(inter_rrh_distance.is_finite() && inter_rrh_distance > 0.0) {
        return Err(param("inter_rrh_distance must be positive"));
    }
    let rrh_positions = rrh_centres(n_rrh, inter_rrh_distance);
    let hex_side = inter_rrh_distance / 3f64.sqrt();
    let apothem = inter_rrh_distance / 2.0;
    let mut rng = seeds::rng(seed, seeds::DOMAIN_TOPOLOGY, 0);
    let drop = |rng: &mut rand_chacha::ChaCha8Rng| loop {
        let cell = rng.random_range(0..n_rrh);
        let dx = rng.random_range(-apothem..=apothem);
        let dy = rng.random_range(-hex_side..=hex_side);
        if in_hexagon(dx, dy, hex_side) {
            let c = rrh_positions[cell];
            break Position::new(c.x + dx, c.y + dy);
        }
    };
    let it_positions = (0..n_it).map(|_| drop(&mut rng)).collect();
    let et_positions = (0..n_et).map(|_| drop(&mut rng)).collect();
    Ok(NetworkTopology {
        rrh_positions,
        it_positions,
        et_positions,
        hex_side,
    })
}

/// One slot of downlink channels. Column `i` of `h_id` is the channel from
/// all RRHs to IT `i`; column `j` of `h_et` the channel to ET `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_id: CMatrix,
    pub h_et: CMatrix,
}

impl ChannelRealization {
    pub fn it_channel(&self, it: usize) -> nalgebra::DVector<Complex64> {
        self.h_id.column(it).into_owned()
    }

    pub fn et_channel(&self, et: usize) -> nalgebra::DVector<Complex64> {
        self.h_et.column(et).into_owned()
    }

    pub fn check_dims(&self, topo: &NetworkTopology) -> Result<()> {
        let n = topo.n_rrh();
        if self.h_id.shape() != (n, topo.n_it()) || self.h_et.shape() != (n, topo.n_et()) {
            return Err(param("channel dimensions do not match topology"));
        }
        Ok(())
    }
}

pub fn draw_channels(
    topology: &NetworkTopology,
    seed: u64,
    slot: u64,
    alpha_abs: f64,
) -> Result<ChannelRealization> {
    if !(alpha_abs.is_finite() && alpha_abs > 0.0) {
        return Err(param("alpha_abs must be positive"));
    }
    let mut rng = seeds::rng(seed, seeds::DOMAIN_CHANNEL, slot);
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");
    let n = topology.n_rrh();
    let column = |pos: &Position, rng: &mut rand_chacha::ChaCha8Rng| {
        topology
            .rrh_positions
            .iter()
            .map(|r| {
                let g = Complex64::new(normal.sample(rng), normal.sample(rng));
                g * clamp_distance(r.distance(pos)).powf(-alpha_abs / 2.0)
            })
            .collect::<Vec<_>>()
    };
    let mut h_id = CMatrix::zeros(n, topology.n_it());
    for (i, p) in topology.it_positions.iter().enumerate() {
        for (r, h) in column(p, &mut rng).into_iter().enumerate() {
            h_id[(r, i)] = h;
        }
    }
    let mut h_et = CMatrix::zeros(n, topology.n_et());
    for (i, p) in topology.et_positions.iter().enumerate() {
        for (r, h) in column(p, &mut rng).into_iter().enumerate() {
            h_et[(r, i)] = h;
        }
    }
    Ok(ChannelRealization { h_id, h_et })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn topo_with(rrh: Vec<Position>, ets: Vec<Position>) -> NetworkTopology {
        NetworkTopology {
            rrh_positions: rrh,
            it_positions: vec![Position::new(0.0, 0.0)],
            et_positions: ets,
            hex_side: 20.0,
        }
    }

    #[test]
    fn default_layout_has_three_adjacent_cells() {
        let t = generate_topology(7, 3, 4, 7, 20.0).unwrap();
        assert_eq!((t.n_rrh(), t.n_it(), t.n_et()), (3, 4, 7));
        for a in 0..3 {
            for b in (a + 1)..3 {
                let d = t.rrh_positions[a].distance(&t.rrh_positions[b]);
                assert!((d - 20.0).abs() < 1e-9, "spacing {d}");
            }
        }
        assert!((t.hex_side - 20.0 / 3f64.sqrt()).abs() < 1e-12);
        t.validate().unwrap();
    }

    #[test]
    fn degenerate_single_cell() {
        let t = generate_topology(3, 1, 1, 0, 20.0).unwrap();
        assert_eq!((t.n_rrh(), t.n_it(), t.n_et()), (1, 1, 0));
        t.validate().unwrap();
    }

    #[test]
    fn larger_layouts_stay_adjacent() {
        let t = generate_topology(1, 7, 3, 3, 20.0).unwrap();
        for (a, p) in t.rrh_positions.iter().enumerate() {
            let nearest = t
                .rrh_positions
                .iter()
                .enumerate()
                .filter(|(b, _)| *b != a)
                .map(|(_, q)| p.distance(q))
                .fold(f64::INFINITY, f64::min);
            assert!((nearest - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(generate_topology(0, 0, 1, 0, 20.0).is_err());
        assert!(generate_topology(0, 1, 0, 0, 20.0).is_err());
        assert!(generate_topology(0, 1, 1, 0, 0.0).is_err());
        assert!(generate_topology(0, 1, 1, 0, -1.0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_topology(42, 3, 4, 7, 20.0).unwrap();
        let b = generate_topology(42, 3, 4, 7, 20.0).unwrap();
        assert_eq!(a, b);
        let c = generate_topology(43, 3, 4, 7, 20.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn channel_draw_is_deterministic() {
        let t = generate_topology(42, 3, 4, 7, 20.0).unwrap();
        let a = draw_channels(&t, 9, 3, 2.5).unwrap();
        let b = draw_channels(&t, 9, 3, 2.5).unwrap();
        assert_eq!(a, b);
        let c = draw_channels(&t, 9, 4, 2.5).unwrap();
        assert_ne!(a, c);
        a.check_dims(&t).unwrap();
        assert!(draw_channels(&t, 9, 3, 0.0).is_err());
    }

    fn mean_gain(d: f64, alpha: f64, draws: u64) -> f64 {
        let t = NetworkTopology {
            rrh_positions: vec![Position::new(0.0, 0.0)],
            it_positions: vec![Position::new(d, 0.0); 100],
            et_positions: vec![],
            hex_side: 1e3,
        };
        let mut acc = 0.0;
        for slot in 0..draws / 100 {
            let ch = draw_channels(&t, 5, slot, alpha).unwrap();
            acc += ch.h_id.iter().map(|h| h.norm_sqr()).sum::<f64>();
        }
        acc / draws as f64
    }

    #[test]
    fn unit_distance_has_unit_mean_gain() {
        let m = mean_gain(1.0, 2.5, 100_000);
        assert!((m - 1.0).abs() < 0.03, "mean {m}");
    }

    #[test]
    fn path_loss_expectation_at_four_metres() {
        // E|h|^2 = 4^-2.5 = 0.03125
        let m = mean_gain(4.0, 2.5, 100_000);
        assert!((m / 0.03125 - 1.0).abs() < 0.03, "mean {m}");
    }

    #[test]
    fn colocated_terminal_is_clamped() {
        let m = mean_gain(0.0, 2.5, 20_000);
        assert!((m - 1.0).abs() < 0.05);
    }

    #[test]
    fn assigned_rrh_examples() {
        let rrh = vec![
            Position::new(0.0, 0.0),
            Position::new(100.0, 0.0),
            Position::new(0.0, 100.0),
        ];
        // distances 5, 3, 10 from the ET
        let t = topo_with(
            vec![
                Position::new(-5.0, 0.0),
                Position::new(3.0, 0.0),
                Position::new(0.0, 10.0),
            ],
            vec![Position::new(0.0, 0.0)],
        );
        assert_eq!(t.assigned_rrh(0), (1, 3.0));

        let t = topo_with(
            vec![Position::new(-4.0, 0.0), Position::new(4.0, 0.0)],
            vec![Position::new(0.0, 0.0)],
        );
        assert_eq!(t.assigned_rrh(0), (0, 4.0));

        let t = topo_with(rrh, vec![Position::new(0.0, 0.0)]);
        let (n, d) = t.assigned_rrh(0);
        assert_eq!((n, d), (0, 0.0));
        assert_eq!(clamp_distance(d), 1.0);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let t = generate_topology(11, 3, 4, 7, 20.0).unwrap();
        let back = NetworkTopology::from_json(&t.to_json()).unwrap();
        assert_eq!(t, back);
        let mut bad = t.clone();
        bad.et_positions[0] = Position::new(1e4, 1e4);
        assert!(NetworkTopology::from_json(&bad.to_json()).is_err());
    }

    proptest! {
        #[test]
        fn terminals_inside_cells_and_assignment_is_min(seed in any::<u64>(), n_rrh in 1usize..8) {
            let t = generate_topology(seed, n_rrh, 3, 6, 20.0).unwrap();
            prop_assert!(t.validate().is_ok());
            for e in 0..t.n_et() {
                let (n, d) = t.assigned_rrh(e);
                for m in 0..t.n_rrh() {
                    prop_assert!(d <= t.et_distance(m, e));
                }
                prop_assert_eq!(d, t.et_distance(n, e));
            }
        }
    }
}
