use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "MTSP")]
    Mtsp,
    #[serde(rename = "MPDP")]
    Mpdp,
    #[serde(rename = "MDVRP")]
    Mdvrp,
    #[serde(rename = "FMDVRP")]
    Fmdvrp,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [Self::Mtsp, Self::Mpdp, Self::Mdvrp, Self::Fmdvrp];

    pub fn is_multi_depot(self) -> bool {
        matches!(self, Self::Mdvrp | Self::Fmdvrp)
    }

    /// Routes return to their start depot.
    pub fn is_closed(self) -> bool {
        !matches!(self, Self::Fmdvrp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mtsp => "MTSP",
            Self::Mpdp => "MPDP",
            Self::Mdvrp => "MDVRP",
            Self::Fmdvrp => "FMDVRP",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MTSP" => Ok(Self::Mtsp),
            "MPDP" => Ok(Self::Mpdp),
            "MDVRP" => Ok(Self::Mdvrp),
            "FMDVRP" => Ok(Self::Fmdvrp),
            _ => Err(Error::Parse(format!("unknown problem kind {s:?}"))),
        }
    }
}

/// A min-max routing instance: `agents` routes must jointly serve every
/// customer exactly once.
///
/// For MPDP customer `i < N/2` is a pickup whose delivery is `i + N/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub kind: ProblemKind,
    #[serde(rename = "M")]
    pub agents: usize,
    pub depots: Vec<Point>,
    pub customers: Vec<Point>,
}

impl Instance {
    pub fn new(kind: ProblemKind, agents: usize, depots: Vec<Point>, customers: Vec<Point>) -> Result<Self> {
        let inst = Self {
            kind,
            agents,
            depots,
            customers,
        };
        inst.check()?;
        Ok(inst)
    }

    /// Structural checks. Coordinates only need to be finite so that
    /// benchmark files in native units are representable.
    pub fn check(&self) -> Result<()> {
        check_shape(self.kind, self.customers.len(), self.depots.len(), self.agents)?;
        let finite = |p: &Point| p[0].is_finite() && p[1].is_finite();
        if !self.depots.iter().chain(&self.customers).all(finite) {
            return Err(Error::Instance("non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn in_unit_square(&self) -> bool {
        self.depots
            .iter()
            .chain(&self.customers)
            .all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]))
    }

    pub fn n(&self) -> usize {
        self.customers.len()
    }

    pub fn num_depots(&self) -> usize {
        self.depots.len()
    }

    /// Number of pickup/delivery pairs (MPDP).
    pub fn pairs(&self) -> usize {
        self.customers.len() / 2
    }

    pub fn is_pickup(&self, c: usize) -> bool {
        self.kind == ProblemKind::Mpdp && c < self.pairs()
    }

    pub fn is_delivery(&self, c: usize) -> bool {
        self.kind == ProblemKind::Mpdp && c >= self.pairs()
    }

    /// The other customer of an MPDP pair.
    pub fn partner(&self, c: usize) -> usize {
        let h = self.pairs();
        if c < h {
            c + h
        } else {
            c - h
        }
    }

    pub fn customer(&self, c: usize) -> Point {
        self.customers[c]
    }

    pub fn depot(&self, d: usize) -> Point {
        self.depots[d]
    }

    /// Distance from a customer to its nearest depot.
    pub fn nearest_depot_dist(&self, c: usize) -> f64 {
        self.depots
            .iter()
            .map(|&d| dist(d, self.customers[c]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Applies a coordinate map to every depot and customer.
    pub fn map_coords(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            kind: self.kind,
            agents: self.agents,
            depots: self.depots.iter().map(|&p| f(p)).collect(),
            customers: self.customers.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Same instance with a different agent count.
    pub fn with_agents(&self, agents: usize) -> Result<Self> {
        Self::new(self.kind, agents, self.depots.clone(), self.customers.clone())
    }

    /// Affine map of all coordinates into the unit square preserving aspect
    /// ratio. Returns the mapped instance and the scale factor applied.
    pub fn normalized(&self) -> (Self, f64) {
        let all = self.depots.iter().chain(&self.customers);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in all {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let scale = if span > 0.0 { 1.0 / span } else { 1.0 };
        let mapped = self.map_coords(|p| [(p[0] - lo[0]) * scale, (p[1] - lo[1]) * scale]);
        (mapped, scale)
    }
}

fn check_shape(kind: ProblemKind, n: usize, d: usize, m: usize) -> Result<()> {
    let bad = |msg: String| Err(Error::Instance(format!("{kind}: {msg}")));
    if n == 0 {
        return bad("at least one customer required".into());
    }
    if m == 0 {
        return bad("at least one agent required".into());
    }
    if d == 0 {
        return bad("at least one depot required".into());
    }
    match kind {
        ProblemKind::Mtsp | ProblemKind::Mpdp if d != 1 => {
            return bad(format!("single-depot problem with D={d}"));
        }
        _ => {}
    }
    if kind == ProblemKind::Mpdp {
        if !n.is_multiple_of(2) {
            return bad(format!("pickup/delivery needs even N, got {n}"));
        }
        if m > n / 2 {
            return bad(format!("M={m} exceeds the {} pickup/delivery pairs", n / 2));
        }
    } else if m > n {
        return bad(format!("M={m} exceeds N={n}; every route needs a customer"));
    }
    Ok(())
}

/// Instance with coordinates i.i.d. uniform on the unit square.
/// Depots are drawn first, then customers.
pub fn gen_uniform(kind: ProblemKind, n: usize, d: usize, m: usize, seed: u64) -> Result<Instance> {
    check_shape(kind, n, d, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_uniform_with(kind, n, d, m, &mut rng)
}

pub fn gen_uniform_with<R: Rng + ?Sized>(
    kind: ProblemKind,
    n: usize,
    d: usize,
    m: usize,
    rng: &mut R,
) -> Result<Instance> {
    check_shape(kind, n, d, m)?;
    let mut point = || [rng.gen::<f64>(), rng.gen::<f64>()];
    let depots = (0..d).map(|_| point()).collect();
    let customers = (0..n).map(|_| point()).collect();
    Instance::new(kind, m, depots, customers)
}
