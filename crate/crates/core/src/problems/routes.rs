use std::fmt;

use serde::{Deserialize, Serialize};

use super::instance::{dist, Instance, ProblemKind};
use crate::error::{Error, Result};

/// One agent's route: customers visited in order between two depots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub start: usize,
    pub end: usize,
    pub customers: Vec<usize>,
}

impl Route {
    pub fn new(start: usize, end: usize, customers: Vec<usize>) -> Self {
        Self { start, end, customers }
    }

    /// Route from and back to depot 0.
    pub fn single_depot(customers: Vec<usize>) -> Self {
        Self::new(0, 0, customers)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteSet {
    pub routes: Vec<Route>,
}

impl RouteSet {
    pub fn new(routes: Vec<Route>) -> Self {
        Self { routes }
    }
}

/// Euclidean length of `start -> customers... -> end`.
///
/// For closed kinds `end == start`, giving the usual loop. For FMDVRP this is
/// the open chain whose two depot endpoints each contribute their incident
/// edge; an empty route has length 0 in every case.
pub fn route_length(route: &Route, inst: &Instance) -> Result<f64> {
    if route.start >= inst.num_depots() || route.end >= inst.num_depots() {
        return Err(Error::Instance(format!(
            "depot index out of range in route {:?}->{:?}",
            route.start, route.end
        )));
    }
    if let Some(&c) = route.customers.iter().find(|&&c| c >= inst.n()) {
        return Err(Error::Instance(format!("customer index {c} out of range (N={})", inst.n())));
    }
    let Some((&first, _)) = route.customers.split_first() else {
        return Ok(0.0);
    };
    let last = *route.customers.last().expect("non-empty");
    let mut len = dist(inst.depot(route.start), inst.customer(first));
    for w in route.customers.windows(2) {
        len += dist(inst.customer(w[0]), inst.customer(w[1]));
    }
    len += dist(inst.customer(last), inst.depot(route.end));
    Ok(len)
}

/// Length of the longest route.
pub fn minmax_objective(sol: &RouteSet, inst: &Instance) -> Result<f64> {
    sol.routes
        .iter()
        .map(|r| route_length(r, inst))
        .try_fold(0.0f64, |m, l| Ok(m.max(l?)))
}

/// First broken feasibility rule found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RouteCount { expected: usize, got: usize },
    EmptyRoute { route: usize },
    CustomerOutOfRange { route: usize, customer: usize },
    DepotOutOfRange { route: usize, depot: usize },
    DuplicateCustomer { customer: usize, first_route: usize, second_route: usize },
    MissingCustomer { customer: usize },
    DepotRule { route: usize, start: usize, end: usize },
    Precedence { route: usize, pickup: usize, delivery: usize },
    Pairing { pickup: usize, delivery: usize, pickup_route: usize, delivery_route: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RouteCount { expected, got } => write!(f, "route count: expected {expected}, got {got}"),
            Self::EmptyRoute { route } => write!(f, "empty route {route}"),
            Self::CustomerOutOfRange { route, customer } => {
                write!(f, "route {route}: customer {customer} out of range")
            }
            Self::DepotOutOfRange { route, depot } => write!(f, "route {route}: depot {depot} out of range"),
            Self::DuplicateCustomer {
                customer,
                first_route,
                second_route,
            } => write!(f, "customer {customer} visited in routes {first_route} and {second_route}"),
            Self::MissingCustomer { customer } => write!(f, "customer {customer} never visited"),
            Self::DepotRule { route, start, end } => {
                write!(f, "route {route}: depot rule broken (start {start}, end {end})")
            }
            Self::Precedence { route, pickup, delivery } => {
                write!(f, "route {route}: delivery {delivery} precedes pickup {pickup}")
            }
            Self::Pairing {
                pickup,
                delivery,
                pickup_route,
                delivery_route,
            } => write!(
                f,
                "pair ({pickup},{delivery}) split across routes {pickup_route} and {delivery_route}"
            ),
        }
    }
}

impl std::error::Error for Violation {}

/// Checks route count, non-empty routes, exact customer partition, depot
/// rules of the kind, and MPDP precedence/pairing.
pub fn validate(sol: &RouteSet, inst: &Instance) -> Result<(), Violation> {
    if sol.routes.len() != inst.agents {
        return Err(Violation::RouteCount {
            expected: inst.agents,
            got: sol.routes.len(),
        });
    }
    let n = inst.n();
    let mut owner: Vec<Option<(usize, usize)>> = vec![None; n];
    for (ri, r) in sol.routes.iter().enumerate() {
        if r.customers.is_empty() {
            return Err(Violation::EmptyRoute { route: ri });
        }
        for depot in [r.start, r.end] {
            if depot >= inst.num_depots() {
                return Err(Violation::DepotOutOfRange { route: ri, depot });
            }
        }
        let depot_ok = match inst.kind {
            ProblemKind::Mtsp | ProblemKind::Mpdp => r.start == 0 && r.end == 0,
            ProblemKind::Mdvrp => r.start == r.end,
            ProblemKind::Fmdvrp => true,
        };
        if !depot_ok {
            return Err(Violation::DepotRule {
                route: ri,
                start: r.start,
                end: r.end,
            });
        }
        for (pos, &c) in r.customers.iter().enumerate() {
            if c >= n {
                return Err(Violation::CustomerOutOfRange { route: ri, customer: c });
            }
            if let Some((first_route, _)) = owner[c] {
                return Err(Violation::DuplicateCustomer {
                    customer: c,
                    first_route,
                    second_route: ri,
                });
            }
            owner[c] = Some((ri, pos));
        }
    }
    if let Some(c) = owner.iter().position(Option::is_none) {
        return Err(Violation::MissingCustomer { customer: c });
    }
    if inst.kind == ProblemKind::Mpdp {
        for p in 0..inst.pairs() {
            let d = inst.partner(p);
            let (rp, pp) = owner[p].expect("partition checked");
            let (rd, pd) = owner[d].expect("partition checked");
            if rp != rd {
                return Err(Violation::Pairing {
                    pickup: p,
                    delivery: d,
                    pickup_route: rp,
                    delivery_route: rd,
                });
            }
            if pd < pp {
                return Err(Violation::Precedence {
                    route: rp,
                    pickup: p,
                    delivery: d,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(kind: ProblemKind, m: usize, depots: Vec<[f64; 2]>, customers: Vec<[f64; 2]>) -> Instance {
        Instance::new(kind, m, depots, customers).unwrap()
    }

    #[test]
    fn unit_square_perimeter() {
        let i = inst(ProblemKind::Mtsp, 1, vec![[0.0, 0.0]], vec![[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]);
        let r = Route::single_depot(vec![0, 1, 2]);
        assert!((route_length(&r, &i).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(route_length(&Route::single_depot(vec![]), &i).unwrap(), 0.0);
    }

    #[test]
    fn collinear_route() {
        let i = inst(ProblemKind::Mtsp, 1, vec![[0.0, 0.0]], vec![[0.3, 0.0], [0.7, 0.0]]);
        let len = route_length(&Route::single_depot(vec![0, 1]), &i).unwrap();
        assert!((len - 1.4).abs() < 1e-12);
    }

    #[test]
    fn open_chain_for_flexible_depots() {
        let i = inst(
            ProblemKind::Fmdvrp,
            1,
            vec![[0.0, 0.0], [1.0, 0.0]],
            vec![[0.5, 0.0]],
        );
        let r = Route::new(0, 1, vec![0]);
        assert!((route_length(&r, &i).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let i = inst(ProblemKind::Mtsp, 1, vec![[0.0, 0.0]], vec![[0.3, 0.0]]);
        assert!(route_length(&Route::single_depot(vec![3]), &i).is_err());
    }

    #[test]
    fn objective_is_max() {
        let i = inst(ProblemKind::Mtsp, 2, vec![[0.0, 0.0]], vec![[1.0, 0.0], [2.0, 0.0]]);
        let s = RouteSet::new(vec![Route::single_depot(vec![0]), Route::single_depot(vec![1])]);
        assert_eq!(minmax_objective(&s, &i).unwrap(), 4.0);
    }

    #[test]
    fn validate_reports_rules() {
        let i = inst(ProblemKind::Mpdp, 1, vec![[0.0, 0.0]], vec![[0.1, 0.1], [0.2, 0.2]]);
        let bad = RouteSet::new(vec![Route::single_depot(vec![1, 0])]);
        assert!(matches!(validate(&bad, &i), Err(Violation::Precedence { .. })));
        let ok = RouteSet::new(vec![Route::single_depot(vec![0, 1])]);
        assert!(validate(&ok, &i).is_ok());

        let i = inst(ProblemKind::Mdvrp, 1, vec![[0.0, 0.0], [1.0, 1.0]], vec![[0.5, 0.5]]);
        let bad = RouteSet::new(vec![Route::new(0, 1, vec![0])]);
        assert!(matches!(validate(&bad, &i), Err(Violation::DepotRule { .. })));

        let i = inst(ProblemKind::Mtsp, 2, vec![[0.0, 0.0]], vec![[0.5, 0.5], [0.2, 0.2]]);
        let s = RouteSet::new(vec![Route::single_depot(vec![0, 1]), Route::single_depot(vec![])]);
        assert_eq!(validate(&s, &i), Err(Violation::EmptyRoute { route: 1 }));
        let s = RouteSet::new(vec![Route::single_depot(vec![0]), Route::single_depot(vec![0])]);
        assert!(matches!(validate(&s, &i), Err(Violation::DuplicateCustomer { customer: 0, .. })));
        let s = RouteSet::new(vec![Route::single_depot(vec![0])]);
        assert!(matches!(validate(&s, &i), Err(Violation::RouteCount { .. })));
    }

    #[test]
    fn pairing_violation() {
        let i = inst(
            ProblemKind::Mpdp,
            2,
            vec![[0.0, 0.0]],
            vec![[0.1, 0.1], [0.2, 0.2], [0.3, 0.3], [0.4, 0.4]],
        );
        let s = RouteSet::new(vec![Route::single_depot(vec![0, 3]), Route::single_depot(vec![1, 2])]);
        assert!(matches!(validate(&s, &i), Err(Violation::Pairing { .. })));
    }
}
