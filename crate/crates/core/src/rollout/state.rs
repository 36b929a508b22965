//! Decoding state machine: which routes are built, where the current agent
//! stands, and which actions are legal.

use crate::error::{Error, Result};
use crate::problems::{dist, Instance, Point, ProblemKind, Route, RouteSet};

/// Position of the current agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Node {
    Depot(usize),
    Customer(usize),
}

/// Meaning of a candidate slot.
///
/// Single-depot slots are `[agent_0 .. agent_{M-1}, customers]`; choosing the
/// current agent's slot returns it to the depot. Multi-depot slots are
/// `[depot_0 .. depot_{D-1}, customers]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Agent(usize),
    Depot(usize),
    Customer(usize),
}

#[derive(Clone, Debug)]
pub struct DecodeState {
    pub kind: ProblemKind,
    pub n: usize,
    pub agents: usize,
    pub depots: usize,
    /// Agent order, 0-based.
    pub perm: Vec<usize>,
    /// Index into `perm` of the route being built.
    pub pos: usize,
    pub route: Vec<usize>,
    pub routes: Vec<Route>,
    pub visited: Vec<bool>,
    pub left: usize,
    /// Start depot of the current route; `None` before a multi-depot route
    /// has chosen one.
    pub start: Option<usize>,
    pub node: Node,
    /// Length from the start depot to the current node.
    pub length: f64,
    pub t: usize,
    pub done: bool,
    /// Pickups without their delivery in the current route.
    pub open_pickups: usize,
    /// Pickups not yet visited.
    pub unstarted_pairs: usize,
    /// Longest pickup-delivery distance among pairs completed in this route.
    pub longest_pd: f64,
}

impl DecodeState {
    /// Empty partial solution for agent order `perm`; `first_depot` is the
    /// node before the first action of a multi-depot route.
    pub fn new(inst: &Instance, perm: &[usize], first_depot: usize) -> Result<Self> {
        check_perm(perm, inst.agents)?;
        if first_depot >= inst.num_depots() {
            return Err(Error::Instance(format!("depot {first_depot} out of range")));
        }
        let multi = inst.kind.is_multi_depot();
        Ok(Self {
            kind: inst.kind,
            n: inst.n(),
            agents: inst.agents,
            depots: inst.num_depots(),
            perm: perm.to_vec(),
            pos: 0,
            route: Vec::new(),
            routes: Vec::with_capacity(inst.agents),
            visited: vec![false; inst.n()],
            left: inst.n(),
            start: if multi { None } else { Some(0) },
            node: Node::Depot(if multi { first_depot } else { 0 }),
            length: 0.0,
            t: 0,
            done: false,
            open_pickups: 0,
            unstarted_pairs: if inst.kind == ProblemKind::Mpdp { inst.pairs() } else { 0 },
            longest_pd: 0.0,
        })
    }

    pub fn current_agent(&self) -> usize {
        self.perm[self.pos.min(self.agents - 1)]
    }

    pub fn num_slots(&self) -> usize {
        self.prefix() + self.n
    }

    /// Slots before the first customer.
    pub fn prefix(&self) -> usize {
        if self.kind.is_multi_depot() {
            self.depots
        } else {
            self.agents
        }
    }

    pub fn slot(&self, s: usize) -> Slot {
        let p = self.prefix();
        match (s < p, self.kind.is_multi_depot()) {
            (true, true) => Slot::Depot(s),
            (true, false) => Slot::Agent(s),
            (false, _) => Slot::Customer(s - p),
        }
    }

    /// Slot holding the current node's embedding.
    pub fn node_slot(&self) -> usize {
        match (self.node, self.kind.is_multi_depot()) {
            (Node::Customer(c), _) => self.prefix() + c,
            (Node::Depot(j), true) => j,
            (Node::Depot(_), false) => self.current_agent(),
        }
    }

    pub fn node_point(&self, inst: &Instance) -> Point {
        match self.node {
            Node::Depot(j) => inst.depot(j),
            Node::Customer(c) => inst.customer(c),
        }
    }

    pub fn slot_point(&self, inst: &Instance, s: usize) -> Point {
        match self.slot(s) {
            Slot::Agent(_) => inst.depot(0),
            Slot::Depot(j) => inst.depot(j),
            Slot::Customer(c) => inst.customer(c),
        }
    }

    fn is_last_route(&self) -> bool {
        self.pos + 1 == self.agents
    }

    /// Routes still to be opened after the current one.
    pub fn routes_after(&self) -> usize {
        self.agents - self.pos - 1
    }

    /// Legal actions, one flag per slot.
    pub fn mask(&self, inst: &Instance) -> Vec<bool> {
        let mut mask = vec![false; self.num_slots()];
        if self.done {
            return mask;
        }
        let p = self.prefix();
        let multi = self.kind.is_multi_depot();
        if multi && self.start.is_none() {
            mask[..p].fill(true);
            return mask;
        }
        let nonempty = !self.route.is_empty();
        let after = self.routes_after();
        let mpdp = self.kind == ProblemKind::Mpdp;
        // Units that can still open a route: customers, or unstarted pairs.
        let units = if mpdp { self.unstarted_pairs } else { self.left };
        let starving = nonempty && units <= after;
        for c in 0..self.n {
            if self.visited[c] {
                continue;
            }
            mask[p + c] = if mpdp && inst.is_delivery(c) {
                self.visited[inst.partner(c)]
            } else {
                !starving
            };
        }
        let may_close = nonempty && self.open_pickups == 0 && (!self.is_last_route() || self.left == 0);
        if may_close {
            match self.kind {
                ProblemKind::Mtsp | ProblemKind::Mpdp => mask[self.current_agent()] = true,
                ProblemKind::Mdvrp => mask[self.start.expect("route started")] = true,
                ProblemKind::Fmdvrp => mask[..p].fill(true),
            }
        }
        mask
    }

    /// Applies a legal action.
    pub fn step(&mut self, inst: &Instance, action: usize) -> Result<()> {
        let legal = self.mask(inst);
        if !legal.get(action).copied().unwrap_or(false) {
            return Err(Error::IllegalAction { action, step: self.t });
        }
        let here = self.node_point(inst);
        match self.slot(action) {
            Slot::Customer(c) => {
                self.length += dist(here, inst.customer(c));
                self.visited[c] = true;
                self.left -= 1;
                self.route.push(c);
                self.node = Node::Customer(c);
                if self.kind == ProblemKind::Mpdp {
                    if inst.is_pickup(c) {
                        self.open_pickups += 1;
                        self.unstarted_pairs -= 1;
                    } else {
                        self.open_pickups -= 1;
                        self.longest_pd = self.longest_pd.max(dist(inst.customer(inst.partner(c)), inst.customer(c)));
                    }
                }
            }
            Slot::Depot(j) if self.start.is_none() => {
                self.start = Some(j);
                self.node = Node::Depot(j);
            }
            Slot::Agent(_) | Slot::Depot(_) => {
                let end = match self.slot(action) {
                    Slot::Depot(j) => j,
                    _ => 0,
                };
                let start = self.start.expect("route started");
                let customers = std::mem::take(&mut self.route);
                self.routes.push(Route::new(start, end, customers));
                self.node = Node::Depot(end);
                self.length = 0.0;
                self.longest_pd = 0.0;
                self.pos += 1;
                if self.pos == self.agents {
                    self.done = true;
                } else if self.kind.is_multi_depot() {
                    self.start = None;
                }
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Routes in agent order: route `i` is the one driven by agent `i`.
    pub fn solution(&self) -> Result<RouteSet> {
        if !self.done {
            return Err(Error::Instance("solution requested before the last route closed".into()));
        }
        let mut routes = vec![None; self.agents];
        for (k, r) in self.routes.iter().enumerate() {
            routes[self.perm[k]] = Some(r.clone());
        }
        Ok(RouteSet::new(routes.into_iter().map(|r| r.expect("bijection")).collect()))
    }

    /// Steps a complete rollout takes.
    pub fn total_steps(inst: &Instance) -> usize {
        if inst.kind.is_multi_depot() {
            inst.n() + 2 * inst.agents
        } else {
            inst.n() + inst.agents
        }
    }
}

pub fn check_perm(perm: &[usize], m: usize) -> Result<()> {
    let mut seen = vec![false; m];
    if perm.len() != m {
        return Err(Error::Instance(format!("permutation of length {} for M={m}", perm.len())));
    }
    for &a in perm {
        if a >= m || std::mem::replace(&mut seen[a], true) {
            return Err(Error::Instance(format!("{perm:?} is not a permutation of 0..{m}")));
        }
    }
    Ok(())
}
