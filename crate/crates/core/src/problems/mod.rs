//! Min-max routing problems: instances, route sets, objective, feasibility,
//! and the dihedral augmentation of the unit square.

mod augment;
mod instance;
mod io;
mod routes;

pub use augment::{augment8, Symmetry};
pub use instance::{dist, gen_uniform, gen_uniform_with, Instance, Point, ProblemKind};
pub use io::{instance_from_line, instance_to_line, read_instances, write_instances};
pub use routes::{minmax_objective, route_length, validate, Route, RouteSet, Violation};
