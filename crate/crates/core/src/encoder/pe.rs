//! Positional encodings that tell the M agents apart.

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SINUSOIDAL_BASE: f64 = 10_000.0;
pub const ROTATION_BASE: f64 = 1_000.0;

fn check_even(d: usize) -> Result<()> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding needs an even dimension, got {d}")));
    }
    Ok(())
}

/// `M x d` table with `sin(m / 10000^(floor(q/2)/d))` in even columns and the
/// cosine of the same angle in odd columns.
pub fn sinusoidal_pe<T: Real>(m: usize, d: usize) -> Result<Tensor<T>> {
    check_even(d)?;
    let mut data = Vec::with_capacity(m * d);
    for pos in 0..m {
        for q in 0..d {
            let angle = pos as f64 / SINUSOIDAL_BASE.powf((q / 2) as f64 / d as f64);
            data.push(T::from_f(if q % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(m, d, data)
}

/// Rotation angle of pair `i` (0-based) per unit position: `(1/1000)^(i/d)`.
pub fn rotation_freq(i: usize, d: usize) -> f64 {
    (1.0 / ROTATION_BASE).powf(i as f64 / d as f64)
}

/// Cosine/sine tables: entry `(m, 2i)` and `(m, 2i+1)` hold the trig of `m * theta_i`.
fn rotation_tables<T: Real>(m: usize, d: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut cos = Vec::with_capacity(m * d);
    let mut sin = Vec::with_capacity(m * d);
    for pos in 0..m {
        for q in 0..d {
            let a = pos as f64 * rotation_freq(q / 2, d);
            cos.push(T::from_f(a.cos()));
            sin.push(T::from_f(a.sin()));
        }
    }
    Ok((Tensor::new(m, d, cos)?, Tensor::new(m, d, sin)?))
}

/// `d x d` matrix mapping `[e1, e2, e3, e4, ..]` to `[-e2, e1, -e4, e3, ..]`.
fn quarter_turn<T: Real>(d: usize) -> Tensor<T> {
    let mut r = Tensor::zeros(d, d);
    for i in (0..d).step_by(2) {
        r.set(i + 1, i, -T::one());
        r.set(i, i + 1, T::one());
    }
    r
}

/// Rotates each consecutive pair of the `1 x d` row `base` by `m * theta_i`
/// for positions `m = 0..M`, giving the `M x d` pre-projection table.
pub fn rotate_positions<T: Real>(g: &mut Graph<T>, base: Var, m: usize) -> Result<Var> {
    let [_, d] = g.shape(base);
    check_even(d)?;
    let (cos, sin) = rotation_tables::<T>(m, d)?;
    let b = g.broadcast_rows(base, m)?;
    let turn = g.constant(quarter_turn(d));
    let turned = g.matmul(b, turn)?;
    let cos = g.constant(cos);
    let sin = g.constant(sin);
    let a = g.mul(b, cos)?;
    let s = g.mul(turned, sin)?;
    g.add(a, s)
}

/// Depot-aware encoding: rotated copies of `base` projected by `w_pe`.
pub fn rotation_pe<T: Real>(g: &mut Graph<T>, base: Var, m: usize, w_pe: Var) -> Result<Var> {
    let rotated = rotate_positions(g, base, m)?;
    g.matmul(rotated, w_pe)
}
