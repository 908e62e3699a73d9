//! Fixtures shared by the benchmarks.

use ifslab_core::expr::Expr;
use ifslab_core::skewprod::{ExprMaps, FiberSystem};
use ifslab_core::{build_interval_example, AffineIfsFamily, ParamBox};

/// The five-map interval family with ratio 0.21.
pub fn interval_family() -> AffineIfsFamily {
    build_interval_example(4, 0.21).expect("valid example")
}

/// A two-letter nonlinear scalar system on `[-0.5, 0.5]`.
pub fn nonlinear_fiber() -> FiberSystem {
    let branch = |e: &str| vec![Expr::parse(e).expect("valid expression")];
    let maps = ExprMaps::new(vec![
        branch("0.35*x + 0.04*sin(x + p) - 0.5"),
        branch("0.3*x + 0.05*sin(2*x) + 0.1*p + 0.4"),
    ])
    .expect("valid maps");
    let pbox = ParamBox::interval(-0.5, 0.5).expect("valid box");
    FiberSystem::from_exprs("nonlinear", maps, pbox, 0.05).expect("certified system")
}
