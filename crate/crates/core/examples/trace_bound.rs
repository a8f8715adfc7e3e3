//! Covariance trace of layer-normed token lists against mean pairwise cosine.
//!
//!     cargo run --example trace_bound

use socm::theory::{trace_bound_formula, verify_trace_bound, TraceBoundCase};

fn main() -> socm::Result<()> {
    println!("{:>5} {:>8} {:>10} {:>10}", "n", "cosine", "trace", "formula");
    for (n, cos) in [(2, 1.0 / 3.0), (8, 0.1), (8, 0.5), (32, 1.0 / 3.0), (32, 0.9), (120, 1.0 / 3.0)] {
        let case = TraceBoundCase { n, d: n + 8, gamma: 1.0, beta: 0.0, target_cos: cos, seed: n as u64 };
        let r = verify_trace_bound(&case)?;
        println!("{n:>5} {:>8.4} {:>10.6} {:>10.6}", r.realized_cos, r.trace, r.formula);
    }
    // at cosine 1/3 the trace approaches 2 from below as n grows
    for n in [10, 100, 10_000] {
        println!("n = {n:>6}: {:.6}", trace_bound_formula(n, 1.0 / 3.0));
    }
    Ok(())
}
