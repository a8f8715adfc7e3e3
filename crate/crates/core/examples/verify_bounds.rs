//! Runs the full verification suite with default settings and prints a summary.
//!
//!     cargo run --release --example verify_bounds

use socm::theory::{run_verification, Transform, VerifyConfig};

fn main() -> socm::Result<()> {
    let report = run_verification(&VerifyConfig::default())?;

    for p in &report.grid.properties {
        println!("{:<48} {}", p.name, if p.passed { "ok" } else { "FAIL" });
    }
    for b in &report.layer_bound {
        let name = match b.config.transform {
            Transform::Identity => "identity".to_string(),
            Transform::UniformScale { s } => format!("scale {s}"),
            Transform::Layernorm { gamma, beta } => format!("layernorm {gamma}/{beta}"),
        };
        println!(
            "layer bound, {name:<16} {:?} attention: lambda {:.3}  lhs {:.4}  rhs {:.4}  {}",
            b.config.attention,
            b.lambda,
            b.lhs,
            b.rhs,
            if b.holds { "holds" } else { "exceeded" }
        );
    }
    for t in &report.concentration_bound {
        println!(
            "eps {:<5} max socm {:.5} (bound {:.3}), adversarial {:?}",
            t.epsilon,
            t.max_socm,
            t.epsilon / 2.0,
            t.adversarial.iter().map(|a| format!("{:.5}", a.socm)).collect::<Vec<_>>()
        );
    }
    println!("overall: {}", if report.passes { "pass" } else { "FAIL" });
    Ok(())
}
