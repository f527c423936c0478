//! Runs the full experiment on a synthetic scenario and prints the results
//! table. Usage: `cargo run --release --example run_scenario [config.toml]`.

use std::time::Instant;

use haicmp_core::config::{MissingnessStrategy, PipelineConfig};
use haicmp_core::labeling::ModelTarget;
use haicmp_core::experiment::run_experiment;
use haicmp_core::synthgen::generate_population;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = match std::env::args().nth(1) {
        Some(p) => PipelineConfig::from_path(p.as_ref())?,
        None => PipelineConfig::default(),
    };
    let start = Instant::now();
    let (dataset, _) = generate_population(&cfg.scenario)?;
    let out = run_experiment(&cfg, &dataset)?;
    let r = &out.report;
    println!("{:?}", r.dataset.cohort_sizes);
    println!("positives {:?}  common {}", r.dataset.positives, r.dataset.common_cohort);
    print!("{}", r.summary_table());
    for p in &r.plans {
        let tests: Vec<String> = p.metrics().map(|m| format!("{:.3}/{:.3}", m.train_auc, m.test_auc)).collect();
        println!("{} {:?} {}", p.plan.key(), tests, p.error.clone().unwrap_or_default());
        let top: Vec<String> = p.attribution.iter().take(6).map(|a| format!("{}={:.2}", a.feature, a.mean_abs_contribution)).collect();
        println!("  top {}", top.join(" "));
        for s in p.splits.iter().filter(|s| s.error.is_some()) {
            println!("  split {}: {}", s.split_id, s.error.as_deref().unwrap_or_default());
        }
        for m in p.metrics() {
            println!("  {:?} {:?}", m.counts, m.balance.iter().map(|b| (b.rate_positive_before, b.rate_negative_before, b.removed)).collect::<Vec<_>>());
        }
    }
    for rt in &r.routing {
        println!(
            "routing {} {}: all-HAI {:?} routed {:?}",
            rt.strategy.as_str(),
            rt.label_source,
            rt.mean_auc_all_hai_ventilated,
            rt.mean_auc_routed_ventilated
        );
    }
    for t in [ModelTarget::Iri, ModelTarget::Vap] {
        let (Some(g), Some(b)) = (r.plan(t, MissingnessStrategy::GaussianImpute), r.plan(t, MissingnessStrategy::BalanceMissingness)) else { continue };
        let wins = g.splits.iter().zip(&b.splits).filter(|(g, b)| match (&g.metrics, &b.metrics) {
            (Some(g), Some(b)) => b.test_auc >= g.test_auc,
            _ => false,
        }).count();
        let gap = |p: &haicmp_core::experiment::PlanReport| p.aggregate.as_ref().map(|a| a.train_auc.mean - a.test_auc.mean);
        println!("direction {t}: balanced wins {wins}/5, gaussian gap {:?}, balanced gap {:?}", gap(g), gap(b));
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
