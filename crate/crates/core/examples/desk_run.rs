//! Full pipeline on the synthetic suite, printing the trace and target F1.

use std::time::Instant;

use tofner::convert::QueryTemplateSet;
use tofner::eval::entity_f1;
use tofner::pipeline::{generate_pseudo_labels, run_tof, PipelineConfig, RunOptions};
use tofner::synthetic::{SyntheticConfig, SyntheticSuite};

fn main() {
    let sc = SyntheticConfig::default();
    let suite = SyntheticSuite::generate(&sc).unwrap();
    let templates = QueryTemplateSet::default_for(&suite.label_set).unwrap();
    let config = PipelineConfig::desk();
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let out = run_tof(&suite.registry().unwrap(), &templates, &config, dir.path(), &RunOptions::default())
        .unwrap()
        .into_output()
        .unwrap();
    print!("{}", out.trace.summary());
    for r in &out.trace.records {
        if !r.epoch_losses.is_empty() {
            println!("{} {:?}", r.stage, r.epoch_losses);
        }
    }
    let test = generate_pseudo_labels(&out.state, &suite.t_test).unwrap();
    println!("test {}", entity_f1(&suite.t_test, &test).unwrap().table());
    println!("t_ner_unlabeled f1 {:.4}", entity_f1(&suite.t_ner_unlabeled, &out.predictions).unwrap().f1);
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
}

