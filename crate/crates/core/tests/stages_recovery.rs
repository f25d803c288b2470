use std::collections::BTreeSet;

use discourse::corpus::{Role, SynthSpec, SyntheticCorpus};
use discourse::stages::{build_vocab, decode_corpus, em_fit, em_fit_multistart, init_model, EmConfig, StageModel};

fn disjoint_spec() -> SynthSpec {
    SynthSpec::from_json_path(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synth_disjoint.json")).unwrap()
}

fn worst_total_variation(spec: &SynthSpec, model: &StageModel) -> f64 {
    let mut worst = 0.0f64;
    for (s, stage) in spec.emissions.iter().enumerate() {
        for role in Role::ALL {
            let truth = stage.for_role(role);
            let est = model.emission_map(role, s);
            let keys: BTreeSet<&String> = truth.keys().chain(est.keys()).collect();
            let tv = keys
                .iter()
                .map(|k| (truth.get(*k).copied().unwrap_or(0.0) - est.get(*k).copied().unwrap_or(0.0)).abs())
                .sum::<f64>()
                / 2.0;
            worst = worst.max(tv);
        }
    }
    worst
}

fn stage_accuracy(synth: &SyntheticCorpus, model: &StageModel) -> f64 {
    let decoded = decode_corpus(model, &synth.corpus);
    let (mut hit, mut total) = (0usize, 0usize);
    for ((_, path), truth) in decoded.iter().zip(&synth.true_stages) {
        for (p, t) in path.stages.iter().zip(truth) {
            hit += usize::from(*p == t + 1);
            total += 1;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn disjoint_vocabularies_are_recovered() {
    let mut spec = disjoint_spec();
    spec.conversations = 400;
    let synth = spec.generate(11).unwrap();
    let model = init_model(&synth.corpus, 5, 20).unwrap();
    let fit = em_fit(model, &synth.corpus, EmConfig::default()).unwrap();
    assert!(fit.converged);
    for w in fit.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8, "loglik decreased: {} -> {}", w[0], w[1]);
    }
    assert!(worst_total_variation(&spec, &fit.model) < 0.05);
    assert_eq!(stage_accuracy(&synth, &fit.model), 1.0);
}

#[test]
fn long_stages_need_a_grid_of_starts() {
    let mut spec = disjoint_spec();
    spec.conversations = 300;
    spec.stay = vec![0.85, 0.85, 0.85, 0.85, 1.0];
    spec.conversation_messages.min = 40;
    spec.conversation_messages.max = 60;
    let synth = spec.generate(4).unwrap();

    let single = em_fit(init_model(&synth.corpus, 5, 20).unwrap(), &synth.corpus, EmConfig::default()).unwrap();
    let vocab = build_vocab(&synth.corpus, 20).unwrap();
    let multi = em_fit_multistart(&synth.corpus, &vocab, 5, &[0.5, 0.7, 0.8, 0.9], EmConfig::default()).unwrap();
    eprintln!(
        "single start accuracy {:.3}, grid accuracy {:.3}",
        stage_accuracy(&synth, &single.model),
        stage_accuracy(&synth, &multi.model)
    );
    assert!(multi.trace.last() >= single.trace.last());
    assert!(stage_accuracy(&synth, &multi.model) > 0.99);
}

#[test]
fn fitting_is_deterministic() {
    let mut spec = disjoint_spec();
    spec.conversations = 50;
    let synth = spec.generate(3).unwrap();
    let a = em_fit(init_model(&synth.corpus, 3, 5).unwrap(), &synth.corpus, EmConfig::default()).unwrap();
    let b = em_fit(init_model(&synth.corpus, 3, 5).unwrap(), &synth.corpus, EmConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&a.model).unwrap(), serde_json::to_string(&b.model).unwrap());
    assert_eq!(a.trace, b.trace);
}

#[test]
fn extra_iteration_after_convergence_is_below_tolerance() {
    let mut spec = disjoint_spec();
    spec.conversations = 100;
    let synth = spec.generate(8).unwrap();
    let cfg = EmConfig::default();
    let fit = em_fit(init_model(&synth.corpus, 5, 20).unwrap(), &synth.corpus, cfg).unwrap();
    assert!(fit.converged);
    let more = em_fit(fit.model.clone(), &synth.corpus, EmConfig { max_iter: 1, tol: 0.0 }).unwrap();
    let (before, after) = (more.trace[0], more.trace[1]);
    assert!(((after - before) / before).abs() < cfg.tol);
}
