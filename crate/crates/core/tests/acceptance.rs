//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs without the libtest harness.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use discourse::analyses::{adaptability_curve, stage_duration_comparison, AnalysisConfig};
use discourse::coordination::{aggregated_coordination, marker_coordination, CoordinationConfig, Exchange};
use discourse::corpus::{split_counselors, Conversation, Corpus, Role, SplitConfig, SynthSpec};
use discourse::lexicon::Lexicon;
use discourse::predict::{auc, cross_validate, train_logistic, Dataset, Design, Example, LogisticObjective, Regularization, TrainConfig};
use discourse::stages::{
    decode_corpus, em_fit, forward_backward, init_model, viterbi_decode, DurationConfig, EmConfig, StageModel,
    Vocab,
};
use discourse::stats::{
    member_bootstrap_ci, mann_whitney_u, mean, paired_bootstrap_test, wilcoxon_signed_rank, BootstrapConfig,
};
use discourse::vectorspace::{cluster_documents, cosine_distance, js_divergence, templatedness, SparseVector, TfIdfModel};

// Tolerances and budgets.
const HMM_INSTANCES: usize = 1000;
const HMM_TOL: f64 = 1e-9;
const HMM_BUDGET: Duration = Duration::from_secs(30);
const EM_SLACK: f64 = 1e-8;
const EM_ITERATIONS: usize = 50;
const EM_TV_MAX: f64 = 0.05;
const EM_ACCURACY_MIN: f64 = 0.90;
const EM_BUDGET: Duration = Duration::from_secs(120);
const COORD_INDEPENDENT_TOL: f64 = 0.02;
const COORD_COPY_TARGET: f64 = 0.4;
const COORD_COPY_TOL: f64 = 0.05;
const JS_TOL: f64 = 1e-12;
const GRAD_POINTS: usize = 100;
const GRAD_REL_TOL: f64 = 1e-5;
const AUC_SEPARABLE_MIN: f64 = 0.95;
const AUC_PERMUTED_TOL: f64 = 0.1;
const PIPELINE_P_MAX: f64 = 0.05;
const PIPELINE_BUDGET: Duration = Duration::from_secs(300);

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn data_path(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

// ---------------------------------------------------------------------------
// 1. HMM correctness against brute-force enumeration

fn monotone_paths(len: usize, stages: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut path = vec![0usize];
    fn extend(path: &mut Vec<usize>, len: usize, stages: usize, out: &mut Vec<Vec<usize>>) {
        if path.len() == len {
            out.push(path.clone());
            return;
        }
        let last = *path.last().unwrap();
        for next in [last, last + 1] {
            if next < stages {
                path.push(next);
                extend(path, len, stages, out);
                path.pop();
            }
        }
    }
    extend(&mut path, len, stages, &mut out);
    out
}

struct HmmInstance {
    model: StageModel,
    conv: Conversation,
    /// Dense copies used by the oracle: emissions[role][stage][column].
    emissions: [Vec<Vec<f64>>; 2],
    stay: Vec<f64>,
    vocab: Vec<String>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> HmmInstance {
    let stages = rng.gen_range(1..=3);
    let v = rng.gen_range(1..=4);
    let vocab: Vec<String> = (0..v).map(|i| format!("w{i}")).collect();
    let row = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..=v).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let emissions = [
        (0..stages).map(|_| row(rng)).collect::<Vec<_>>(),
        (0..stages).map(|_| row(rng)).collect::<Vec<_>>(),
    ];
    let mut stay: Vec<f64> = (0..stages).map(|_| rng.gen_range(0.05..0.95)).collect();
    stay[stages - 1] = 1.0;
    let model = StageModel::from_parts(Vocab::from_tokens(vocab.clone()).unwrap(), emissions.clone(), stay.clone()).unwrap();
    let n = rng.gen_range(1..=8);
    let messages: Vec<(Role, String)> = (0..n)
        .map(|_| {
            let role = if rng.gen_bool(0.5) { Role::Counselor } else { Role::Texter };
            let k = rng.gen_range(0..=5);
            let words: Vec<String> = (0..k)
                .map(|_| {
                    let j = rng.gen_range(0..=v);
                    if j == v { "unseen".to_string() } else { vocab[j].clone() }
                })
                .collect();
            (role, words.join(" "))
        })
        .collect();
    HmmInstance {
        model,
        conv: Conversation::new("x", "c", messages),
        emissions,
        stay,
        vocab,
    }
}

fn oracle_path_logprob(inst: &HmmInstance, path: &[usize]) -> f64 {
    let mut lp = 0.0;
    for (t, m) in inst.conv.messages.iter().enumerate() {
        let s = path[t];
        if t > 0 {
            let prev = path[t - 1];
            lp += if prev == s { inst.stay[prev].ln() } else { (1.0 - inst.stay[prev]).ln() };
        }
        let row = &inst.emissions[if m.role == Role::Counselor { 0 } else { 1 }][s];
        for tok in &m.tokens {
            // vocabulary columns are the sorted tokens followed by the unknown column
            let col = inst.vocab.iter().position(|w| w == tok).unwrap_or(inst.vocab.len());
            lp += row[col].ln();
        }
    }
    lp
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_vit, mut worst_post, mut worst_ll) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..HMM_INSTANCES {
        let inst = random_instance(&mut rng);
        let paths = monotone_paths(inst.conv.len(), inst.model.stages());
        let lps: Vec<f64> = paths.iter().map(|p| oracle_path_logprob(&inst, p)).collect();
        let best = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total = best + lps.iter().map(|l| (l - best).exp()).sum::<f64>().ln();

        let (path, vit_lp) = viterbi_decode(&inst.model, &inst.conv);
        let zero_based: Vec<usize> = path.stages.iter().map(|s| s - 1).collect();
        worst_vit = worst_vit
            .max((vit_lp - best).abs())
            .max((oracle_path_logprob(&inst, &zero_based) - best).abs());

        let fb = forward_backward(&inst.model, &inst.conv);
        worst_ll = worst_ll.max((fb.loglik - total).abs());
        for t in 0..inst.conv.len() {
            for s in 0..inst.model.stages() {
                let marginal: f64 = paths
                    .iter()
                    .zip(&lps)
                    .filter(|(p, _)| p[t] == s)
                    .map(|(_, l)| (l - total).exp())
                    .sum();
                worst_post = worst_post.max((fb.posteriors[t][s] - marginal).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst_vit < HMM_TOL && worst_post < HMM_TOL && worst_ll < HMM_TOL && elapsed < HMM_BUDGET,
        format!(
            "{HMM_INSTANCES} instances; max |viterbi - brute| {worst_vit:.2e}, max posterior diff {worst_post:.2e}, \
             max loglik diff {worst_ll:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. EM monotonicity and recovery

fn random_token_corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let convs = (0..40)
        .map(|i| {
            let n = rng.gen_range(2..15);
            let msgs: Vec<(Role, String)> = (0..n)
                .map(|_| {
                    let role = if rng.gen_bool(0.5) { Role::Counselor } else { Role::Texter };
                    let k = rng.gen_range(0..6);
                    let words: Vec<String> = (0..k).map(|_| format!("t{}", rng.gen_range(0..12))).collect();
                    (role, words.join(" "))
                })
                .collect();
            Conversation::new(format!("r{i}"), "c", msgs)
        })
        .collect();
    Corpus::new(convs).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn total_variation(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    keys.iter()
        .map(|k| (a.get(*k).copied().unwrap_or(0.0) - b.get(*k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        / 2.0
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut worst_drop = f64::NEG_INFINITY;
    let spec = SynthSpec::from_json_path(data_path("synth_disjoint.json")).unwrap();
    let mut small = spec.clone();
    small.conversations = 60;
    let corpora = [random_token_corpus(2),
        random_token_corpus(3),
        small.generate(5).unwrap().corpus];
    for (i, corpus) in corpora.iter().enumerate() {
        for stages in [2, 4] {
            let model = init_model(corpus, stages, 0).unwrap();
            let fit = em_fit(model, corpus, EmConfig { max_iter: EM_ITERATIONS, tol: 0.0 }).unwrap();
            if fit.trace.len() != EM_ITERATIONS + 1 {
                return Err(format!("corpus {i}: {} log-likelihood values", fit.trace.len()));
            }
            for w in fit.trace.windows(2) {
                worst_drop = worst_drop.max(w[0] - w[1]);
            }
        }
    }

    let synth = spec.generate(2024).unwrap();
    let model = init_model(&synth.corpus, spec.stages, 20).unwrap();
    let fit = em_fit(model, &synth.corpus, EmConfig::default()).unwrap();
    for w in fit.trace.windows(2) {
        worst_drop = worst_drop.max(w[0] - w[1]);
    }
    let k = spec.stages;
    let tv: Vec<Vec<f64>> = (0..k)
        .map(|est| {
            (0..k)
                .map(|truth| {
                    Role::ALL
                        .iter()
                        .map(|r| total_variation(spec.emissions[truth].for_role(*r), &fit.model.emission_map(*r, est)))
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect();
    let (perm, worst_tv) = permutations(k)
        .into_iter()
        .map(|p| {
            let w = (0..k).map(|e| tv[e][p[e]]).fold(0.0, f64::max);
            (p, w)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let decoded = decode_corpus(&fit.model, &synth.corpus);
    let (mut hit, mut total) = (0usize, 0usize);
    for ((_, path), truth) in decoded.iter().zip(&synth.true_stages) {
        for (p, t) in path.stages.iter().zip(truth) {
            hit += usize::from(perm[p - 1] == *t);
            total += 1;
        }
    }
    let accuracy = hit as f64 / total as f64;
    let elapsed = start.elapsed();
    check(
        worst_drop <= EM_SLACK && worst_tv < EM_TV_MAX && accuracy >= EM_ACCURACY_MIN && elapsed < EM_BUDGET,
        format!(
            "largest loglik decrease {worst_drop:.2e} over {EM_ITERATIONS} iterations; {} conversations: \
             worst TV {worst_tv:.4} (alignment {perm:?}), stage accuracy {accuracy:.4}, {} EM updates, {:.1}s",
            spec.conversations,
            fit.iterations,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Coordination

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn criterion_3() -> Verdict {
    let marker = Lexicon::new("m", ["mk"]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let independent: Vec<Exchange> = (0..10_000)
        .map(|_| Exchange {
            conversation_id: "c".into(),
            member: "b".into(),
            initiator: words(if rng.gen_bool(0.5) { "mk x" } else { "x" }),
            reply: words(if rng.gen_bool(0.3) { "mk y" } else { "y" }),
        })
        .collect();
    let c_indep = marker_coordination(&independent, &marker).unwrap();

    let ex = |i: &str, r: &str| Exchange {
        conversation_id: "c".into(),
        member: "b".into(),
        initiator: words(i),
        reply: words(r),
    };
    let worked = [ex("mk", "mk"), ex("mk", "mk"), ex("x", "y"), ex("x", "y")];
    let c_worked = marker_coordination(&worked, &marker).unwrap();

    // Reply exhibits when the initiator does and is copied (probability 1/2),
    // or independently with probability 1/9; initiators exhibit with
    // probability 1/10. C = (1 - 1/10) (1 - 1/9) / 2 = 0.4.
    let article = Lexicon::new("article", ["the"]).unwrap();
    let mut convs = Vec::new();
    for counselor in 0..20 {
        for c in 0..50 {
            let mut msgs = Vec::new();
            for _ in 0..10 {
                let init = rng.gen_bool(0.1);
                let reply = (init && rng.gen_bool(0.5)) || rng.gen_bool(1.0 / 9.0);
                msgs.push((Role::Texter, if init { "the plan" } else { "plan" }));
                msgs.push((Role::Counselor, if reply { "the answer" } else { "answer" }));
            }
            convs.push(Conversation::new(format!("k{counselor}-{c}"), format!("k{counselor}"), msgs));
        }
    }
    let corpus = Corpus::new(convs).unwrap();
    let copy = aggregated_coordination(corpus.conversations(), Role::Texter, &[&article], CoordinationConfig::default())
        .map_err(|e| e.to_string())?;

    check(
        c_indep.abs() <= COORD_INDEPENDENT_TOL && c_worked == 0.5 && (copy.group - COORD_COPY_TARGET).abs() <= COORD_COPY_TOL,
        format!(
            "independent C {c_indep:.4}; worked example {c_worked}; copy corpus C {:.4} over {} members (target 0.4)",
            copy.group, copy.defined_members
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Vector space

fn criterion_4() -> Verdict {
    let u = SparseVector::from_pairs([(0, 1.0), (3, 2.0)]);
    let v = SparseVector::from_pairs([(1, 5.0)]);
    let scaled = u.scaled(3.5);
    let d_same = cosine_distance(&u, &u);
    let d_scaled = cosine_distance(&u, &scaled);
    let d_orth = cosine_distance(&u, &v);

    let js_same = js_divergence(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).map_err(|e| e.to_string())?;
    let js_disjoint = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).map_err(|e| e.to_string())?;

    let mut docs: Vec<(String, Vec<String>)> =
        (0..12).map(|i| (format!("dup{i:02}"), words("i lost my job today and feel awful"))).collect();
    docs.push(("outlier".into(), words("completely different words here")));
    let model = TfIdfModel::fit(&docs.iter().map(|(_, t)| t.as_slice()).collect::<Vec<_>>(), 2).unwrap();
    let clusters = cluster_documents(&model, &docs, 0.4, 10).map_err(|e| e.to_string())?;
    let one_cluster = clusters.clusters.len() == 1
        && clusters.clusters[0].len() == 12
        && !clusters.clusters[0].contains(&"outlier".to_string());

    let unigram = TfIdfModel::fit(&docs.iter().map(|(_, t)| t.as_slice()).collect::<Vec<_>>(), 1).unwrap();
    let counts = templatedness(&unigram, &docs, 0.4).map_err(|e| e.to_string())?;
    let dup_counts: BTreeSet<usize> = counts.iter().filter(|(id, _)| id != "outlier").map(|(_, n)| *n).collect();
    let outlier_count = counts.iter().find(|(id, _)| id == "outlier").map(|(_, n)| *n);

    check(
        d_same == 0.0
            && d_scaled.abs() < 1e-15
            && d_orth == 1.0
            && js_same.abs() < JS_TOL
            && (js_disjoint - std::f64::consts::LN_2).abs() < JS_TOL
            && one_cluster
            && dup_counts == BTreeSet::from([11])
            && outlier_count == Some(0),
        format!(
            "distances self {d_same}, scaled {d_scaled:.1e}, orthogonal {d_orth}; JS {js_same:.1e} and ln2 - {:.1e}; \
             clusters {:?}; duplicate neighbor counts {dup_counts:?}, outlier {outlier_count:?}",
            std::f64::consts::LN_2 - js_disjoint,
            clusters.clusters.iter().map(Vec::len).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Prediction

fn random_design(rng: &mut ChaCha8Rng, n: usize, d: usize, g: usize) -> Design {
    Design {
        dense: (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
        ngrams: (0..n).map(|_| (0..g).filter(|_| rng.gen_bool(0.3)).collect()).collect(),
        y: (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect(),
        n_dense: d,
        n_ngrams: g,
    }
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, si) in scores.iter().enumerate() {
        for (j, sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn synthetic_dataset(rng: &mut ChaCha8Rng, n: usize, separable: bool) -> Dataset {
    let examples = (0..n)
        .map(|i| {
            let label = i % 2 == 0;
            let sign = if label { 1.0 } else { -1.0 };
            let signal = if separable { sign * (1.0 + rng.gen_range(0.0..1.0)) } else { rng.gen_range(-1.0..1.0) };
            Example {
                id: format!("e{i}"),
                dense: vec![signal, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                ngrams: (0..10).filter(|_| rng.gen_bool(0.2)).collect(),
                label,
            }
        })
        .collect();
    Dataset {
        dense_names: vec!["signal".into(), "noise1".into(), "noise2".into()],
        ngram_names: (0..10).map(|j| format!("g{j}")).collect(),
        examples,
    }
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_grad = 0.0f64;
    for _ in 0..GRAD_POINTS {
        let design = random_design(&mut rng, 25, 4, 3);
        let l2 = rng.gen_range(0.0..0.5);
        let obj = LogisticObjective { design: &design, l2 };
        let w: Vec<f64> = (0..design.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let (gw, gb) = obj.gradient(&w, b);
        let h = 1e-5;
        let mut fd = Vec::with_capacity(w.len() + 1);
        for j in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            fd.push((obj.value(&wp, b) - obj.value(&wm, b)) / (2.0 * h));
        }
        fd.push((obj.value(&w, b + h) - obj.value(&w, b - h)) / (2.0 * h));
        let analytic: Vec<f64> = gw.iter().copied().chain([gb]).collect();
        let diff = analytic.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|f| f * f).sum::<f64>().sqrt());
        worst_grad = worst_grad.max(diff / scale.max(1e-12));
    }

    let mut worst_auc = 0.0f64;
    for _ in 0..2000 {
        let n = rng.gen_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6))).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let a = auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst_auc = worst_auc.max((a - brute_auc(&scores, &labels)).abs());
    }

    let separable = synthetic_dataset(&mut rng, 500, true);
    let cfg = TrainConfig::new(Regularization::L2(1e-3));
    let sep = cross_validate(&separable, 10, 1, &cfg, 100.0).map_err(|e| e.to_string())?;
    let permuted = separable.with_permuted_labels(99);
    let perm = cross_validate(&permuted, 10, 1, &cfg, 100.0).map_err(|e| e.to_string())?;

    // n-gram labels: a few informative n-grams among many
    let examples: Vec<Example> = (0..500)
        .map(|i| {
            let grams: Vec<usize> = (0..30).filter(|_| rng.gen_bool(0.3)).collect();
            let z: f64 = grams.iter().map(|g| if *g < 3 { 1.5 } else { 0.0 }).sum::<f64>() - 0.6;
            let label = rng.gen_bool(1.0 / (1.0 + (-z).exp()));
            Example {
                id: format!("s{i}"),
                dense: vec![rng.gen_range(-1.0..1.0)],
                ngrams: grams,
                label,
            }
        })
        .collect();
    let sparse_data = Dataset {
        dense_names: vec!["x".into()],
        ngram_names: (0..30).map(|j| format!("g{j}")).collect(),
        examples,
    };
    let lambdas = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1];
    let sparsity: Vec<f64> = lambdas
        .iter()
        .map(|l| train_logistic(&sparse_data, &TrainConfig::new(Regularization::L1(*l))).map(|m| m.ngram_sparsity()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let monotone = sparsity.windows(2).all(|w| w[1] >= w[0]);

    check(
        worst_grad < GRAD_REL_TOL
            && worst_auc == 0.0
            && sep.mean_auc >= AUC_SEPARABLE_MIN
            && (perm.mean_auc - 0.5).abs() <= AUC_PERMUTED_TOL
            && monotone,
        format!(
            "max gradient rel. error {worst_grad:.2e}; max AUC diff vs pairwise {worst_auc}; 10-fold AUC separable \
             {:.4}, permuted {:.4}; n-gram sparsity over L1 sweep {:?}",
            sep.mean_auc,
            perm.mean_auc,
            sparsity.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Statistics

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut with: Vec<Vec<usize>> = combinations(n - 1, k - 1)
        .into_iter()
        .map(|mut c| {
            c.push(n - 1);
            c
        })
        .collect();
    with.extend(combinations(n - 1, k));
    with
}

fn pairwise_u(xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter()
        .flat_map(|x| ys.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
        .sum()
}

fn oracle_mann_whitney(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let (n, m) = (xs.len(), ys.len());
    let center = (n * m) as f64 / 2.0;
    let u_obs = pairwise_u(xs, ys);
    let all = combinations(n + m, n);
    let extreme = all
        .iter()
        .filter(|idx| {
            let a: Vec<f64> = idx.iter().map(|&i| pooled[i]).collect();
            let b: Vec<f64> = (0..n + m).filter(|i| !idx.contains(i)).map(|i| pooled[i]).collect();
            (pairwise_u(&a, &b) - center).abs() >= (u_obs - center).abs() - 1e-9
        })
        .count();
    (u_obs, extreme as f64 / all.len() as f64)
}

fn oracle_wilcoxon(diffs: &[f64]) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let rank = |i: usize| {
        let less = abs.iter().filter(|a| **a < abs[i]).count() as f64;
        let equal = abs.iter().filter(|a| **a == abs[i]).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = (0..nz.len()).map(rank).collect();
    let w_obs: f64 = (0..nz.len()).filter(|&i| nz[i] > 0.0).map(|i| ranks[i]).sum();
    let center = ranks.iter().sum::<f64>() / 2.0;
    let n = nz.len();
    let mut extreme = 0usize;
    for signs in 0..(1usize << n) {
        let w: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - center).abs() >= (w_obs - center).abs() - 1e-9 {
            extreme += 1;
        }
    }
    (w_obs, extreme as f64 / (1usize << n) as f64)
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut mw_cases, mut mw_worst) = (0usize, 0.0f64);
    for total in 2..=12 {
        for n in 1..total {
            for _ in 0..6 {
                let draw = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> { (0..k).map(|_| f64::from(rng.gen_range(0..5))).collect() };
                let xs = draw(&mut rng, n);
                let ys = draw(&mut rng, total - n);
                let got = mann_whitney_u(&xs, &ys).map_err(|e| e.to_string())?;
                let (u, p) = oracle_mann_whitney(&xs, &ys);
                if !got.exact {
                    return Err(format!("Mann-Whitney n={n} m={} not exact", total - n));
                }
                mw_worst = mw_worst.max((got.u - u).abs()).max((got.p - p).abs());
                mw_cases += 1;
            }
        }
    }
    let (mut w_cases, mut w_worst) = (0usize, 0.0f64);
    for n in 1..=12 {
        for _ in 0..20 {
            let pairs: Vec<(f64, f64)> = (0..n)
                .map(|_| (f64::from(rng.gen_range(0..4)), f64::from(rng.gen_range(0..4))))
                .collect();
            let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
            if diffs.iter().all(|d| *d == 0.0) {
                continue;
            }
            let got = wilcoxon_signed_rank(&pairs).map_err(|e| e.to_string())?;
            let (w, p) = oracle_wilcoxon(&diffs);
            if !got.exact {
                return Err(format!("Wilcoxon with {} nonzero pairs not exact", got.n));
            }
            w_worst = w_worst.max((got.w_plus - w).abs()).max((got.p - p).abs());
            w_cases += 1;
        }
    }

    let cfg = BootstrapConfig { level: 0.95, replicates: 500, seed: 17 };
    let constant = vec![vec![2.5; 4], vec![2.5; 7], vec![2.5]];
    let ci = member_bootstrap_ci(&constant, mean, cfg).map_err(|e| e.to_string())?;
    let degenerate = ci.low == 2.5 && ci.high == 2.5 && ci.point == 2.5;

    let groups: Vec<Vec<f64>> = (0..15).map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let a = member_bootstrap_ci(&groups, mean, cfg).map_err(|e| e.to_string())?;
    let b = member_bootstrap_ci(&groups, mean, cfg).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x + rng.gen_range(-0.2..0.3)).collect();
    let p1 = paired_bootstrap_test(&xs, &ys, 1000, 4).map_err(|e| e.to_string())?;
    let p2 = paired_bootstrap_test(&xs, &ys, 1000, 4).map_err(|e| e.to_string())?;
    let reproducible = a == b && p1 == p2;

    check(
        mw_worst == 0.0 && w_worst == 0.0 && degenerate && reproducible,
        format!(
            "Mann-Whitney {mw_cases} exact cases, max diff {mw_worst}; Wilcoxon {w_cases} exact cases, max diff {w_worst}; \
             constant-data CI [{}, {}]; repeated seeds identical: {reproducible}",
            ci.low, ci.high
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. End-to-end synthetic pipeline

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let spec = SynthSpec::from_json_path(data_path("synth_pipeline.json")).map_err(|e| e.to_string())?;
    let synth = spec.generate(7).map_err(|e| e.to_string())?;
    let corpus = &synth.corpus;
    let split = split_counselors(corpus, SplitConfig::default()).map_err(|e| e.to_string())?;
    let attuned_in_more = split
        .more_successful
        .iter()
        .filter(|c| synth.counselor_groups[*c] == "attuned")
        .count();

    let report = adaptability_curve(corpus, &split, AnalysisConfig::default()).map_err(|e| e.to_string())?;
    let last = report.differences.iter().find(|d| d.x == "5").ok_or("no chunk-5 difference")?;
    let point = |series: &str| report.points.iter().find(|p| p.series == series && p.x == "5").map(|p| p.mean);

    let fit = em_fit(init_model(corpus, spec.stages, 20).map_err(|e| e.to_string())?, corpus, EmConfig::default())
        .map_err(|e| e.to_string())?;
    let durations = stage_duration_comparison(
        corpus,
        &split,
        &fit.model,
        DurationConfig { equal_outcome_weight: true, length_range: None },
    )
    .map_err(|e| e.to_string())?;
    let mean4 = |g: &str| durations.groups.iter().find(|x| x.group == g).map(|x| x.mean[3]);
    let (more4, less4) = (mean4("more_successful").ok_or("missing group")?, mean4("less_successful").ok_or("missing group")?);
    let test4 = durations.tests.iter().find(|t| t.stage == 4).ok_or("no stage-4 test")?;
    let elapsed = start.elapsed();

    check(
        last.difference > 0.0 && last.p < PIPELINE_P_MAX && more4 > less4 && test4.p < PIPELINE_P_MAX && elapsed < PIPELINE_BUDGET,
        format!(
            "{attuned_in_more}/{} more-successful counselors are the shifted group; chunk-5 distance more {:.4} vs less \
             {:.4} (bootstrap p {:.4}); stage-4 mean duration {more4:.2} vs {less4:.2} (Mann-Whitney p {:.2e}); {:.1}s",
            split.more_successful.len(),
            point("more_successful").unwrap_or(f64::NAN),
            point("less_successful").unwrap_or(f64::NAN),
            last.p,
            test4.p,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. CLI determinism

fn run_cli(cwd: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_discourse"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CONVO_LEXICON_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn full_pipeline(cwd: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    std::fs::copy(data_path("sample_spec.json"), cwd.join("spec.json")).map_err(|e| e.to_string())?;
    let synth = run_cli(cwd, &["synth", "--spec", "spec.json", "--seed", "7", "--out-dir", "runs"])?;
    let corpus = format!("{synth}/corpus.jsonl");
    let fit = run_cli(cwd, &["fit-stages", "--corpus", &corpus, "--vocab-min-count", "5", "--out-dir", "runs"])?;
    let model = format!("{fit}/model.json");
    let steps: Vec<Vec<&str>> = vec![
        vec!["stats"],
        vec!["split"],
        vec!["decode", "--model", &model, "--durations"],
        vec!["top-words", "--model", &model, "--min-count", "20"],
        vec!["adaptability", "--replicates", "200"],
        vec!["ambiguity", "--replicates", "200"],
        vec!["match-clusters", "--min-neighbors", "2", "--radius", "0.7"],
        vec!["templatedness"],
        vec!["coordination"],
        vec!["perspective", "--replicates", "200"],
        vec!["issues"],
        vec!["predict", "--model", &model, "--x", "80", "--folds", "5", "--ngrams", "counselor"],
    ];
    for step in steps {
        let mut args = step.clone();
        args.extend(["--corpus", &corpus, "--out-dir", "runs"]);
        run_cli(cwd, &args)?;
    }
    let mut files = BTreeMap::new();
    for run in std::fs::read_dir(cwd.join("runs")).map_err(|e| e.to_string())? {
        let run = run.map_err(|e| e.to_string())?.path();
        for f in std::fs::read_dir(&run).map_err(|e| e.to_string())? {
            let f = f.map_err(|e| e.to_string())?.path();
            let key = f.strip_prefix(cwd).unwrap().display().to_string();
            files.insert(key, std::fs::read(&f).map_err(|e| e.to_string())?);
        }
    }
    Ok(files)
}

fn criterion_8() -> Verdict {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = full_pipeline(a.path())?;
    let second = full_pipeline(b.path())?;
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let bytes: usize = first.values().map(Vec::len).sum();
    check(
        differing.is_empty() && !first.is_empty(),
        format!("{} report files ({bytes} bytes) across 14 subcommands; differing files: {differing:?}", first.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("HMM correctness", criterion_1),
        ("EM behavior", criterion_2),
        ("coordination", criterion_3),
        ("vector space", criterion_4),
        ("prediction", criterion_5),
        ("statistics", criterion_6),
        ("end-to-end pipeline", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
