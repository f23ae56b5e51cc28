//! Acceptance suite: one test per release criterion, covering the
//! imbalance table, sampler distributions against enumerated oracles,
//! a direct DP audit, noise calibration, end-to-end utility trends,
//! divergence diagnostics, ledger composition, and CLI determinism.
//!
//! Each test prints one `criterion N: PASS/FAIL` line (visible with
//! `--nocapture`) and asserts the same condition.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use dppl_core::classify::predict_batch;
use dppl_core::data::{
    imbalance_class_sizes, median_of_counts, write_embeddings, write_labels, EmbeddingFormat,
    EmbeddingMatrix, ImbalanceSpec,
};
use dppl_core::eval::{
    balanced_accuracy, make_mixture_split, make_public_set, mixture_centers, run_experiment,
    DataSource, ExperimentConfig, MethodSpec, SyntheticMixtureSpec,
};
use dppl_core::mean::{
    coinpress_mean, dppl_mean_all, dppl_mean_prototype, pooled_clipped_mean, CoinPressConfig,
    MeanConfig,
};
use dppl_core::mechanisms::{
    exp_mech_probabilities, exp_mech_sample, gumbel_max_sample, topk_joint_sample, TopKUtility,
    UtilityVector,
};
use dppl_core::privacy::{AccountingLedger, PrivacyBudget, Sensitivity};
use dppl_core::prototype::{Provenance, PrototypeSet};
use dppl_core::rng::{DeterministicRng, RngState};
use dppl_core::select::{class_utilities, select_all_classes, SelectConfig};

fn check(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {verdict} - {detail}");
    assert!(pass, "criterion {criterion}: FAIL - {detail}");
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn empirical(counts: &[u64], draws: usize) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / draws as f64).collect()
}

fn random_matrix(rng: &mut DeterministicRng, n: usize, d: usize) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| (0..d).map(|_| rng.standard_normal() as f32).collect())
        .collect();
    EmbeddingMatrix::from_rows(&rows, d).unwrap()
}

#[test]
fn criterion_01_imbalance_table() {
    let cases = [
        (10u32, 5000u64, 10.0, 1594u64, 500u64),
        (10, 5000, 100.0, 517, 50),
        (100, 500, 10.0, 158, 50),
        (100, 500, 100.0, 50, 5),
    ];
    let mut all = true;
    let mut lines = Vec::new();
    for (classes, n_max, ir, want_median, want_min) in cases {
        let spec = ImbalanceSpec {
            ir,
            classes,
            n_max,
            seed: 0,
        };
        let sizes = imbalance_class_sizes(&spec).unwrap();
        let median = median_of_counts(&sizes).unwrap().round() as u64;
        let min = *sizes.iter().min().unwrap();
        if median != want_median || min != want_min {
            all = false;
        }
        lines.push(format!(
            "C={classes} N={n_max} IR={ir}: median {median}/{want_median} min {min}/{want_min}"
        ));
    }
    check(1, all, &lines.join("; "));
}

fn ten_candidate_instance() -> UtilityVector {
    let u: Vec<f64> = (0..10).map(|i| i as f64).collect();
    UtilityVector::new(u, Sensitivity::range(1.0), true).unwrap()
}

#[test]
fn criterion_02_exp_mech_distribution() {
    let u = ten_candidate_instance();
    let exact = exp_mech_probabilities(&u, 1.0).unwrap();
    let draws = 100_000usize;
    let mut counts = vec![0u64; 10];
    for i in 0..draws {
        counts[exp_mech_sample(&u, 1.0, RngState::new(i as u64, 0)).unwrap()] += 1;
    }
    let tv = total_variation(&empirical(&counts, draws), &exact);
    check(2, tv <= 0.01, &format!("TV {tv:.5} (bound 0.01)"));
}

#[test]
fn criterion_03_gumbel_equivalence() {
    let u = ten_candidate_instance();
    let draws = 100_000usize;
    let mut inverse = vec![0u64; 10];
    let mut gumbel = vec![0u64; 10];
    for i in 0..draws {
        inverse[exp_mech_sample(&u, 1.0, RngState::new(i as u64, 1)).unwrap()] += 1;
        gumbel[gumbel_max_sample(&u, 1.0, RngState::new(i as u64, 2)).unwrap()] += 1;
    }
    let tv = total_variation(&empirical(&inverse, draws), &empirical(&gumbel, draws));
    check(3, tv <= 0.02, &format!("TV {tv:.5} (bound 0.02)"));
}

/// All k-element subsets of 0..n in lexicographic order.
fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let mut i = k;
        while i > 0 && c[i - 1] == n - k + (i - 1) {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        c[i - 1] += 1;
        for j in i..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

#[test]
fn criterion_04_topk_joint_distribution() {
    let n = 8;
    let k = 3;
    let eps = 2.0;
    let utilities: Vec<f64> = (0..n).rev().map(|i| i as f64).collect();

    // Independent oracle: the set utility is the worst member relative to
    // the k-th best overall, and the target weighs sets by the general
    // (non-monotonic) exponential-mechanism rate.
    let mut sorted = utilities.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let kth = sorted[k - 1];
    let sets = k_subsets(n, k);
    let weights: Vec<f64> = sets
        .iter()
        .map(|s| {
            let worst = s.iter().map(|&i| utilities[i]).fold(f64::INFINITY, f64::min);
            (eps * (worst - kth) / 2.0).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    let target: Vec<f64> = weights.iter().map(|w| w / z).collect();

    let index: HashMap<Vec<usize>, usize> = sets.iter().cloned().zip(0..).collect();
    let t = TopKUtility::from_utilities(&utilities, k).unwrap();
    let delta = Sensitivity::range(1.0);
    let draws = 200_000usize;
    let mut counts = vec![0u64; sets.len()];
    for i in 0..draws {
        let mut s = topk_joint_sample(&t, eps, &delta, RngState::new(i as u64, 3)).unwrap();
        s.sort_unstable();
        counts[index[&s]] += 1;
    }
    let tv = total_variation(&empirical(&counts, draws), &target);
    check(
        4,
        tv <= 0.03,
        &format!("TV {tv:.5} over {} sets (bound 0.03)", sets.len()),
    );
}

#[test]
fn criterion_05_selection_dp_audit() {
    let mut rng = DeterministicRng::from_state(RngState::new(99, 0));
    let d = 8;
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n_cand = 2 + rng.uniform_index(11);
        let n_rows = 2 + rng.uniform_index(7);
        let private = random_matrix(&mut rng, n_rows, d);
        let public = random_matrix(&mut rng, n_cand, d);
        for eps in [0.5, 1.0, 2.0] {
            let cfg = SelectConfig::new(eps);
            let probs = |m: &EmbeddingMatrix| {
                let u = class_utilities(m, &public, &cfg).unwrap();
                let u = UtilityVector::new(u, Sensitivity::range(cfg.delta_u()), true).unwrap();
                exp_mech_probabilities(&u, eps).unwrap()
            };
            let full = probs(&private);
            for drop in 0..n_rows {
                let rows: Vec<Vec<f32>> = (0..n_rows)
                    .filter(|&i| i != drop)
                    .map(|i| private.row(i).to_vec())
                    .collect();
                let reduced = probs(&EmbeddingMatrix::from_rows(&rows, d).unwrap());
                for (p, q) in full.iter().zip(&reduced) {
                    max_excess = max_excess.max((p / q).ln().abs() - eps);
                }
            }
        }
    }
    check(
        5,
        max_excess <= 1e-9,
        &format!("max ln-ratio excess over epsilon {max_excess:.2e} (bound 1e-9)"),
    );
}

#[test]
fn criterion_06_gaussian_noise_calibration() {
    let d = 32;
    let mut rng = DeterministicRng::from_state(RngState::new(4242, 0));
    let x = random_matrix(&mut rng, 10, d);
    let cfg = MeanConfig {
        rho: 0.5,
        clip_radius: 1.0,
        k_pool: 1,
    };
    let exact = pooled_clipped_mean(&x, &cfg).unwrap();
    let trials = 10_000usize;
    let mut sq = vec![0.0f64; d];
    for seed in 0..trials {
        let (est, _) = dppl_mean_prototype(&x, &cfg, RngState::new(seed as u64, 0)).unwrap();
        for (s, (e, m)) in sq.iter_mut().zip(est.iter().zip(&exact)) {
            *s += (e - m) * (e - m);
        }
    }
    // sigma^2 = 2 r^2 / (n^2 rho) = 2 / (100 * 0.5) = 0.04.
    let want = 0.04;
    let worst = sq
        .iter()
        .map(|s| (s / trials as f64 / want - 1.0).abs())
        .fold(0.0f64, f64::max);
    check(
        6,
        worst <= 0.05,
        &format!(
            "worst per-coordinate variance deviation {:.2}% of {want} (bound 5%)",
            worst * 100.0
        ),
    );
}

fn trend_spec() -> SyntheticMixtureSpec {
    SyntheticMixtureSpec {
        classes: 4,
        dim: 16,
        center_norm: 10.0,
        sigma: 1.0,
        per_class: 200,
        seed: 42,
    }
}

fn trend_config(method: MethodSpec, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Mixture { spec: trend_spec() },
        imbalance: None,
        method,
        seed,
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[test]
fn criterion_07_privacy_utility_trend() {
    let rhos = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
    let medians: Vec<f64> = rhos
        .iter()
        .map(|&rho| {
            let accs: Vec<f64> = (0..20)
                .map(|seed| {
                    let method = MethodSpec::Mean {
                        cfg: MeanConfig {
                            rho,
                            clip_radius: 15.0,
                            k_pool: 1,
                        },
                    };
                    run_experiment(&trend_config(method, seed))
                        .unwrap()
                        .balanced_accuracy
                })
                .collect();
            median(accs)
        })
        .collect();
    let baseline = run_experiment(&trend_config(MethodSpec::NonPrivate { k_pool: 1 }, 0))
        .unwrap()
        .balanced_accuracy;

    let monotone = medians.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let near = (medians[rhos.len() - 1] - baseline).abs() <= 0.01;
    check(
        7,
        monotone && near,
        &format!("medians {medians:?} vs non-private {baseline:.4}"),
    );
}

#[test]
fn criterion_08_public_oracle_recovery() {
    let spec = trend_spec();
    let (train, test) = make_mixture_split(&spec).unwrap();
    let public = make_public_set(&spec, 1000, true).unwrap();
    let cfg = SelectConfig::new(10.0);

    let mut hits = 0;
    let mut accuracy = 0.0;
    for seed in 0..20u64 {
        let set = select_all_classes(&train, &public, &cfg, seed).unwrap();
        let ids = set.candidate_ids.as_ref().unwrap();
        if (0..4usize).all(|c| ids[c] == vec![c]) {
            hits += 1;
        }
        if seed == 0 {
            let pred = predict_batch(&test.embeddings, &set).unwrap();
            accuracy = balanced_accuracy(&pred, &test.labels, 4).unwrap();
        }
    }

    // Nearest-center baseline: the true mixture centers as prototypes.
    let flat: Vec<f64> = mixture_centers(&spec).unwrap().into_iter().flatten().collect();
    let centers = PrototypeSet::new(
        4,
        1,
        spec.dim,
        flat,
        Provenance::NonPrivate,
        AccountingLedger::new(),
    )
    .unwrap();
    let pred = predict_batch(&test.embeddings, &centers).unwrap();
    let baseline = balanced_accuracy(&pred, &test.labels, 4).unwrap();

    let pass = hits >= 19 && (accuracy - baseline).abs() <= 0.01;
    check(
        8,
        pass,
        &format!(
            "center recovery {hits}/20 seeds, accuracy {accuracy:.4} vs nearest-center {baseline:.4}"
        ),
    );
}

#[test]
fn criterion_09_coinpress_divergence_diagnostic() {
    let d = 768;
    let n = 100;
    let mut rng = DeterministicRng::from_state(RngState::new(987, 0));
    let x = random_matrix(&mut rng, n, d);
    let mut sample_mean = vec![0.0f64; d];
    for i in 0..n {
        for (s, v) in sample_mean.iter_mut().zip(x.row_f64(i)) {
            *s += v;
        }
    }
    for s in &mut sample_mean {
        *s /= n as f64;
    }

    let starved = CoinPressConfig::new(1e-5);
    let (_, starved_diag, _) = coinpress_mean(&x, &starved, RngState::new(0, 0)).unwrap();

    let ample = CoinPressConfig::new(10.0);
    let (est, ample_diag, _) = coinpress_mean(&x, &ample, RngState::new(0, 1)).unwrap();
    let dist = est
        .iter()
        .zip(&sample_mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    let pass = starved_diag.diverged && !ample_diag.diverged && dist <= 0.2;
    check(
        9,
        pass,
        &format!(
            "rho=1e-5 diverged={}, rho=10 diverged={}, estimate {dist:.3} from sample mean (bound 0.2)",
            starved_diag.diverged, ample_diag.diverged
        ),
    );
}

#[test]
fn criterion_10_parallel_composition_ledger() {
    let spec = SyntheticMixtureSpec {
        classes: 4,
        dim: 8,
        center_norm: 10.0,
        sigma: 0.5,
        per_class: 30,
        seed: 6,
    };
    let (train, _) = make_mixture_split(&spec).unwrap();

    let mean_cfg = MeanConfig {
        rho: 0.7,
        clip_radius: 10.0,
        k_pool: 1,
    };
    let mean_set = dppl_mean_all(&train, &mean_cfg, 5).unwrap();
    let mean_total = mean_set.ledger.compose_parallel().unwrap();

    let public = make_public_set(&spec, 20, true).unwrap();
    let select_set = select_all_classes(&train, &public, &SelectConfig::new(3.0), 5).unwrap();
    let select_total = select_set.ledger.compose_parallel().unwrap();

    let pass = mean_set.ledger.entries.len() == 4
        && mean_total.total == PrivacyBudget::Zcdp(0.7)
        && mean_total.uniform
        && select_set.ledger.entries.len() == 4
        && select_total.total == PrivacyBudget::PureDp(3.0)
        && select_total.uniform;
    check(
        10,
        pass,
        &format!(
            "mean total {:?} over {} entries, selection total {:?} over {} entries",
            mean_total.total,
            mean_set.ledger.entries.len(),
            select_total.total,
            select_set.ledger.entries.len()
        ),
    );
}

/// Runs the binary with a thread cap, asserting success.
fn run_cli(threads: usize, args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_dppl"))
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .expect("failed to spawn dppl");
    assert!(
        output.status.success(),
        "dppl --threads {threads} {args:?} failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Every regular file under `dir`, as (relative name, bytes), sorted.
fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            out.push((
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_11_cli_determinism() {
    let base = tempfile::tempdir().unwrap();
    let spec = SyntheticMixtureSpec {
        classes: 4,
        dim: 8,
        center_norm: 10.0,
        sigma: 0.5,
        per_class: 30,
        seed: 5,
    };
    let (train, _) = make_mixture_split(&spec).unwrap();
    let train_emb = base.path().join("train.emb");
    let train_lbl = base.path().join("train.lbl");
    write_embeddings(&train_emb, &train.embeddings, EmbeddingFormat::Binary).unwrap();
    write_labels(&train_lbl, &train.labels, train.num_classes).unwrap();
    let public = make_public_set(&spec, 20, true).unwrap();
    let public_emb = base.path().join("public.emb");
    write_embeddings(&public_emb, &public, EmbeddingFormat::Binary).unwrap();
    let grid = base.path().join("grid.json");
    std::fs::write(
        &grid,
        serde_json::json!({
            "data": {
                "source": "mixture",
                "classes": 4, "dim": 8, "center_norm": 10.0,
                "sigma": 0.5, "per_class": 20, "seed": 3
            },
            "methods": [
                {"method": "mean", "rhos": [0.5], "clip_radius": 12.0, "k_pool": 1},
                {"method": "non-private", "k_pool": 1}
            ],
            "seeds": [1, 2]
        })
        .to_string(),
    )
    .unwrap();

    let emb = train_emb.to_str().unwrap().to_string();
    let lbl = train_lbl.to_str().unwrap().to_string();
    let pub_emb = public_emb.to_str().unwrap().to_string();
    let grid_path = grid.to_str().unwrap().to_string();
    let (emb2, lbl2) = (emb.clone(), lbl.clone());
    let (emb3, lbl3) = (emb.clone(), lbl.clone());
    let (emb4, lbl4) = (emb.clone(), lbl.clone());

    // Each randomized subcommand's full argument list, with output paths
    // rendered under a per-run directory.
    type ArgsFor = Box<dyn Fn(&Path) -> Vec<String>>;
    let cases: Vec<(&str, ArgsFor)> = vec![
        (
            "imbalance",
            Box::new(move |dir: &Path| {
                vec![
                    "imbalance".into(),
                    "--ir".into(),
                    "10".into(),
                    "--seed".into(),
                    "7".into(),
                    "--in".into(),
                    emb.clone(),
                    "--labels".into(),
                    lbl.clone(),
                    "--out-prefix".into(),
                    dir.join("tail").to_str().unwrap().into(),
                ]
            }),
        ),
        (
            "protos-mean",
            Box::new(move |dir: &Path| {
                vec![
                    "protos-mean".into(),
                    "--rho".into(),
                    "0.5".into(),
                    "--clip".into(),
                    "10".into(),
                    "--pool".into(),
                    "2".into(),
                    "--in".into(),
                    emb2.clone(),
                    "--labels".into(),
                    lbl2.clone(),
                    "--seed".into(),
                    "7".into(),
                    "--out".into(),
                    dir.join("mean.protos").to_str().unwrap().into(),
                ]
            }),
        ),
        (
            "protos-coinpress",
            Box::new(move |dir: &Path| {
                vec![
                    "protos-coinpress".into(),
                    "--rho".into(),
                    "1".into(),
                    "--steps".into(),
                    "3".into(),
                    "--in".into(),
                    emb3.clone(),
                    "--labels".into(),
                    lbl3.clone(),
                    "--seed".into(),
                    "7".into(),
                    "--out".into(),
                    dir.join("cp.protos").to_str().unwrap().into(),
                    "--diagnostics".into(),
                    dir.join("cp.diag.json").to_str().unwrap().into(),
                ]
            }),
        ),
        (
            "protos-public",
            Box::new(move |dir: &Path| {
                vec![
                    "protos-public".into(),
                    "--epsilon".into(),
                    "5".into(),
                    "--k".into(),
                    "2".into(),
                    "--private".into(),
                    emb4.clone(),
                    "--labels".into(),
                    lbl4.clone(),
                    "--public".into(),
                    pub_emb.clone(),
                    "--seed".into(),
                    "7".into(),
                    "--out".into(),
                    dir.join("pub.protos").to_str().unwrap().into(),
                ]
            }),
        ),
        (
            "sweep",
            Box::new(move |dir: &Path| {
                vec![
                    "sweep".into(),
                    "--grid".into(),
                    grid_path.clone(),
                    "--out-dir".into(),
                    dir.join("sweep").to_str().unwrap().into(),
                ]
            }),
        ),
    ];

    let mut all = true;
    let mut details = Vec::new();
    for (name, args_for) in &cases {
        // Two repeat runs at each thread cap; all four must agree bytewise.
        let mut snapshots: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for (i, threads) in [1usize, 8, 1, 8].into_iter().enumerate() {
            let dir = base.path().join(format!("{name}-run{i}"));
            std::fs::create_dir_all(&dir).unwrap();
            let args: Vec<String> = args_for(&dir);
            let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
            run_cli(threads, &arg_refs);
            // The sweep writes into a subdirectory; collect from wherever
            // the files landed.
            let produced = if dir.join("sweep").is_dir() {
                dir_bytes(&dir.join("sweep"))
            } else {
                dir_bytes(&dir)
            };
            assert!(!produced.is_empty(), "{name} produced no output files");
            snapshots.push(produced);
        }
        let identical = snapshots.iter().all(|s| *s == snapshots[0]);
        if !identical {
            all = false;
        }
        details.push(format!(
            "{name}: {} files {}",
            snapshots[0].len(),
            if identical { "identical" } else { "DIFFER" }
        ));
    }
    check(11, all, &details.join("; "));
}
