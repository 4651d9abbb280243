//! Properties of the planted-contagion generator, checked against simple
//! independent estimators.

use dshgcn::data::{generate_synthetic, label_agreement, load_dataset, write_dataset, Dataset, SynthConfig};
use dshgcn::FeatureDims;

fn config(rho: f64, snapshots: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        students: 6,
        snapshots,
        classes: 2,
        rho: vec![rho],
        noise: 0.3,
        dims: FeatureDims { emotional: 16, attentional: 8, upper_body: 6 },
        seed,
        ..Default::default()
    }
}

#[test]
fn agreement_is_nondecreasing_in_contagion() {
    let agreement: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&rho| label_agreement(&generate_synthetic(&config(rho, 1000, 11)).unwrap()))
        .collect();
    for w in agreement.windows(2) {
        assert!(w[0] <= w[1], "{agreement:?}");
    }
    assert_eq!(agreement[4], 1.0);
}

#[test]
fn independent_labels_agree_at_chance() {
    // With six fair coin labels the majority share has mean
    // Σ_k max(k, 6−k)/6 · C(6,k)/64 = 0.65625.
    let expected: f64 = (0..=6u32)
        .map(|k| {
            let choose = (1..=k).fold(1.0, |acc, i| acc * (6 - i + 1) as f64 / i as f64);
            k.max(6 - k) as f64 / 6.0 * choose / 64.0
        })
        .sum();
    let got = label_agreement(&generate_synthetic(&config(0.0, 2000, 3)).unwrap());
    assert!((got - expected).abs() < 0.01, "{got} vs {expected}");
}

#[test]
fn fixed_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_dataset(&a, &generate_synthetic(&config(0.7, 20, 5)).unwrap()).unwrap();
    write_dataset(&b, &generate_synthetic(&config(0.7, 20, 5)).unwrap()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(load_dataset(&a).unwrap(), generate_synthetic(&config(0.7, 20, 5)).unwrap());
}

#[test]
fn full_size_file_loads_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.jsonl");
    let data =
        generate_synthetic(&SynthConfig { snapshots: 1252, dims: FeatureDims::default(), ..config(0.7, 1252, 0) })
            .unwrap();
    write_dataset(&path, &data).unwrap();
    let start = std::time::Instant::now();
    let back = load_dataset(&path).unwrap();
    assert!(start.elapsed().as_secs_f64() < 5.0, "{:?}", start.elapsed());
    assert_eq!(back.snapshots.len(), 1252);
}

/// Plain batch gradient-descent logistic regression on standardized inputs.
fn probe_accuracy(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)]) -> f64 {
    let d = train[0].0.len();
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|(x, _)| x[j]).sum::<f64>() / train.len() as f64).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let v = train.iter().map(|(x, _)| (x[j] - mean[j]).powi(2)).sum::<f64>() / train.len() as f64;
            v.sqrt().max(1e-9)
        })
        .collect();
    let z = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]).collect() };
    let train: Vec<(Vec<f64>, f64)> = train.iter().map(|(x, y)| (z(x), *y as f64)).collect();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..300 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in &train {
            let s = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-s).exp()) - y;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += err * xi);
            gb += err;
        }
        let n = train.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= 0.5 * (g / n + 1e-3 * *wi));
        b -= 0.5 * gb / n;
    }
    let correct = test
        .iter()
        .filter(|(x, y)| {
            let s = b + z(x).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            (s > 0.0) as usize == *y
        })
        .count();
    correct as f64 / test.len() as f64
}

fn student_rows(data: &Dataset, with_group: bool) -> Vec<(Vec<f64>, usize)> {
    let mut rows = Vec::new();
    for snap in &data.snapshots {
        let own = |s: &dshgcn::data::StudentRecord| -> Vec<f64> {
            s.emotional.iter().chain(&s.attentional).chain(&s.upper_body).copied().collect()
        };
        let all: Vec<Vec<f64>> = snap.students.iter().map(own).collect();
        let group: Vec<f64> =
            (0..all[0].len()).map(|j| all.iter().map(|r| r[j]).sum::<f64>() / all.len() as f64).collect();
        for (s, x) in snap.students.iter().zip(&all) {
            let mut x = x.clone();
            if with_group {
                x.extend(&group);
            }
            rows.push((x, s.label));
        }
    }
    rows
}

#[test]
fn group_features_help_a_linear_probe() {
    let data = generate_synthetic(&config(0.7, 600, 21)).unwrap();
    let accuracy = |with_group: bool| {
        let rows = student_rows(&data, with_group);
        let cut = rows.len() * 4 / 5;
        probe_accuracy(&rows[..cut], &rows[cut..])
    };
    let (single, grouped) = (accuracy(false), accuracy(true));
    assert!(single < grouped, "single {single} grouped {grouped}");
}
