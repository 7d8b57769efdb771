use ndarray::{array, Array2};
use proptest::prelude::*;

use tradecost::evaluation::*;
use tradecost::ingest::{DualReport, TradePanel};
use tradecost::ot::TransportPlan;
use tradecost::synthetic::{generate, SyntheticConfig};
use tradecost::Error;

fn noisy_panel() -> TradePanel {
    let mut panel = generate(&SyntheticConfig {
        countries: 4,
        years: 2,
        noise: 0.2,
        seed: 6,
        ..Default::default()
    })
    .unwrap()
    .panel;
    // One masked entry and one zero link in the first year.
    let r = &panel.reports[0];
    let mut mask = r.exporter_plan.mask().clone();
    mask[[0, 1]] = false;
    let edit = |p: &TransportPlan| {
        let mut v = p.raw_values().clone();
        v[[2, 3]] = 0.0;
        TransportPlan::masked(v, mask.clone()).unwrap()
    };
    panel.reports[0] = DualReport::new(edit(&r.exporter_plan), edit(&r.importer_plan), r.year).unwrap();
    panel
}

fn averaged(panel: &TradePanel) -> Vec<TransportPlan> {
    panel
        .reports
        .iter()
        .map(|r| {
            let (m, n) = r.dims();
            TransportPlan::dense(Array2::from_shape_fn((m, n), |(i, j)| r.averaged(i, j).unwrap_or(0.0))).unwrap()
        })
        .collect()
}

#[test]
fn exact_model_beats_perturbed_model() {
    let panel = noisy_panel();
    let truth = averaged(&panel);
    let perturbed: Vec<TransportPlan> = truth
        .iter()
        .map(|p| TransportPlan::dense(p.raw_values() * 1.1).unwrap())
        .collect();
    let rep = compare_models(
        "wheat",
        &panel,
        &[
            ModelOutput {
                name: "ot",
                plans: &truth,
            },
            ModelOutput {
                name: "gravity",
                plans: &perturbed,
            },
        ],
        &CompareOptions::default(),
    )
    .unwrap();
    let (ot, gr) = (&rep.models[0], &rep.models[1]);
    assert_eq!(ot.rmse.mean, 0.0);
    assert_eq!(ot.rmse_pooled, 0.0);
    assert!(gr.rmse.mean > 0.0 && gr.rmse.median > 0.0);
    assert!((ot.fit.slope - 1.0).abs() < 1e-12 && (ot.fit.pearson_r - 1.0).abs() < 1e-12);
    assert!((gr.fit.slope - 1.0 / 1.1).abs() < 1e-12);
    // 32 entries, one masked and one zero link.
    assert_eq!(ot.compared, 30);
    assert_eq!(ot.groups.len(), 8);
    assert_eq!(ot.groups.iter().map(|g| g.compared).sum::<usize>(), 30);
}

#[test]
fn identical_outputs_give_identical_rows_and_zeros_count_when_requested() {
    let panel = noisy_panel();
    let truth = averaged(&panel);
    let models = [
        ModelOutput {
            name: "a",
            plans: &truth,
        },
        ModelOutput {
            name: "b",
            plans: &truth,
        },
    ];
    let rep = compare_models(
        "rice",
        &panel,
        &models,
        &CompareOptions {
            positive_only: false,
        },
    )
    .unwrap();
    let (mut a, b) = (rep.models[0].clone(), &rep.models[1]);
    a.model = "b".into();
    assert_eq!(&a, b);
    assert_eq!(a.compared, 31);
}

#[test]
fn missing_estimates_and_shape_changes_are_misaligned() {
    let panel = noisy_panel();
    let mut truth = averaged(&panel);
    let short = &truth[..1];
    let err = compare_models(
        "x",
        &panel,
        &[ModelOutput {
            name: "m",
            plans: short,
        }],
        &CompareOptions::default(),
    );
    assert!(matches!(err, Err(Error::AlignmentMismatch(_))));
    let mut mask = Array2::from_elem((4, 4), true);
    mask[[1, 1]] = false;
    truth[1] = TransportPlan::masked(truth[1].raw_values().clone(), mask).unwrap();
    let err = compare_models(
        "x",
        &panel,
        &[ModelOutput {
            name: "m",
            plans: &truth,
        }],
        &CompareOptions::default(),
    );
    assert!(matches!(err, Err(Error::AlignmentMismatch(_))));
}

#[test]
fn reports_are_written() {
    let panel = noisy_panel();
    let truth = averaged(&panel);
    let models = [ModelOutput {
        name: "ot",
        plans: &truth,
    }];
    let rep = compare_models("maize", &panel, &models, &CompareOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("report.csv");
    write_report_csv(&csv, &[rep.clone()]).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("commodity,model,metric,mean,std,median,n\nmaize,ot,rmse,0,0,0,8\n"));
    assert_eq!(text.lines().count(), 7);
    let json = dir.path().join("report.json");
    write_report_json(&json, &[rep.clone()]).unwrap();
    let back: Vec<ComparisonReport> = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back, vec![rep]);
    let scatter = dir.path().join("scatter.csv");
    write_scatter_csv(&scatter, "maize", &panel, &models, &CompareOptions::default()).unwrap();
    let text = std::fs::read_to_string(scatter).unwrap();
    assert_eq!(text.lines().count(), 31);
    assert!(text.starts_with("estimate,truth,commodity,model\n"));
}

#[test]
fn estimates_within_one_scale_stay_below_one() {
    let e = array![[2.0, 5.0], [1.0, 8.0]];
    let i = array![[4.0, 6.0], [3.0, 7.0]];
    let r = DualReport::new(TransportPlan::dense(e.clone()).unwrap(), TransportPlan::dense(i.clone()).unwrap(), 1).unwrap();
    let center = (&e + &i) / 2.0;
    let scale = (&e - &i).mapv(f64::abs) / 2f64.sqrt();
    for shift in [-1.0, -0.3, 0.0, 0.7, 1.0] {
        let est = TransportPlan::dense(&center + &(&scale * shift)).unwrap();
        assert!(rmse_in_std(&est, &r).unwrap().value <= 1.0 + 1e-12);
    }
}

proptest! {
    #[test]
    fn rmse_is_permutation_invariant_and_scale_equivariant(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..30),
        alpha in 0.01f64..50.0,
        rot in 0usize..30,
    ) {
        let (e, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mask = vec![true; e.len()];
        let base = rmse(&e, &t, &mask).unwrap();
        let k = rot % e.len();
        let (mut e2, mut t2) = (e.clone(), t.clone());
        e2.rotate_left(k);
        t2.rotate_left(k);
        prop_assert!((rmse(&e2, &t2, &mask).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
        let es: Vec<f64> = e.iter().map(|v| v * alpha).collect();
        let ts: Vec<f64> = t.iter().map(|v| v * alpha).collect();
        prop_assert!((rmse(&es, &ts, &mask).unwrap() - alpha * base).abs() <= 1e-12 * (alpha * base).max(1.0));
    }

    #[test]
    fn identity_data_fits_exactly(x in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-6));
        let f = linear_fit(&x, &x, &vec![true; x.len()]).unwrap();
        prop_assert!((f.slope - 1.0).abs() <= 1e-12);
        prop_assert!((f.pearson_r - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rmse_in_std_ignores_common_rescaling(
        vals in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0, 0.1f64..10.0), 4),
        alpha in 0.01f64..100.0,
    ) {
        let g = |k: usize| Array2::from_shape_fn((2, 2), |(i, j)| {
            let v = vals[2 * i + j];
            [v.0, v.1, v.2][k]
        });
        let eval = |s: f64| {
            let r = DualReport::new(
                TransportPlan::dense(g(0) * s).unwrap(),
                TransportPlan::dense(g(1) * s).unwrap(),
                0,
            ).unwrap();
            rmse_in_std(&TransportPlan::dense(g(2) * s).unwrap(), &r)
        };
        match (eval(1.0), eval(alpha)) {
            (Ok(a), Ok(b)) => prop_assert!((a.value - b.value).abs() <= 1e-9 * a.value.max(1.0)),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }
}
