use neurules::data::holdout_split;
use neurules::document::ModelDocument;
use neurules::evaluation::evaluate;
use neurules::extraction::{extract, fidelity, hard_predict, render_text, DEFAULT_WEIGHT_THRESHOLD};
use neurules::synthetic::{generate, SyntheticSpec};
use neurules::training::{train, TrainConfig};

#[test]
fn synthetic_rules_are_recovered_and_survive_a_save() {
    let spec = SyntheticSpec { d: 4, n: 1500, s: 0.3, k: 2, m: 1, seed: 11 };
    let synth = generate(&spec).unwrap();
    let data = &synth.dataset;
    let (tr, te) = holdout_split(data.n_rows(), 0.2, 0).unwrap();
    let (train_set, test_set) = (data.subset(&tr), data.subset(&te));
    let cfg = TrainConfig { epochs: 150, ..Default::default() };
    let (params, report) = train(&train_set, &cfg, 4).unwrap();
    assert!(report.losses().last().unwrap() < report.losses().first().unwrap());

    let rl = extract(&params, &train_set, DEFAULT_WEIGHT_THRESHOLD).unwrap();
    assert!(fidelity(&params, &rl, &train_set).unwrap() >= 0.95);

    let rows: Vec<Vec<f64>> = (0..test_set.n_rows()).map(|i| test_set.raw_row(i)).collect();
    let learned = evaluate(&rl, &rows, &test_set.labels).unwrap();
    let truth = evaluate(&synth.ground_truth, &rows, &test_set.labels).unwrap();
    assert!(learned.weighted_f1 >= truth.weighted_f1 - 0.1, "{} vs {}", learned.weighted_f1, truth.weighted_f1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ModelDocument::new(train_set.schema.clone(), cfg, params, rl.clone()).save(&path).unwrap();
    let back = ModelDocument::load(&path).unwrap();
    assert_eq!(render_text(&back.rule_list), render_text(&rl));
    for x in &rows {
        assert_eq!(hard_predict(&back.rule_list, x).unwrap(), hard_predict(&rl, x).unwrap());
    }
}
