use qudit_graybox::config::preset;
use qudit_graybox::dynamics::{generate_dataset, Dataset, SystemConfig};
use qudit_graybox::graybox::{read_checkpoint, train, write_checkpoint, GrayboxModel, Hyperparameters};
use qudit_graybox::interpret::{default_grid, fit_scan, scan_epsilon};

fn tiny() -> SystemConfig {
    let mut c = preset("qutrit-desk-weak").unwrap();
    c.carrier.steps = 120;
    c.noise.steps = 120;
    c.noise.realizations = 6;
    c.n_max = 3;
    c
}

#[test]
fn dataset_model_and_expansion_round_trip() {
    let config = tiny();
    let data = generate_dataset(&config, 40, 11).unwrap();
    let (mut jsonl, mut manifest) = (Vec::new(), Vec::new());
    data.write_jsonl(&mut jsonl).unwrap();
    data.write_manifest(&mut manifest).unwrap();
    let back = Dataset::read(jsonl.as_slice(), manifest.as_slice()).unwrap();
    assert_eq!(back, data);

    let hyper = Hyperparameters {
        iterations: 30,
        batch_size: 16,
        learning_rate: 5e-3,
        ..Hyperparameters::default()
    };
    let model = GrayboxModel::new(&config, 10, 2).unwrap();
    let (model, record) = train(model, &data, &hyper, |_, _, _| {}).unwrap();
    assert_eq!(record.train_mse.len(), 30);
    assert!(record.final_train_mse < record.train_mse[0]);

    let mut bytes = Vec::new();
    write_checkpoint(&model, serde_json::json!({ "note": "x" }), &mut bytes).unwrap();
    let (loaded, extra) = read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(extra["note"], "x");
    let theta = data.params(0).unwrap();
    assert_eq!(
        model.forward(&theta).unwrap().expectations,
        loaded.forward(&theta).unwrap().expectations
    );

    let grid = default_grid();
    let scan = scan_epsilon(&loaded, &theta, &grid, false).unwrap();
    let fits = fit_scan(&scan, 2).unwrap();
    assert_eq!(fits.len(), 8);
    let x0 = &fits[0];
    let at_zero = &scan.v[grid.len() / 2][0];
    assert_eq!(grid[grid.len() / 2], 0.0);
    assert!((&x0.evaluate(0.0) - at_zero).max_abs() <= x0.max_residual() + 1e-12);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let model = GrayboxModel::new(&tiny(), 4, 0).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&model, serde_json::Value::Null, &mut bytes).unwrap();
    assert!(read_checkpoint(&bytes[..bytes.len() - 8]).is_err());
    bytes[0] = b'X';
    assert!(read_checkpoint(bytes.as_slice()).is_err());
}
