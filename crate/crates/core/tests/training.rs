mod common;

use std::path::Path;

use candle_core::Tensor;

use cebd_core::data::DatasetManifest;
use cebd_core::train::{
    evaluate, sweep, CellKind, Checkpoint, Duty, EvalOptions, OracleDecomposer, TrainConfig,
    TrainOptions, Trainer,
};
use cebd_core::{Error, ExposureCode};

fn micro(epochs: u64) -> TrainConfig {
    let mut c = TrainConfig::tiny();
    c.crop = 16;
    c.epochs = epochs;
    c.val_every = epochs;
    c.warmup_epochs = 0;
    c.network.sem_channels = 8;
    c.network.enc_channels = [8, 16];
    c.network.temporal_hidden = 16;
    c.network.temporal_width = 16;
    c
}

fn scenes(dir: &Path) -> DatasetManifest {
    common::toy_dataset(dir, 2, 8, 3)
}

fn flat(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1().unwrap()
}

fn same_params(a: &Checkpoint, b: &Checkpoint) -> bool {
    a.params.len() == b.params.len()
        && a.params.iter().all(|(k, t)| b.params.get(k).is_some_and(|u| flat(t) == flat(u)))
}

#[test]
fn oracle_scores_the_cap_on_every_window() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::toy_dataset(dir.path(), 3, 20, 1);
    let oracle = OracleDecomposer {
        code: "11100101".parse().unwrap(),
    };
    let report = evaluate(&oracle, &m, 8, &EvalOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 3 * (20 / 8));
    assert_eq!(report.videos.len(), 3);
    assert!(report.rows.iter().all(|r| r.psnr.len() == 8 && r.psnr.iter().all(|&p| p == 100.0)));
    assert_eq!(report.psnr, 100.0);
    assert!((report.ssim - 1.0).abs() < 1e-9);
    assert_eq!(report.code, "11100101");
    assert!(report.to_table().lines().count() > report.rows.len());

    let err = evaluate(&oracle, &m, 4, &EvalOptions::default()).unwrap_err();
    assert!(matches!(err, Error::LengthMismatch { .. }));
}

#[test]
fn code_must_match_the_window() {
    let mut c = micro(2);
    c.code = "1101".into();
    assert!(matches!(c.network_config(), Err(Error::Config(_))));
    c.use_coded_exposure = false;
    assert_eq!(c.network_config().unwrap().code.id_string(), "11111111");
}

#[test]
fn conventional_run_records_the_box_code_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(&dir.path().join("data"));
    let mut c = micro(2);
    c.use_coded_exposure = false;
    let out = dir.path().join("run");
    let outcome = cebd_core::train(c, m.clone(), None, Some(&out)).unwrap();
    assert_eq!(outcome.checkpoint.network.code.id_string(), "11111111");
    assert_eq!(outcome.checkpoint.step, 4);
    assert!(out.join("last.ckpt").is_file());
    assert!(outcome.final_eval.is_some());

    let path = dir.path().join("copy.ckpt");
    outcome.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert!(same_params(&outcome.checkpoint, &back));
    assert_eq!(back.network, outcome.checkpoint.network);
    assert_eq!(back.train, outcome.checkpoint.train);
    assert_eq!(back.step, 4);

    let a = evaluate(&outcome.checkpoint.build_network().unwrap(), &m, 8, &EvalOptions::default()).unwrap();
    let b = evaluate(&back.build_network().unwrap(), &m, 8, &EvalOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn loss_decreases_on_a_fixed_clip() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path());
    let mut t = Trainer::new(micro(40), m, None, TrainOptions::default()).unwrap();
    t.run(None).unwrap();
    let losses: Vec<f64> = t.history().iter().map(|r| r.loss.total).collect();
    assert_eq!(losses.len(), 80);
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let head = median(&losses[..8]);
    let tail = median(&losses[72..]);
    assert!(tail < head, "first {head}, last {tail}");
}

#[test]
fn seeded_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path());
    let a = cebd_core::train(micro(3), m.clone(), None, None).unwrap();
    let b = cebd_core::train(micro(3), m.clone(), None, None).unwrap();
    assert!(same_params(&a.checkpoint, &b.checkpoint));
    let la: Vec<u64> = a.history.iter().map(|r| r.loss.total.to_bits()).collect();
    let lb: Vec<u64> = b.history.iter().map(|r| r.loss.total.to_bits()).collect();
    assert_eq!(la, lb);

    let mut other = micro(3);
    other.seed = 1;
    let c = cebd_core::train(other, m, None, None).unwrap();
    assert!(!same_params(&a.checkpoint, &c.checkpoint));
}

#[test]
fn divergence_aborts_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(&dir.path().join("data"));
    let mut c = micro(20);
    c.lr_init = 1e6;
    c.optimizer.grad_clip = None;
    let out = dir.path().join("run");
    let err = cebd_core::train(c, m, None, Some(&out)).unwrap_err();
    match err {
        Error::NonFiniteLoss { dump, .. } => {
            assert!(dump.starts_with(&out));
            assert!(dump.is_file());
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn sweep_reports_cells_it_cannot_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path());
    let duties: Vec<Duty> = vec!["2/2".parse().unwrap()];
    let table = sweep(&[0, 12], &duties, &micro(1), &m, None, None);
    assert_eq!(table.cells.len(), 3);

    let zero = table.cell(CellKind::Length, "0").unwrap();
    assert!(zero.error.as_deref().unwrap().starts_with("infeasible"));
    assert!(zero.psnr.is_none());

    // 12-frame windows do not fit 8-frame videos
    let long = table.cell(CellKind::Length, "12").unwrap();
    assert_eq!(long.ones, 8);
    let code: ExposureCode = long.code.as_deref().unwrap().parse().unwrap();
    assert!(!code.is_symmetric());
    assert!(long.error.is_some());

    let duty = table.cell(CellKind::Duty, "2/2").unwrap();
    assert_eq!(duty.code.as_deref(), Some("11"));
    assert!(duty.error.is_none(), "{:?}", duty.error);
    assert!(duty.psnr.unwrap().is_finite());
    assert!(table.to_table().contains("infeasible"));
}
