use surfparc::pipeline::*;
use surfparc::train::TrainMode;

#[test]
fn probe() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.n_subjects = 12;
    cfg.n_vertices = 2562;
    cfg.n_parcels = 16;
    cfg.max_epochs = 300;
    cfg.patience = 40;
    cfg.seed = 11;
    cfg.modes = vec![TrainMode::Spectral, TrainMode::PointwiseSpectral];
    let t0 = std::time::Instant::now();
    let out = run_pipeline(&cfg, None, dir.path()).unwrap();
    println!("pipeline took {:.1}s", t0.elapsed().as_secs_f64());
    for (mode, s) in &out.summary.modes {
        println!("{mode}: dice {:.3} +- {:.3} hd {:.3} acc {:.3}", s.dice_mean, s.dice_std, s.hausdorff_mean_mm, s.node_accuracy);
    }
    for mode in ["spectral", "pointwise"] {
        let log = std::fs::read_to_string(dir.path().join(mode).join("train_log.csv")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        println!("{mode} train log tail: {:?}", &lines[lines.len().saturating_sub(3)..]);
    }
}
