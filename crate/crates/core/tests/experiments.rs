use std::sync::OnceLock;

use uplink_vlp::bounds::qlb;
use uplink_vlp::channel::ChannelModel;
use uplink_vlp::config::Config;
use uplink_vlp::estimator::{locate, FeatureSelection, NoiseModel, SnrSpec};
use uplink_vlp::experiments::{bounds_table, bw_map, map_for, sweep_bw, sweep_grid, sweep_snr, write_csv, CsvRow, RmsRow};
use uplink_vlp::fingerprint::{load_map, save_map, FeatureSimulator};

const COARSE: &str = "
room.element_size = 0.1
channel.bounces = 2
channel.coarse_element_size = 0.5
estimator.trials = 300
estimator.grid_step = 0.25
regression.sample_step = 0.2
bounds.lattice = 6
sweep.snr_db = 20, 40, inf
sweep.detectors = 1, 4
sweep.grid_steps = 0.25, 0.5, 1.0
sweep.bandwidths_mhz = 100, inf
sweep.bw_map_step = 0.25
";

fn setup() -> &'static (Config, ChannelModel) {
    static SETUP: OnceLock<(Config, ChannelModel)> = OnceLock::new();
    SETUP.get_or_init(|| {
        let config = Config::parse(COARSE).unwrap();
        let model = ChannelModel::new(&config.scene, config.channel).unwrap();
        (config, model)
    })
}

fn csv<R: CsvRow>(rows: &[R]) -> String {
    let mut out = Vec::new();
    write_csv(rows, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn sweep_snr_covers_the_cartesian_product() {
    let (config, model) = setup();
    let rows = sweep_snr(config, model).unwrap();
    let s = &config.sweep;
    assert_eq!(rows.len(), s.snr_db.len() * s.detectors.len() * s.features.len());
    for r in &rows {
        assert_eq!(r.trials, 300);
        assert!(r.rms.is_finite() && r.stderr >= 0.0);
        assert!(r.lb_rms <= r.rms * 1.5 + 1e-12, "{r:?}");
    }
    // More SNR never hurts much with shared positions and noise draws.
    let at = |snr: f64, q: usize, f: usize| {
        rows.iter().find(|r| r.snr_db == snr && r.q == q && r.features == f).unwrap().rms
    };
    for q in [1, 4] {
        assert!(at(f64::INFINITY, q, 3) <= at(20.0, q, 3) + 0.05);
    }
}

#[test]
fn sweeps_are_reproducible() {
    let (config, model) = setup();
    let a = csv(&sweep_grid(config, model).unwrap());
    let b = csv(&sweep_grid(config, model).unwrap());
    assert_eq!(a, b);
    let mut other = config.clone();
    other.estimator.seed += 1;
    assert_ne!(a, csv(&sweep_grid(&other, model).unwrap()));
}

#[test]
fn sweep_grid_reports_the_quantization_bound() {
    let (config, model) = setup();
    let rows = sweep_grid(config, model).unwrap();
    let s = &config.sweep;
    assert_eq!(rows.len(), s.grid_steps.len() * s.detectors.len() * s.features.len());
    for r in &rows {
        assert_eq!(r.qlb, qlb(r.grid_step));
        assert_eq!(r.snr_db, s.grid_snr_db);
    }
    // Four detectors do at least as well as one at every step, same draws.
    for step in &s.grid_steps {
        for f in &s.features {
            let pick = |q: usize| {
                rows.iter()
                    .find(|r| r.grid_step == *step && r.q == q && r.features == *f)
                    .unwrap()
                    .rms
            };
            assert!(pick(4) <= pick(1), "step {step}, {f} features");
        }
    }
}

#[test]
fn unlimited_bandwidth_matches_the_snr_sweep() {
    let (config, model) = setup();
    let mut c = config.clone();
    c.sweep.snr_db = vec![c.sweep.bw_snr_db];
    c.sweep.features = c.sweep.bw_features.clone();
    let reference = sweep_snr(&c, model).unwrap();
    let rows = sweep_bw(config, model).unwrap();
    assert_eq!(rows.len(), 2 * config.sweep.detectors.len() * config.sweep.bw_features.len());
    let ideal: Vec<RmsRow> = rows.iter().copied().filter(|r| r.bandwidth.is_infinite()).collect();
    assert_eq!(ideal, reference);
    assert!(rows.iter().any(|r| r.bandwidth == 100e6));
}

#[test]
fn bandwidth_map_is_diagonal_symmetric_for_the_first_detector() {
    let (config, model) = setup();
    let rows = bw_map(config, model).unwrap();
    let n = (5.0f64 / config.sweep.bw_map_step).floor() as usize;
    assert_eq!(rows.len(), n * n * config.scene.detectors.len());
    let pd1: Vec<_> = rows.iter().filter(|r| r.detector == 0).collect();
    for r in &pd1 {
        let twin = pd1
            .iter()
            .find(|t| (t.x - r.y).abs() < 1e-9 && (t.y - r.x).abs() < 1e-9)
            .unwrap();
        assert!((twin.bw_hz - r.bw_hz).abs() <= 1e-6 * r.bw_hz, "{r:?} vs {twin:?}");
    }
}

#[test]
fn first_order_diffuse_bandwidth_peaks_next_to_a_wall() {
    let (config, _) = setup();
    let mut c = config.clone();
    c.channel.max_bounces = 1;
    let model = ChannelModel::new(&c.scene, c.channel).unwrap();
    let rows = bw_map(&c, &model).unwrap();
    let widest = rows
        .iter()
        .filter(|r| r.detector == 0)
        .max_by(|a, b| a.bw_hz.total_cmp(&b.bw_hz))
        .unwrap();
    let wall = widest.x.min(widest.y).min(5.0 - widest.x).min(5.0 - widest.y);
    assert!(wall < c.sweep.bw_map_step, "{widest:?}");
}

#[test]
fn bounds_table_orders_and_scales() {
    let (config, model) = setup();
    let rows = bounds_table(config, model).unwrap();
    let s = &config.sweep;
    assert_eq!(rows.len(), s.snr_db.len() * s.detectors.len() * s.features.len());
    let get = |snr: f64, q: usize, f: usize| {
        rows.iter().find(|r| r.snr_db == snr && r.q == q && r.features == f).unwrap().bounds
    };
    for f in 1..=3 {
        let (lo, hi) = (get(20.0, 4, f), get(40.0, 4, f));
        assert!((lo.crlb_rms / hi.crlb_rms - 10.0).abs() < 1e-9);
        assert_eq!(get(f64::INFINITY, 4, f).crlb_rms, 0.0);
        assert_eq!(lo.qlb, qlb(config.estimator.grid_step));
        assert!((lo.qcrlb - lo.crlb_rms.hypot(lo.qlb)).abs() < 1e-15);
    }
    // One detector with LOS power only cannot resolve two coordinates.
    assert!(get(40.0, 1, 1).crlb_rms.is_infinite());
    for f in 1..3 {
        assert!(get(40.0, 4, f + 1).crlb_rms <= get(40.0, 4, f).crlb_rms);
    }
}

#[test]
fn saved_map_locates_like_the_built_one() {
    let (config, model) = setup();
    let sim = FeatureSimulator::new(model, config.filter, config.features);
    let map = map_for(&sim, config.estimator.grid_step).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.csv");
    save_map(&map, &path).unwrap();
    let loaded = load_map(&path).unwrap();
    assert_eq!(loaded, map);

    let noise = NoiseModel::noiseless_limit(
        SnrSpec::for_scene(&config.scene, 0.0, config.estimator.sigma_tau_ref).unwrap().noise().unwrap(),
    );
    for k in (0..map.cell_count()).step_by(17) {
        let c = map.center(k);
        let v = sim.observe(c.x, c.y).unwrap();
        let hit = locate(&v, &loaded, &noise, FeatureSelection::All, 4).unwrap();
        assert_eq!(hit.index, k);
    }
}
