#![allow(dead_code)]

use std::path::Path;

use headway_core::grid::GridSpec;
use headway_core::sim::LineConfig;
use headway_core::window::WindowSpec;
use headway_lab::config::LabConfig;

/// Five short replications on a 22 000 ft line, 8 distance bins, L=6, F=3.
pub fn tiny_config() -> LabConfig {
    let mut c = LabConfig::default();
    c.replications = 5;
    c.line = LineConfig {
        line_length_ft: 22_000.0,
        station_positions_ft: vec![0.0, 5_500.0, 11_000.0, 16_500.0, 22_000.0],
        terminal_sb_position_ft: 22_000.0,
        short_turn_position_ft: Some(8_800.0),
        service_start_s: 0.0,
        service_end_s: 5_400.0,
        ..LineConfig::default()
    };
    c.grid = GridSpec { t_start_s: 1_200.0, t_end_s: 5_400.0, n_distance_bins: 8, d_max_ft: 22_000.0, ..GridSpec::default() };
    c.model.n_distance_bins = 8;
    c.model.filters = 4;
    c.window = WindowSpec { lookback: 6, horizon: 3, terminal_bin_nb: 0, terminal_bin_sb: 0 };
    c.train.batch_size = 16;
    c
}

pub fn write_config(dir: &Path, cfg: &LabConfig) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    p
}
