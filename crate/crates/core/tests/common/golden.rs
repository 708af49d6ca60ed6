//! Stored CLI outputs. Set `UPDATE_GOLDEN=1` to regenerate them.

use std::fs;
use std::path::PathBuf;

use super::run_cli;

/// Fixture name, arguments, and the fixture whose content is piped to stdin.
pub const CASES: &[(&str, &[&str], Option<&str>)] = &[
    ("gen_crops_fixed", &["gen-crops", "--bbox", "40,-25,400"], None),
    ("gen_crops_random", &["gen-crops", "--bbox", "40,-25,400", "--mode", "random", "--m", "8", "--seed", "11"], None),
    ("make_scene", &["make-scene", "--seed", "5", "--sigma-s", "0.05", "--sigma-t", "0.05"], None),
    ("make_scene_random", &["make-scene", "--seed", "6", "--m", "7", "--mode", "random"], None),
    ("project", &["project"], Some("make_scene")),
    ("check_consistency", &["check-consistency"], Some("make_scene")),
    ("recover_camera", &["recover-camera"], Some("make_scene")),
    ("recover_camera_plot", &["recover-camera", "--plot-data"], Some("make_scene")),
    ("grad_check", &["grad-check", "--seed", "2", "--configs", "3"], None),
    ("demo_contrastive", &["demo-contrastive", "--seed", "4"], None),
    ("demo_fusion", &["demo-fusion", "--seed", "4"], Some("make_scene_random")),
];

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

fn path(name: &str) -> PathBuf {
    fixture_dir().join(format!("{name}.out"))
}

/// Compare every case with its fixture (or rewrite them). Returns the number
/// of fixtures checked.
pub fn check_all() -> Result<usize, String> {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut mismatched = Vec::new();
    for (name, args, input) in CASES {
        let stdin = match input {
            Some(src) => fs::read_to_string(path(src)).map_err(|e| format!("{src}: {e}"))?,
            None => String::new(),
        };
        let (code, out, err) = run_cli(args, &stdin);
        if code != 0 {
            return Err(format!("{name}: exit {code}: {err}"));
        }
        if update {
            fs::create_dir_all(fixture_dir()).map_err(|e| e.to_string())?;
            fs::write(path(name), &out).map_err(|e| format!("{name}: {e}"))?;
            continue;
        }
        let stored = fs::read_to_string(path(name)).map_err(|e| format!("{name}: {e}"))?;
        if stored != out {
            mismatched.push(*name);
        }
    }
    if mismatched.is_empty() {
        Ok(CASES.len())
    } else {
        Err(format!("outputs differ from fixtures: {}", mismatched.join(", ")))
    }
}
