use std::fs;
use std::path::Path;

use labelnoise::config::{ExperimentConfig, Mode};

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let cfg = ExperimentConfig::from_toml(&fs::read_to_string(&path).unwrap(), &path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        match cfg.mode {
            Mode::Semi => assert!(cfg.semi.is_some() && cfg.semi_split.is_some()),
            _ => {
                cfg.effective_train().unwrap();
            }
        }
        seen += 1;
    }
    assert!(seen >= 4);
}
