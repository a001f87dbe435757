//! The same pipeline as `secsv-sim run`: a TOML config in, JSON reports out.

use secsv::config::ExperimentConfig;
use secsv::experiment::cmd_run;

const CONFIG: &str = r#"
version = 1
seed = 3
clients = 4
rounds = 2
train_samples = 400
test_samples = 120
protocols = ["nssv", "secsv"]
max_batch = 16

[data]
kind = "blobs"
dim = 6
classes = 3
separation = 2.0

[architecture]
kind = "logistic"
"#;

fn main() -> secsv::Result<()> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let out = std::env::temp_dir().join("secsv-example-run");
    let run = cmd_run(&cfg, &out)?;
    for f in &run.files {
        println!("wrote {}", f.display());
    }
    println!("{}", serde_json::to_string_pretty(&run.summary).map_err(|e| secsv::Error::Parse(e.to_string()))?);
    Ok(())
}
