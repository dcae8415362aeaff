//! Runs harness commands from an inline TOML config.

use ttsa::harness::{execute, Command, ExperimentConfig};

const CONFIG: &str = r#"
[problem]
name = "polyak-ruppert"
dim = 2

[noise]
sigma_xi = 0.05
sigma_psi = 0.05

[run]
iterations = 20000
replications = 16
"#;

fn main() -> ttsa::Result<()> {
    let config = ExperimentConfig::from_toml_str(CONFIG)?.resolve(Some(11), None)?;
    for cmd in [Command::Constants, Command::Rate] {
        let out = execute(cmd, &config)?;
        println!("== {} (pass = {})", cmd.as_str(), out.pass);
        if let Some(json) = out.json {
            println!("{}", serde_json::to_string_pretty(&json).unwrap());
        }
    }
    Ok(())
}
