// The command-line workflow driven in-process: learn a law from plant
// rollouts, synthesize a certified gain, validate it again.

use clap::Parser;
use prob_lqr::cli::{run, Cli};

/// Exit codes of learn, synthesize and validate.
pub fn run_example() -> prob_lqr::Result<Vec<u8>> {
    let dir = tempfile::tempdir()?;
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 5\n\n[law]\npath = \"law.json\"\n\n[weights]\nq = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]\nr = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]\n",
    )?;

    let mut codes = Vec::new();
    for args in [
        vec!["prob-lqr", "learn", "--plant", "cubic", "--rollouts", "8", "--seed", "3", "--out", &path("law.json")],
        vec!["prob-lqr", "synthesize", "--config", &path("run.toml"), "--out", &path("controller.json")],
        vec![
            "prob-lqr", "validate", "--controller", &path("controller.json"), "--law", &path("law.json"),
            "--samples", "2000",
        ],
    ] {
        println!("$ {}", args[1..].join(" "));
        let cli = Cli::try_parse_from(args).map_err(|e| prob_lqr::Error::Config(e.to_string()))?;
        codes.push(run(&cli)?);
    }
    println!("exit codes {codes:?}");
    Ok(codes)
}

fn main() -> prob_lqr::Result<()> {
    run_example().map(|_| ())
}
