use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;

use twoscale::engine::SimRng;
use twoscale::game::random_game;
use twoscale::mdp::garnet;

fn twoscale(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twoscale"))
        .args(args)
        .current_dir(dir)
        .env_remove("TWOSCALE_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const GENERIC: &str = "[problem]\nkind = generic\nc = 1\nd = 1\n\n[schedule]\nalpha0 = 1\nbeta0 = 0.5\nexponent_a = EXP\n\n[run]\nbase_seed = 3\nhorizon = 2000\nn_reps = 4\noutput_dir = out\n";

fn write_config(dir: &Path, exponent: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, GENERIC.replace("EXP", exponent)).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_hashed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "0.6");
    let o = twoscale(&["run", "--config", &cfg], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let mut header = None;
    for f in ["summary.csv", "rates.csv", "report.txt", "trajectory.csv"] {
        let body = fs::read_to_string(out.join(f)).unwrap();
        let first = body.lines().next().unwrap().to_owned();
        assert!(first.starts_with("# config_hash="), "{f}: {first}");
        assert_eq!(header.get_or_insert(first.clone()), &first);
    }
}

#[test]
fn invalid_exponent_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "0.4");
    let o = twoscale(&["run", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exponent_a"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = twoscale(&["run", "--config", "nope.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_dir_can_be_overridden_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "0.6");
    let elsewhere = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_twoscale"))
        .args(["run", "--config", &cfg])
        .current_dir(dir.path())
        .env("TWOSCALE_OUTPUT_DIR", &elsewhere)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(elsewhere.join("summary.csv").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn rate_subcommand_fits_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "0.6");
    assert!(twoscale(&["run", "--config", &cfg], dir.path()).status.success());
    let summary = dir.path().join("out/summary.csv");
    let o = twoscale(&["rate", "--in", summary.to_str().unwrap(), "--window", "100:2000"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("err_x_sq,")), "{}", stdout(&o));
    let written = fs::read_to_string(dir.path().join("out/summary.rates.csv")).unwrap();
    assert!(written.starts_with("# config_hash="));

    let o = twoscale(&["rate", "--in", summary.to_str().unwrap(), "--window", "50:10"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("window"));
}

#[test]
fn geometry_properties_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = twoscale(&["props", "--scope", "geometry"], dir.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn corrupted_chain_file_fails_the_property_run() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("chain.txt");
    fs::write(&chain, "2\n0.5 0.6\n0.5 0.5\n").unwrap();
    let o = twoscale(&["props", "--scope", "markov_chain", "--chain", chain.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn unknown_scope_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = twoscale(&["props", "--scope", "astrology"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_subcommands_print_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = garnet(3, 2, 2, 0, &mut SimRng::seed_from_u64(1)).unwrap();
    let mdp_path = dir.path().join("mdp.txt");
    fs::write(&mdp_path, mdp.to_text()).unwrap();
    let m = mdp_path.to_str().unwrap();

    let o = twoscale(&["oracle", "avgcost", "--model", m], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rho: f64 = text.lines().find_map(|l| l.strip_prefix("rho_star,")).unwrap().parse().unwrap();
    let direct = twoscale::mdp::avgcost_oracle(&mdp, 0).unwrap().rho_star;
    assert!((rho - direct).abs() < 1e-12 * (1.0 + direct.abs()));

    let o = twoscale(&["oracle", "discounted", "--model", m, "--gamma", "0.5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("gamma,"));

    let game = random_game(2, 1, 1, &mut SimRng::seed_from_u64(3)).unwrap();
    let game_path = dir.path().join("game.txt");
    fs::write(&game_path, game.to_text()).unwrap();
    let o = twoscale(&["oracle", "kkt", "--model", game_path.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for key in ["x_star,", "y_star,", "stationarity_residual,", "feasibility_residual,"] {
        assert!(stdout(&o).contains(key), "{key}");
    }

    let o = twoscale(&["oracle", "kkt", "--model", "missing.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
