use std::fs;
use std::path::Path;

use mflabel::cli::main_with_args;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut full = vec!["mflabel"];
    full.extend_from_slice(args);
    let code = main_with_args(full, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Ten pixels in three runs of nearly constant RGB color.
fn write_problem(dir: &Path) -> (String, String) {
    let input = dir.join("pixels.csv");
    let priors = dir.join("priors.csv");
    let mut text = String::from("r,g,b\n");
    for i in 0..10 {
        let row = match i {
            0..=2 => "0.9,0.1,0.1",
            3..=6 => "0.1,0.9,0.1",
            _ => "0.1,0.1,0.9",
        };
        text.push_str(row);
        text.push('\n');
    }
    fs::write(&input, text).unwrap();
    fs::write(&priors, "1,0,0\n0,1,0\n0,0,1\n").unwrap();
    (p(&input).into(), p(&priors).into())
}

#[test]
fn label_prints_expected_segments() {
    let dir = tempfile::tempdir().unwrap();
    let (input, priors) = write_problem(dir.path());
    let (code, out) = run(&["label", "--input", &input, "--priors", &priors]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("1 1 1 2 2 2 2 3 3 3"), "{out}");
    assert!(out.contains("converged"));
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "0.1,0.2\n0.3,oops\n").unwrap();
    let priors = dir.path().join("priors.csv");
    fs::write(&priors, "0,0\n1,1\n").unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_mflabel"))
        .args(["label", "--input", p(&input), "--priors", p(&priors)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn nonsymmetric_weights_rejected_by_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let (input, priors) = write_problem(dir.path());
    let weights = dir.path().join("p.txt");
    let mut text = String::from("10 rows\n");
    for i in 0..10 {
        let j = (i + 1) % 10;
        text.push_str(&format!("{i} {i} 0.7\n{i} {j} 0.3\n"));
    }
    fs::write(&weights, text).unwrap();
    let rho = format!("file:{}", p(&weights));
    let (code, out) = run(&["analyze", "--input", &input, "--priors", &priors, "--rho", &rho]);
    assert_eq!(code, 3, "{out}");
    let (code, out) = run(&[
        "analyze", "--input", &input, "--priors", &priors, "--rho", &rho, "--symmetrize",
    ]);
    assert_eq!(code, 0, "{out}");
}

#[test]
fn epsilon_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let (input, priors) = write_problem(dir.path());
    let (code, _) = run(&["label", "--input", &input, "--priors", &priors, "--epsilon", "0.34"]);
    assert_eq!(code, 4);
    let (code, _) = run(&["project", "0.2", "0.3", "0.5", "--epsilon", "0.5"]);
    assert_eq!(code, 4);
}

#[test]
fn outputs_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (input, priors) = write_problem(dir.path());
    let mut maps = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("labels{threads}.pgm"));
        let dump = dir.path().join(format!("w{threads}.csv"));
        let (code, text) = run(&[
            "--threads", threads, "label", "--input", &input, "--priors", &priors,
            "--alpha", "uniform:3", "--output", p(&out), "--dump-assignment", p(&dump),
        ]);
        assert_eq!(code, 0, "{text}");
        maps.push((fs::read(&out).unwrap(), fs::read(&dump).unwrap()));
    }
    assert_eq!(maps[0], maps[1]);
}

#[test]
fn missing_pixels_are_filled_from_neighbors() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pixels.csv");
    let priors = dir.path().join("priors.csv");
    fs::write(&input, "0,0\n0,0\nNaN,NaN\n0,0\n0,0\n1,1\n1,1\n,\n1,1\n1,1\n").unwrap();
    fs::write(&priors, "0,0\n1,1\n").unwrap();
    let (code, out) = run(&["label", "--input", p(&input), "--priors", p(&priors), "--alpha", "uniform:3"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("1 1 1 1 1 2 2 2 2 2"), "{out}");
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (input, priors) = write_problem(dir.path());
    let out = dir.path().join("labels.pgm");
    let (code, text) = run(&["label", "--input", &input, "--priors", &priors, "--output", p(&out)]);
    assert_eq!(code, 0, "{text}");
    // The report next to the label map echoes the configuration in the same
    // syntax --config reads.
    let report = fs::read_to_string(dir.path().join("labels.pgm.report")).unwrap();
    let config: String = report
        .lines()
        .skip_while(|l| *l != "# configuration")
        .take_while(|l| *l != "# result")
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, config).unwrap();
    let (code, again) = run(&["label", "--config", p(&cfg)]);
    assert_eq!(code, 0, "{again}");
    assert!(again.contains("1 1 1 2 2 2 2 3 3 3"), "{again}");
}

fn write_pgm(path: &Path, w: usize, h: usize, value: impl Fn(usize, usize) -> u8) {
    let mut text = format!("P2\n{w} {h}\n255\n");
    for r in 0..h {
        let row: Vec<String> = (0..w).map(|c| value(r, c).to_string()).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn descriptor_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn features_on_constant_and_ramp_images() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.pgm");
    write_pgm(&flat, 12, 10, |_, _| 100);
    let (code, out) = run(&["features", "--input", p(&flat), "--sigma", "0"]);
    assert_eq!(code, 0, "{out}");
    let rows = descriptor_rows(&out);
    assert_eq!(rows.len(), 120);
    assert_eq!(rows[0].len(), 20);
    for row in &rows {
        // Intensity mean and zero derivative means.
        assert!((row[0] - 100.0 / 255.0).abs() < 1e-12);
        for v in &row[1..5] {
            assert!(v.abs() < 1e-12);
        }
    }

    let ramp = dir.path().join("ramp.pgm");
    write_pgm(&ramp, 16, 12, |_, c| (10 * c) as u8);
    let (code, out) = run(&["features", "--input", p(&ramp), "--sigma", "0"]);
    assert_eq!(code, 0, "{out}");
    let rows = descriptor_rows(&out);
    // Away from the border the horizontal derivative is the ramp slope.
    let centre = &rows[6 * 16 + 8];
    assert!((centre[1] - 10.0 / 255.0).abs() < 1e-12, "{centre:?}");
    assert!(centre[2].abs() < 1e-12);
}

#[test]
fn usage_errors_exit_64() {
    let (code, _) = run(&["label", "--no-such-flag"]);
    assert_eq!(code, 64);
}
