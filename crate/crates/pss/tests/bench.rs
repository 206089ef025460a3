use pss::bench::*;
use pss_core::{GradientMode, PssConfig};
use tempfile::tempdir;

struct Scripted(std::vec::IntoIter<f64>);

impl Clock for Scripted {
    fn now_ms(&mut self) -> f64 {
        self.0.next().expect("clock read more often than scripted")
    }
}

fn small(pass: Pass, mode: GradientMode) -> BenchSpec {
    BenchSpec {
        batch: 256,
        trials: 3,
        warmup: 1,
        ..BenchSpec::new(PssConfig::robe_z(10_000, 16, 1_600, 16, 3), pass, mode)
    }
}

fn tiny_grid() -> Grid {
    Grid {
        ns: vec![5_000],
        d: 8,
        compressions: vec![10.0],
        chunks: vec![4],
        modes: vec![GradientMode::Sparse],
        passes: vec![Pass::Forward],
        batch: 128,
        trials: 3,
        warmup: 1,
        seed: 1,
        threads: 1,
    }
}

#[test]
fn stub_clock_median_is_the_middle_trial() {
    // Trials last 5, 2 and 9 ms.
    let clock = Scripted(vec![0.0, 5.0, 10.0, 12.0, 20.0, 29.0].into_iter());
    let p = time_pass_with_clock(&small(Pass::Forward, GradientMode::Sparse), &mut { clock }).unwrap();
    assert_eq!(p.median_ms, 5.0);
    assert!(p.p10_ms <= p.median_ms && p.median_ms <= p.p90_ms);
    assert_eq!((p.p10_ms, p.p90_ms), (2.0, 9.0));

    let equal = Scripted(vec![0.0, 4.0, 4.0, 8.0, 8.0, 12.0].into_iter());
    let p = time_pass_with_clock(&small(Pass::Backward, GradientMode::Dense), &mut { equal }).unwrap();
    assert_eq!(p.median_ms, 4.0);
}

#[test]
fn percentiles_bracket_the_median() {
    assert_eq!(summarize(&[3.0, 1.0, 2.0]), (2.0, 1.0, 3.0));
    let times: Vec<f64> = (1..=10).rev().map(f64::from).collect();
    let (m, lo, hi) = summarize(&times);
    assert!(lo <= m && m <= hi);
    assert_eq!((lo, hi), (1.0, 9.0));
}

#[test]
fn real_timings_are_positive_and_checksums_agree() {
    let mut sums = Vec::new();
    for mode in [GradientMode::Sparse, GradientMode::Dense] {
        for pass in [Pass::Forward, Pass::Backward] {
            let p = time_pass(&small(pass, mode)).unwrap();
            assert!(p.median_ms > 0.0 && p.p10_ms <= p.median_ms && p.median_ms <= p.p90_ms);
            assert!(p.checksum.is_finite());
            sums.push(p.checksum);
        }
    }
    // Same tokens and memory for both modes; the backward sum of an all-ones
    // upstream gradient is a sum of chunk signs, exact in either mode.
    assert_eq!(sums[0], sums[2]);
    assert_eq!(sums[1], sums[3]);
    assert_eq!(sums[1].fract(), 0.0);
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = small(Pass::Forward, GradientMode::Sparse);
    spec.trials = 2;
    assert!(time_pass(&spec).is_err());
    let mut spec = small(Pass::Forward, GradientMode::Sparse);
    spec.warmup = 0;
    assert!(time_pass(&spec).is_err());
}

#[test]
fn oversized_configuration_hits_the_memory_cap() {
    let mut spec = small(Pass::Backward, GradientMode::Dense);
    spec.memory_cap = 1 << 16;
    let err = time_pass(&spec).unwrap_err();
    assert!(matches!(err, pss::Error::Core(pss_core::Error::ResourceLimit(_))), "{err:?}");
}

#[test]
fn relative_time_values() {
    assert!((relative_time(1.94, 31.04, 1.0, 50.6).unwrap() - 1.19).abs() < 0.005);
    assert!((relative_time(4.55, 11.6, 1.0, 50.6).unwrap() - 1.04).abs() < 0.005);
    assert_eq!(relative_time(2.5, 7.0, 2.5, 7.0).unwrap(), 1.0);
    assert!(relative_time(0.0, 1.0, 1.0, 1.0).is_err());
    assert!(relative_time(1.0, -1.0, 1.0, 1.0).is_err());
    assert!(relative_time(1.0, 1.0, f64::NAN, 1.0).is_err());
}

#[test]
fn single_point_grid_and_resume() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    assert_eq!(sweep_grid(&tiny_grid(), &out, "box").unwrap(), 1);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert!(lines[1].starts_with("box,5000,8,10,4,sparse,forward,128,3,"), "{}", lines[1]);

    assert_eq!(sweep_grid(&tiny_grid(), &out, "box").unwrap(), 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);

    let mut wider = tiny_grid();
    wider.passes.push(Pass::Backward);
    wider.modes.push(GradientMode::Dense);
    assert_eq!(sweep_grid(&wider, &out, "box").unwrap(), 3);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 5);
    assert_eq!(sweep_grid(&tiny_grid(), &out, "other").unwrap(), 1);
}

#[test]
fn grid_errors() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let mut empty = tiny_grid();
    empty.chunks.clear();
    assert!(sweep_grid(&empty, &out, "box").is_err());

    std::fs::write(&out, "a,b,c\n").unwrap();
    assert!(sweep_grid(&tiny_grid(), &out, "box").is_err());
    assert!(sweep_grid(&tiny_grid(), &dir.path().join("no/such/dir.csv"), "box").is_err());
}

#[test]
fn pass_names_parse() {
    assert_eq!("forward".parse::<Pass>().unwrap(), Pass::Forward);
    assert_eq!("Backward".parse::<Pass>().unwrap(), Pass::Backward);
    assert!("sideways".parse::<Pass>().is_err());
}
