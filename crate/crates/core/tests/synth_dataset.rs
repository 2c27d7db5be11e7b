use std::fs;

use gaitrt_core::gait::Foot;
use gaitrt_core::synth::{
    generate_cohort, generate_trial, read_dataset, read_trial, vgrf_column, write_dataset, write_trial, CohortConfig,
    NoiseLevels, SubjectProfile, SynthError,
};

fn small() -> CohortConfig {
    CohortConfig {
        n_subjects: 2,
        trials_per_subject: 2,
        trial_duration_s: 5.0,
        ..CohortConfig::default()
    }
}

#[test]
fn dataset_round_trips_through_csv() {
    let cohort = generate_cohort(&small(), 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&cohort.dataset, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.subjects.len(), 2);
    for (a, b) in cohort.dataset.subjects.iter().zip(&back.subjects) {
        assert_eq!(a, b);
    }
    assert_eq!(back.trials, cohort.dataset.trials);
}

#[test]
fn same_seed_same_cohort_and_subjects_differ() {
    let a = generate_cohort(&small(), 5).unwrap();
    let b = generate_cohort(&small(), 5).unwrap();
    let c = generate_cohort(&small(), 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.profiles[0], c.profiles[0]);
    assert_ne!(a.profiles[0].mass_kg, a.profiles[1].mass_kg);
}

#[test]
fn vgrf_peaks_stay_in_band() {
    let cohort = generate_cohort(
        &CohortConfig {
            n_subjects: 6,
            trials_per_subject: 1,
            ..small()
        },
        11,
    )
    .unwrap();
    for t in &cohort.dataset.trials {
        for foot in Foot::BOTH {
            let c = t.truth.channel_index(&vgrf_column(foot)).unwrap();
            let col = t.truth.column(c);
            let peak = col.iter().cloned().fold(0.0, f64::max);
            assert!((1.0..=1.2).contains(&peak), "peak {peak}");
            assert!(col.iter().any(|&v| v == 0.0));
        }
    }
}

#[test]
fn default_cohort_yields_enough_cycles_per_subject() {
    let cfg = CohortConfig {
        n_subjects: 3,
        noise: NoiseLevels::zero(),
        ..CohortConfig::default()
    };
    let cohort = generate_cohort(&cfg, 1).unwrap();
    for s in cohort.dataset.subject_ids() {
        let cycles: usize = cohort
            .dataset
            .trials
            .iter()
            .filter(|t| t.subject_id == s)
            .map(|t| t.strikes(Foot::Right).len() - 1)
            .sum();
        assert!(cycles >= 150, "{s}: {cycles}");
    }
}

fn written_trial() -> (tempfile::TempDir, std::path::PathBuf) {
    let trial = generate_trial(&SubjectProfile::canonical("S01"), "T01", 3.0, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("T01.csv");
    write_trial(&trial, &path).unwrap();
    (dir, path)
}

#[test]
fn missing_column_is_a_format_error() {
    let (_d, path) = written_trial();
    let text = fs::read_to_string(&path).unwrap();
    let edited: String = text
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(3);
            f.join(",") + "\n"
        })
        .collect();
    fs::write(&path, edited).unwrap();
    let err = read_trial(&path, "S01", "T01").unwrap_err();
    assert!(matches!(err, SynthError::Format { line: 1, .. }), "{err}");
    assert_eq!(err.code(), "E_FORMAT");
}

#[test]
fn truncated_last_row_is_a_data_error_at_that_line() {
    let (_d, path) = written_trial();
    let text = fs::read_to_string(&path).unwrap();
    let n_lines = text.lines().count() as u64;
    let mut lines: Vec<&str> = text.lines().collect();
    let last = lines.pop().unwrap();
    let cut = &last[..last.len() / 2];
    let edited = format!("{}\n{}\n", lines.join("\n"), cut);
    fs::write(&path, edited).unwrap();
    match read_trial(&path, "S01", "T01").unwrap_err() {
        SynthError::Data { line, .. } => assert_eq!(line, n_lines),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn non_finite_value_is_a_data_error() {
    let (_d, path) = written_trial();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut f: Vec<String> = lines[1].split(',').map(String::from).collect();
    f[1] = "NaN".into();
    lines[1] = f.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = read_trial(&path, "S01", "T01").unwrap_err();
    assert!(matches!(err, SynthError::Data { line: 2, .. }), "{err}");
    assert_eq!(err.code(), "E_DATA");
}
