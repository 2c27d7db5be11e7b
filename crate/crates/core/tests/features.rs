use std::collections::BTreeSet;

use gaitrt_core::features::*;
use gaitrt_core::forest::ForestParams;
use gaitrt_core::gait::Foot;
use gaitrt_core::metrics::compute_report;
use gaitrt_core::resnet::{ResNetArch, TrainConfig};
use gaitrt_core::signal::SampleSeries;
use gaitrt_core::synth::{generate_cohort, generate_trial, CohortConfig, NoiseLevels, SubjectProfile, GRAVITY};
use gaitrt_core::Matrix;

fn prepared(duration_s: f64) -> PreparedTrial {
    let trial = generate_trial(&SubjectProfile::canonical("S01"), "T01", duration_s, 3).unwrap();
    prepare_trial(&trial, 70.0, &Preprocessing::default()).unwrap()
}

#[test]
fn table_one_counts() {
    let expect = [
        (ModelName::Grf, 9, 1, 1),
        (ModelName::W1, 20, 1, 1),
        (ModelName::W2, 21, 1, 1),
        (ModelName::W3, 40, 2, 1),
        (ModelName::W4, 20, 5, 1),
        (ModelName::W5, 21, 5, 1),
        (ModelName::W6, 40, 10, 1),
        (ModelName::MAnkle, 6, 2, 10),
        (ModelName::M5Joint, 8, 5, 10),
    ];
    for (name, n_in, n_out, window) in expect {
        let c = ModelConfig::new(name);
        assert_eq!((c.n_inputs(), c.n_outputs(), c.window), (n_in, n_out, window), "{name}");
        assert_eq!(name.as_str().parse::<ModelName>().unwrap(), name);
    }
    assert!(!ModelConfig::new(ModelName::Grf).uses_flag());
    assert!("S1".parse::<ModelName>().is_err());
}

#[test]
fn assembled_rows_follow_layout() {
    let p = prepared(4.0);
    let n = p.streams.len();
    let gc: Vec<f64> = (0..n).map(|i| (i % 100) as f64).collect();
    let flag = vec![1.0; n];
    for (name, len) in [(ModelName::W1, 20), (ModelName::W6, 40), (ModelName::Grf, 9), (ModelName::W2, 21)] {
        let c = ModelConfig::new(name);
        let x = assemble_features(&c, &p.streams, Foot::Left, &gc, &flag).unwrap();
        assert_eq!((x.rows(), x.cols()), (n, len), "{name}");
        let again = assemble_features(&c, &p.streams, Foot::Left, &gc, &flag).unwrap();
        assert_eq!(x, again);
    }
    let w2 = assemble_features(&ModelConfig::new(ModelName::W2), &p.streams, Foot::Left, &gc, &flag).unwrap();
    let ls_ax = p.streams.channel_index("imu_ls_ax").unwrap();
    let lf_mz = p.streams.channel_index("imu_lf_mz").unwrap();
    let grf = p.streams.channel_index("vgrf_bw_l").unwrap();
    for i in [0, 777, n - 1] {
        assert_eq!(w2.get(i, 0), p.streams.row(i)[ls_ax]);
        assert_eq!(w2.get(i, 17), p.streams.row(i)[lf_mz]);
        assert_eq!(w2.get(i, 18), p.streams.row(i)[grf] * GRAVITY);
        assert_eq!(w2.get(i, 19), gc[i]);
        assert_eq!(w2.get(i, 20), 1.0);
    }
    let w6 = assemble_features(&ModelConfig::new(ModelName::W6), &p.streams, Foot::Left, &gc, &flag).unwrap();
    let rs_ax = p.streams.channel_index("imu_rs_ax").unwrap();
    assert_eq!(w6.get(5, 0), p.streams.row(5)[rs_ax]);
    assert_eq!(w6.get(5, 18), p.streams.row(5)[ls_ax]);
}

#[test]
fn assembly_errors() {
    let p = prepared(4.0);
    let n = p.streams.len();
    let c = ModelConfig::new(ModelName::W1);
    let err = assemble_features(&c, &p.streams, Foot::Right, &vec![0.0; n - 1], &vec![0.0; n]).unwrap_err();
    assert_eq!(err.code(), "E_ALIGNMENT");

    let keep: Vec<&str> = p
        .streams
        .channels()
        .iter()
        .map(String::as_str)
        .filter(|c| *c != "imu_rf_gy")
        .collect();
    let missing = p.streams.select(&keep).unwrap();
    let err = assemble_features(&c, &missing, Foot::Right, &vec![0.0; n], &vec![0.0; n]).unwrap_err();
    assert!(matches!(err, FeatureError::MissingChannel(ref ch) if ch == "imu_rf_gy"));

    let slow = SampleSeries::new(0.0, 100.0, p.streams.channels().to_vec(), p.streams.data().clone()).unwrap();
    let err = assemble_features(&c, &slow, Foot::Right, &vec![0.0; n], &vec![0.0; n]).unwrap_err();
    assert!(matches!(err, FeatureError::Alignment(_)));
}

fn toy_set(cycles: u32, subjects: u32) -> SampleSet {
    let config = ModelConfig::new(ModelName::Grf);
    let rows = (cycles * 3) as usize;
    SampleSet {
        x: Matrix::from_vec(rows, 9, (0..rows * 9).map(|i| (i % 13) as f64).collect()),
        y: Matrix::from_vec(rows, 1, (0..rows).map(|i| (i % 7) as f64).collect()),
        cycle: (0..rows).map(|i| i as u32 / 3).collect(),
        subject: (0..rows).map(|i| (i as u32 / 3) % subjects).collect(),
        time_ms: (0..rows).map(|i| i as f64).collect(),
        lead: vec![Foot::Right; rows],
        leg: vec![Foot::Right; rows],
        subjects: (0..subjects).map(|s| format!("S{s}")).collect(),
        config,
    }
}

#[test]
fn ten_cycles_five_folds_of_two() {
    let s = toy_set(10, 2);
    let folds = fold_partition(&EvalProtocol::intra_for(&s.config, 4), &s).unwrap();
    assert_eq!(folds.len(), 5);
    let mut seen = BTreeSet::new();
    for (_, rows) in &folds {
        let cycles: BTreeSet<u32> = rows.iter().map(|&r| s.cycle[r]).collect();
        assert_eq!(cycles.len(), 2);
        assert_eq!(rows.len(), 6);
        assert!(cycles.iter().all(|c| seen.insert(*c)));
    }
    let again = fold_partition(&EvalProtocol::intra_for(&s.config, 4), &s).unwrap();
    assert_eq!(folds, again);
    let too_few = toy_set(4, 2);
    let err = fold_partition(&EvalProtocol::intra_for(&too_few.config, 4), &too_few).unwrap_err();
    assert_eq!(err.code(), "E_INSUFFICIENT_DATA");
}

#[test]
fn inter_mode_has_one_fold_per_subject() {
    let s = toy_set(12, 4);
    let folds = fold_partition(&EvalProtocol::inter(0), &s).unwrap();
    assert_eq!(folds.len(), 4);
    let one = toy_set(5, 1);
    assert!(fold_partition(&EvalProtocol::inter(0), &one).is_err());
}

fn small_trainer(config: &ModelConfig) -> Trainer {
    let mut t = Trainer::for_config(config);
    t.forest = ForestParams {
        n_trees: 5,
        ..t.forest
    };
    t.resnet = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    t
}

fn cohort_trials(n_subjects: usize, trials: usize, seconds: f64) -> Vec<PreparedTrial> {
    let cfg = CohortConfig {
        n_subjects,
        trials_per_subject: trials,
        trial_duration_s: seconds,
        ..CohortConfig::default()
    };
    let cohort = generate_cohort(&cfg, 21).unwrap();
    prepare_dataset(&cohort.dataset, &Preprocessing::default()).unwrap()
}

#[test]
fn protocol_audit_keeps_test_rows_out_of_training() {
    let trials = cohort_trials(3, 1, 8.0);
    let sampling = Sampling {
        row_stride_ms: 100,
        ..Sampling::default()
    };
    for name in [ModelName::Grf, ModelName::M5Joint] {
        let c = ModelConfig::new(name);
        let s = build_samples(&c, &trials, &sampling).unwrap();
        for proto in [EvalProtocol::intra_for(&c, 1), EvalProtocol::inter(1)] {
            let r = run_protocol(&proto, &s, &small_trainer(&c)).unwrap();
            let expected_folds = if proto.mode == EvalMode::Inter { 3 } else { proto.k };
            assert_eq!(r.folds.len(), expected_folds);
            let mut tested = 0;
            for f in &r.folds {
                let a = &f.audit;
                assert!(a.train_cycles.is_disjoint(&a.test_cycles));
                assert_eq!(a.rows_seen, a.train_rows.len());
                assert_eq!(a.train_rows.len() + a.test_rows.len(), s.len());
                if proto.mode == EvalMode::Inter {
                    assert!(a.train_subjects.is_disjoint(&a.test_subjects));
                    assert_eq!(a.test_subjects.len(), 1);
                }
                assert_eq!(f.reports.len(), c.n_outputs());
                tested += a.test_rows.len();
            }
            assert_eq!(tested, s.len());
            assert_eq!(r.aggregate.len(), c.n_outputs());
        }
    }
}

#[test]
fn samples_respect_settling_and_cycle_boundaries() {
    let trials = cohort_trials(1, 1, 8.0);
    let c = ModelConfig::new(ModelName::W4);
    let s = build_samples(
        &c,
        &trials,
        &Sampling {
            row_stride_ms: 50,
            settle_ms: 2000.0,
        },
    )
    .unwrap();
    assert!(s.time_ms.iter().all(|&t| t >= 2000.0));
    let gc_col = c.inputs.iter().position(|r| *r == InputRole::GcPercent).unwrap();
    for i in 0..s.len() {
        let gc = s.x.get(i, gc_col);
        assert!((0.0..100.0).contains(&gc));
    }
    // unilateral rows come in leg pairs with complementary flags
    let flag_col = c.inputs.iter().position(|r| *r == InputRole::LeadFlag).unwrap();
    for pair in (0..s.len()).step_by(2) {
        assert_eq!(s.x.get(pair, flag_col) + s.x.get(pair + 1, flag_col), 1.0);
    }
}

#[test]
fn model_files_round_trip_with_configuration() {
    let trials = cohort_trials(1, 1, 6.0);
    for name in [ModelName::W1, ModelName::M5Joint] {
        let c = ModelConfig::new(name);
        let s = build_samples(&c, &trials, &Sampling { row_stride_ms: 100, ..Sampling::default() }).unwrap();
        let rows: Vec<usize> = (0..s.len()).collect();
        let m = small_trainer(&c).train(&s, &rows, 5).unwrap();
        assert_eq!(m.config_name().unwrap(), name);
        let back = TrainedModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(predict_rows(&back, &s, &rows).unwrap(), predict_rows(&m, &s, &rows).unwrap());
    }
}

fn train_chain(trials: &[PreparedTrial], sampling: &Sampling) -> (TrainedModel, TrainedModel, TrainedModel) {
    let train = |name| {
        let c = ModelConfig::new(name);
        let s = build_samples(&c, trials, sampling).unwrap();
        let rows: Vec<usize> = (0..s.len()).collect();
        let mut t = small_trainer(&c);
        t.forest.n_trees = 10;
        t.resnet.max_epochs = 8;
        t.train(&s, &rows, 9).unwrap()
    };
    (train(ModelName::Grf), train(ModelName::W4), train(ModelName::M5Joint))
}

fn models((g, a, m): &(TrainedModel, TrainedModel, TrainedModel)) -> ChainModels {
    ChainModels {
        grf: g.clone().into_predictor(),
        angles: a.clone().into_predictor(),
        moments: m.clone().into_predictor(),
    }
}

#[test]
fn chain_with_truth_inputs_reduces_to_direct_inference() {
    let trials = cohort_trials(1, 2, 8.0);
    let sampling = Sampling {
        row_stride_ms: 40,
        ..Sampling::default()
    };
    let trained = train_chain(&trials, &sampling);
    let test = &trials[1];
    let trace = chain_predict(models(&trained), test, ChainInputs::Truth).unwrap();

    let c = ModelConfig::new(ModelName::M5Joint);
    let direct = build_samples(&c, std::slice::from_ref(test), &sampling).unwrap();
    let rows: Vec<usize> = (0..direct.len()).collect();
    let pred = predict_rows(&trained.2, &direct, &rows).unwrap();
    let mut matched = 0;
    for i in (0..direct.len()).filter(|&i| direct.lead[i] == Foot::Right) {
        let t = direct.time_ms[i];
        let k = trace.time_ms.iter().position(|&x| x == t).expect("chain covers settled strides");
        let leg = direct.leg[i].index();
        for j in 0..5 {
            assert_eq!(trace.moments.get(k, leg * 5 + j), pred.get(i, j), "t = {t}");
        }
        matched += 1;
    }
    assert!(matched > 50, "matched {matched}");
}

#[test]
fn chained_moments_are_no_better_than_direct() {
    let trials = cohort_trials(1, 3, 10.0);
    let sampling = Sampling {
        row_stride_ms: 20,
        ..Sampling::default()
    };
    let trained = train_chain(&trials[..2], &sampling);
    let test = &trials[2];
    let m = moment_channel(4, Foot::Right);
    let col = test.streams.channel_index(&m).unwrap();
    let rmse = |trace: &ChainTrace| {
        let truth: Vec<f64> = trace
            .time_ms
            .iter()
            .map(|&t| test.streams.row((t - test.streams.start_ms()) as usize)[col])
            .collect();
        compute_report(&truth, &trace.moments.column(4)).unwrap().rmse
    };
    let chained = rmse(&chain_predict(models(&trained), test, ChainInputs::Predicted).unwrap());
    let direct = rmse(&chain_predict(models(&trained), test, ChainInputs::Truth).unwrap());
    assert!(chained >= direct, "chained {chained} direct {direct}");
}

#[test]
fn zeroed_sensor_streams_give_finite_outputs() {
    let trials = cohort_trials(1, 1, 8.0);
    let sampling = Sampling {
        row_stride_ms: 50,
        ..Sampling::default()
    };
    let trained = train_chain(&trials, &sampling);
    let mut zeroed = trials[0].clone();
    let n_sensor = insole_stream_channels().len() + imu_stream_channels().len();
    let mut data = zeroed.streams.data().clone();
    for r in 0..data.rows() {
        data.row_mut(r)[..n_sensor].iter_mut().for_each(|v| *v = 0.0);
    }
    zeroed.streams = SampleSeries::new(0.0, 1000.0, zeroed.streams.channels().to_vec(), data).unwrap();
    let trace = chain_predict(models(&trained), &zeroed, ChainInputs::Predicted).unwrap();
    for m in [&trace.vgrf, &trace.angles, &trace.moments] {
        assert!(m.as_slice().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn chain_reports_warmup_on_short_trials() {
    let trials = cohort_trials(1, 1, 8.0);
    let trained = train_chain(&trials, &Sampling { row_stride_ms: 50, ..Sampling::default() });
    let profile = SubjectProfile {
        noise: NoiseLevels::zero(),
        ..SubjectProfile::canonical("S09")
    };
    let trial = generate_trial(&profile, "T01", 3.0, 1).unwrap();
    let mut p = prepare_trial(&trial, 70.0, &Preprocessing::default()).unwrap();
    p.streams = p.streams.slice(0, 1050);
    for s in &mut p.strikes {
        s.retain(|&t| t < 1050.0);
    }
    let err = chain_predict(models(&trained), &p, ChainInputs::Predicted).err().unwrap();
    assert_eq!(err.code(), "E_WARMUP_INCOMPLETE");
}

#[test]
fn single_subject_angle_forest_learns_below_three_degrees() {
    let trials = cohort_trials(1, 3, 20.0);
    let c = ModelConfig::new(ModelName::W4);
    let s = build_samples(
        &c,
        &trials,
        &Sampling {
            row_stride_ms: 40,
            ..Sampling::default()
        },
    )
    .unwrap();
    let mut t = Trainer::for_config(&c);
    t.forest.n_trees = 30;
    let r = run_protocol(&EvalProtocol::intra_for(&c, 2), &s, &t).unwrap();
    let rmse = r.mean_over_outputs(|m| Some(m.rmse)).unwrap();
    assert!(rmse < 3.0, "angle RMSE {rmse}");
}

#[test]
fn resnet_architecture_follows_configuration_window() {
    let c = ModelConfig::new(ModelName::MAnkle);
    let t = Trainer::for_config(&c);
    let a = t.arch(&c);
    assert_eq!((a.n_in, a.n_out, a.window), (6, 2, 10));
    assert_eq!(a.block_channels, ResNetArch::compact(6, 2).block_channels);
}
