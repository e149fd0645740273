use causal_hmm::scm::{
    check_rank_condition, encode_record, read_dataset, sample_dataset, sample_sequence,
    sample_split, sequence_seed, write_dataset, Block, PopulationSpec, ScmConfig, ScmParams, Split,
    SplitCounts,
};
use causal_hmm::types::Label;
use causal_hmm::Error;
use nalgebra::{DMatrix, DVector};

fn linear_gaussian(seed: u64, horizon: usize) -> ScmParams {
    let mut cfg = ScmConfig::small(seed);
    cfg.horizon = horizon;
    cfg.nonlinearity = 0.0;
    cfg.log_var_scale = 0.0;
    cfg.build().unwrap()
}

fn flat_latents(params: &ScmParams, n: usize) -> Vec<Vec<Vec<f64>>> {
    sample_split(params, &params.base_population, Split::Train, n)
        .unwrap()
        .into_iter()
        .map(|s| {
            s.truth
                .unwrap()
                .into_iter()
                .map(|h| [h.s, h.v, h.z].concat())
                .collect()
        })
        .collect()
}

#[test]
fn default_bundle_is_valid_and_full_rank() {
    let params = ScmConfig::small(11).build().unwrap();
    params.validate().unwrap();
    for t in 1..params.dims.horizon {
        let report = check_rank_condition(&params, t).unwrap();
        assert!(report.all_full_rank(), "step {t}: {report:?}");
    }
}

#[test]
fn rank_check_rejects_too_few_prototypes() {
    let mut params = ScmConfig::small(11).build().unwrap();
    params.base_population.prototypes.truncate(3);
    params.base_population.weights.truncate(3);
    assert!(matches!(
        check_rank_condition(&params, 1),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn linear_gaussian_first_step_moments_match_closed_form() {
    let params = linear_gaussian(5, 2);
    let n = 100_000;
    let xs: Vec<Vec<f64>> = flat_latents(&params, n)
        .into_iter()
        .map(|mut s| s.remove(0))
        .collect();
    let pop = &params.base_population;
    let (mb, cb) = (pop.mean_b0(), pop.cov_b0());
    let d_b = mb.len();
    // rows of the attribute block of each transition, stacked s, v, z
    let mut u_rows = Vec::new();
    let mut bias = Vec::new();
    let mut noise_var = Vec::new();
    for b in Block::ALL {
        let tr = params.transition(b);
        for i in 0..tr.dim {
            u_rows.push(
                (0..d_b)
                    .map(|j| tr.weight.get(i, tr.dim + j))
                    .collect::<Vec<_>>(),
            );
            bias.push(tr.bias[i]);
            noise_var.push(params.transition_noise.powi(2) * tr.log_var_offset.exp());
        }
    }
    let d = u_rows.len();
    let mean: Vec<f64> = (0..d)
        .map(|i| u_rows[i].iter().zip(&mb).map(|(a, b)| a * b).sum::<f64>() + bias[i])
        .collect();
    let cov = |i: usize, j: usize| {
        let mut c = 0.0;
        for a in 0..d_b {
            for b in 0..d_b {
                c += u_rows[i][a] * cb[a][b] * u_rows[j][b];
            }
        }
        if i == j {
            c += noise_var[i];
        }
        c
    };
    let emp_mean: Vec<f64> = (0..d)
        .map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / n as f64)
        .collect();
    for i in 0..d {
        let se = (cov(i, i) / n as f64).sqrt();
        assert!(
            (emp_mean[i] - mean[i]).abs() < 3.0 * se,
            "mean {i}: {} vs {}",
            emp_mean[i],
            mean[i]
        );
        for j in i..d {
            let prods: Vec<f64> = xs
                .iter()
                .map(|x| (x[i] - emp_mean[i]) * (x[j] - emp_mean[j]))
                .collect();
            let c = prods.iter().sum::<f64>() / (n - 1) as f64;
            let var = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                (c - cov(i, j)).abs() < 3.0 * se + 1e-12,
                "cov ({i},{j}): {c} vs {}",
                cov(i, j)
            );
        }
    }
}

/// Partial correlation of `a` and `b` after regressing both on `given`.
fn partial_corr(a: &[f64], b: &[f64], given: &DMatrix<f64>) -> f64 {
    let n = a.len();
    let x = DMatrix::from_fn(n, given.ncols() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            given[(i, j - 1)]
        }
    });
    let xtx = x.transpose() * &x;
    let chol = xtx.cholesky().unwrap();
    let resid = |y: &[f64]| {
        let yv = DVector::from_column_slice(y);
        let beta = chol.solve(&(x.transpose() * &yv));
        yv - &x * beta
    };
    let (ra, rb) = (resid(a), resid(b));
    ra.dot(&rb) / (ra.norm() * rb.norm())
}

#[test]
fn markov_and_block_independence_partial_correlations() {
    let params = linear_gaussian(9, 4);
    let n = 100_000;
    let samples = sample_split(&params, &params.base_population, Split::Train, n).unwrap();
    let d_b = params.dims.d_b;
    let truth: Vec<_> = samples.iter().map(|s| s.truth.clone().unwrap()).collect();
    // s_3 vs s_1 given s_2 and B
    let given = DMatrix::from_fn(n, params.dims.d_s + d_b, |i, j| {
        if j < params.dims.d_s {
            truth[i][1].s[j]
        } else {
            samples[i].steps[0].b_prev[j - params.dims.d_s]
        }
    });
    for k in 0..params.dims.d_s {
        let s3: Vec<f64> = truth.iter().map(|t| t[2].s[k]).collect();
        let s1: Vec<f64> = truth.iter().map(|t| t[0].s[k]).collect();
        let rho = partial_corr(&s3, &s1, &given);
        assert!(rho.abs() < 0.02, "markov partial corr {rho}");
    }
    // s_1 vs v_1 and z_1 given B
    let given_b = DMatrix::from_fn(n, d_b, |i, j| samples[i].steps[0].b_prev[j]);
    let s1: Vec<f64> = truth.iter().map(|t| t[0].s[0]).collect();
    let v1: Vec<f64> = truth.iter().map(|t| t[0].v[0]).collect();
    let z1: Vec<f64> = truth.iter().map(|t| t[0].z[0]).collect();
    assert!(partial_corr(&s1, &v1, &given_b).abs() < 0.02);
    assert!(partial_corr(&s1, &z1, &given_b).abs() < 0.02);
    assert!(partial_corr(&v1, &z1, &given_b).abs() < 0.02);
}

#[test]
fn clinical_channel_is_a_function_of_v_only() {
    let mut cfg = ScmConfig::small(4);
    cfg.sigma_a = 0.0;
    let params = cfg.build().unwrap();
    for s in sample_split(&params, &params.base_population, Split::Val, 50).unwrap() {
        for (step, h) in s.steps.iter().zip(s.truth.as_ref().unwrap()) {
            assert_eq!(step.a, params.emission_a.mean(&h.v));
        }
    }
}

#[test]
fn label_ignores_z() {
    let params = ScmConfig::small(4).build().unwrap();
    // the label head has no z argument; its logit is unaffected by z by construction
    let s = vec![0.3, -0.2];
    let v = vec![1.0, 0.5];
    let l = params.label.logit(&s, &v);
    assert!(l.is_finite());
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let params = ScmConfig::small(21).build().unwrap();
    let seed = sequence_seed(&params, Split::Train, 3);
    let a = sample_sequence(&params, &params.base_population, seed).unwrap();
    let b = sample_sequence(&params, &params.base_population, seed).unwrap();
    assert_eq!(encode_record(&a), encode_record(&b));
    let via_split = sample_split(&params, &params.base_population, Split::Train, 4).unwrap();
    assert_eq!(encode_record(&via_split[3]), encode_record(&a));
    let c = sample_sequence(&params, &params.base_population, seed + 1).unwrap();
    assert_ne!(encode_record(&a), encode_record(&c));
    assert_eq!(ScmConfig::small(21).build().unwrap(), params);
}

#[test]
fn base_disease_rate_is_balanced() {
    let params = ScmConfig::small(8).build().unwrap();
    let samples = sample_split(&params, &params.base_population, Split::Train, 3000).unwrap();
    let rate =
        samples.iter().filter(|s| s.y == Label::Disease).count() as f64 / samples.len() as f64;
    assert!((0.4..=0.6).contains(&rate), "rate {rate}");
}

#[test]
fn shifted_test_split_changes_group_ratio() {
    let cfg = ScmConfig::small(8);
    let params = cfg.build().unwrap();
    let bundle = sample_dataset(
        &params,
        SplitCounts {
            train: 2000,
            val: 10,
            test: 2000,
        },
        &cfg.shifted_population(),
    )
    .unwrap();
    let frac = |xs: &[causal_hmm::types::SequenceSample]| {
        xs.iter().filter(|s| s.steps[0].b_prev[0] == 1.0).count() as f64 / xs.len() as f64
    };
    assert!((frac(&bundle.train) - 0.4).abs() < 0.05);
    assert!((frac(&bundle.test) - 0.75).abs() < 0.05);
}

#[test]
fn dataset_round_trips_bit_exactly() {
    let cfg = ScmConfig::small(3);
    let params = cfg.build().unwrap();
    let bundle = sample_dataset(
        &params,
        SplitCounts {
            train: 6,
            val: 3,
            test: 0,
        },
        &cfg.shifted_population(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&bundle, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, bundle);
    assert!(back.test.is_empty());
    let first = std::fs::read(dir.path().join("train.jsonl")).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    write_dataset(&back, dir2.path()).unwrap();
    assert_eq!(
        first,
        std::fs::read(dir2.path().join("train.jsonl")).unwrap()
    );
}

#[test]
fn corrupted_split_is_rejected() {
    let cfg = ScmConfig::small(3);
    let params = cfg.build().unwrap();
    let bundle = sample_dataset(
        &params,
        SplitCounts {
            train: 4,
            val: 2,
            test: 2,
        },
        &cfg.shifted_population(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&bundle, dir.path()).unwrap();
    let path = dir.path().join("val.jsonl");
    let mut bytes = std::fs::read(&path).unwrap();
    let i = bytes.iter().position(|&b| b == b'7').unwrap_or(20);
    bytes[i] = if bytes[i] == b'7' { b'8' } else { b'7' };
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        read_dataset(dir.path()),
        Err(Error::CorruptDataset(_))
    ));
}

#[test]
fn schema_version_mismatch_is_a_version_error() {
    let cfg = ScmConfig::small(3);
    let params = cfg.build().unwrap();
    let bundle = sample_dataset(
        &params,
        SplitCounts {
            train: 2,
            val: 2,
            test: 1,
        },
        &cfg.shifted_population(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&bundle, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"schema_version\": 1", "\"schema_version\": 99");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(
        read_dataset(dir.path()),
        Err(Error::Version { found: 99, .. })
    ));
}

#[test]
fn divergent_parameters_fail_with_step_index() {
    let mut params = ScmConfig::small(3).build().unwrap();
    params.s.nonlinearity = 0.0;
    for i in 0..params.s.dim {
        params.s.weight.set(i, i, 1e200);
        params.s.bias[i] = 1e200;
    }
    let err = sample_sequence(&params, &params.base_population, 1).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Generation {
                step: 1 | 2 | 3,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn non_injective_emission_is_rejected() {
    let mut params = ScmConfig::small(3).build().unwrap();
    for r in 0..params.emission_x.weight.rows {
        let v = params.emission_x.weight.get(r, 0);
        params.emission_x.weight.set(r, 1, 2.0 * v);
    }
    assert!(matches!(params.validate(), Err(Error::Precondition(_))));
    let mut cfg = ScmConfig::small(3);
    cfg.observation = causal_hmm::types::ObservationKind::Vector { dim: 5 };
    assert!(matches!(cfg.build(), Err(Error::Config(_))));
}

#[test]
fn empty_train_split_is_a_precondition_error() {
    let cfg = ScmConfig::small(3);
    let params = cfg.build().unwrap();
    let shift: PopulationSpec = cfg.shifted_population();
    assert!(matches!(
        sample_dataset(
            &params,
            SplitCounts {
                train: 0,
                val: 1,
                test: 1
            },
            &shift
        ),
        Err(Error::Precondition(_))
    ));
}
