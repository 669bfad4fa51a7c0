use super::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_component(rng: &mut ChaCha8Rng, r: usize, c: usize, s: usize, v: usize, weight: f64) -> MbiComponent {
    MbiComponent {
        weight,
        params: BilinearComponentParams {
            mean: randn(rng, r, c),
            a: randn(rng, r, s) * 0.5,
            b: randn(rng, c, v) * 0.5,
            u: DVector::from_fn(r, |_, _| rng.random_range(0.3..1.5)),
            v: DVector::from_fn(c, |_, _| rng.random_range(0.3..1.5)),
        },
    }
}

/// Dense vec/Kronecker log-density of one component.
fn dense_logpdf(x: &DMatrix<f64>, p: &BilinearComponentParams) -> f64 {
    let sigma = DMatrix::from_diagonal(&p.u) + &p.a * p.a.transpose();
    let psi = DMatrix::from_diagonal(&p.v) + &p.b * p.b.transpose();
    let cov = psi.kronecker(&sigma);
    let n = cov.nrows();
    let d = DVector::from_column_slice((x - &p.mean).as_slice());
    let ch = cov.cholesky().unwrap();
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = d.dot(&ch.solve(&d));
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// Draws from a diagonal matrix normal: `X_ij = M_ij + sqrt(u_i v_j) e_ij`.
fn diagonal_sample(rng: &mut ChaCha8Rng, mean: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| {
        let e: f64 = rng.sample(StandardNormal);
        mean[(i, j)] + (u[i] * v[j]).sqrt() * e
    })
}

fn two_clouds(rng: &mut ChaCha8Rng, n: usize) -> (Vec<DMatrix<f64>>, Vec<usize>) {
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for i in 0..n {
        let g = i % 2;
        let offset = if g == 0 { -8.0 } else { 8.0 };
        data.push(randn(rng, 3, 3).add_scalar(offset));
        truth.push(g);
    }
    (data, truth)
}

#[test]
fn single_component_init_is_all_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<_> = (0..5).map(|_| randn(&mut rng, 3, 3)).collect();
    let z = init_memberships(&data, &MixtureSpec::new(1, 1, 1)).unwrap();
    assert!(z.matrix().iter().all(|&v| v == 1.0));
}

#[test]
fn kmeans_init_separates_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (data, truth) = two_clouds(&mut rng, 40);
    let z = init_memberships(&data, &MixtureSpec::new(2, 1, 1)).unwrap();
    let labels: Vec<usize> = z.map_labels();
    assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);
}

#[test]
fn random_soft_rows_are_interior_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<_> = (0..30).map(|_| randn(&mut rng, 3, 3)).collect();
    let spec = MixtureSpec::new(4, 1, 1).with_init(InitMethod::RandomSoft).with_seed(11);
    let z = init_memberships(&data, &spec).unwrap();
    for row in z.matrix().row_iter() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn init_needs_enough_observations() {
    let data = vec![DMatrix::zeros(3, 3); 2];
    assert!(matches!(init_memberships(&data, &MixtureSpec::new(3, 1, 1)), Err(FitError::InvalidData(_))));
}

#[test]
fn e_step_single_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let comp = random_component(&mut rng, 3, 4, 1, 2, 1.0);
    let data: Vec<_> = (0..6).map(|_| randn(&mut rng, 3, 4)).collect();
    let (z, l) = e_step(&data, &[comp.clone()]).unwrap();
    assert!(z.matrix().iter().all(|&v| v == 1.0));
    let direct: f64 = data.iter().map(|x| dense_logpdf(x, &comp.params)).sum();
    assert!((l - direct).abs() < 1e-9);
}

#[test]
fn e_step_identical_components_split_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let comp = random_component(&mut rng, 3, 3, 1, 1, 0.5);
    let data: Vec<_> = (0..6).map(|_| randn(&mut rng, 3, 3)).collect();
    let (z, _) = e_step(&data, &[comp.clone(), comp]).unwrap();
    assert!(z.matrix().iter().all(|&v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn e_step_matches_dense_density_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let comps = vec![random_component(&mut rng, 3, 4, 2, 1, 0.3), random_component(&mut rng, 3, 4, 1, 2, 0.7)];
    let data: Vec<_> = (0..8).map(|_| randn(&mut rng, 3, 4)).collect();
    let (z, l) = e_step(&data, &comps).unwrap();
    let mut oracle_l = 0.0;
    for (i, x) in data.iter().enumerate() {
        let p: Vec<f64> = comps.iter().map(|c| c.weight * dense_logpdf(x, &c.params).exp()).collect();
        let total: f64 = p.iter().sum();
        oracle_l += total.ln();
        for g in 0..2 {
            assert!((z.matrix()[(i, g)] - p[g] / total).abs() < 1e-10);
        }
    }
    assert!((l - oracle_l).abs() < 1e-8);
}

#[test]
fn e_step_reports_offending_observation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let comp = random_component(&mut rng, 2, 2, 1, 1, 1.0);
    let mut data: Vec<_> = (0..4).map(|_| randn(&mut rng, 2, 2)).collect();
    data[2][(0, 1)] = 1e200;
    match e_step(&data, &[comp]) {
        Err(FitError::NumericalFailure { observation: Some(2), .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn stage1_hard_memberships_give_group_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<_> = (0..6).map(|_| randn(&mut rng, 2, 3)).collect();
    let labels = [0, 1, 0, 1, 1, 0];
    let z = Responsibilities::from_labels(&labels, 2);
    let (pi, means) = m_step_stage1(&data, &z).unwrap();
    assert_eq!(pi, vec![0.5, 0.5]);
    for g in 0..2 {
        let members: Vec<_> = data.iter().zip(&labels).filter(|(_, &l)| l == g).map(|(x, _)| x).collect();
        let mean = members.iter().fold(DMatrix::zeros(2, 3), |acc, x| acc + *x) / members.len() as f64;
        assert!((&means[g] - mean).amax() < 1e-14);
    }
}

#[test]
fn stage1_uniform_memberships_give_grand_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<_> = (0..7).map(|_| randn(&mut rng, 2, 2)).collect();
    let z = Responsibilities::new(DMatrix::from_element(7, 3, 1.0 / 3.0)).unwrap();
    let (_, means) = m_step_stage1(&data, &z).unwrap();
    let grand = data.iter().fold(DMatrix::zeros(2, 2), |acc, x| acc + x) / 7.0;
    for m in means {
        assert!((m - &grand).amax() < 1e-12);
    }
}

#[test]
fn stage1_matches_brute_force_weighted_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<_> = (0..5).map(|_| randn(&mut rng, 3, 2)).collect();
    let mut z = DMatrix::from_fn(5, 3, |_, _| rng.random_range(0.05..1.0));
    for mut row in z.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let resp = Responsibilities::new(z.clone()).unwrap();
    let (pi, means) = m_step_stage1(&data, &resp).unwrap();
    for g in 0..3 {
        let mut num = [[0.0; 2]; 3];
        let mut den = 0.0;
        for i in 0..5 {
            den += z[(i, g)];
            for a in 0..3 {
                for b in 0..2 {
                    num[a][b] += z[(i, g)] * data[i][(a, b)];
                }
            }
        }
        assert!((pi[g] - den / 5.0).abs() < 1e-12);
        for a in 0..3 {
            for b in 0..2 {
                assert!((means[g][(a, b)] - num[a][b] / den).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn stage1_rejects_empty_component() {
    let data = vec![DMatrix::zeros(2, 2); 3];
    let z = Responsibilities::from_labels(&[0, 0, 0], 2);
    assert!(matches!(m_step_stage1(&data, &z), Err(FitError::EmptyComponent { component: 2, .. })));
}

fn diagonal_recovery_setup(seed: u64, n: usize) -> (Vec<DMatrix<f64>>, DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (5, 4);
    let mean = randn(&mut rng, r, c);
    let u = DVector::from_fn(r, |_, _| rng.random_range(0.5..3.0));
    let v = DVector::from_fn(c, |_, _| rng.random_range(0.5..3.0));
    let data = (0..n).map(|_| diagonal_sample(&mut rng, &mean, &u, &v)).collect();
    (data, mean, u, v)
}

#[test]
fn stage2_recovers_generating_row_noise() {
    let (data, mean, u, v) = diagonal_recovery_setup(12, 500);
    let (r, c) = mean.shape();
    let comp = MbiComponent {
        weight: 1.0,
        params: BilinearComponentParams {
            mean,
            a: DMatrix::zeros(r, 1),
            b: DMatrix::zeros(c, 1),
            u: DVector::from_element(r, 1.0),
            v: v.clone(),
        },
    };
    let z = Responsibilities::from_labels(&vec![0; data.len()], 1);
    let (a, u_hat) = m_step_stage2(&data, &z, &[comp]).unwrap().remove(0);
    assert!(a.amax() == 0.0);
    for i in 0..r {
        assert!((u_hat[i] - u[i]).abs() / u[i] < 0.1, "{} vs {}", u_hat[i], u[i]);
    }
}

#[test]
fn stage3_recovers_generating_column_noise() {
    let (data, mean, u, v) = diagonal_recovery_setup(13, 500);
    let (r, c) = mean.shape();
    let comp = MbiComponent {
        weight: 1.0,
        params: BilinearComponentParams {
            mean,
            a: DMatrix::zeros(r, 1),
            b: DMatrix::zeros(c, 1),
            u: u.clone(),
            v: DVector::from_element(c, 1.0),
        },
    };
    let z = Responsibilities::from_labels(&vec![0; data.len()], 1);
    let (b, v_hat) = m_step_stage3(&data, &z, &[comp]).unwrap().remove(0);
    assert!(b.amax() == 0.0);
    for j in 0..c {
        assert!((v_hat[j] - v[j]).abs() / v[j] < 0.1, "{} vs {}", v_hat[j], v[j]);
    }
}

#[test]
fn zero_scatter_hits_variance_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let comp = random_component(&mut rng, 3, 3, 1, 1, 1.0);
    let data = vec![comp.params.mean.clone(); 4];
    let z = Responsibilities::from_labels(&[0; 4], 1);
    let (_, u) = m_step_stage2(&data, &z, &[comp.clone()]).unwrap().remove(0);
    assert!(u.iter().all(|&x| x == VARIANCE_FLOOR));
    let (_, v) = m_step_stage3(&data, &z, &[comp]).unwrap().remove(0);
    assert!(v.iter().all(|&x| x == VARIANCE_FLOOR));
}

fn mixture_data(seed: u64, n: usize, r: usize, c: usize, g: usize) -> (Vec<DMatrix<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<_> = (0..g)
        .map(|k| {
            let mut comp = random_component(&mut rng, r, c, 1, 1, 1.0 / g as f64);
            comp.params.mean *= 3.0;
            comp.params.mean.add_scalar_mut(k as f64 * 2.0);
            comp
        })
        .collect();
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for i in 0..n {
        let k = i % g;
        let p = &comps[k].params;
        let w: DMatrix<f64> = randn(&mut rng, p.a.ncols(), p.b.ncols());
        let eb = randn(&mut rng, p.a.ncols(), c);
        let ea = DMatrix::from_fn(r, p.b.ncols(), |i, _| p.u[i].sqrt() * rng.sample::<f64, _>(StandardNormal));
        let e = diagonal_sample(&mut rng, &DMatrix::zeros(r, c), &p.u, &p.v);
        let ebv = DMatrix::from_fn(p.a.ncols(), c, |a, j| eb[(a, j)] * p.v[j].sqrt());
        data.push(&p.mean + &p.a * w * p.b.transpose() + &p.a * ebv + ea * p.b.transpose() + e);
        truth.push(k);
    }
    (data, truth)
}

#[test]
fn loglik_never_decreases_across_substeps() {
    let (data, _) = mixture_data(15, 90, 4, 5, 2);
    for init in [InitMethod::Kmeans, InitMethod::RandomSoft] {
        let spec = MixtureSpec::new(2, 2, 2).with_init(init).with_seed(3).with_max_iter(60);
        let model = fit(&data, &spec).unwrap();
        for w in model.substep_loglik.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
        assert_eq!(*model.loglik_history.last().unwrap(), model.loglik);
    }
}

#[test]
fn single_component_fit_is_sample_mean() {
    let (data, _) = mixture_data(16, 40, 3, 4, 1);
    let model = fit(&data, &MixtureSpec::new(1, 1, 1)).unwrap();
    let grand = data.iter().fold(DMatrix::zeros(3, 4), |acc, x| acc + x) / 40.0;
    assert!((&model.components[0].params.mean - grand).amax() < 1e-12);
    assert_eq!(model.components[0].weight, 1.0);
    let direct: f64 = data.iter().map(|x| dense_logpdf(x, &model.components[0].params)).sum();
    assert!((model.loglik - direct).abs() < 1e-8 * direct.abs());
}

#[test]
fn transposed_fit_has_same_loglik() {
    let (data, _) = mixture_data(17, 60, 4, 4, 1);
    let transposed: Vec<_> = data.iter().map(|x| x.transpose()).collect();
    let spec = MixtureSpec::new(1, 2, 2).with_epsilon(1e-10).with_max_iter(3000);
    let a = fit(&data, &spec).unwrap();
    let b = fit(&transposed, &spec).unwrap();
    assert!((a.loglik - b.loglik).abs() < 1e-6, "{} vs {}", a.loglik, b.loglik);
}

#[test]
fn permuting_observations_keeps_parameters() {
    let (data, _) = mixture_data(18, 40, 3, 3, 1);
    let mut reversed = data.clone();
    reversed.reverse();
    let spec = MixtureSpec::new(1, 1, 1).with_max_iter(30);
    let a = fit(&data, &spec).unwrap();
    let b = fit(&reversed, &spec).unwrap();
    let (pa, pb) = (&a.components[0].params, &b.components[0].params);
    assert!((&pa.mean - &pb.mean).amax() < 1e-10);
    assert!((&pa.u - &pb.u).amax() < 1e-8);
    assert!((a.loglik - b.loglik).abs() < 1e-8 * a.loglik.abs());
}

#[test]
fn fit_is_bitwise_reproducible() {
    let (data, _) = mixture_data(19, 60, 3, 4, 2);
    let spec = MixtureSpec::new(2, 1, 2).with_init(InitMethod::RandomSoft).with_seed(99).with_max_iter(40);
    assert_eq!(fit(&data, &spec).unwrap(), fit(&data, &spec).unwrap());
}

#[test]
fn label_swap_leaves_density_and_bic() {
    let (data, _) = mixture_data(20, 60, 3, 3, 2);
    let model = fit(&data, &MixtureSpec::new(2, 1, 1).with_max_iter(50)).unwrap();
    let mut swapped = model.clone();
    swapped.components.reverse();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let x = randn(&mut rng, 3, 3) * 3.0;
        let a = model.mixture_logpdf(&x).unwrap();
        let b = swapped.mixture_logpdf(&x).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }
    let (_, l) = e_step(&data, &swapped.components).unwrap();
    assert!((bic(l, swapped.n_params, 60.0) - model.bic).abs() < 1e-8 * model.bic.abs());
}

#[test]
fn aitken_geometric_sequence() {
    let history: Vec<f64> = (0..40).map(|t| 10.0 - 0.5f64.powi(t)).collect();
    for t in 0..37 {
        let window = &history[t..t + 3];
        // predicted gap is 2 (l2 - l1) = 2^-(t+1)
        let gap = 2.0 * (window[2] - window[1]);
        assert!((gap - 0.5f64.powi(t as i32 + 1)).abs() < 1e-12);
        for eps in [1e-2, 1e-4, 1e-6] {
            assert_eq!(aitken_converged(window, eps), gap < eps);
        }
    }
}

#[test]
fn aitken_flat_and_divergent() {
    assert!(aitken_converged(&[5.0, 5.0, 5.0], 1e-4));
    assert!(!aitken_converged(&[1.0, 2.0, 4.0], 1e-4));
    assert!(!aitken_converged(&[1.0, 2.0], 1e-4));
    assert!(!aitken_converged(&[5.0, 5.0, 6.0], 1e-4));
}

#[test]
fn bic_arithmetic() {
    assert!((bic(0.0, 10, std::f64::consts::E) + 10.0).abs() < 1e-12);
    assert!(bic(-3.0, 11, 50.0) < bic(-3.0, 10, 50.0));
}

#[test]
fn bic_matches_recomputation() {
    let (data, _) = mixture_data(22, 50, 3, 4, 2);
    let model = fit(&data, &MixtureSpec::new(2, 1, 1).with_max_iter(40)).unwrap();
    let rho = 1 + 2 * (12 + 3 + 4 + 3 + 4);
    assert_eq!(model.n_params, rho);
    let expected = 2.0 * model.loglik - rho as f64 * (50f64).ln();
    assert!((model.bic - expected).abs() < 1e-9 * expected.abs());
}

#[test]
fn spec_rejects_out_of_range_factors() {
    let data = vec![DMatrix::zeros(3, 3); 4];
    assert!(matches!(fit(&data, &MixtureSpec::new(1, 3, 1)), Err(FitError::InvalidSpec(_))));
    assert!(matches!(fit(&data, &MixtureSpec::new(1, 1, 0)), Err(FitError::InvalidSpec(_))));
    assert!(matches!(fit(&data, &MixtureSpec::new(1, 1, 1).with_epsilon(0.0)), Err(FitError::InvalidSpec(_))));
}

#[test]
fn map_labels_argmax_and_ties() {
    let z = Responsibilities::new(DMatrix::from_row_slice(3, 3, &[0.1, 0.7, 0.2, 0.5, 0.5, 0.0, 0.2, 0.2, 0.6])).unwrap();
    assert_eq!(z.map_labels(), vec![2, 1, 3]);
}

#[test]
fn classify_single_component() {
    let (data, _) = mixture_data(23, 20, 3, 3, 1);
    let model = fit(&data, &MixtureSpec::new(1, 1, 1).with_max_iter(10)).unwrap();
    assert!(classify(&model, &data).unwrap().iter().all(|&l| l == 1));
}

#[test]
fn small_mixture_recovers_labels() {
    let (data, truth) = mixture_data(24, 120, 4, 4, 2);
    let model = fit(&data, &MixtureSpec::new(2, 1, 1)).unwrap();
    let labels = classify(&model, &data).unwrap();
    assert!(adjusted_rand_index(&labels, &truth) > 0.95);
}

#[test]
fn singleton_search_grid() {
    let (data, _) = mixture_data(25, 30, 3, 3, 1);
    let grid = SearchGrid { groups: vec![1], col_factors: vec![1], row_factors: vec![1], inits: vec![InitMethod::Kmeans] };
    let result = model_search(&data, &grid, &SearchOptions { max_iter: 20, ..Default::default() }).unwrap();
    assert_eq!(result.ranked.len(), 1);
    assert_eq!(result.attempts.len(), 1);
}

#[test]
fn search_ranking_is_sorted_permutation() {
    let (data, _) = mixture_data(26, 60, 3, 4, 2);
    let grid = SearchGrid {
        groups: vec![1, 2, 3],
        col_factors: vec![1, 2],
        row_factors: vec![1],
        inits: vec![InitMethod::Kmeans, InitMethod::RandomSoft],
    };
    let result = model_search(&data, &grid, &SearchOptions { max_iter: 30, ..Default::default() }).unwrap();
    assert_eq!(result.attempts.len(), 12);
    assert!(result.ranked.len() <= 6);
    for w in result.ranked.windows(2) {
        assert!(w[0].bic > w[1].bic || (w[0].bic == w[1].bic && w[0].n_params <= w[1].n_params));
    }
    for e in &result.ranked {
        let best_attempt = result
            .attempts
            .iter()
            .filter(|a| (a.spec.groups, a.spec.col_factors, a.spec.row_factors) == (e.spec.groups, e.spec.col_factors, e.spec.row_factors))
            .filter_map(|a| a.bic)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(e.bic, best_attempt);
    }
    assert!(result.top().len() <= 5);
    assert_eq!(result.to_csv().lines().count(), result.ranked.len() + 1);
}

#[test]
fn ari_reference_values() {
    assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[5, 5, 9, 9]), 1.0);
    // contingency [[1,1],[1,1]]: index 0, expected 2*2/6
    let ari = adjusted_rand_index(&[1, 1, 2, 2], &[1, 2, 1, 2]);
    assert!((ari - (0.0 - 2.0 / 3.0) / (2.0 - 2.0 / 3.0)).abs() < 1e-12);
}
