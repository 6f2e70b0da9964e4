//! Cross-checks against independent reference computations.

use igm_core::engine::{
    expected_sq_error, make_error, BatchKind, BatchSchedule, ErrorModel, Selection,
};
use igm_core::linalg::{self, min_norm_solve, Matrix};
use igm_core::optimal::OptimalSet;
use igm_core::problem::{ComposedProblem, Loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn random_problem(rng: &mut ChaCha8Rng, m: usize, n: usize, loss: Loss) -> ComposedProblem {
    let e = random_matrix(rng, m, n);
    let b = (0..m)
        .map(|_| match loss {
            Loss::Square => rng.random_range(-2.0..2.0),
            Loss::Logistic => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        })
        .collect();
    ComposedProblem::new(e, b, loss).unwrap()
}

/// Rank-deficient design built as a product of thin factors.
fn low_rank_problem(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    r: usize,
    loss: Loss,
) -> ComposedProblem {
    let e = random_matrix(rng, m, r)
        .matmul(&random_matrix(rng, r, n))
        .unwrap();
    let b = (0..m)
        .map(|i| match loss {
            Loss::Square => rng.random_range(-1.0..1.0),
            Loss::Logistic => [1.0, -1.0][i % 2],
        })
        .collect();
    ComposedProblem::new(e, b, loss).unwrap()
}

fn central_difference(p: &ComposedProblem, x: &[f64], j: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[j] += h;
    down[j] -= h;
    (p.objective(&up).unwrap() - p.objective(&down).unwrap()) / (2.0 * h)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for loss in [Loss::Square, Loss::Logistic] {
        let p = random_problem(&mut rng, 12, 4, loss);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = p.full_gradient(&x).unwrap();
            let fd: Vec<f64> = (0..4)
                .map(|j| central_difference(&p, &x, j, 1e-5))
                .collect();
            let err = linalg::norm(&linalg::sub(&g, &fd));
            assert!(err <= 1e-6 * linalg::norm(&g).max(1.0), "{loss:?}: {err:e}");
        }
    }
}

#[test]
fn sample_gradients_average_to_full_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for loss in [Loss::Square, Loss::Logistic] {
        let p = random_problem(&mut rng, 9, 3, loss);
        let x = [0.3, -1.2, 2.0];
        let mut avg = vec![0.0; 3];
        for i in 0..9 {
            linalg::axpy(1.0 / 9.0, &p.sample_gradient(i, &x).unwrap(), &mut avg);
        }
        let g = p.full_gradient(&x).unwrap();
        assert!(linalg::norm(&linalg::sub(&avg, &g)) < 1e-14);
    }
}

/// Projection onto `{x : E x = t}` by cycling through the row hyperplanes.
fn project_by_cycling(e: &Matrix, t: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for _ in 0..200_000 {
        let mut moved = 0.0f64;
        for (i, ti) in t.iter().enumerate() {
            let a = e.row(i);
            let aa = linalg::norm_sq(a);
            if aa == 0.0 {
                continue;
            }
            let c = (linalg::dot(a, &y) - ti) / aa;
            linalg::axpy(-c, a, &mut y);
            moved = moved.max(c.abs() * aa.sqrt());
        }
        if moved < 1e-15 {
            break;
        }
    }
    y
}

#[test]
fn distance_matches_cyclic_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (n, r, loss) in [
        (2, 1, Loss::Square),
        (3, 2, Loss::Square),
        (3, 1, Loss::Logistic),
        (3, 3, Loss::Square),
    ] {
        let p = low_rank_problem(&mut rng, 6, n, r, loss);
        let set = OptimalSet::certify(&p).unwrap();
        // t* lies in range(E), so the hyperplanes intersect; use a consistent subsystem
        let basis = linalg::rank_factorization(p.design()).unwrap();
        assert_eq!(basis.rank, r);
        for _ in 0..10 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let proj = project_by_cycling(p.design(), &set.certificate().t_star, &x);
            let brute = linalg::norm(&linalg::sub(&x, &proj));
            let d = set.dist(&x).unwrap();
            assert!((d - brute).abs() <= 1e-8, "n={n} r={r}: {d} vs {brute}");
        }
    }
}

#[test]
fn min_norm_solution_is_minimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let e = random_matrix(&mut rng, 4, 3)
            .matmul(&random_matrix(&mut rng, 3, 7))
            .unwrap();
        let z: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = e.matvec(&z).unwrap();
        let x = min_norm_solve(&e, &t).unwrap();
        assert!(linalg::norm(&linalg::sub(&e.matvec(&x).unwrap(), &t)) < 1e-10);
        // x is orthogonal to ker E: adding any null vector cannot shorten it
        let factor = linalg::SvdFactor::new(&e).unwrap();
        for _ in 0..10 {
            let w: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = factor.project_null_space(&w).unwrap();
            assert!(linalg::dot(&x, &v).abs() < 1e-10);
            let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
            assert!(linalg::norm(&y) >= linalg::norm(&x) - 1e-12);
        }
    }
}

fn subsets(m: usize, s: usize) -> Vec<Vec<usize>> {
    (0u32..1 << m)
        .filter(|mask| mask.count_ones() as usize == s)
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

/// `(1/s) sum_I grad f_i - grad f`, straight from the definition.
fn batch_error(p: &ComposedProblem, x: &[f64], batch: &[usize]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for &i in batch {
        linalg::axpy(
            1.0 / batch.len() as f64,
            &p.sample_gradient(i, x).unwrap(),
            &mut g,
        );
    }
    linalg::sub(&g, &p.full_gradient(x).unwrap())
}

#[test]
fn expected_error_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for (m, loss) in [(5, Loss::Square), (8, Loss::Logistic), (7, Loss::Square)] {
        let p = random_problem(&mut rng, m, 3, loss);
        let x = [0.5, -0.25, 1.0];
        for s in 1..=m {
            let all = subsets(m, s);
            let mean = all
                .iter()
                .map(|b| linalg::norm_sq(&batch_error(&p, &x, b)))
                .sum::<f64>()
                / all.len() as f64;
            let closed = expected_sq_error(&p, &x, s).unwrap();
            assert!(
                (mean - closed).abs() <= 1e-10,
                "M={m} s={s}: {mean} vs {closed}"
            );
        }
    }
}

#[test]
fn batch_errors_match_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p = random_problem(&mut rng, 10, 3, Loss::Logistic);
    let x = [0.1, 0.2, -0.3];
    let model = ErrorModel::IncrementalBatch {
        schedule: BatchSchedule::new(BatchKind::Explicit { sizes: vec![4] }, 10).unwrap(),
        selection: Selection::DeterministicPrefix,
    };
    let draw = make_error(&model, &p, &x, 0, &mut rng).unwrap();
    let direct = batch_error(&p, &x, &[0, 1, 2, 3]);
    assert!(linalg::norm(&linalg::sub(&draw.vector, &direct)) < 1e-14);
}

#[test]
fn logistic_lipschitz_bound_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = random_problem(&mut rng, 15, 4, Loss::Logistic);
    let lf = p.lipschitz().lipschitz_f;
    for _ in 0..200 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gx = p.full_gradient(&x).unwrap();
        let gy = p.full_gradient(&y).unwrap();
        let lhs = linalg::norm(&linalg::sub(&gx, &gy));
        assert!(lhs <= lf * linalg::norm(&linalg::sub(&x, &y)) * (1.0 + 1e-12));
        // convexity: f(y) >= f(x) + <grad f(x), y - x>
        let fx = p.objective(&x).unwrap();
        let fy = p.objective(&y).unwrap();
        assert!(fy >= fx + linalg::dot(&gx, &linalg::sub(&y, &x)) - 1e-12);
    }
}
