use coprimary::mbeta::{
    moment_matrix, naive_estimate, posterior_moments, posterior_update, regularized_estimate, uniform_prior,
};
use coprimary::{ClassLabel, SimilarityMatrix};
use proptest::prelude::*;

fn matrix(n: usize, s: usize, bits: &[bool], class: ClassLabel) -> SimilarityMatrix {
    let data = bits[..n * s].iter().map(|&b| b as u8).collect();
    SimilarityMatrix::from_row_major(n, s, data, class).unwrap()
}

fn split_case() -> impl Strategy<Value = (usize, usize, usize, Vec<bool>)> {
    (1usize..5, 0usize..30, 0usize..30).prop_flat_map(|(s, n1, n2)| {
        (Just(s), Just(n1), Just(n2), proptest::collection::vec(any::<bool>(), (n1 + n2) * s))
    })
}

proptest! {
    #[test]
    fn update_is_additive((s, n1, n2, bits) in split_case()) {
        let all = matrix(n1 + n2, s, &bits, ClassLabel::Diseased);
        let a = matrix(n1, s, &bits, ClassLabel::Diseased);
        let b = matrix(n2, s, &bits[n1 * s..], ClassLabel::Diseased);
        let prior = uniform_prior(s);
        let (da, db) = (moment_matrix(&a), moment_matrix(&b));
        let seq = posterior_update(&posterior_update(&prior, &da).unwrap(), &db).unwrap();
        let once = posterior_update(&prior, &da.combine(&db).unwrap()).unwrap();
        let full = posterior_update(&prior, &moment_matrix(&all)).unwrap();
        prop_assert_eq!(&seq, &once);
        prop_assert_eq!(&seq, &full);
    }

    #[test]
    fn marginals_and_pseudo_count_bound((s, n1, n2, bits) in split_case()) {
        let n = n1 + n2;
        prop_assume!(n > 0);
        let q = matrix(n, s, &bits, ClassLabel::Diseased);
        let h = matrix(n, s, &bits, ClassLabel::Healthy);
        let reg = regularized_estimate(&q, &h).unwrap();
        let naive = naive_estimate(&q, &h).unwrap();
        for (m, u) in q.column_sums().into_iter().enumerate() {
            prop_assert_eq!(reg.se_mean[m], (u as f64 + 1.0) / (n as f64 + 2.0));
            prop_assert!((reg.se_mean[m] - naive.se_mean[m]).abs() <= 2.0 / (n as f64 + 2.0));
        }
    }

    #[test]
    fn posterior_covariance_is_valid((s, n1, n2, bits) in split_case()) {
        let q = matrix(n1 + n2, s, &bits, ClassLabel::Healthy);
        let (_, cov) = posterior_moments(&posterior_update(&uniform_prior(s), &moment_matrix(&q)).unwrap());
        for i in 0..s {
            prop_assert!(cov[(i, i)] > 0.0);
            for j in 0..s {
                prop_assert_eq!(cov[(i, j)], cov[(j, i)]);
                let r = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
                prop_assert!(r.abs() <= 1.0 + 1e-12);
            }
        }
    }
}
