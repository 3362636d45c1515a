use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use txsales::covariates::{Covariates, FutureCovariates};
use txsales::dbcm::{
    conditional_no_excess_paths, decompose_day, prob_no_excess, sales_from_counts, unspecified_mixture_summary,
    CascadeModel, ExcessMode,
};
use txsales::dcmm::TransactionPaths;
use txsales::dglm::{Dglm, DglmSpec, Family, StateMoments};
use txsales::numerics::RngStream;

fn level(m: f64, c: f64) -> Dglm {
    let spec = DglmSpec::builder(Family::BinomialLogistic).intercept("level", "level").discount("level", 0.999).build().unwrap();
    Dglm::new(spec, StateMoments::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, c)).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn decomposition_recovers_units(sizes in prop::collection::vec(1u64..30, 0..50), d in 1usize..8) {
        let day = decompose_day(&sizes, d).unwrap();
        prop_assert_eq!(day.b, sizes.len() as u64);
        prop_assert_eq!(day.y, sizes.iter().sum::<u64>());
        prop_assert_eq!(sales_from_counts(day.b, &day.n, day.e).unwrap(), day.y);
        prop_assert!(day.n.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(day.n.first().map_or(true, |&n1| n1 <= day.b));
        prop_assert_eq!(day.excess_baskets.len() as u64, *day.n.last().unwrap());
        prop_assert!(day.validate().is_ok());
    }

    #[test]
    fn empirical_sales_never_below_transactions(rows in prop::collection::vec(prop::collection::vec(0u64..15, 3), 1..30), seed in any::<u64>()) {
        let mut c = CascadeModel::new(vec![level(-0.5, 0.3), level(-0.8, 0.3), level(-1.0, 0.3)], ExcessMode::Empirical).unwrap();
        c.store_mut().add(4);
        c.store_mut().add(9);
        let tx = TransactionPaths::from_rows(rows.clone()).unwrap();
        let s = c.forecast_sales_paths(&tx, &FutureCovariates::constant(Covariates::new(), 3), &RngStream::new(seed, 0)).unwrap();
        for (i, row) in rows.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                let y = s.y(i, j);
                let ok = if b == 0 { y == 0 } else { y >= b };
                prop_assert!(ok, "b={} y={}", b, y);
            }
        }
    }
}

#[test]
fn higher_exceedance_raises_sales() {
    let tx = TransactionPaths::constant(&[10, 10], 4000).unwrap();
    let fut = FutureCovariates::constant(Covariates::new(), 2);
    let mean = |m: f64| {
        let c = CascadeModel::new(vec![level(m, 0.1), level(m, 0.1)], ExcessMode::Empirical).unwrap();
        let s = c.forecast_sales_paths(&tx, &fut, &RngStream::new(3, 3)).unwrap();
        s.column(0).iter().sum::<u64>() as f64 / 4000.0
    };
    assert!(mean(-2.0) < mean(0.0) && mean(0.0) < mean(2.0));
}

#[test]
fn conditioning_on_no_excess_lowers_the_mean() {
    let mut c = CascadeModel::new(vec![level(0.0, 0.2), level(-0.5, 0.2)], ExcessMode::Empirical).unwrap();
    c.store_mut().add(6);
    let tx = TransactionPaths::constant(&[4, 4, 4], 5000).unwrap();
    let s = c.forecast_sales_paths(&tx, &FutureCovariates::constant(Covariates::new(), 3), &RngStream::new(4, 4)).unwrap();
    let cond = conditional_no_excess_paths(&s).unwrap();
    let p = prob_no_excess(&s);
    for j in 0..3 {
        let uncond = s.column(j).iter().sum::<u64>() as f64 / 5000.0;
        assert!(cond.days[j].mean <= uncond);
        assert!(p[j] >= cond.fraction);
    }
}

#[test]
fn unspecified_mode_flags_and_bounds_median() {
    let c = CascadeModel::new(vec![level(0.0, 0.2), level(-1.0, 0.2)], ExcessMode::Unspecified).unwrap();
    let tx = TransactionPaths::constant(&[5], 5000).unwrap();
    let s = c.forecast_sales_paths(&tx, &FutureCovariates::constant(Covariates::new(), 1), &RngStream::new(5, 5)).unwrap();
    let mix = unspecified_mixture_summary(&s).unwrap();
    let day = &mix[0];
    assert!((day.q - (1.0 - prob_no_excess(&s)[0])).abs() < 1e-12);
    if let (Some(lo), Some(hi)) = (day.median_lower, day.median_upper) {
        assert!(lo <= hi);
    }
}

#[test]
fn filter_updates_only_levels_with_trials() {
    let mut c = CascadeModel::new(vec![level(0.0, 1.0), level(0.0, 1.0)], ExcessMode::Empirical).unwrap();
    let before = c.levels()[1].posterior().clone();
    // Every basket has one unit, so level 2 sees no trials.
    c.filter_step(&decompose_day(&[1, 1, 1], 2).unwrap(), &Covariates::new()).unwrap();
    assert!(c.levels()[0].posterior().m[0] < 0.0);
    assert_eq!(c.levels()[1].posterior().m, before.m);
    assert!(c.levels()[1].posterior().c[(0, 0)] > before.c[(0, 0)]);
}
