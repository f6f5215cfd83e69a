use cellloc::baseline::{baseline_localize, baseline_posterior, train_histograms, HistogramConfig, HistogramModel};
use cellloc::geo::{CellId, GeoPoint, VirtualGrid};
use cellloc::ingest::{RawScan, Reading, RssRange, TowerIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scan(readings: &[(&str, f64)]) -> RawScan {
    RawScan {
        timestamp_s: 0.0,
        location: GeoPoint { lat_deg: 31.0, lon_deg: 29.7 },
        confidence_radius_m: 0.0,
        readings: readings.iter().map(|(t, r)| Reading { tower_id: t.to_string(), rss_dbm: *r }).collect(),
    }
}

/// Two cells, towers A and B, one RSS bin plus the unheard bin.
fn micro() -> (HistogramModel, VirtualGrid) {
    let grid = VirtualGrid::from_parts(GeoPoint::new(31.0, 29.7).unwrap(), 100.0, 2, 1).unwrap();
    let config = HistogramConfig { bin_width_db: 50.0, smoothing: 1.0, rss_range: RssRange::new(-110.0, -60.0).unwrap() };
    assert_eq!(config.total_bins(), 2);
    let samples = vec![
        (scan(&[("A", -80.0), ("B", -90.0)]), CellId(0)),
        (scan(&[("A", -85.0)]), CellId(0)),
        (scan(&[("A", -70.0)]), CellId(0)),
        (scan(&[("B", -95.0)]), CellId(1)),
    ];
    let index = TowerIndex::from_ids(["A".to_string(), "B".to_string()]);
    (train_histograms(&samples, &grid, &index, config).unwrap(), grid)
}

#[test]
fn micro_instance_matches_hand_bayes() {
    let (model, _) = micro();
    // Cell 0: 3 samples. A heard 3/3, B heard 1/3. Cell 1: 1 sample, A 0/1, B 1/1.
    // P(bin | cell) = (count + 1) / (n + 2).
    let p_a0 = [(3.0 + 1.0) / 5.0, (0.0 + 1.0) / 5.0]; // [heard, unheard]
    let p_b0 = [(1.0 + 1.0) / 5.0, (2.0 + 1.0) / 5.0];
    let p_a1 = [(0.0 + 1.0) / 3.0, (1.0 + 1.0) / 3.0];
    let p_b1 = [(1.0 + 1.0) / 3.0, (0.0 + 1.0) / 3.0];
    let prior = [0.75, 0.25];
    for (a, b) in [(true, true), (true, false), (false, true), (false, false)] {
        let ia = if a { 0 } else { 1 };
        let ib = if b { 0 } else { 1 };
        let joint0 = prior[0] * p_a0[ia] * p_b0[ib];
        let joint1 = prior[1] * p_a1[ia] * p_b1[ib];
        let expected = [joint0 / (joint0 + joint1), joint1 / (joint0 + joint1)];
        let mut readings = Vec::new();
        if a {
            readings.push(("A", -75.0));
        }
        if b {
            readings.push(("B", -100.0));
        }
        let got = if readings.is_empty() {
            model.posterior_of_observations(&[None, None])
        } else {
            baseline_posterior(&model, &scan(&readings))
        };
        for c in 0..2 {
            assert!((got.0[c] - expected[c]).abs() < 1e-12, "{a} {b}: {:?} vs {expected:?}", got.0);
        }
    }
}

#[test]
fn posteriors_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = VirtualGrid::from_parts(GeoPoint::new(31.0, 29.7).unwrap(), 50.0, 5, 4).unwrap();
    let ids: Vec<String> = (0..12).map(|i| format!("T{i}")).collect();
    let index = TowerIndex::from_ids(ids.clone());
    let random_scan = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=7);
        let picked = rand::seq::index::sample(rng, ids.len(), n);
        RawScan {
            readings: picked
                .into_iter()
                .map(|i| Reading { tower_id: ids[i].clone(), rss_dbm: rng.random_range(-125.0..-40.0) })
                .collect(),
            ..scan(&[])
        }
    };
    let train: Vec<(RawScan, CellId)> =
        (0..300).map(|_| (random_scan(&mut rng), CellId(rng.random_range(0..grid.len())))).collect();
    let model = train_histograms(&train, &grid, &index, HistogramConfig::default()).unwrap();
    for _ in 0..1000 {
        let p = baseline_posterior(&model, &random_scan(&mut rng));
        assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.0.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

#[test]
fn more_smoothing_moves_posterior_toward_prior() {
    let (base, grid) = micro();
    let samples = vec![
        (scan(&[("A", -80.0), ("B", -90.0)]), CellId(0)),
        (scan(&[("A", -85.0)]), CellId(0)),
        (scan(&[("A", -70.0)]), CellId(0)),
        (scan(&[("B", -95.0)]), CellId(1)),
    ];
    let probes = [scan(&[("A", -75.0)]), scan(&[("B", -100.0)]), scan(&[("A", -75.0), ("B", -100.0)])];
    for probe in &probes {
        let mut last = f64::INFINITY;
        for lambda in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0] {
            let cfg = HistogramConfig { smoothing: lambda, ..base.config };
            let m = train_histograms(&samples, &grid, &base.towers, cfg).unwrap();
            let d = kl(&baseline_posterior(&m, probe).0, &m.prior());
            assert!(d <= last + 1e-12, "lambda {lambda}: {d} > {last}");
            last = d;
        }
    }
}

#[test]
fn file_round_trip_and_localize() {
    let (model, grid) = micro();
    let mut buf = Vec::new();
    model.save_with_grid(Some(&grid), &mut buf).unwrap();
    let (back, g) = HistogramModel::load_with_grid(buf.as_slice()).unwrap();
    assert_eq!(back, model);
    assert_eq!(g.as_ref(), Some(&grid));
    assert!(HistogramModel::load(&buf[..buf.len() - 10]).is_err());

    let est = baseline_localize(&model, &grid, &scan(&[("A", -75.0)])).unwrap();
    assert_eq!(est.cell, CellId(0));
    assert!(baseline_localize(&model, &grid, &scan(&[("Z", -75.0)])).is_err());
}
