use dimclust::em::{FitConfig, Init};
use dimclust::generators::{cantor_probmass, sample_cantor, CantorSampleSpec};
use dimclust::io::csv::{read_csv, write_cloud, CsvOptions};
use dimclust::io::histogram::{histogram_nn, LogBins};
use dimclust::io::image::{pnm_to_cloud, read_pnm, write_pnm, ImageMode, Pnm};
use dimclust::io::result::{read_result, write_result, ResultDocument, SCHEMA_VERSION};
use dimclust::model::ModelStructure;
use dimclust::nn::{filter_positive, nn_distances, Metric, PointCloud};
use dimclust::search::TraceEntry;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn structure_strategy() -> impl Strategy<Value = ModelStructure> {
    prop::collection::vec(1usize..5, 1..4).prop_map(|mut v| {
        v.sort_unstable_by(|a, b| b.cmp(a));
        ModelStructure::new(v).unwrap()
    })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, 1e-300f64..1e-200, Just(0.0), -1e300f64..-1e200]
}

fn trace_strategy() -> impl Strategy<Value = TraceEntry> {
    (
        0usize..10,
        structure_strategy(),
        prop::option::of(finite()),
        prop::option::of(finite()),
        any::<bool>(),
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(step, structure, aic, loglike, converged, seed, accepted)| TraceEntry {
            step,
            structure,
            aic,
            loglike,
            converged,
            seed,
            accepted,
        })
}

fn config_strategy() -> impl Strategy<Value = FitConfig> {
    (1e-12f64..1.0, 1usize..10_000, 1usize..20, any::<u64>(), 1e-3f64..1.0, 1.0f64..1e3, any::<bool>()).prop_map(
        |(tol, max_iter, restarts, seed, d_min, d_max, pivots)| FitConfig {
            tol,
            max_iter,
            restarts,
            seed,
            d_min,
            d_max,
            init: if pivots { Init::Pivots } else { Init::Dirichlet },
            ..FitConfig::default()
        },
    )
}

fn document_strategy() -> impl Strategy<Value = ResultDocument> {
    (
        structure_strategy(),
        prop::collection::vec(finite(), 0..20),
        prop::collection::vec(trace_strategy(), 0..5),
        config_strategy(),
        "[0-9a-f]{64}",
        (finite(), finite(), finite(), finite(), 0usize..5000, any::<bool>(), 1usize..5),
    )
        .prop_map(
            |(structure, values, search_trace, config, fp, (avg, ll, lb, aic, iterations, converged, order))| {
                let md = structure.num_clusters();
                let m = structure.num_components();
                let k = values.len();
                ResultDocument {
                    schema_version: SCHEMA_VERSION.to_string(),
                    input_fingerprint: fp,
                    neighbor_order: order,
                    dims: (0..md).map(|c| 0.5 + c as f64 / 3.0).collect(),
                    rates: (0..m).map(|l| 1.0 / (l as f64 + 7.0)).collect(),
                    weights: vec![1.0 / m as f64; m],
                    point_indices: (0..k).map(|i| 3 * i).collect(),
                    cluster_probs: values.iter().map(|v| vec![*v; md]).collect(),
                    hard_labels: (0..k).map(|i| i % md).collect(),
                    structure,
                    avg_dimension: avg,
                    loglike: ll,
                    lower_bound: lb,
                    aic,
                    iterations,
                    converged,
                    search_trace,
                    config,
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn result_documents_round_trip(doc in document_strategy()) {
        let text = doc.to_json().unwrap();
        let back = ResultDocument::from_json(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn csv_round_trips_every_digit(
        (dim, coords) in (1usize..5, 1usize..30).prop_flat_map(|(d, k)| (Just(d), prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), d * k)))
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let cloud = PointCloud::from_flat(dim, coords, Metric::Euclidean).unwrap();
        write_cloud(&path, &cloud).unwrap();
        let back = read_csv(&path, CsvOptions::default()).unwrap();
        prop_assert_eq!(back.coords(), cloud.coords());
        write_cloud(&path, &back).unwrap();
        let again = read_csv(&path, CsvOptions::default()).unwrap();
        prop_assert_eq!(again, back);
    }

    #[test]
    fn pixels_map_one_to_one(w in 1usize..12, h in 1usize..12, rgb in any::<bool>(), seed in any::<u8>()) {
        let mode = if rgb { ImageMode::Rgb } else { ImageMode::Gray };
        let data: Vec<u8> = (0..w * h * mode.channels()).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let img = Pnm::new(w, h, mode, data).unwrap();
        let cloud = pnm_to_cloud(&img, 2.0).unwrap();
        prop_assert_eq!(cloud.len(), w * h);
        prop_assert_eq!(cloud.dim(), 2 + mode.channels());
        // Invert: every point names its pixel and carries its channels.
        let mut seen = vec![false; w * h];
        for p in cloud.points() {
            let (x, y) = ((p[0] / 2.0) as usize, (p[1] / 2.0) as usize);
            prop_assert!(!seen[y * w + x]);
            seen[y * w + x] = true;
            let base = (y * w + x) * mode.channels();
            for (j, &v) in img.data[base..base + mode.channels()].iter().enumerate() {
                prop_assert_eq!(p[2 + j], v as f64);
            }
        }
    }
}

#[test]
fn documents_and_images_survive_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = Pnm::new(3, 2, ImageMode::Rgb, (0..18).collect()).unwrap();
    write_pnm(dir.path().join("a.ppm"), &img).unwrap();
    assert_eq!(read_pnm(dir.path().join("a.ppm")).unwrap(), img);

    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let doc = document_strategy().new_tree(&mut runner).unwrap().current();
    write_result(&doc, dir.path().join("r.json")).unwrap();
    assert_eq!(read_result(dir.path().join("r.json")).unwrap(), doc);
}

#[test]
fn cantor_histogram_theory_column() {
    let cloud = sample_cantor(&CantorSampleSpec { count: 5000, depth: 35, seed: 1 }).unwrap();
    let (d, _) = filter_positive(nn_distances(&cloud, 1).unwrap()).unwrap();
    let bins = LogBins::ternary_covering(&d).unwrap();
    let rows = histogram_nn(&d, &bins, None, Some(5000)).unwrap();
    for (row, &level) in rows.iter().zip(bins.levels().unwrap()) {
        assert_eq!(row.theory_mass, Some(cantor_probmass(level, 5000)));
    }
    assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), d.len());
}
