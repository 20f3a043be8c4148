use dispatch_core::nn::{primitive_checks, BiLstm, Graph, Mode, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_primitive_and_layer_matches_finite_differences() {
    let reports = primitive_checks(11).unwrap();
    assert!(reports.len() > 30);
    for (name, report) in &reports {
        assert!(report.checked > 0, "{name}");
        assert!(report.max_rel_error < 1e-5, "{name}: {report:?}");
    }
}

#[test]
fn bilstm_batching_matches_one_by_one() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "lstm", 2, 3, &mut r);
    let seqs = vec![
        Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        Tensor::matrix(0, 2, vec![]).unwrap(),
        Tensor::matrix(1, 2, vec![-0.5, 0.5]).unwrap(),
        Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
    ];
    let mut g = Graph::new(&store, Mode::Eval);
    let all = lstm.forward_batch(&mut g, &seqs).unwrap();
    let all = g.value(all).clone();
    for (i, s) in seqs.iter().enumerate() {
        let mut g1 = Graph::new(&store, Mode::Eval);
        let one = lstm.forward_batch(&mut g1, std::slice::from_ref(s)).unwrap();
        assert_eq!(g1.value(one).data(), all.row_slice(i));
    }
    assert!(all.row_slice(1).iter().all(|&v| v == 0.0));
}
