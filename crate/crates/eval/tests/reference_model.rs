use scgnn_core::cycles::RequantConvention;
use scgnn_core::qnn::infer_window;
use scgnn_core::NetworkSpec;
use scgnn_eval::runner::predictions;
use scgnn_eval::{
    build_reference_model, evaluate, float_forward, run_windows, synth_windows, Backend, ReferenceConfig,
    SynthConfig,
};

#[test]
fn reference_model_classifies_synthetic_windows() {
    let r = build_reference_model(&ReferenceConfig::default()).unwrap();
    let table1 = NetworkSpec::table1();
    assert_eq!(r.net.input_length, table1.input_length);
    for (a, b) in r.net.layers.iter().zip(&table1.layers) {
        assert_eq!((a.kind, a.c_in, a.c_out, a.kernel, a.pool_mode), (b.kind, b.c_in, b.c_out, b.kernel, b.pool_mode));
    }
    let test = synth_windows(&SynthConfig { n: 900, seed: 2024, ..Default::default() }).unwrap();
    let results = run_windows(&r.packed, &test.windows, &r.input, Backend::Golden, RequantConvention::TableI).unwrap();
    let s = evaluate(&predictions(&results, r.logit_scale), &test.labels).unwrap();
    println!("{}", s.to_text());
    assert!(s.accuracy > 0.90, "accuracy {}", s.accuracy);

    // float and integer decisions agree on nearly every window
    let mut agree = 0;
    for (w, res) in test.windows.iter().zip(&results) {
        let x = r.input.dequantize(&r.input.quantize(w).unwrap());
        let f = float_forward(&r.float, &x).unwrap();
        let fc = (0..3).max_by(|&a, &b| f.logits[a].total_cmp(&f.logits[b])).unwrap();
        let ic = scgnn_core::qnn::argmax(&res.logits);
        agree += (fc == ic) as usize;
    }
    assert!(agree as f64 / test.len() as f64 > 0.95, "agreement {agree}/{}", test.len());

    // the simulator backend reproduces the golden logits
    let few = &test.windows[..3];
    let sim = run_windows(&r.packed, few, &r.input, Backend::Sim, RequantConvention::TableI).unwrap();
    for (w, s) in few.iter().zip(&sim) {
        let g = infer_window(&r.net, &r.weights, &r.input.quantize(w).unwrap()).unwrap();
        assert_eq!(g.logits.values, s.logits);
        assert_eq!(s.cycles, Some(2_255_250));
    }
}

#[test]
fn float_forward_rejects_bad_shapes() {
    let r = build_reference_model(&ReferenceConfig {
        calibration: SynthConfig { n: 60, ..ReferenceConfig::default().calibration },
        calibration_noise: vec![0.1],
        ..ReferenceConfig::default()
    })
    .unwrap();
    assert!(float_forward(&r.float, &[0.0; 10]).is_err());
    assert!(build_reference_model(&ReferenceConfig { feature_width: 8, ..ReferenceConfig::default() }).is_err());
}
