use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scgnn_core::cycles::{layer_cycles, RequantConvention};
use scgnn_core::qnn::infer_window;
use scgnn_core::random::{random_model, random_small_network, random_window};
use scgnn_core::{LayerSpec, NetworkSpec, PackedModel, PoolMode, QuantTensor, WeightSet};
use scgnn_sim::{FsmState, MemOp, SimError, SimMachine};

fn check_pair(m: &mut SimMachine, net: &NetworkSpec, ws: &WeightSet, x: &QuantTensor) {
    let golden = infer_window(net, ws, x).unwrap();
    m.load_model(&PackedModel::from_parts(net, ws).unwrap()).unwrap();
    m.load_input(x).unwrap();
    let run = m.run_inference().unwrap();
    assert_eq!(run.logits, golden.logits);
    for (i, act) in golden.activations.iter().enumerate() {
        assert_eq!(&m.read_layer_activation(i).unwrap(), act, "layer {i}");
    }
    let lens = net.layer_input_lengths().unwrap();
    for (i, (layer, stats)) in net.layers.iter().zip(&run.layers).enumerate() {
        let lc = layer_cycles(layer, lens[i], m.convention());
        assert_eq!((stats.prime, stats.compute, stats.requant), (lc.prime, lc.compute, lc.requant), "layer {i}");
        assert_eq!(stats.macs, 6 * stats.compute);
    }
    assert_eq!(run.cycles, run.layers.iter().map(|s| s.total()).sum::<u64>());
    assert!(!m.is_running());
    assert_eq!(m.loop_counters(), (0, 0, 0, 0, 0));
}

#[test]
fn default_topology_matches_golden() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51);
    let mut m = SimMachine::default();
    let start = Instant::now();
    for _ in 0..10 {
        let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
        let x = random_window(&mut rng, 1, 512);
        check_pair(&mut m, &net, &ws, &x);
        assert_eq!(m.last_result().unwrap().cycles, 2_255_250);
    }
    let rate = 10.0 * 2_255_250.0 / start.elapsed().as_secs_f64();
    println!("simulated {rate:.3e} cycles/s");
}

#[test]
fn small_geometries_match_golden() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x52);
    let mut m = SimMachine::default();
    for _ in 0..300 {
        let base = random_small_network(&mut rng, 48);
        let (net, ws) = random_model(&mut rng, &base);
        let x = random_window(&mut rng, net.layers[0].c_in, net.input_length);
        check_pair(&mut m, &net, &ws, &x);
    }
}

#[test]
fn formula_convention_only_changes_requant_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x53);
    let mut m = SimMachine::new(RequantConvention::FormulaText);
    for _ in 0..50 {
        let base = random_small_network(&mut rng, 40);
        let (net, ws) = random_model(&mut rng, &base);
        let x = random_window(&mut rng, net.layers[0].c_in, net.input_length);
        check_pair(&mut m, &net, &ws, &x);
    }
}

#[test]
fn back_to_back_runs_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x54);
    let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
    let mut m = SimMachine::default();
    m.load_model(&PackedModel::from_parts(&net, &ws).unwrap()).unwrap();
    for _ in 0..3 {
        let x = random_window(&mut rng, 1, 512);
        m.load_input(&x).unwrap();
        let run = m.run_inference().unwrap();
        assert_eq!(run.logits, infer_window(&net, &ws, &x).unwrap().logits);
    }
    // reload with another model replaces everything, including the input
    let (net2, ws2) = random_model(&mut rng, &NetworkSpec::table1());
    m.load_model(&PackedModel::from_parts(&net2, &ws2).unwrap()).unwrap();
    assert!(matches!(m.run_inference(), Err(SimError::State(_))));
    let x = random_window(&mut rng, 1, 512);
    m.load_input(&x).unwrap();
    assert_eq!(m.run_inference().unwrap().logits, infer_window(&net2, &ws2, &x).unwrap().logits);
}

#[test]
fn default_model_fills_bank_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x55);
    let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
    let packed = PackedModel::from_parts(&net, &ws).unwrap();
    let mut m = SimMachine::default();
    m.load_model(&packed).unwrap();
    let mem = m.memory();
    assert_eq!(mem.weight_bank(0), &packed.weight_words[..0x4000]);
    let used = packed.weight_words.len() - 0x4000;
    assert!(used > 0 && used < 0x4000);
    assert_eq!(&mem.weight_bank(1)[..used], &packed.weight_words[0x4000..]);
    assert!(mem.weight_bank(1)[used..].iter().all(|&w| w == 0));
    assert_eq!(m.readback_model().unwrap(), packed);
}

#[test]
fn load_errors() {
    let mut m = SimMachine::default();
    let empty = PackedModel { input_length: 512, layers: vec![], bias_table: vec![], weight_words: vec![] };
    assert!(matches!(m.load_model(&empty), Err(SimError::Load(_))));
    assert!(matches!(
        m.load_input(&QuantTensor::from_window(vec![0; 512], 1.0, 0).unwrap()),
        Err(SimError::State(_))
    ));
    let net = NetworkSpec::table1();
    m.load_model(&PackedModel::from_parts(&net, &WeightSet::zeros(&net)).unwrap()).unwrap();
    assert!(matches!(
        m.load_input(&QuantTensor::from_window(vec![0; 511], 1.0, 0).unwrap()),
        Err(SimError::Shape(_))
    ));
    // weight image larger than the memory
    let mut big = PackedModel::from_parts(&net, &WeightSet::zeros(&net)).unwrap();
    big.weight_words = vec![0; 0x8001];
    assert!(matches!(m.load_model(&big), Err(SimError::Load(_))));
}

#[test]
fn input_packing_and_readback() {
    let net = NetworkSpec::table1();
    let mut m = SimMachine::default();
    m.load_model(&PackedModel::from_parts(&net, &WeightSet::zeros(&net)).unwrap()).unwrap();
    let samples: Vec<u8> = (0..512).map(|i| (i * 7 % 251) as u8).collect();
    m.load_input(&QuantTensor::from_window(samples.clone(), 1.0, 3).unwrap()).unwrap();
    let mem = m.memory();
    assert_eq!(mem.input_bank(0)[0], (samples[1] as u16) << 8 | samples[0] as u16);
    assert_eq!(mem.input_bank(1)[0], (samples[3] as u16) << 8 | samples[2] as u16);
    assert!(mem.input_bank(0)[128..].iter().all(|&w| w == 0));
    for (t, &s) in samples.iter().enumerate() {
        assert_eq!(m.read_input_sample(0, t).unwrap(), s);
    }
}

#[test]
fn odd_output_length_pads_last_word() {
    // 10 samples, MaxPool2 -> 5 outputs per channel
    let net = NetworkSpec {
        layers: vec![
            LayerSpec::conv(1, 2, 3, PoolMode::MaxPool2),
            LayerSpec::conv(2, 2, 1, PoolMode::MaxPool2),
            LayerSpec::conv(2, 2, 1, PoolMode::MaxPool2),
            LayerSpec::conv(2, 2, 1, PoolMode::GlobalAvgPool),
            LayerSpec::fully_connected(2, 3),
        ],
        input_length: 10,
        num_classes: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x56);
    let (net, ws) = random_model(&mut rng, &net);
    let x = random_window(&mut rng, 1, 10);
    let mut m = SimMachine::default();
    check_pair(&mut m, &net, &ws, &x);
    let words = m.layer_output_words(0).unwrap();
    assert_eq!(words.len(), 6);
    assert_eq!(words[2] >> 8, 0);
    assert_eq!(words[5] >> 8, 0);
}

#[test]
fn trace_is_deterministic_and_well_formed() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57);
    let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
    let packed = PackedModel::from_parts(&net, &ws).unwrap();
    let x = random_window(&mut rng, 1, 512);
    let collect = |m: &mut SimMachine| {
        m.start().unwrap();
        (0..100).map(|_| m.step().unwrap()).collect::<Vec<_>>()
    };
    let mut a = SimMachine::default();
    a.load_model(&packed).unwrap();
    a.load_input(&x).unwrap();
    let ta = collect(&mut a);
    let mut b = SimMachine::default();
    b.load_model(&packed).unwrap();
    b.load_input(&x).unwrap();
    assert_eq!(ta, collect(&mut b));
    assert!(ta.iter().enumerate().all(|(i, e)| e.cycle == i as u64));
    assert!(ta[..7].iter().all(|e| e.state == FsmState::Prime && e.macs == 0));
    assert_eq!(ta[0].mem, vec![MemOp::BiasRead { index: 0 }]);
    assert!(ta[7..16].iter().all(|e| e.state == FsmState::Compute && e.macs == 6));
    assert!(ta[16..22].iter().all(|e| e.state == FsmState::Requant));
    // first pooled pair written by the packer on the second job
    assert!(ta[16..22].iter().all(|e| e.mem.is_empty()));
    assert!(matches!(ta[27].mem[..], [MemOp::ActWrite { word: 0, .. }]));
    let fetches = ta.iter().flat_map(|e| &e.mem).filter(|op| matches!(op, MemOp::WeightFetch { .. })).count();
    // three batches, each refetching the 5 words that hold the 9 taps
    assert_eq!(fetches, 15);
    // stepping the rest of the run keeps the counter monotone
    let mut last = ta.last().unwrap().cycle;
    while a.is_running() {
        let e = a.step().unwrap();
        assert!(e.cycle > last);
        last = e.cycle;
    }
    assert_eq!(last + 1, 2_255_250);
    assert!(matches!(a.step(), Err(SimError::State(_))));
    let line = serde_json::to_string(&ta[0]).unwrap();
    assert!(line.contains("\"state\":\"prime\""));
}

#[test]
fn memory_mutation_shows_in_readback() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x58);
    let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
    let packed = PackedModel::from_parts(&net, &ws).unwrap();
    let mut m = SimMachine::default();
    m.load_model(&packed).unwrap();
    let w = m.memory().read_weight_word(100).unwrap();
    m.memory_mut().write_weight_word(100, w ^ 1).unwrap();
    assert_ne!(m.readback_model().unwrap(), packed);
    assert!(m.memory().read_weight_word(0x8000).is_err());
}

#[test]
fn overflow_aborts_with_diagnostics() {
    let net = NetworkSpec {
        layers: vec![LayerSpec::conv(1, 1, 1, PoolMode::GlobalAvgPool), LayerSpec::fully_connected(1, 2)],
        input_length: 1,
        num_classes: 2,
    };
    let mut ws = WeightSet::zeros(&net);
    ws.layers[0].weights = vec![127];
    ws.layers[0].biases = vec![i32::MAX - 10];
    let x = QuantTensor::from_window(vec![255], 1.0, 0).unwrap();
    assert!(infer_window(&net, &ws, &x).is_err());
    let mut m = SimMachine::default();
    m.load_model(&PackedModel::from_parts(&net, &ws).unwrap()).unwrap();
    m.load_input(&x).unwrap();
    match m.run_inference() {
        Err(SimError::Fault { cycle, state, detail }) => {
            assert_eq!(cycle, 7);
            assert!(state.starts_with("compute"), "{state}");
            assert!(detail.contains("overflow"), "{detail}");
        }
        other => panic!("expected fault, got {other:?}"),
    }
}

#[test]
fn random_input_lengths_with_partial_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x59);
    let mut m = SimMachine::default();
    for _ in 0..100 {
        let len = rng.gen_range(1..=48);
        let pool = if rng.gen_bool(0.5) { PoolMode::Bypass } else { PoolMode::MaxPool2 };
        let mid = LayerSpec::conv(1, 2, [1, 3, 5, 9][rng.gen_range(0..4)], pool);
        let w1 = mid.output_length(len).unwrap();
        let depth = w1.next_power_of_two();
        if depth != w1 {
            continue;
        }
        let net = NetworkSpec {
            layers: vec![mid, LayerSpec::conv(2, 3, 3, PoolMode::GlobalAvgPool), LayerSpec::fully_connected(3, 2)],
            input_length: len,
            num_classes: 2,
        };
        let (net, ws) = random_model(&mut rng, &net);
        let x = random_window(&mut rng, 1, len);
        check_pair(&mut m, &net, &ws, &x);
    }
}
