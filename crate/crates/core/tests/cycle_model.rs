use scgnn_core::cycles::{layer_cycles, network_report, RequantConvention};
use scgnn_core::NetworkSpec;

/// Per-layer prime, compute, requant cycles of the default topology.
const TABLE: [(u64, u64, u64); 5] = [
    (9_632, 12_384, 24_768),
    (154_112, 198_144, 24_768),
    (315_392, 405_504, 25_344),
    (630_784, 450_560, 768),
    (2_688, 384, 18),
];

#[test]
fn per_layer_cycles_match_table() {
    let net = NetworkSpec::table1();
    let lens = net.layer_input_lengths().unwrap();
    for (i, (layer, &w)) in net.layers.iter().zip(&lens).enumerate() {
        let lc = layer_cycles(layer, w, RequantConvention::TableI);
        // independent recomputation from the geometry
        let nb = (w as u64).div_ceil(6);
        let g = layer.c_out as u64 * nb * layer.c_in as u64;
        assert_eq!(lc.prime, g * 7, "layer {i}");
        assert_eq!(lc.compute, g * layer.kernel as u64, "layer {i}");
        assert_eq!((lc.prime, lc.compute, lc.requant), TABLE[i], "layer {i}");
    }
}

#[test]
fn totals_and_rates() {
    let net = NetworkSpec::table1();
    let r = network_report(&net, 24e6, 8.55, Some(0.0955), RequantConvention::TableI).unwrap();
    assert_eq!(r.totals.cycles, 2_255_250);
    assert_eq!(r.totals.prime, 1_112_608);
    assert_eq!(r.totals.compute, 1_066_976);
    assert_eq!(r.totals.requant, 75_666);
    assert!((r.latency_s * 1e3 - 93.97).abs() < 0.01);
    assert!((r.fps - 10.64).abs() < 0.01);
    assert!((r.peak_mmacs_per_s - 144.0).abs() < 1e-9);
    assert!((r.mmacs_per_s - 67.03).abs() < 0.01);
    assert!((r.energy_uj - 816.5).abs() < 0.1);
    let text = r.to_text();
    assert!(text.contains("2,255,250"));
}

#[test]
fn formula_convention_raises_requant_by_half() {
    let net = NetworkSpec::table1();
    let a = network_report(&net, 24e6, 8.55, None, RequantConvention::TableI).unwrap();
    let b = network_report(&net, 24e6, 8.55, None, RequantConvention::FormulaText).unwrap();
    assert_eq!(b.totals.requant * 2, a.totals.requant * 3);
    assert_eq!(a.totals.compute, b.totals.compute);
}
