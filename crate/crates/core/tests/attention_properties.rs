use proptest::prelude::*;
use salite_core::attention::{
    global_attend_scale, local_attend, GlobalAttention, GlobalAttentionConfig, LocalAttention, LocalAttentionConfig, ScaleMerge,
};
use salite_core::params::{Group, ParamStore, Registry};
use salite_core::rng::Rng;
use salite_core::{Tape, Tensor};

struct Modules {
    global: GlobalAttention,
    local: LocalAttention,
    store: ParamStore<f64>,
}

fn modules(channels: usize, seed: u64) -> Modules {
    let mut reg = Registry::new();
    let cfg = GlobalAttentionConfig {
        renet_hidden: 3,
        merge: ScaleMerge::Sum,
        ..GlobalAttentionConfig::default()
    };
    let global = GlobalAttention::declare(&mut reg, "g", Group::Decoder, channels, &cfg).unwrap();
    let local = LocalAttention::declare(&mut reg, "l", Group::Decoder, channels, LocalAttentionConfig::default()).unwrap();
    Modules {
        global,
        local,
        store: ParamStore::init(reg.finish(), seed),
    }
}

/// Sum over the attendee axis of `[N, K, H, W]`, per pixel.
fn attention_sums(alpha: &Tensor<f64>) -> Vec<f64> {
    let s = alpha.shape();
    let (n, k, plane) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; n * plane];
    for b in 0..n {
        for j in 0..k {
            for p in 0..plane {
                out[b * plane + p] += alpha.data()[(b * k + j) * plane + p];
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distributions_sum_to_one(seed in any::<u64>(), c in 1usize..4, h in 3usize..14, w in 3usize..14) {
        let m = modules(c, seed);
        let mut rng = Rng::seed(seed);
        let x = Tensor::from_fn(&[1, c, h, w], |_| rng.uniform(-2.0, 2.0));
        let mut tape = Tape::new();
        let p = m.store.bind_frozen(&mut tape);
        let f = tape.constant(x);
        for &scale in &m.global.config.scales {
            let (_, alpha) = global_attend_scale(&mut tape, f, scale, &m.global, &p).unwrap();
            for s in attention_sums(tape.value(alpha)) {
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
        }
        let (_, alpha) = local_attend(&mut tape, f, &m.local, &p).unwrap();
        prop_assert_eq!(tape.shape(alpha), &[1, 49, h, w][..]);
        for s in attention_sums(tape.value(alpha)) {
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn constant_maps_pass_through(seed in any::<u64>(), c in 1usize..3, value in -3.0f64..3.0) {
        let m = modules(c, seed);
        let size = 15;
        let mut tape = Tape::new();
        let p = m.store.bind_frozen(&mut tape);
        let f = tape.constant(Tensor::full(&[1, c, size, size], value));
        for &scale in &m.global.config.scales {
            let (out, _) = global_attend_scale(&mut tape, f, scale, &m.global, &p).unwrap();
            for v in tape.value(out).data() {
                prop_assert!((v - value).abs() <= 1e-6);
            }
        }
        // the whole 7x7 dilation-2 window stays inside the map
        let reach = 6;
        let (out, _) = local_attend(&mut tape, f, &m.local, &p).unwrap();
        let out = tape.value(out);
        for ch in 0..c {
            for y in reach..size - reach {
                for x in reach..size - reach {
                    prop_assert!((out.at4(0, ch, y, x) - value).abs() <= 1e-6);
                }
            }
        }
    }
}
