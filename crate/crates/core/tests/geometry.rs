mod common;

use common::*;
use filterscope::geometry::{layer_geometry, receptive_field};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clipped_box_is_the_perturbation_support(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let net = random_rf_net(&mut rng);
        let layer = net.spec().layers[rng.random_range(0..net.spec().layers.len())].name.clone();
        let support = perturbation_support(&net, &layer);
        for (r, row) in support.iter().enumerate() {
            for (c, s) in row.iter().enumerate() {
                let b = receptive_field(net.spec(), &layer, c, r).unwrap().clipped;
                let expected = (b.w > 0.0).then(|| {
                    let (x0, y0) = (b.x as usize, b.y as usize);
                    ((x0, y0, x0 + b.w as usize - 1, y0 + b.h as usize - 1), (b.w * b.h) as usize)
                });
                prop_assert_eq!(*s, expected, "cell ({}, {}) of {}", c, r, layer);
            }
        }
    }

    #[test]
    fn fields_are_square_translate_by_stride_and_grow_with_depth(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let mut net = random_rf_net(&mut rng);
        // square inputs so the per-axis rules agree
        let side = net.input_shape().width.min(net.input_shape().height);
        let mut spec = net.spec().clone();
        spec.input_shape.width = side;
        spec.input_shape.height = side;
        if spec.validate().is_err() {
            return Ok(());
        }
        net = filterscope::nn::random_init(&spec, 0).unwrap();
        let mut last = 0;
        for layer in &net.spec().layers {
            let g = layer_geometry(net.spec(), &layer.name).unwrap();
            let a = g.field(0, 0);
            prop_assert_eq!(a.width, a.height);
            prop_assert!(a.width >= last);
            last = a.width;
            if g.map_width > 1 {
                let b = g.field(1, 0);
                prop_assert_eq!(b.center.0 - a.center.0, g.stride.0 as f64);
                prop_assert_eq!(b.center.1, a.center.1);
            }
            let rf = receptive_field(net.spec(), &layer.name, g.map_width - 1, g.map_height - 1).unwrap();
            prop_assert_eq!(rf, g.field(g.map_width - 1, g.map_height - 1));
        }
    }
}
