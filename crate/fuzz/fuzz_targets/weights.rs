#![no_main]

use filterscope::nn::{decode_weights, encode_weights, LayerKind, LayerSpec, NetworkSpec};
use filterscope::tensor::Shape3;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let spec = NetworkSpec {
        input_shape: Shape3::new(3, 8, 8),
        layers: vec![
            LayerSpec::new("conv1", LayerKind::Conv { out_channels: 2, kernel: 3, stride: 1, pad: 1 }),
            LayerSpec::new("relu1", LayerKind::Relu),
            LayerSpec::new("fc", LayerKind::Fc { out_units: 2 }),
        ],
        class_names: vec!["a".into(), "b".into()],
    };
    if let Ok(net) = decode_weights(&spec, data) {
        assert_eq!(encode_weights(&net), data);
    }
});
