//! Cost-only reference backbones.

use super::cost::CostReport;
use super::trace::Tracer;
use crate::conv::ConvSpec;
use crate::error::Result;
use crate::tensor::Shape;

/// ResNet-50 feature extractor (torchvision layout, stride on the 3x3 conv of
/// each bottleneck, no classifier), run `streams` times through one weight set.
pub fn resnet50(input: Shape, streams: u64) -> Result<CostReport> {
    let mut t = Tracer::new();
    t.set_replicas(streams);
    t.set_scope("stem");
    let stem = ConvSpec::new(3, 64, 7).with_stride(2).with_padding(3);
    let x = t.conv("stem.conv", &stem, input)?;
    let x = t.batch_norm("stem.bn", x);
    let x = t.activation("stem.relu", x);
    let mut x = t.pool("stem.maxpool", x, x.h.div_ceil(2), x.w.div_ceil(2));
    let mut in_c = 64;
    for (layer, (&blocks, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
        t.set_scope(format!("layer{}", layer + 1));
        let out_c = width * 4;
        for b in 0..blocks {
            let stride = if b == 0 && layer > 0 { 2 } else { 1 };
            let name = format!("layer{}.{b}", layer + 1);
            let y = t.conv(&format!("{name}.conv1"), &ConvSpec::new(in_c, width, 1), x)?;
            let y = t.batch_norm(&format!("{name}.bn1"), y);
            let y = t.activation(&format!("{name}.relu1"), y);
            let c2 = ConvSpec::new(width, width, 3).with_stride(stride).with_padding(1);
            let y = t.conv(&format!("{name}.conv2"), &c2, y)?;
            let y = t.batch_norm(&format!("{name}.bn2"), y);
            let y = t.activation(&format!("{name}.relu2"), y);
            let y = t.conv(&format!("{name}.conv3"), &ConvSpec::new(width, out_c, 1), y)?;
            let y = t.batch_norm(&format!("{name}.bn3"), y);
            if b == 0 {
                let ds = ConvSpec::new(in_c, out_c, 1).with_stride(stride);
                let s = t.conv(&format!("{name}.downsample.conv"), &ds, x)?;
                t.batch_norm(&format!("{name}.downsample.bn"), s);
            }
            let y = t.elementwise(&format!("{name}.add"), y);
            x = t.activation(&format!("{name}.relu3"), y);
            in_c = out_c;
        }
    }
    Ok(CostReport::from_records("resnet50", Some(input), &t.records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_match_torchvision_without_classifier() {
        // torchvision resnet50 has 25,557,032 parameters including the
        // 2048 -> 1000 classifier (2,049,000).
        let r = resnet50(Shape::new(1, 3, 224, 224), 1).unwrap();
        assert_eq!(r.total.params, 25_557_032 - 2_049_000);
    }

    #[test]
    fn macs_at_224_single_stream() {
        // Commonly quoted 4.09 GMAC includes the classifier (2.05M MACs).
        let r = resnet50(Shape::new(1, 3, 224, 224), 1).unwrap();
        let g = r.total.macs as f64 / 1e9;
        assert!((g - 4.09).abs() < 0.05, "{g}");
    }

    #[test]
    fn streams_double_macs_not_params() {
        let one = resnet50(Shape::new(1, 3, 64, 64), 1).unwrap();
        let two = resnet50(Shape::new(1, 3, 64, 64), 2).unwrap();
        assert_eq!(two.total.macs, 2 * one.total.macs);
        assert_eq!(two.total.params, one.total.params);
    }
}
