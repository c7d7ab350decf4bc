//! Encoder, classifier and pretext heads.
//!
//! Parameter names are namespaced `encoder.*`, `classifier.*` and `head.*`
//! so one [`ParameterSet`](crate::params::ParameterSet) can hold a whole
//! network and be split or frozen by prefix.

mod classifier;
mod encoder;
mod heads;
pub mod layers;

pub use classifier::{Classifier, ClassifierConfig, CLASSIFIER_PREFIX};
pub use encoder::{windows_to_tensor, Encoder, EncoderConfig, EncoderOutput, ENCODER_PREFIX};
pub use heads::{ContextAggregatorConfig, CpcHead, Decoder, MultitaskHead, ProjectionConfig, ProjectionHead};
pub use layers::Pass;

pub const HEAD_PREFIX: &str = "head.";

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ingest::Window;
    use crate::params::ParameterSet;
    use crate::tensor::Tensor;

    fn random_windows(n: usize, seed: u64) -> Vec<Window> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
                Window::new(v, Some(0), Arc::from("u"), Arc::from("d"), 0)
            })
            .collect()
    }

    fn batch(n: usize, seed: u64) -> Tensor {
        let w = random_windows(n, seed);
        windows_to_tensor(&w.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn encoder_shapes_and_count() {
        let (enc, params) = Encoder::build(EncoderConfig::default(), 1).unwrap();
        // per conv block: (c_in*k + 1)*c_out weights plus 2*c_out for batch norm
        let blocks = [(3, 32, 9), (32, 64, 5), (64, 128, 5)];
        let expected: usize = blocks.iter().map(|&(i, o, k)| (i * k + 1) * o + 2 * o).sum::<usize>() + 128 * 256 + 256;
        assert_eq!(params.weight_count(), expected);
        assert_eq!(expected, 85760);

        let mut pass = Pass::new(&params, 0);
        let x = pass.input(batch(4, 2));
        let out = enc.forward(&mut pass, &params, x, true).unwrap();
        assert_eq!(pass.graph.value(out.pooled).shape(), &[4, 256]);
        assert_eq!(pass.graph.value(out.features).shape(), &[4, 128, 100]);

        let bad = pass.input(Tensor::zeros(&[4, 2, 100]));
        assert!(enc.forward(&mut pass, &params, bad, true).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let a = Encoder::build(EncoderConfig::default(), 9).unwrap().1;
        let b = Encoder::build(EncoderConfig::default(), 9).unwrap().1;
        let c = Encoder::build(EncoderConfig::default(), 10).unwrap().1;
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    fn classifier_params(n_classes: usize) -> (Classifier, ParameterSet) {
        let clf = Classifier::new(ClassifierConfig::default(), 256, n_classes).unwrap();
        let mut params = ParameterSet::new();
        clf.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(3));
        (clf, params)
    }

    fn random_input(rows: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[rows, 256], (0..rows * 256).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn classifier_modes() {
        assert!(Classifier::new(ClassifierConfig::default(), 256, 1).is_err());
        let (clf, params) = classifier_params(6);
        let x = random_input(8, 4);
        let run = |seed: u64, train: bool| {
            let mut pass = Pass::new(&params, seed);
            let xi = pass.input(x.clone());
            let y = clf.forward(&mut pass, &params, xi, train);
            pass.graph.value(y).clone()
        };
        let eval = run(0, false);
        assert_eq!(eval.shape(), &[8, 6]);
        assert_eq!(eval, run(1, false));
        let reference = run(0, true);
        let differing = (1..=100).filter(|&s| run(s, true) != reference).count();
        assert_eq!(differing, 100);
    }

    #[test]
    fn gru_context_is_causal() {
        let head = CpcHead {
            feature_dim: 16,
            cfg: ContextAggregatorConfig { hidden: 8, horizon: 2 },
        };
        let mut params = ParameterSet::new();
        head.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = Tensor::from_vec(&[3, 10, 16], (0..480).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let t0 = 4;
        let ctx = |feats: Tensor| {
            let mut pass = Pass::new(&params, 0);
            let f = pass.input(feats);
            let states = head.context(&mut pass, f, 9);
            pass.graph.value(states[t0]).clone()
        };
        let reference = ctx(base.clone());
        let mut perturbed = base.clone();
        for b in 0..3 {
            for t in t0 + 1..10 {
                for d in 0..16 {
                    perturbed.data_mut()[(b * 10 + t) * 16 + d] += 5.0;
                }
            }
        }
        assert_eq!(ctx(perturbed), reference);
        let mut earlier = base;
        earlier.data_mut()[t0 * 16] += 1.0;
        assert_ne!(ctx(earlier), reference);
    }

    #[test]
    fn decoder_restores_input_shape() {
        let cfg = EncoderConfig::default();
        let dec = Decoder::mirror(&cfg.channels, &cfg.kernels);
        assert_eq!(dec.layers, vec![(128, 64, 5), (64, 32, 5), (32, 3, 9)]);
        let (enc, mut params) = Encoder::build(cfg, 0).unwrap();
        dec.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(5));
        let mut pass = Pass::new(&params, 0);
        let x = pass.input(batch(2, 7));
        let out = enc.forward(&mut pass, &params, x, false).unwrap();
        let y = dec.forward(&mut pass, &params, out.features, false);
        assert_eq!(pass.graph.value(y).shape(), &[2, 3, 100]);
    }
}
