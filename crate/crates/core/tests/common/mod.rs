#![allow(dead_code)]

use imma::diffusion::{init_denoiser, DenoiserConfig};
use imma::autodiff::ParamStore;
use imma::harness::{Protocol, ProtocolConfig};

/// A protocol config small enough to run in a second or two.
pub fn tiny(protocol: Protocol) -> ProtocolConfig {
    let mut c = ProtocolConfig::new(protocol);
    c.data.n_train = 128;
    c.data.n_reference = 64;
    c.pretrain.steps = 200;
    c.pretrain.denoiser.hidden = 32;
    c.erasure.steps = 10;
    c.imma.iterations = 8;
    c.imma.inner_batch = 32;
    c.imma.upper_batch = 32;
    c.adapt.epochs = 2;
    c.adapt.batch_size = 64;
    c.classifier.steps = 100;
    c.eval.samples = 32;
    c
}

pub fn small_model(seed: u64) -> ParamStore {
    let cfg = DenoiserConfig { hidden: 16, ..DenoiserConfig::default() };
    init_denoiser(&cfg, 9, seed).unwrap()
}
