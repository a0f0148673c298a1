//! Conditional denoising diffusion over 2-D points.

pub mod denoiser;
pub mod sample;
pub mod schedule;
pub mod train;

pub use denoiser::{
    config_of, denoise, embedding_rows, film_param_names, film_weight_names, init_denoiser, lookup_rows,
    noise_mse, points_tensor, predict_rows, tensor_points, time_embedding, DenoiserConfig, Weights,
    EMBEDDING, FILM_BLOCKS, NULL_ROW, TRUNK_LAYERS,
};
pub use sample::{sample, sample_with, NoisePredictor, RowConditioned};
pub use schedule::{q_sample, schedule_linear, NoiseSchedule, DEFAULT_BETA1, DEFAULT_BETA_T, DEFAULT_STEPS};
pub use train::{
    batch_loss, draw_noised, gaussian_points, loss_diffusion, pretrain, window_means, NoisedBatch,
    Pretrained, RowLoss, TrainConfig,
};
