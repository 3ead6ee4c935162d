from .autophagy import AutophagyConfig, DenoiserGenerator, GaussianFitter, autophagy_loop
from .diffusion import (Denoiser, DenoiserConfig, GuidanceConfig, NoisedClassifier, NoiseSchedule,
                        ancestral_sample, forward_diffuse, noise_prediction_loss, time_embedding,
                        train_denoiser, train_noised_classifier)
from .distributions import (BernoulliPixels, BlobImage, DensityOracle, Point2DMixture, SpectralNoise,
                            bayes_accuracy, exact_divergences, parse_dist_spec, sample)
