#include "jepa/decoder.hpp"

#include <cmath>

#include "jepa/errors.hpp"

namespace jepa {

using namespace ad;

ObservationDecoder::ObservationDecoder(const DecoderConfig& config, Rng& init_rng) : config_(config) {
  if (config.channels.empty() || config.latent_dim < 1) throw ConfigError("decoder: channels must be non-empty");
  const ConvGeometry geometry{config.stride, config.padding};
  // Mirror the encoder's downsampling chain.
  std::vector<std::int64_t> down{config.image_size};
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    down.push_back(conv_out_size(down.back(), config.kernel, geometry));
  }
  sizes_.assign(down.rbegin(), down.rend());

  const std::int64_t base = sizes_.front();
  input_ = Linear::create(params_, "fc", config.latent_dim, config.channels.front() * base * base, init_rng);
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    const bool last = i + 1 == config.channels.size();
    const std::int64_t out = last ? 1 : config.channels[i + 1];
    deconvs_.push_back(
        ConvTranspose2d::create(params_, "deconv" + std::to_string(i), config.channels[i], out, config.kernel,
                                geometry, init_rng));
    if (!last) norms_.push_back(BatchNorm::create(params_, "bn" + std::to_string(i), out));
  }
}

Var ObservationDecoder::forward(const Var& latents, Mode mode, Rng* rng) {
  if (latents.value().rank() != 2 || latents.shape()[1] != config_.latent_dim) {
    throw DimensionError("decoder expects [B, " + std::to_string(config_.latent_dim) + "], got " +
                         shape_str(latents.shape()));
  }
  if (mode == Mode::train && config_.dropout > 0.0 && rng == nullptr) {
    throw ContractError("train-mode dropout needs an Rng");
  }
  const std::int64_t batch = latents.shape()[0];
  const std::int64_t base = sizes_.front();
  Var h = reshape(elu(input_.forward(latents)), {batch, config_.channels.front(), base, base});
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    h = deconvs_[i].forward(h, sizes_[i + 1], sizes_[i + 1]);
    if (i + 1 == deconvs_.size()) break;
    h = norms_[i].forward(elu(h), mode);
    if (mode == Mode::train && config_.dropout > 0.0) h = dropout(h, config_.dropout, mode, *rng);
  }
  return sigmoid(h);
}

void ObservationDecoder::set_output_prior(double mean_intensity) {
  if (!(mean_intensity > 0.0 && mean_intensity < 1.0)) throw ConfigError("output prior must lie in (0, 1)");
  const double logit = std::log(mean_intensity / (1.0 - mean_intensity));
  deconvs_.back().bias.mutable_value().fill(logit);
}

std::vector<double> ObservationDecoder::decode(std::span<const double> latent) {
  if (static_cast<std::int64_t>(latent.size()) != config_.latent_dim) {
    throw DimensionError("decode: latent has wrong size");
  }
  NoGradGuard no_grad;
  const Var out = forward(constant(Tensor(Shape{1, config_.latent_dim}, std::vector<double>(latent.begin(), latent.end()))),
                          Mode::eval);
  return {out.value().data().begin(), out.value().data().end()};
}

}  // namespace jepa
