#include "jepa/encoders.hpp"

#include "jepa/errors.hpp"

namespace jepa {

using namespace ad;

ObservationEncoder::ObservationEncoder(const ObservationEncoderConfig& config, Rng& init_rng) : config_(config) {
  if (config.frames < 1 || config.latent_dim < 1 || config.channels.empty()) {
    throw ConfigError("observation encoder: frames, latent_dim and channels must be non-empty");
  }
  const ConvGeometry geometry{config.stride, config.padding};
  std::int64_t in = config.frames;
  sizes_.push_back(config.image_size);
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    const std::string name = "conv" + std::to_string(i);
    convs_.push_back(Conv2d::create(params_, name, in, config.channels[i], config.kernel, geometry, init_rng));
    norms_.push_back(BatchNorm::create(params_, "bn" + std::to_string(i), config.channels[i]));
    sizes_.push_back(conv_out_size(sizes_.back(), config.kernel, geometry));
    in = config.channels[i];
  }
  head_ = Linear::create(params_, "head", in * sizes_.back() * sizes_.back(), config.latent_dim, init_rng);
}

namespace {

void check_window_shape(const Shape& s, const ObservationEncoderConfig& config) {
  if (s.size() != 4 || s[1] != config.frames || s[2] != config.image_size || s[3] != config.image_size) {
    throw DimensionError("observation encoder expects [B, " + std::to_string(config.frames) + ", " +
                         std::to_string(config.image_size) + ", " + std::to_string(config.image_size) + "], got " +
                         shape_str(s));
  }
}

}  // namespace

Var ObservationEncoder::forward(const Var& windows, Mode mode, Rng* rng, std::vector<BnStats>* record) {
  const Shape& s = windows.shape();
  check_window_shape(s, config_);
  if (mode == Mode::train && config_.dropout > 0.0 && rng == nullptr) {
    throw ContractError("train-mode dropout needs an Rng");
  }
  if (record != nullptr) record->assign(norms_.size(), BnStats{});
  Var h = windows;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = elu(convs_[i].forward(h));
    h = norms_[i].forward(h, mode, record != nullptr ? &(*record)[i] : nullptr);
    if (mode == Mode::train && config_.dropout > 0.0) h = dropout(h, config_.dropout, mode, *rng);
  }
  const std::int64_t batch = s[0];
  h = reshape(h, {batch, h.numel() / batch});
  return sigmoid(head_.forward(h));
}

Var ObservationEncoder::forward_with_stats(const Var& windows, const std::vector<BnStats>& stats) const {
  check_window_shape(windows.shape(), config_);
  if (stats.size() != norms_.size()) throw DimensionError("forward_with_stats: one BnStats per block");
  Var h = windows;
  for (std::size_t i = 0; i < convs_.size(); ++i) h = norms_[i].forward(elu(convs_[i].forward(h)), stats[i]);
  const std::int64_t batch = windows.shape()[0];
  h = reshape(h, {batch, h.numel() / batch});
  return sigmoid(head_.forward(h));
}

std::vector<double> ObservationEncoder::encode(std::span<const double> window) {
  const std::int64_t n = config_.frames * config_.image_size * config_.image_size;
  if (static_cast<std::int64_t>(window.size()) != n) {
    throw DimensionError("encode_observations: expected " + std::to_string(config_.frames) + " frames");
  }
  NoGradGuard no_grad;
  Tensor input(Shape{1, config_.frames, config_.image_size, config_.image_size},
               std::vector<double>(window.begin(), window.end()));
  const Var out = forward(constant(std::move(input)), Mode::eval);
  return {out.value().data().begin(), out.value().data().end()};
}

ActionEncoder::ActionEncoder(const ActionEncoderConfig& config, Rng& init_rng) : config_(config) {
  if (config.blocks < 1 || config.hidden < 1 || config.latent_dim < 1 || config.action_dim < 1) {
    throw ConfigError("action encoder: sizes must be positive");
  }
  std::int64_t in = config.action_dim;
  for (std::int64_t i = 0; i < config.blocks; ++i) {
    blocks_.push_back(Linear::create(params_, "fc" + std::to_string(i), in, config.hidden, init_rng));
    in = config.hidden;
  }
  head_ = Linear::create(params_, "head", in, config.latent_dim, init_rng);
}

Var ActionEncoder::forward(const Var& actions, Mode mode, Rng* rng) {
  if (actions.value().rank() != 2 || actions.shape()[1] != config_.action_dim) {
    throw DimensionError("action encoder expects [B, " + std::to_string(config_.action_dim) + "], got " +
                         shape_str(actions.shape()));
  }
  if (mode == Mode::train && config_.dropout > 0.0 && rng == nullptr) {
    throw ContractError("train-mode dropout needs an Rng");
  }
  Var h = actions;
  for (const auto& block : blocks_) {
    h = block.forward(h);
    if (mode == Mode::train && config_.dropout > 0.0) h = dropout(h, config_.dropout, mode, *rng);
    h = elu(h);
  }
  return head_.forward(h);
}

std::vector<double> ActionEncoder::encode(std::span<const double> actions) {
  if (actions.size() % static_cast<std::size_t>(config_.action_dim) != 0) {
    throw DimensionError("encode_actions: length is not a multiple of action_dim");
  }
  NoGradGuard no_grad;
  const auto steps = static_cast<std::int64_t>(actions.size()) / config_.action_dim;
  Tensor input(Shape{steps, config_.action_dim}, std::vector<double>(actions.begin(), actions.end()));
  const Var out = forward(constant(std::move(input)), Mode::eval);
  return {out.value().data().begin(), out.value().data().end()};
}

}  // namespace jepa
