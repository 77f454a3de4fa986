#include "hact/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hact/error.hpp"

namespace hact {

void StackConfig::validate() const {
  for (std::size_t s = 0; s < kNumStacks; ++s) {
    if (blocks_per_stack[s] == 0) {
      throw ConfigError("stack " + std::to_string(s + 1) + " has zero blocks");
    }
    if (head_classes[s] == 0) throw ConfigError("head " + std::to_string(s + 1) + " has zero classes");
    if (s > 0 && head_classes[s] < head_classes[s - 1]) {
      throw ConfigError("head class counts must be nondecreasing across stacks");
    }
  }
  if (base_channels == 0) throw ConfigError("base_channels must be positive");
  if (temporal_kernel == 0) throw ConfigError("temporal_kernel must be positive");
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
}

Tensor ConvBn::forward_conv(const Tensor& x) const { return conv3d(x, weight, bias, options); }

Tensor ConvBn::forward(const Tensor& x, Mode mode) {
  return batch_norm(forward_conv(x), gamma, beta, stats, mode);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode, Tensor* last_conv) {
  Tensor h = x;
  for (std::size_t i = 0; i < path.size(); ++i) {
    auto& layer = path[i];
    const bool last = i + 1 == path.size();
    Tensor conv = layer.forward_conv(h);
    if (last && last_conv) {
      conv.retain_grad();
      *last_conv = conv;
    }
    h = batch_norm(conv, layer.gamma, layer.beta, layer.stats, mode);
    if (!last) h = relu(h);
  }
  const Tensor skip = shortcut ? shortcut->forward(x, mode) : x;
  return relu(add(h, skip));
}

Tensor inflate_kernel(const Tensor& weight2d, std::size_t temporal_extent) {
  if (temporal_extent < 1) throw ConfigError("inflation needs a temporal extent >= 1");
  if (weight2d.ndim() != 4) throw ShapeError("inflate_kernel: expected [Cout,Cin,kH,kW], got " + shape_str(weight2d.shape()));
  const std::size_t cout = weight2d.dim(0), cin = weight2d.dim(1), kh = weight2d.dim(2), kw = weight2d.dim(3);
  const std::size_t plane = kh * kw;
  const auto src = weight2d.data();
  std::vector<double> out(cout * cin * temporal_extent * plane);
  const double inv = 1.0 / static_cast<double>(temporal_extent);
  for (std::size_t f = 0; f < cout * cin; ++f) {
    for (std::size_t t = 0; t < temporal_extent; ++t) {
      for (std::size_t k = 0; k < plane; ++k) {
        out[(f * temporal_extent + t) * plane + k] = src[f * plane + k] * inv;
      }
    }
  }
  return Tensor({cout, cin, temporal_extent, kh, kw}, std::move(out));
}

namespace {

constexpr std::array<Triple, kNumStacks> kStackStride{{{1, 1, 1}, {1, 2, 2}, {2, 2, 2}, {2, 2, 2}}};

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // Fan-in scaled normal 2D kernel, inflated to `kt` frames.
  Tensor conv_weight(std::size_t cout, std::size_t cin, std::size_t kt, std::size_t kh, std::size_t kw) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * kh * kw));
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> w(cout * cin * kh * kw);
    for (auto& v : w) v = dist(rng_);
    return inflate_kernel(Tensor({cout, cin, kh, kw}, std::move(w)), kt);
  }

  Tensor linear_weight(std::size_t k, std::size_t f) {
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(f)));
    std::vector<double> w(k * f);
    for (auto& v : w) v = dist(rng_);
    return Tensor({k, f}, std::move(w));
  }

 private:
  std::mt19937_64 rng_;
};

ConvBn make_conv_bn(Initializer& init, std::string name, std::size_t cin, std::size_t cout, Triple kernel,
                    Triple stride, bool prunable) {
  ConvBn layer;
  layer.name = std::move(name);
  layer.weight = init.conv_weight(cout, cin, kernel[0], kernel[1], kernel[2]);
  layer.bias = Tensor::zeros({cout});
  layer.options.stride = stride;
  layer.options.padding = {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
  layer.gamma = Tensor::full({cout}, 1.0);
  layer.beta = Tensor::zeros({cout});
  layer.stats.running_mean.assign(cout, 0.0);
  layer.stats.running_var.assign(cout, 1.0);
  layer.prunable = prunable;
  layer.pruned.assign(cout, false);
  for (Tensor* t : {&layer.weight, &layer.bias, &layer.gamma, &layer.beta}) t->set_requires_grad(true);
  layer.weight.set_name(layer.name + ".weight");
  layer.bias.set_name(layer.name + ".bias");
  layer.gamma.set_name(layer.name + ".gamma");
  layer.beta.set_name(layer.name + ".beta");
  return layer;
}

std::size_t stack_out_channels(const StackConfig& cfg, std::size_t stack) {
  const std::size_t width = cfg.base_channels << stack;
  return cfg.bottleneck ? 4 * width : width;
}

ConvBn clone_layer(const ConvBn& src) {
  ConvBn dst = src;
  dst.weight = src.weight.clone();
  dst.bias = src.bias.clone();
  dst.gamma = src.gamma.clone();
  dst.beta = src.beta.clone();
  return dst;
}

void zero_channel(Tensor& t, std::size_t channel, std::size_t per_channel) {
  auto d = t.mutable_data();
  std::fill_n(d.begin() + static_cast<std::ptrdiff_t>(channel * per_channel), per_channel, 0.0);
  if (t.has_grad()) {
    auto g = t.mutable_grad();
    std::fill_n(g.begin() + static_cast<std::ptrdiff_t>(channel * per_channel), per_channel, 0.0);
  }
}

}  // namespace

Model Model::build(const StackConfig& config, std::uint64_t seed) {
  config.validate();
  Model model;
  model.config_ = config;
  Initializer init(seed);
  const std::size_t kt = config.temporal_kernel;

  model.stem_ = make_conv_bn(init, "stem", config.in_channels, config.base_channels, {1, 3, 3}, {1, 2, 2}, false);
  std::size_t in = config.base_channels;
  for (std::size_t s = 0; s < kNumStacks; ++s) {
    const std::size_t width = config.base_channels << s;
    const std::size_t out = stack_out_channels(config, s);
    for (std::size_t b = 0; b < config.blocks_per_stack[s]; ++b) {
      const Triple stride = b == 0 ? kStackStride[s] : Triple{1, 1, 1};
      const std::string prefix = "stack" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
      ResidualBlock block;
      if (config.bottleneck) {
        block.path.push_back(make_conv_bn(init, prefix + ".reduce", in, width, {1, 1, 1}, {1, 1, 1}, true));
        block.path.push_back(make_conv_bn(init, prefix + ".conv", width, width, {kt, 3, 3}, stride, true));
        block.path.push_back(make_conv_bn(init, prefix + ".expand", width, out, {1, 1, 1}, {1, 1, 1}, true));
      } else {
        block.path.push_back(make_conv_bn(init, prefix + ".conv1", in, out, {kt, 3, 3}, stride, true));
        block.path.push_back(make_conv_bn(init, prefix + ".conv2", out, out, {kt, 3, 3}, {1, 1, 1}, true));
      }
      if (in != out || stride != Triple{1, 1, 1}) {
        block.shortcut = make_conv_bn(init, prefix + ".shortcut", in, out, {1, 1, 1}, stride, true);
      }
      model.stacks_[s].push_back(std::move(block));
      in = out;
    }
    auto& head = model.heads_[s];
    head.weight = init.linear_weight(config.head_classes[s], out);
    head.bias = Tensor::zeros({config.head_classes[s]});
    head.weight.set_requires_grad(true);
    head.bias.set_requires_grad(true);
    head.weight.set_name("head" + std::to_string(s + 1) + ".weight");
    head.bias.set_name("head" + std::to_string(s + 1) + ".bias");
  }
  return model;
}

ModelOutput Model::forward(const Tensor& batch, Mode mode, bool tap_stack1) {
  if (batch.ndim() != 5 || batch.dim(1) != config_.in_channels) {
    throw ShapeError("model expects input [N," + std::to_string(config_.in_channels) + ",T,H,W], got " +
                     shape_str(batch.shape()));
  }
  ModelOutput out;
  Tensor x = relu(stem_.forward(batch, mode));
  for (std::size_t s = 0; s < kNumStacks; ++s) {
    auto& blocks = stacks_[s];
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const bool tap = tap_stack1 && s == 0 && b + 1 == blocks.size();
      x = blocks[b].forward(x, mode, tap ? &out.stack1_last_conv : nullptr);
    }
    out.logits[s] = linear(global_avg_pool(x), heads_[s].weight, heads_[s].bias);
  }
  return out;
}

std::vector<Tensor> Model::parameters() {
  std::vector<Tensor> params;
  auto push = [&params](ConvBn& l) {
    params.insert(params.end(), {l.weight, l.bias, l.gamma, l.beta});
  };
  push(stem_);
  for (auto& stack : stacks_) {
    for (auto& block : stack) {
      for (auto& l : block.path) push(l);
      if (block.shortcut) push(*block.shortcut);
    }
  }
  for (auto& h : heads_) params.insert(params.end(), {h.weight, h.bias});
  return params;
}

std::vector<ArrayRef> Model::arrays() {
  std::vector<ArrayRef> refs;
  auto push_tensor = [&refs](Tensor& t) { refs.push_back({t.name(), t.shape(), t.mutable_data()}); };
  auto push = [&](ConvBn& l) {
    for (Tensor* t : {&l.weight, &l.bias, &l.gamma, &l.beta}) push_tensor(*t);
    const Shape c{l.out_channels()};
    refs.push_back({l.name + ".running_mean", c, l.stats.running_mean});
    refs.push_back({l.name + ".running_var", c, l.stats.running_var});
  };
  push(stem_);
  for (auto& stack : stacks_) {
    for (auto& block : stack) {
      for (auto& l : block.path) push(l);
      if (block.shortcut) push(*block.shortcut);
    }
  }
  for (auto& h : heads_) {
    push_tensor(h.weight);
    push_tensor(h.bias);
  }
  return refs;
}

std::vector<ConvBn*> Model::prunable_layers() {
  std::vector<ConvBn*> layers;
  for (auto& stack : stacks_) {
    for (auto& block : stack) {
      for (auto& l : block.path) layers.push_back(&l);
      if (block.shortcut) layers.push_back(&*block.shortcut);
    }
  }
  return layers;
}

std::vector<const ConvBn*> Model::prunable_layers() const {
  auto layers = const_cast<Model*>(this)->prunable_layers();
  return {layers.begin(), layers.end()};
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

void Model::enforce_pruning() {
  for (ConvBn* layer : prunable_layers()) {
    const std::size_t per_filter = layer->weight.numel() / layer->out_channels();
    for (std::size_t c = 0; c < layer->pruned.size(); ++c) {
      if (!layer->pruned[c]) continue;
      zero_channel(layer->weight, c, per_filter);
      zero_channel(layer->bias, c, 1);
      zero_channel(layer->gamma, c, 1);
      zero_channel(layer->beta, c, 1);
    }
  }
}

Model Model::clone() const {
  Model copy;
  copy.config_ = config_;
  copy.trained_epochs = trained_epochs;
  copy.stem_ = clone_layer(stem_);
  for (std::size_t s = 0; s < kNumStacks; ++s) {
    for (const auto& block : stacks_[s]) {
      ResidualBlock b;
      for (const auto& l : block.path) b.path.push_back(clone_layer(l));
      if (block.shortcut) b.shortcut = clone_layer(*block.shortcut);
      copy.stacks_[s].push_back(std::move(b));
    }
    copy.heads_[s].weight = heads_[s].weight.clone();
    copy.heads_[s].bias = heads_[s].bias.clone();
  }
  return copy;
}

std::array<Tensor, kNumStacks> forward_heads(Model& model, const Tensor& batch, Mode mode) {
  return model.forward(batch, mode).logits;
}

Tensor gradient_attribution(Model& model, const Tensor& batch, std::span<const std::size_t> head_targets,
                            std::size_t head_index) {
  if (head_index < 1 || head_index > kNumStacks) {
    throw UsageError("head index must be in 1..4, got " + std::to_string(head_index));
  }
  GradTape tape;
  ModelOutput out = model.forward(batch, Mode::kEval, /*tap_stack1=*/true);
  const Tensor loss = softmax_cross_entropy(out.logits[head_index - 1], head_targets);
  backward(loss);
  model.zero_grad();

  const Tensor& act = out.stack1_last_conv;
  const std::size_t n = act.dim(0);
  const std::size_t cell = act.numel() / n;
  Shape map_shape(act.shape().begin() + 1, act.shape().end());
  std::vector<double> map(cell, 0.0);
  if (act.has_grad()) {
    const auto g = act.grad();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < cell; ++k) map[k] += std::abs(g[s * cell + k]);
    }
  }
  double mx = 0.0;
  for (auto& v : map) {
    v /= static_cast<double>(n);
    mx = std::max(mx, v);
  }
  if (mx > 0.0) {
    for (auto& v : map) v /= mx;
  }
  return Tensor(std::move(map_shape), std::move(map));
}

}  // namespace hact
