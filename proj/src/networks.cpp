#include "refsketch/networks.hpp"

#include "refsketch/errors.hpp"

namespace refsketch {

namespace {

void check_input(const torch::Tensor& x, int64_t channels, int64_t resolution, const char* what) {
  if (!x.defined() || x.dim() != 4 || x.size(1) != channels) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " must be Nx" +
                                              std::to_string(channels) + "xHxW");
  }
  if (x.size(2) != resolution || x.size(3) != resolution) {
    throw Error(ErrorKind::ResolutionMismatch,
                std::string(what) + " is " + std::to_string(x.size(2)) + "x" +
                    std::to_string(x.size(3)) + ", model resolution is " +
                    std::to_string(resolution));
  }
}

void check_options(const GeneratorOptions& o) {
  if (o.width() < 1) throw Error(ErrorKind::InvalidConfig, "generator width must be >= 1");
  if (o.resolution() < 16 || o.resolution() % 16 != 0) {
    throw Error(ErrorKind::InvalidConfig, "resolution must be a positive multiple of 16");
  }
}

}  // namespace

ConvBlockImpl::ConvBlockImpl(int64_t in, int64_t out, int64_t kernel, bool use_norm,
                             bool use_relu)
    : relu(use_relu) {
  // Odd kernels pad symmetrically; the even (K4) decoder kernel pads one
  // extra row and column at the bottom right.
  pad_before = (kernel - 1) / 2;
  pad_after = kernel - 1 - pad_before;
  conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)));
  if (use_norm) norm = register_module("norm", torch::nn::BatchNorm2d(out));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv->forward(torch::constant_pad_nd(x, {pad_before, pad_after, pad_before, pad_after}));
  if (norm) y = norm->forward(y);
  if (relu) y = torch::relu(y);
  return y;
}

torch::nn::Sequential make_encoder(int64_t in_channels, int64_t width) {
  return torch::nn::Sequential(ConvBlock(in_channels, width, 7, true, true),
                               ConvBlock(width, 2 * width, 3, true, true),
                               ConvBlock(2 * width, 4 * width, 3, true, true),
                               ConvBlock(4 * width, 8 * width, 3, true, true));
}

torch::nn::Sequential make_decoder(int64_t width, int64_t out_channels) {
  return torch::nn::Sequential(ConvBlock(8 * width, 4 * width, 4, true, true),
                               ConvBlock(4 * width, 2 * width, 7, true, true),
                               ConvBlock(2 * width, width, 7, false, false),
                               ConvBlock(width, out_channels, 7, false, false),
                               torch::nn::Tanh());
}

SketchGeneratorImpl::SketchGeneratorImpl(const GeneratorOptions& opts) : options(opts) {
  check_options(options);
  const int64_t w = options.width();
  const int64_t features = 8 * w;
  content_encoder = register_module("content_encoder", make_encoder(1, w));
  reference_encoder = register_module("reference_encoder", make_encoder(1, w));
  if (options.attention()) {
    spatial_attention = register_module("spatial_attention", SpatialAttention());
    channel_attention = register_module(
        "channel_attention",
        ChannelAttention(ChannelAttentionOptions(features).reduction(options.reduction())));
  }
  resblocks = register_module("resblocks", torch::nn::ModuleList());
  const int64_t block_in = options.attention() ? 2 * features : features;
  for (int64_t i = 0; i < kResblockCount; ++i) {
    resblocks->push_back(ConvBlock(block_in, features, 3, true, true));
  }
  decoder = register_module("decoder", make_decoder(w, 1));
  init_weights(*this);
}

torch::Tensor SketchGeneratorImpl::forward(const torch::Tensor& content,
                                           const torch::Tensor& reference) {
  check_input(content, 1, options.resolution(), "content");
  check_input(reference, 1, options.resolution(), "reference");
  auto content_features = content_encoder->forward(content);
  auto reference_features = reference_encoder->forward(reference);

  torch::Tensor attended;
  if (options.attention()) {
    attended = attended_fusion(content_features, reference_features, spatial_attention,
                               channel_attention);
  }
  auto running = adain(content_features, reference_features);
  for (const auto& block : *resblocks) {
    auto input = attended.defined() ? torch::cat({running, attended}, 1) : running;
    running = running + block->as<ConvBlock>()->forward(input);
  }
  return decoder->forward(running);
}

ColorGeneratorImpl::ColorGeneratorImpl(const GeneratorOptions& opts) : options(opts) {
  check_options(options);
  const int64_t w = options.width();
  encoder = register_module("encoder", make_encoder(1, w));
  resblocks = register_module("resblocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < kResblockCount; ++i) {
    resblocks->push_back(ConvBlock(8 * w, 8 * w, 3, true, true));
  }
  decoder = register_module("decoder", make_decoder(w, 3));
  init_weights(*this);
}

torch::Tensor ColorGeneratorImpl::forward(const torch::Tensor& sketch) {
  check_input(sketch, 1, options.resolution(), "sketch");
  auto running = encoder->forward(sketch);
  for (const auto& block : *resblocks) {
    running = running + block->as<ConvBlock>()->forward(running);
  }
  return decoder->forward(running);
}

int64_t receptive_field(const std::vector<ConvGeometry>& layers) {
  int64_t field = 1;
  int64_t jump = 1;
  for (const auto& layer : layers) {
    field += (layer.kernel - 1) * jump;
    jump *= layer.stride;
  }
  return field;
}

std::vector<ConvGeometry> PatchDiscriminatorImpl::geometry() {
  return {{4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {4, 1, 1}, {4, 1, 1}};
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorOptions& opts)
    : options(opts) {
  if (options.width() < 1) throw Error(ErrorKind::InvalidConfig, "discriminator width >= 1");
  const auto geo = geometry();
  const int64_t w = options.width();
  const std::vector<int64_t> channels{options.in_channels(), w, 2 * w, 4 * w, 8 * w, 1};
  body = torch::nn::Sequential();
  for (size_t i = 0; i < geo.size(); ++i) {
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels[i], channels[i + 1],
                                                               geo[i].kernel)
                                          .stride(geo[i].stride)
                                          .padding(geo[i].padding)));
    const bool head = i + 1 == geo.size();
    if (head) break;
    if (i > 0) body->push_back(torch::nn::InstanceNorm2d(channels[i + 1]));
    body->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  }
  register_module("body", body);
  init_weights(*this);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& sketch) {
  check_input(sketch, options.in_channels(), options.resolution(), "discriminator input");
  return body->forward(sketch);
}

StyleEncoderImpl::StyleEncoderImpl(const StyleEncoderOptions& opts) : options(opts) {
  const int64_t w = options.width();
  if (w < 1) throw Error(ErrorKind::InvalidConfig, "style encoder width must be >= 1");
  auto conv = [](int64_t in, int64_t out, int64_t k, int64_t p, int64_t s) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(p).stride(s));
  };
  features = register_module(
      "features",
      torch::nn::Sequential(conv(1, w, 7, 3, 1), torch::nn::BatchNorm2d(w), torch::nn::ReLU(),
                            conv(w, 2 * w, 4, 1, 2), torch::nn::BatchNorm2d(2 * w),
                            torch::nn::ReLU(), conv(2 * w, 4 * w, 4, 1, 2),
                            torch::nn::BatchNorm2d(4 * w), torch::nn::ReLU(),
                            torch::nn::AdaptiveAvgPool2d(torch::nn::AdaptiveAvgPool2dOptions(1)),
                            torch::nn::Flatten()));
  head = register_module("head", torch::nn::Linear(4 * w, kStyleEmbeddingSize));
  init_weights(*this);
}

torch::Tensor StyleEncoderImpl::forward(const torch::Tensor& sketch) {
  if (!sketch.defined() || sketch.dim() != 4 || sketch.size(1) != 1) {
    throw Error(ErrorKind::ShapeMismatch, "style encoder input must be Nx1xHxW");
  }
  if (sketch.size(2) < kStyleMinSide || sketch.size(3) < kStyleMinSide) {
    throw Error(ErrorKind::TooSmall, "style encoder input must be at least 8x8");
  }
  return head->forward(features->forward(sketch));
}

void init_weights(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  module.apply([](torch::nn::Module& child) {
    if (auto* conv = child.as<torch::nn::Conv2dImpl>()) {
      conv->weight.normal_(0.0, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* linear = child.as<torch::nn::LinearImpl>()) {
      linear->weight.normal_(0.0, 0.02);
      if (linear->bias.defined()) linear->bias.zero_();
    } else if (auto* bn = child.as<torch::nn::BatchNorm2dImpl>()) {
      bn->weight.normal_(1.0, 0.02);
      bn->bias.zero_();
    }
  });
}

void freeze(torch::nn::Module& module) {
  module.eval();
  for (auto& p : module.parameters()) p.set_requires_grad(false);
}

bool is_frozen(const torch::nn::Module& module) {
  if (module.is_training()) return false;
  for (const auto& p : module.parameters()) {
    if (p.requires_grad()) return false;
  }
  return true;
}

std::vector<LayerShape> layer_shapes(const torch::nn::Module& module) {
  std::vector<LayerShape> shapes;
  for (const auto& item : module.named_parameters()) {
    shapes.push_back({item.key(), item.value().sizes().vec()});
  }
  return shapes;
}

std::vector<std::pair<std::string, torch::Tensor>> snapshot_state(
    const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> state;
  for (const auto& item : module.named_parameters()) {
    state.emplace_back(item.key(), item.value().detach().clone());
  }
  for (const auto& item : module.named_buffers()) {
    state.emplace_back(item.key(), item.value().detach().clone());
  }
  return state;
}

bool same_state(const std::vector<std::pair<std::string, torch::Tensor>>& a,
                const std::vector<std::pair<std::string, torch::Tensor>>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) return false;
    if (!torch::equal(a[i].second, b[i].second)) return false;
  }
  return true;
}

}  // namespace refsketch
