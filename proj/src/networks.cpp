#include "iconify/networks.hpp"

#include <algorithm>

#include "iconify/rng.hpp"

namespace iconify {

template <typename T>
void ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (index_.count(name)) throw std::invalid_argument("parameter set: duplicate name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename T>
std::size_t ParameterSet<T>::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("parameter set: no parameter named '" + std::string(name) + "'");
  return it->second;
}

template <typename T>
BoundParams<T>::BoundParams(Tape<T>& tape, const ParameterSet<T>& params, bool trainable) : params_(&params) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars_.push_back(trainable ? tape.leaf(params.tensor(i)) : tape.constant(params.tensor(i)));
  }
}

template <typename T>
BoundParams<T>::BoundParams(const ParameterSet<T>& params, std::vector<Var<T>> vars)
    : params_(&params), vars_(std::move(vars)) {
  if (vars_.size() != params.size()) throw ShapeError("BoundParams: variable count differs from the parameter set");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].shape() != params.tensor(i).shape()) {
      throw ShapeError("BoundParams: shape mismatch for '" + params.name(i) + "': " + to_string(vars_[i].shape()) +
                       " vs " + to_string(params.tensor(i).shape()));
    }
  }
}

template <typename T>
std::map<std::string, Tensor<T>> BoundParams<T>::gradients(const GradientMap<T>& grads) const {
  std::map<std::string, Tensor<T>> out;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (grads.contains(vars_[i])) out.emplace(params_->name(i), grads.at(vars_[i]));
  }
  return out;
}

Shape kernel_shape(const ConvSpec& s) {
  return s.transpose ? Shape{s.in_channels, s.out_channels, s.kernel, s.kernel}
                     : Shape{s.out_channels, s.in_channels, s.kernel, s.kernel};
}

std::size_t parameter_count(const ConvSpec& s) {
  std::size_t n = element_count(kernel_shape(s));
  if (s.bias) n += s.out_channels;
  if (s.norm) n += 2 * s.out_channels;
  return n;
}

std::vector<ConvSpec> residual_block_layout(const std::string& prefix, std::size_t channels) {
  return {
      {prefix + ".conv0", channels, channels, 3, 1, Padding::reflect(1), false, true, Activation::relu(), false},
      {prefix + ".conv1", channels, channels, 3, 1, Padding::reflect(1), false, true, std::nullopt, false},
  };
}

namespace {

std::vector<ConvSpec> encoder_front(const NetConfig& c) {
  return {
      {"stem", c.image_channels, c.ngf, 7, 1, Padding::reflect(3), false, true, Activation::relu(), false},
      {"down0", c.ngf, 2 * c.ngf, 3, 2, Padding::zeros(1), false, true, Activation::relu(), false},
      {"down1", 2 * c.ngf, 4 * c.ngf, 3, 2, Padding::zeros(1), false, true, Activation::relu(), false},
  };
}

std::vector<ConvSpec> decoder_back(const NetConfig& c) {
  return {
      {"up0", 4 * c.ngf, 2 * c.ngf, 4, 2, Padding::zeros(1), true, true, Activation::relu(), false},
      {"up1", 2 * c.ngf, c.ngf, 4, 2, Padding::zeros(1), true, true, Activation::relu(), false},
      {"head", c.ngf, c.image_channels, 7, 1, Padding::reflect(3), false, false, Activation::tanh(), true},
  };
}

template <typename T>
void add_layer_params(ParameterSet<T>& params, const ConvSpec& s, Rng& rng) {
  params.add(s.name + ".w", randn<T>(kernel_shape(s), rng, 0.02));
  if (s.bias) params.add(s.name + ".b", Tensor<T>(Shape{s.out_channels}));
  if (s.norm) {
    params.add(s.name + ".norm.g", Tensor<T>(Shape{s.out_channels}, T(1)));
    params.add(s.name + ".norm.b", Tensor<T>(Shape{s.out_channels}));
  }
}

template <typename T>
void add_all(ParameterSet<T>& params, const std::vector<ConvSpec>& layers, Rng& rng) {
  for (const auto& s : layers) add_layer_params(params, s, rng);
}

void require_multiple_of_4(std::size_t resolution, const char* what) {
  if (resolution == 0 || resolution % 4 != 0) {
    throw std::invalid_argument(std::string(what) + ": resolution " + std::to_string(resolution) +
                                " must be a positive multiple of 4");
  }
}

void require_spatial_multiple_of_4(const Shape& s, const char* what) {
  require_rank(s, 4, what);
  if (s[2] % 4 != 0 || s[3] % 4 != 0 || s[2] == 0 || s[3] == 0) {
    throw ShapeError(std::string(what) + ": spatial dims of " + to_string(s) + " must be multiples of 4");
  }
}

}  // namespace

GeneratorLayout generator_layout(const NetConfig& cfg) {
  GeneratorLayout layout;
  layout.front = encoder_front(cfg);
  for (std::size_t i = 0; i < cfg.n_res_blocks; ++i) {
    layout.res_blocks.push_back(residual_block_layout("res" + std::to_string(i), 4 * cfg.ngf));
  }
  layout.back = decoder_back(cfg);
  return layout;
}

std::vector<ConvSpec> discriminator_layout(const NetConfig& cfg) {
  const auto lrelu = Activation::leaky_relu(0.2);
  std::vector<ConvSpec> layers;
  layers.push_back({"c0", cfg.image_channels, cfg.ndf, 4, 2, Padding::zeros(1), false, false, lrelu, true});
  std::size_t width = cfg.ndf;
  for (std::size_t i = 1; i <= cfg.disc_downsamples; ++i) {
    const std::size_t next = std::min<std::size_t>(std::size_t{1} << i, 8) * cfg.ndf;
    const std::size_t stride = i < cfg.disc_downsamples ? 2 : 1;
    layers.push_back({"c" + std::to_string(i), width, next, 4, stride, Padding::zeros(1), false, true, lrelu, false});
    width = next;
  }
  layers.push_back({"head", width, 1, 4, 1, Padding::zeros(1), false, false, std::nullopt, true});
  return layers;
}

std::optional<std::size_t> patch_extent(const NetConfig& cfg, std::size_t input) {
  std::size_t extent = input;
  for (const auto& s : discriminator_layout(cfg)) {
    if (extent + 2 * s.padding.width < s.kernel) return std::nullopt;
    extent = (extent + 2 * s.padding.width - s.kernel) / s.stride + 1;
  }
  return extent;
}

template <typename T>
GeneratorNet<T> build_generator(const NetConfig& cfg, std::size_t resolution, std::uint64_t seed) {
  require_multiple_of_4(resolution, "build_generator");
  GeneratorNet<T> net{cfg, {}};
  Rng rng(seed);
  const GeneratorLayout layout = generator_layout(cfg);
  add_all(net.params, layout.front, rng);
  for (const auto& block : layout.res_blocks) add_all(net.params, block, rng);
  add_all(net.params, layout.back, rng);
  return net;
}

template <typename T>
PatchDiscriminator<T> build_discriminator(const NetConfig& cfg, std::uint64_t seed) {
  PatchDiscriminator<T> net{cfg, {}};
  Rng rng(seed);
  add_all(net.params, discriminator_layout(cfg), rng);
  return net;
}

template <typename T>
Var<T> apply_conv(const BoundParams<T>& p, const ConvSpec& s, const Var<T>& x, double eps) {
  std::optional<Var<T>> bias;
  if (s.bias) bias = p[s.name + ".b"];
  Var<T> h = s.transpose ? conv_transpose2d(x, p[s.name + ".w"], bias, s.stride, s.padding.width)
                         : conv2d(x, p[s.name + ".w"], bias, s.stride, s.padding);
  if (s.norm) h = instance_norm(h, p[s.name + ".norm.g"], p[s.name + ".norm.b"], eps);
  if (s.act) h = activation(h, *s.act);
  return h;
}

template <typename T>
Var<T> apply_residual(const BoundParams<T>& p, const std::vector<ConvSpec>& block, const Var<T>& x, double eps) {
  Var<T> h = x;
  for (const auto& s : block) h = apply_conv(p, s, h, eps);
  return add(x, h);
}

template <typename T>
Var<T> generator_forward(const BoundParams<T>& p, const NetConfig& cfg, const Var<T>& x) {
  require_spatial_multiple_of_4(x.shape(), "generator_forward");
  if (x.shape()[1] != cfg.image_channels) {
    throw ShapeError("generator_forward: expected " + std::to_string(cfg.image_channels) + " channels, got " +
                     to_string(x.shape()));
  }
  const GeneratorLayout layout = generator_layout(cfg);
  Var<T> h = x;
  for (const auto& s : layout.front) h = apply_conv(p, s, h, cfg.norm_eps);
  for (const auto& block : layout.res_blocks) h = apply_residual(p, block, h, cfg.norm_eps);
  for (const auto& s : layout.back) h = apply_conv(p, s, h, cfg.norm_eps);
  return h;
}

template <typename T>
Tensor<T> generator_forward(const GeneratorNet<T>& net, const Tensor<T>& x) {
  Tape<T> tape;
  BoundParams<T> p(tape, net.params, false);
  return generator_forward(p, net.config, tape.constant(x)).value();
}

template <typename T>
Var<T> discriminator_forward(const BoundParams<T>& p, const NetConfig& cfg, const Var<T>& img) {
  require_rank(img.shape(), 4, "discriminator_forward");
  const std::size_t h = img.shape()[2], w = img.shape()[3];
  if (!patch_extent(cfg, h) || !patch_extent(cfg, w) || *patch_extent(cfg, h) == 0 || *patch_extent(cfg, w) == 0) {
    std::size_t minimum = 1;
    while (!patch_extent(cfg, minimum) || *patch_extent(cfg, minimum) == 0) ++minimum;
    throw ShapeError("discriminator_forward: input " + to_string(img.shape()) + " is too small; need at least " +
                     std::to_string(minimum) + "x" + std::to_string(minimum));
  }
  Var<T> out = img;
  for (const auto& s : discriminator_layout(cfg)) out = apply_conv(p, s, out, cfg.norm_eps);
  return out;
}

template <typename T>
Tensor<T> discriminator_forward(const PatchDiscriminator<T>& net, const Tensor<T>& img) {
  Tape<T> tape;
  BoundParams<T> p(tape, net.params, false);
  return discriminator_forward(p, net.config, tape.constant(img)).value();
}

const char* to_string(Domain d) { return d == Domain::x ? "x" : "y"; }

UnitLayout unit_layout(const NetConfig& cfg) {
  UnitLayout layout;
  const std::size_t latent = 4 * cfg.ngf;
  const std::size_t private_blocks = cfg.n_res_blocks >= 2 ? cfg.n_res_blocks / 2 - 1 : 0;
  layout.enc_front = encoder_front(cfg);
  for (std::size_t i = 0; i < private_blocks; ++i) {
    layout.enc_private_res.push_back(residual_block_layout("enc_res" + std::to_string(i), latent));
  }
  layout.enc_shared = residual_block_layout("enc_shared", latent);
  layout.dec_shared = residual_block_layout("dec_shared", latent);
  for (std::size_t i = 0; i < private_blocks; ++i) {
    layout.dec_private_res.push_back(residual_block_layout("dec_res" + std::to_string(i), latent));
  }
  layout.dec_back = decoder_back(cfg);
  return layout;
}

template <typename T>
UnitNets<T> build_unit(const NetConfig& cfg, std::size_t resolution, std::uint64_t seed) {
  require_multiple_of_4(resolution, "build_unit");
  const UnitLayout layout = unit_layout(cfg);
  UnitNets<T> m;
  m.config = cfg;
  Rng rng(seed);
  for (ParameterSet<T>* enc : {&m.e_x, &m.e_y}) {
    add_all(*enc, layout.enc_front, rng);
    for (const auto& b : layout.enc_private_res) add_all(*enc, b, rng);
  }
  add_all(m.shared, layout.enc_shared, rng);
  add_all(m.shared, layout.dec_shared, rng);
  for (ParameterSet<T>* dec : {&m.g_x, &m.g_y}) {
    for (const auto& b : layout.dec_private_res) add_all(*dec, b, rng);
    add_all(*dec, layout.dec_back, rng);
  }
  m.d_x = build_discriminator<T>(cfg, derive_seed(seed, 1));
  m.d_y = build_discriminator<T>(cfg, derive_seed(seed, 2));
  return m;
}

template <typename T>
Var<T> unit_encode_mean(const BoundParams<T>& enc, const BoundParams<T>& shared, const NetConfig& cfg,
                        const Var<T>& x) {
  require_spatial_multiple_of_4(x.shape(), "unit_encode");
  const UnitLayout layout = unit_layout(cfg);
  Var<T> h = x;
  for (const auto& s : layout.enc_front) h = apply_conv(enc, s, h, cfg.norm_eps);
  for (const auto& b : layout.enc_private_res) h = apply_residual(enc, b, h, cfg.norm_eps);
  return apply_residual(shared, layout.enc_shared, h, cfg.norm_eps);
}

template <typename T>
Var<T> unit_decode(const BoundParams<T>& dec, const BoundParams<T>& shared, const NetConfig& cfg, const Var<T>& z) {
  require_rank(z.shape(), 4, "unit_decode");
  if (z.shape()[1] != 4 * cfg.ngf) {
    throw ShapeError("unit_decode: latent " + to_string(z.shape()) + " must have " + std::to_string(4 * cfg.ngf) +
                     " channels");
  }
  const UnitLayout layout = unit_layout(cfg);
  Var<T> h = apply_residual(shared, layout.dec_shared, z, cfg.norm_eps);
  for (const auto& b : layout.dec_private_res) h = apply_residual(dec, b, h, cfg.norm_eps);
  for (const auto& s : layout.dec_back) h = apply_conv(dec, s, h, cfg.norm_eps);
  return h;
}

template <typename T>
LatentCode<T> unit_encode(const UnitNets<T>& model, const Tensor<T>& img, Domain domain, std::uint64_t noise_seed) {
  Tape<T> tape;
  BoundParams<T> enc(tape, model.encoder(domain), false);
  BoundParams<T> shared(tape, model.shared, false);
  LatentCode<T> code;
  code.mean = unit_encode_mean(enc, shared, model.config, tape.constant(img)).value();
  Rng rng(noise_seed);
  code.sample = code.mean;
  for (auto& v : code.sample.data()) v += static_cast<T>(rng.normal());
  return code;
}

template <typename T>
Tensor<T> unit_decode(const UnitNets<T>& model, const Tensor<T>& z, Domain domain) {
  Tape<T> tape;
  BoundParams<T> dec(tape, model.decoder(domain), false);
  BoundParams<T> shared(tape, model.shared, false);
  return unit_decode(dec, shared, model.config, tape.constant(z)).value();
}

#define ICONIFY_INSTANTIATE_NETWORKS(T)                                                                       \
  template class ParameterSet<T>;                                                                            \
  template class BoundParams<T>;                                                                             \
  template GeneratorNet<T> build_generator(const NetConfig&, std::size_t, std::uint64_t);                    \
  template PatchDiscriminator<T> build_discriminator(const NetConfig&, std::uint64_t);                       \
  template Var<T> apply_conv(const BoundParams<T>&, const ConvSpec&, const Var<T>&, double);                 \
  template Var<T> apply_residual(const BoundParams<T>&, const std::vector<ConvSpec>&, const Var<T>&, double); \
  template Var<T> generator_forward(const BoundParams<T>&, const NetConfig&, const Var<T>&);                 \
  template Tensor<T> generator_forward(const GeneratorNet<T>&, const Tensor<T>&);                            \
  template Var<T> discriminator_forward(const BoundParams<T>&, const NetConfig&, const Var<T>&);             \
  template Tensor<T> discriminator_forward(const PatchDiscriminator<T>&, const Tensor<T>&);                  \
  template UnitNets<T> build_unit(const NetConfig&, std::size_t, std::uint64_t);                             \
  template Var<T> unit_encode_mean(const BoundParams<T>&, const BoundParams<T>&, const NetConfig&,           \
                                   const Var<T>&);                                                           \
  template Var<T> unit_decode(const BoundParams<T>&, const BoundParams<T>&, const NetConfig&, const Var<T>&); \
  template LatentCode<T> unit_encode(const UnitNets<T>&, const Tensor<T>&, Domain, std::uint64_t);           \
  template Tensor<T> unit_decode(const UnitNets<T>&, const Tensor<T>&, Domain);

ICONIFY_INSTANTIATE_NETWORKS(float)
ICONIFY_INSTANTIATE_NETWORKS(double)

#undef ICONIFY_INSTANTIATE_NETWORKS

}  // namespace iconify
