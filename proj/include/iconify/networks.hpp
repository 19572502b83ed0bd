#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "iconify/ops.hpp"
#include "iconify/tape.hpp"
#include "iconify/tensor.hpp"

namespace iconify {

/// Ordered, named parameter tensors. Order is insertion order and is stable
/// across builds, casts and checkpoints.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> value);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t element_count() const noexcept;
  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }
  std::size_t index_of(std::string_view name) const;

  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor<T>& tensor(std::size_t i) { return entries_[i].second; }
  const Tensor<T>& tensor(std::size_t i) const { return entries_[i].second; }
  Tensor<T>& operator[](std::string_view name) { return entries_[index_of(name)].second; }
  const Tensor<T>& operator[](std::string_view name) const { return entries_[index_of(name)].second; }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [n, t] : entries_) out.add(n, t.template cast<U>());
    return out;
  }

  bool operator==(const ParameterSet& other) const { return entries_ == other.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A parameter set registered on a tape, as leaves (trainable) or constants.
template <typename T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tape, const ParameterSet<T>& params, bool trainable);
  /// Uses existing tape values, one per parameter in order; shapes must match.
  BoundParams(const ParameterSet<T>& params, std::vector<Var<T>> vars);

  const Var<T>& operator[](std::string_view name) const { return vars_.at(params_->index_of(name)); }
  bool contains(std::string_view name) const { return params_->contains(name); }
  const ParameterSet<T>& params() const { return *params_; }
  std::size_t size() const { return vars_.size(); }
  const Var<T>& at(std::size_t i) const { return vars_.at(i); }

  /// Gradients keyed by parameter name; parameters that received none are omitted.
  std::map<std::string, Tensor<T>> gradients(const GradientMap<T>& grads) const;

 private:
  const ParameterSet<T>* params_;
  std::vector<Var<T>> vars_;
};

/// Widths and depths shared by every network of a model.
struct NetConfig {
  std::size_t image_channels = 3;
  std::size_t ngf = 64;           // generator base width
  std::size_t ndf = 64;           // discriminator base width
  std::size_t n_res_blocks = 6;   // fixed across resolutions
  std::size_t disc_downsamples = 3;
  double norm_eps = 1e-5;

  bool operator==(const NetConfig&) const = default;
};

/// One convolutional layer of a documented layer list.
struct ConvSpec {
  std::string name;
  std::size_t in_channels, out_channels, kernel, stride;
  Padding padding;
  bool transpose = false;
  bool norm = false;
  std::optional<Activation> act;
  bool bias = false;
};

/// Shape of the weight tensor for a layer: out x in x k x k, or in x out x k x k when transposed.
Shape kernel_shape(const ConvSpec& spec);
std::size_t parameter_count(const ConvSpec& spec);

/// Generator layer list: reflect-pad 7x7 stem, two stride-2 down convs,
/// residual blocks (each two 3x3 reflect-pad convs), two stride-2 4x4
/// transpose convs, reflect-pad 7x7 tanh head.
struct GeneratorLayout {
  std::vector<ConvSpec> front;  // stem + down
  std::vector<std::vector<ConvSpec>> res_blocks;
  std::vector<ConvSpec> back;  // up + head
};

GeneratorLayout generator_layout(const NetConfig& cfg);
std::vector<ConvSpec> residual_block_layout(const std::string& prefix, std::size_t channels);
std::vector<ConvSpec> discriminator_layout(const NetConfig& cfg);

/// Patch-map extent for a square input, or nullopt if the stack does not fit.
std::optional<std::size_t> patch_extent(const NetConfig& cfg, std::size_t input);

template <typename T>
struct GeneratorNet {
  NetConfig config;
  ParameterSet<T> params;
};

template <typename T>
struct PatchDiscriminator {
  NetConfig config;
  ParameterSet<T> params;
};

/// Weights ~ N(0, 0.02), biases 0, norm gains 1 and offsets 0. Throws if
/// `resolution` is not a positive multiple of 4.
template <typename T>
GeneratorNet<T> build_generator(const NetConfig& cfg, std::size_t resolution, std::uint64_t seed);
template <typename T>
PatchDiscriminator<T> build_discriminator(const NetConfig& cfg, std::uint64_t seed);

template <typename T>
Var<T> apply_conv(const BoundParams<T>& params, const ConvSpec& spec, const Var<T>& x, double eps);
template <typename T>
Var<T> apply_residual(const BoundParams<T>& params, const std::vector<ConvSpec>& block, const Var<T>& x, double eps);

template <typename T>
Var<T> generator_forward(const BoundParams<T>& params, const NetConfig& cfg, const Var<T>& x);
template <typename T>
Tensor<T> generator_forward(const GeneratorNet<T>& net, const Tensor<T>& x);

template <typename T>
Var<T> discriminator_forward(const BoundParams<T>& params, const NetConfig& cfg, const Var<T>& img);
template <typename T>
Tensor<T> discriminator_forward(const PatchDiscriminator<T>& net, const Tensor<T>& img);

// ---------------------------------------------------------------------------
// UNIT: two encoders and two decoders around a shared latent space. The last
// encoder residual block and the first decoder residual block are a single
// parameter set used by both domains.

enum class Domain { x, y };

const char* to_string(Domain d);

struct UnitLayout {
  std::vector<ConvSpec> enc_front;                      // stem + down, per domain
  std::vector<std::vector<ConvSpec>> enc_private_res;   // per domain
  std::vector<ConvSpec> enc_shared;                     // shared
  std::vector<ConvSpec> dec_shared;                     // shared
  std::vector<std::vector<ConvSpec>> dec_private_res;   // per domain
  std::vector<ConvSpec> dec_back;                       // up + head, per domain
};

UnitLayout unit_layout(const NetConfig& cfg);

template <typename T>
struct UnitNets {
  NetConfig config;
  ParameterSet<T> e_x, e_y;  // private encoder parts
  ParameterSet<T> g_x, g_y;  // private decoder parts
  ParameterSet<T> shared;    // enc_shared.* and dec_shared.*
  PatchDiscriminator<T> d_x, d_y;

  ParameterSet<T>& encoder(Domain d) { return d == Domain::x ? e_x : e_y; }
  const ParameterSet<T>& encoder(Domain d) const { return d == Domain::x ? e_x : e_y; }
  ParameterSet<T>& decoder(Domain d) { return d == Domain::x ? g_x : g_y; }
  const ParameterSet<T>& decoder(Domain d) const { return d == Domain::x ? g_x : g_y; }
  /// The shared blocks as seen from either domain's path. Both views are one object.
  const ParameterSet<T>& shared_view(Domain) const { return shared; }
};

template <typename T>
UnitNets<T> build_unit(const NetConfig& cfg, std::size_t resolution, std::uint64_t seed);

template <typename T>
struct LatentCode {
  Tensor<T> mean;
  Tensor<T> sample;
};

/// Latent mean of `x` (N x 4ngf x H/4 x W/4).
template <typename T>
Var<T> unit_encode_mean(const BoundParams<T>& enc, const BoundParams<T>& shared, const NetConfig& cfg,
                        const Var<T>& x);
template <typename T>
Var<T> unit_decode(const BoundParams<T>& dec, const BoundParams<T>& shared, const NetConfig& cfg, const Var<T>& z);

/// mean + unit Gaussian noise drawn from `noise_seed`.
template <typename T>
LatentCode<T> unit_encode(const UnitNets<T>& model, const Tensor<T>& img, Domain domain, std::uint64_t noise_seed);
template <typename T>
Tensor<T> unit_decode(const UnitNets<T>& model, const Tensor<T>& z, Domain domain);

}  // namespace iconify
