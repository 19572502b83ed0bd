#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iconify/networks.hpp"
#include "iconify/ops.hpp"
#include "iconify/rng.hpp"

namespace iconify {

struct LossWeights {
  double lambda_cyc = 10.0;
  double lambda_idt = 0.5;
  double lambda_kl = 0.1;
  double lambda_rec = 10.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Identity weight for black-and-white icon targets, where colour constancy is not wanted.
inline constexpr double kWeakenedIdentityWeight = 0.5;
/// Identity weight for colour targets (logos).
inline constexpr double kFullIdentityWeight = 5.0;

enum class Preset { bw_icons, color_logos, person_only };

const char* to_string(Preset p);
Preset parse_preset(const std::string& text);
LossWeights preset_weights(Preset p);

/// Least-squares GAN loss: mean (D - t)^2 with t = 1 for real, 0 for fake.
template <typename T>
Var<T> adversarial_loss(const Var<T>& patch_map, bool target_real);

/// Mean absolute difference between an image and its round trip.
template <typename T>
Var<T> cycle_loss(const Var<T>& original, const Var<T>& reconstructed);

template <typename T>
Var<T> identity_loss(const Var<T>& y, const Var<T>& g_of_y);

/// KL of N(mean, I) against N(0, I): 0.5 * mean(mean^2).
template <typename T>
Var<T> latent_kl(const Var<T>& latent_mean);

/// lambda_kl * latent_kl(mean) + lambda_rec * L1(x, x_rec).
template <typename T>
Var<T> unit_vae_loss(const Var<T>& x, const Var<T>& latent_mean, const Var<T>& x_rec, const LossWeights& w);

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamHyper&) const = default;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;  // aligned with the parameter set
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(const ParameterSet<T>& params, const AdamHyper& hyper);
  bool operator==(const AdamState&) const = default;
};

class MissingGradientError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bias-corrected Adam. A parameter whose gradient is identically zero is left
/// untouched, moments included.
template <typename T>
void adam_step(ParameterSet<T>& params, const std::map<std::string, Tensor<T>>& grads, AdamState<T>& state);

/// Constant for the first half, then linear decay to 0 at `total_steps`.
double lr_schedule(std::uint64_t step, std::uint64_t total_steps, double base_lr);

/// History buffer of generated images for discriminator updates.
template <typename T>
class ImagePool {
 public:
  explicit ImagePool(std::size_t capacity = 50, std::uint64_t seed = 0) : capacity_(capacity), rng_(seed) {}

  /// Returns a batch the size of `fresh`; while filling, images pass through.
  /// Once full, each image is swapped for a random stored one with probability 0.5.
  Tensor<T> query(const Tensor<T>& fresh);

  void clear() { buffer_.clear(); }
  std::size_t size() const { return buffer_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::vector<Tensor<T>>& buffer() const { return buffer_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

  void restore(std::vector<Tensor<T>> buffer, const std::string& rng_state);

  bool operator==(const ImagePool&) const = default;

 private:
  std::size_t capacity_;
  Rng rng_;
  std::vector<Tensor<T>> buffer_;
};

}  // namespace iconify
