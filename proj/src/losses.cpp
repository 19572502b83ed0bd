#include "iconify/losses.hpp"

#include <algorithm>
#include <cmath>

namespace iconify {

void LossWeights::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"lambda_cyc", lambda_cyc}, {"lambda_idt", lambda_idt}, {"lambda_kl", lambda_kl}, {"lambda_rec", lambda_rec}};
  for (const auto& [name, v] : fields) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("loss weights: ") + name + " must be finite and >= 0");
    }
  }
}

const char* to_string(Preset p) {
  switch (p) {
    case Preset::bw_icons: return "bw-icons";
    case Preset::color_logos: return "color-logos";
    case Preset::person_only: return "person-only";
  }
  return "?";
}

Preset parse_preset(const std::string& text) {
  if (text == "bw-icons") return Preset::bw_icons;
  if (text == "color-logos") return Preset::color_logos;
  if (text == "person-only") return Preset::person_only;
  throw std::invalid_argument("unknown preset '" + text + "' (expected bw-icons, color-logos or person-only)");
}

LossWeights preset_weights(Preset p) {
  LossWeights w;
  w.lambda_idt = p == Preset::color_logos ? kFullIdentityWeight : kWeakenedIdentityWeight;
  return w;
}

template <typename T>
Var<T> adversarial_loss(const Var<T>& patch_map, bool target_real) {
  Var<T> target = patch_map.tape().constant(Tensor<T>(patch_map.shape(), target_real ? T(1) : T(0)));
  return mse_loss(patch_map, target);
}

template <typename T>
Var<T> cycle_loss(const Var<T>& original, const Var<T>& reconstructed) {
  return l1_loss(original, reconstructed);
}

template <typename T>
Var<T> identity_loss(const Var<T>& y, const Var<T>& g_of_y) {
  return l1_loss(y, g_of_y);
}

template <typename T>
Var<T> latent_kl(const Var<T>& latent_mean) {
  Var<T> zero = latent_mean.tape().constant(Tensor<T>(latent_mean.shape()));
  return scale(mse_loss(latent_mean, zero), 0.5);
}

template <typename T>
Var<T> unit_vae_loss(const Var<T>& x, const Var<T>& latent_mean, const Var<T>& x_rec, const LossWeights& w) {
  return add(scale(latent_kl(latent_mean), w.lambda_kl), scale(l1_loss(x, x_rec), w.lambda_rec));
}

template <typename T>
AdamState<T> AdamState<T>::init(const ParameterSet<T>& params, const AdamHyper& hyper) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params.tensor(i).shape());
    s.v.emplace_back(params.tensor(i).shape());
  }
  s.lr = hyper.lr;
  s.beta1 = hyper.beta1;
  s.beta2 = hyper.beta2;
  s.eps = hyper.eps;
  return s;
}

template <typename T>
void adam_step(ParameterSet<T>& params, const std::map<std::string, Tensor<T>>& grads, AdamState<T>& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match the parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = grads.find(params.name(i));
    if (it == grads.end()) throw MissingGradientError("adam_step: missing gradient for '" + params.name(i) + "'");
    if (it->second.shape() != params.tensor(i).shape() || state.m[i].shape() != params.tensor(i).shape()) {
      throw ShapeError("adam_step: shape mismatch for '" + params.name(i) + "'");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(state.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = grads.at(params.name(i)).data();
    if (std::all_of(g.begin(), g.end(), [](T v) { return v == T(0); })) continue;
    auto p = params.tensor(i).data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      p[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

double lr_schedule(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (step > total_steps) {
    throw std::out_of_range("lr_schedule: step " + std::to_string(step) + " exceeds total " +
                            std::to_string(total_steps));
  }
  if (total_steps == 0) return base_lr;
  const double half = static_cast<double>(total_steps) / 2.0;
  const double s = static_cast<double>(step);
  if (s <= half) return base_lr;
  return base_lr * (static_cast<double>(total_steps) - s) / (static_cast<double>(total_steps) - half);
}

template <typename T>
Tensor<T> ImagePool<T>::query(const Tensor<T>& fresh) {
  require_rank(fresh.shape(), 4, "pool_query");
  if (capacity_ == 0) return fresh;
  std::vector<Tensor<T>> out;
  out.reserve(fresh.dim(0));
  for (std::size_t n = 0; n < fresh.dim(0); ++n) {
    Tensor<T> image = fresh.sample(n);
    if (buffer_.size() < capacity_) {
      buffer_.push_back(image);
      out.push_back(std::move(image));
    } else if (rng_.uniform() > 0.5) {
      const std::size_t idx = rng_.index(capacity_);
      out.push_back(std::move(buffer_[idx]));
      buffer_[idx] = std::move(image);
    } else {
      out.push_back(std::move(image));
    }
  }
  return stack_batch<T>(out);
}

template <typename T>
void ImagePool<T>::restore(std::vector<Tensor<T>> buffer, const std::string& rng_state) {
  if (buffer.size() > capacity_) throw std::invalid_argument("image pool: restored buffer exceeds capacity");
  buffer_ = std::move(buffer);
  rng_.set_state(rng_state);
}

#define ICONIFY_INSTANTIATE_LOSSES(T)                                                                   \
  template Var<T> adversarial_loss(const Var<T>&, bool);                                               \
  template Var<T> cycle_loss(const Var<T>&, const Var<T>&);                                            \
  template Var<T> identity_loss(const Var<T>&, const Var<T>&);                                         \
  template Var<T> latent_kl(const Var<T>&);                                                            \
  template Var<T> unit_vae_loss(const Var<T>&, const Var<T>&, const Var<T>&, const LossWeights&);      \
  template struct AdamState<T>;                                                                        \
  template void adam_step(ParameterSet<T>&, const std::map<std::string, Tensor<T>>&, AdamState<T>&);   \
  template class ImagePool<T>;

ICONIFY_INSTANTIATE_LOSSES(float)
ICONIFY_INSTANTIATE_LOSSES(double)

#undef ICONIFY_INSTANTIATE_LOSSES

}  // namespace iconify
