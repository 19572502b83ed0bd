#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "iconify/dataset.hpp"
#include "iconify/losses.hpp"
#include "iconify/networks.hpp"

namespace iconify {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named scalar loss terms of one step, in a fixed order.
struct LossReport {
  std::vector<std::pair<std::string, double>> terms;
  /// Generator-tape node counts per scope ("gan", "cycle", "identity", ...).
  std::map<std::string, std::size_t> tape_scopes;

  double at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

template <typename T>
struct CycleGanModel {
  NetConfig config;
  GeneratorNet<T> g_xy;  // X -> Y
  GeneratorNet<T> g_yx;  // Y -> X
  PatchDiscriminator<T> d_x, d_y;
  ImagePool<T> pool_x, pool_y;  // generated X images for d_x, generated Y images for d_y
  AdamState<T> opt_g_xy, opt_g_yx, opt_d_x, opt_d_y;

  void set_learning_rate(double lr);
};

template <typename T>
CycleGanModel<T> make_cyclegan(const NetConfig& cfg, const AdamHyper& adam, std::size_t resolution, std::uint64_t seed,
                               std::size_t pool_capacity = 50);

template <typename T>
struct UnitModel {
  UnitNets<T> nets;
  AdamState<T> opt_e_x, opt_e_y, opt_g_x, opt_g_y, opt_shared, opt_d_x, opt_d_y;
  Rng noise_rng;

  void set_learning_rate(double lr);
};

template <typename T>
UnitModel<T> make_unit(const NetConfig& cfg, const AdamHyper& adam, std::size_t resolution, std::uint64_t seed);

/// The full CycleGAN generator objective with its per-term values.
template <typename T>
struct CycleGanObjective {
  Var<T> total;
  std::vector<std::pair<std::string, Var<T>>> terms;
  Var<T> fake_x, fake_y;
};

/// L = L_GAN(G) + L_GAN(F) + lambda_cyc (cyc_x + cyc_y) + lambda_idt (idt_x + idt_y).
/// The identity branch is not recorded at all when lambda_idt == 0.
template <typename T>
CycleGanObjective<T> cyclegan_generator_objective(const BoundParams<T>& g_xy, const BoundParams<T>& g_yx,
                                                  const BoundParams<T>& d_x, const BoundParams<T>& d_y,
                                                  const NetConfig& cfg, const Var<T>& x, const Var<T>& y,
                                                  const LossWeights& w);

/// Least-squares discriminator loss 0.5 (L(D(real), 1) + L(D(fake), 0)).
template <typename T>
Var<T> discriminator_objective(const BoundParams<T>& d, const NetConfig& cfg, const Var<T>& real, const Var<T>& fake);

/// Generator update, then both discriminator updates on pooled fakes.
template <typename T>
LossReport cyclegan_train_step(CycleGanModel<T>& model, const Tensor<T>& x_batch, const Tensor<T>& y_batch,
                               const LossWeights& weights);

/// Encoder/decoder update (VAE, cross-domain GAN and cycle terms through the
/// shared latent), then both discriminator updates.
template <typename T>
LossReport unit_train_step(UnitModel<T>& model, const Tensor<T>& x_batch, const Tensor<T>& y_batch,
                           const LossWeights& weights);

enum class Direction { photo_to_icon, icon_to_photo };

Direction parse_direction(const std::string& text);

/// One application of the translator for `direction`. UNIT uses the latent mean (no sampling).
template <typename T>
Tensor<T> convert(const CycleGanModel<T>& model, const Tensor<T>& img, Direction direction);
template <typename T>
Tensor<T> convert(const UnitModel<T>& model, const Tensor<T>& img, Direction direction);

/// (translated, translated back).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> reconstruct(const CycleGanModel<T>& model, const Tensor<T>& img, Direction direction);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> reconstruct(const UnitModel<T>& model, const Tensor<T>& img, Direction direction);

struct Stage {
  std::size_t resolution;
  std::size_t iterations;

  bool operator==(const Stage&) const = default;
};

struct StageSchedule {
  std::vector<Stage> stages;

  /// Splits `total` over the resolutions: 40/25/20/15 % for four stages,
  /// evenly otherwise; rounding remainder goes to the first stage.
  static StageSchedule from_total(const std::vector<std::size_t>& resolutions, std::size_t total);
  void validate() const;
  std::size_t total_iterations() const;

  bool operator==(const StageSchedule&) const = default;
};

/// Where a run is: the stage to execute next and how far into it.
struct RunState {
  std::size_t stage_index = 0;
  std::size_t stage_iteration = 0;
  std::uint64_t global_step = 0;
  std::size_t resolution = 0;  // of the most recently trained stage
  Rng data_rng;

  bool operator==(const RunState&) const = default;
};

struct StepRecord {
  std::uint64_t step;
  std::size_t resolution;
  const LossReport& report;
};

std::string format_log_line(const StepRecord& record);

using AnyModel = std::variant<CycleGanModel<float>, UnitModel<float>>;

struct RunOptions {
  std::size_t batch_size = 1;
  double base_lr = 2e-4;
  /// When set, a checkpoint is written at the end of every stage.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Stop (with consistent state) once this many global steps have run.
  std::optional<std::uint64_t> max_steps;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(std::size_t stage, const AnyModel&)> on_stage_begin;
  std::function<void(std::size_t stage, const AnyModel&)> on_stage_end;
};

struct RunResult {
  std::vector<std::filesystem::path> checkpoints;
  bool completed = false;
};

std::filesystem::path stage_checkpoint_name(std::size_t stage_index, std::size_t resolution);

/// Coarse-to-fine training: per stage, area-resize both domains from their
/// native resolution, train, checkpoint. Parameters carry over unchanged; the
/// image pools are cleared when the resolution changes.
RunResult run_coarse_to_fine(AnyModel& model, RunState& state, const StageSchedule& schedule,
                             const DomainDataset& x_native, const DomainDataset& y_native, const LossWeights& weights,
                             const RunOptions& options);

}  // namespace iconify
