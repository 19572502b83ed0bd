#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iconify/losses.hpp"
#include "iconify/networks.hpp"
#include "iconify/training.hpp"

namespace iconify {

/// Lists every offending key or line.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

enum class ModelKind { cyclegan, unit };

const char* to_string(ModelKind k);

/// One experiment. Sections and keys:
///
///   [run]      model, preset, seed, output_dir
///   [schedule] resolutions, total_iterations | stage_iterations
///   [weights]  lambda_cyc, lambda_idt, lambda_kl, lambda_rec
///   [network]  ngf, ndf, n_res_blocks, disc_downsamples
///   [optim]    lr, beta1, beta2, eps, batch_size, pool_capacity
///   [data]     x, y, x_filter, y_filter, synthetic_count, synthetic_size
///
/// Weights start from the preset; explicit keys override. Data sources are a
/// prepared directory or `synthetic:squares` / `synthetic:circles`.
struct RunConfig {
  ModelKind model = ModelKind::cyclegan;
  Preset preset = Preset::bw_icons;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  std::vector<std::size_t> resolutions{32, 64, 128, 256};
  std::size_t total_iterations = 2000;
  std::vector<std::size_t> stage_iterations;  // empty: derived from total_iterations

  LossWeights weights = preset_weights(Preset::bw_icons);
  NetConfig net;
  AdamHyper adam;
  std::size_t batch_size = 1;
  std::size_t pool_capacity = 50;

  std::string data_x;
  std::string data_y;
  std::string filter_x;
  std::string filter_y;
  std::size_t synthetic_count = 64;
  std::size_t synthetic_size = 256;

  StageSchedule schedule() const;
  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace iconify
