#include "iconify/training.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "iconify/checkpoint.hpp"

namespace iconify {

double LossReport::at(const std::string& name) const {
  for (const auto& [n, v] : terms) {
    if (n == name) return v;
  }
  throw std::out_of_range("loss report has no term '" + name + "'");
}

bool LossReport::contains(const std::string& name) const {
  return std::any_of(terms.begin(), terms.end(), [&](const auto& t) { return t.first == name; });
}

namespace {

template <typename T>
void check_finite_terms(const std::vector<std::pair<std::string, Var<T>>>& terms, const char* phase) {
  for (const auto& [name, v] : terms) {
    if (!v.value().all_finite()) {
      throw NonFiniteError(std::string(phase) + ": loss term '" + name + "' is not finite");
    }
  }
}

template <typename T>
void require_batch(const Tensor<T>& x, const Tensor<T>& y, std::size_t channels) {
  require_rank(x.shape(), 4, "train_step x");
  require_rank(y.shape(), 4, "train_step y");
  if (x.dim(1) != channels || y.dim(1) != channels) throw ShapeError("train_step: batches must have " +
                                                                     std::to_string(channels) + " channels");
  if (x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3)) {
    throw ShapeError("train_step: domain batches differ in size: " + to_string(x.shape()) + " vs " +
                     to_string(y.shape()));
  }
}

template <typename T>
void update(ParameterSet<T>& params, const BoundParams<T>& bound, const GradientMap<T>& grads, AdamState<T>& state) {
  adam_step(params, bound.gradients(grads), state);
}

}  // namespace

template <typename T>
void CycleGanModel<T>::set_learning_rate(double lr) {
  for (auto* s : {&opt_g_xy, &opt_g_yx, &opt_d_x, &opt_d_y}) s->lr = lr;
}

template <typename T>
CycleGanModel<T> make_cyclegan(const NetConfig& cfg, const AdamHyper& adam, std::size_t resolution, std::uint64_t seed,
                               std::size_t pool_capacity) {
  CycleGanModel<T> m{cfg,
                     build_generator<T>(cfg, resolution, derive_seed(seed, 1)),
                     build_generator<T>(cfg, resolution, derive_seed(seed, 2)),
                     build_discriminator<T>(cfg, derive_seed(seed, 3)),
                     build_discriminator<T>(cfg, derive_seed(seed, 4)),
                     ImagePool<T>(pool_capacity, derive_seed(seed, 5)),
                     ImagePool<T>(pool_capacity, derive_seed(seed, 6)),
                     {},
                     {},
                     {},
                     {}};
  m.opt_g_xy = AdamState<T>::init(m.g_xy.params, adam);
  m.opt_g_yx = AdamState<T>::init(m.g_yx.params, adam);
  m.opt_d_x = AdamState<T>::init(m.d_x.params, adam);
  m.opt_d_y = AdamState<T>::init(m.d_y.params, adam);
  return m;
}

template <typename T>
void UnitModel<T>::set_learning_rate(double lr) {
  for (auto* s : {&opt_e_x, &opt_e_y, &opt_g_x, &opt_g_y, &opt_shared, &opt_d_x, &opt_d_y}) s->lr = lr;
}

template <typename T>
UnitModel<T> make_unit(const NetConfig& cfg, const AdamHyper& adam, std::size_t resolution, std::uint64_t seed) {
  UnitModel<T> m{build_unit<T>(cfg, resolution, derive_seed(seed, 11)), {}, {}, {}, {}, {}, {}, {},
                 Rng(derive_seed(seed, 12))};
  m.opt_e_x = AdamState<T>::init(m.nets.e_x, adam);
  m.opt_e_y = AdamState<T>::init(m.nets.e_y, adam);
  m.opt_g_x = AdamState<T>::init(m.nets.g_x, adam);
  m.opt_g_y = AdamState<T>::init(m.nets.g_y, adam);
  m.opt_shared = AdamState<T>::init(m.nets.shared, adam);
  m.opt_d_x = AdamState<T>::init(m.nets.d_x.params, adam);
  m.opt_d_y = AdamState<T>::init(m.nets.d_y.params, adam);
  return m;
}

template <typename T>
CycleGanObjective<T> cyclegan_generator_objective(const BoundParams<T>& g_xy, const BoundParams<T>& g_yx,
                                                  const BoundParams<T>& d_x, const BoundParams<T>& d_y,
                                                  const NetConfig& cfg, const Var<T>& x, const Var<T>& y,
                                                  const LossWeights& w) {
  Tape<T>& tape = x.tape();
  CycleGanObjective<T> out;

  Var<T> fake_y, fake_x, gan_g, gan_f;
  {
    typename Tape<T>::Scope s(tape, "gan");
    fake_y = generator_forward(g_xy, cfg, x);
    fake_x = generator_forward(g_yx, cfg, y);
    gan_g = adversarial_loss(discriminator_forward(d_y, cfg, fake_y), true);
    gan_f = adversarial_loss(discriminator_forward(d_x, cfg, fake_x), true);
  }
  Var<T> cyc_x, cyc_y;
  {
    typename Tape<T>::Scope s(tape, "cycle");
    cyc_x = cycle_loss(x, generator_forward(g_yx, cfg, fake_y));
    cyc_y = cycle_loss(y, generator_forward(g_xy, cfg, fake_x));
  }
  Var<T> total = add(add(gan_g, gan_f), scale(add(cyc_x, cyc_y), w.lambda_cyc));

  Var<T> idt_x, idt_y, idt_weighted;
  if (w.lambda_idt > 0.0) {
    typename Tape<T>::Scope s(tape, "identity");
    // F should leave X images alone and G should leave Y images alone.
    idt_x = identity_loss(x, generator_forward(g_yx, cfg, x));
    idt_y = identity_loss(y, generator_forward(g_xy, cfg, y));
    idt_weighted = scale(add(idt_x, idt_y), w.lambda_idt);
    total = add(total, idt_weighted);
  } else {
    idt_x = tape.constant(Tensor<T>::scalar(T(0)));
    idt_y = tape.constant(Tensor<T>::scalar(T(0)));
    idt_weighted = tape.constant(Tensor<T>::scalar(T(0)));
  }

  out.total = total;
  out.fake_x = fake_x;
  out.fake_y = fake_y;
  out.terms = {{"gan_g", gan_g},   {"gan_f", gan_f}, {"cyc_x", cyc_x},         {"cyc_y", cyc_y},
               {"idt_x", idt_x},   {"idt_y", idt_y}, {"idt_weighted", idt_weighted}, {"g_total", total}};
  return out;
}

template <typename T>
Var<T> discriminator_objective(const BoundParams<T>& d, const NetConfig& cfg, const Var<T>& real, const Var<T>& fake) {
  Var<T> r = adversarial_loss(discriminator_forward(d, cfg, real), true);
  Var<T> f = adversarial_loss(discriminator_forward(d, cfg, fake), false);
  return scale(add(r, f), 0.5);
}

namespace {

template <typename T>
double discriminator_update(ParameterSet<T>& params, const NetConfig& cfg, AdamState<T>& opt, const Tensor<T>& real,
                            const Tensor<T>& fake, const char* name) {
  Tape<T> tape;
  BoundParams<T> bound(tape, params, true);
  Var<T> loss = discriminator_objective(bound, cfg, tape.constant(real), tape.constant(fake));
  check_finite_terms<T>({{name, loss}}, "discriminator step");
  update(params, bound, tape.backward(loss), opt);
  return static_cast<double>(loss.value().item());
}

template <typename T>
void append_terms(LossReport& report, const std::vector<std::pair<std::string, Var<T>>>& terms) {
  for (const auto& [name, v] : terms) report.terms.emplace_back(name, static_cast<double>(v.value().item()));
}

}  // namespace

template <typename T>
LossReport cyclegan_train_step(CycleGanModel<T>& model, const Tensor<T>& x_batch, const Tensor<T>& y_batch,
                               const LossWeights& weights) {
  weights.validate();
  require_batch(x_batch, y_batch, model.config.image_channels);
  LossReport report;

  Tensor<T> fake_x, fake_y;
  {
    Tape<T> tape;
    BoundParams<T> g_xy(tape, model.g_xy.params, true);
    BoundParams<T> g_yx(tape, model.g_yx.params, true);
    BoundParams<T> d_x(tape, model.d_x.params, false);
    BoundParams<T> d_y(tape, model.d_y.params, false);
    Var<T> x = tape.constant(x_batch);
    Var<T> y = tape.constant(y_batch);
    auto obj = cyclegan_generator_objective(g_xy, g_yx, d_x, d_y, model.config, x, y, weights);
    check_finite_terms(obj.terms, "generator step");
    auto grads = tape.backward(obj.total);
    update(model.g_xy.params, g_xy, grads, model.opt_g_xy);
    update(model.g_yx.params, g_yx, grads, model.opt_g_yx);
    append_terms(report, obj.terms);
    report.tape_scopes = tape.scope_counts();
    fake_x = obj.fake_x.value();
    fake_y = obj.fake_y.value();
  }

  const Tensor<T> pooled_y = model.pool_y.query(fake_y);
  const Tensor<T> pooled_x = model.pool_x.query(fake_x);
  const double d_y = discriminator_update(model.d_y.params, model.config, model.opt_d_y, y_batch, pooled_y, "d_y");
  const double d_x = discriminator_update(model.d_x.params, model.config, model.opt_d_x, x_batch, pooled_x, "d_x");
  report.terms.emplace_back("d_x", d_x);
  report.terms.emplace_back("d_y", d_y);
  return report;
}

template <typename T>
LossReport unit_train_step(UnitModel<T>& model, const Tensor<T>& x_batch, const Tensor<T>& y_batch,
                           const LossWeights& weights) {
  weights.validate();
  const NetConfig& cfg = model.nets.config;
  require_batch(x_batch, y_batch, cfg.image_channels);
  LossReport report;

  Tensor<T> x_to_y_value, y_to_x_value;
  {
    Tape<T> tape;
    BoundParams<T> e_x(tape, model.nets.e_x, true);
    BoundParams<T> e_y(tape, model.nets.e_y, true);
    BoundParams<T> g_x(tape, model.nets.g_x, true);
    BoundParams<T> g_y(tape, model.nets.g_y, true);
    BoundParams<T> shared(tape, model.nets.shared, true);
    BoundParams<T> d_x(tape, model.nets.d_x.params, false);
    BoundParams<T> d_y(tape, model.nets.d_y.params, false);
    Var<T> x = tape.constant(x_batch);
    Var<T> y = tape.constant(y_batch);

    auto sample = [&](const Var<T>& mean) {
      return add(mean, tape.constant(randn<T>(mean.shape(), model.noise_rng)));
    };

    Var<T> h_x, h_y, x_rec, y_rec, x_to_y, y_to_x;
    {
      typename Tape<T>::Scope s(tape, "vae");
      h_x = unit_encode_mean(e_x, shared, cfg, x);
      h_y = unit_encode_mean(e_y, shared, cfg, y);
      const Var<T> z_x = sample(h_x);
      const Var<T> z_y = sample(h_y);
      x_rec = unit_decode(g_x, shared, cfg, z_x);
      y_rec = unit_decode(g_y, shared, cfg, z_y);
      x_to_y = unit_decode(g_y, shared, cfg, z_x);
      y_to_x = unit_decode(g_x, shared, cfg, z_y);
    }
    Var<T> gan_x, gan_y;
    {
      typename Tape<T>::Scope s(tape, "gan");
      gan_x = adversarial_loss(discriminator_forward(d_x, cfg, y_to_x), true);
      gan_y = adversarial_loss(discriminator_forward(d_y, cfg, x_to_y), true);
    }
    Var<T> h_xy, h_yx, cyc_x, cyc_y;
    {
      typename Tape<T>::Scope s(tape, "cycle");
      h_xy = unit_encode_mean(e_y, shared, cfg, x_to_y);
      h_yx = unit_encode_mean(e_x, shared, cfg, y_to_x);
      cyc_x = cycle_loss(x, unit_decode(g_x, shared, cfg, sample(h_xy)));
      cyc_y = cycle_loss(y, unit_decode(g_y, shared, cfg, sample(h_yx)));
    }
    const Var<T> rec_x = l1_loss(x, x_rec), rec_y = l1_loss(y, y_rec);
    const Var<T> kl_x = latent_kl(h_x), kl_y = latent_kl(h_y);
    const Var<T> kl_cyc_x = latent_kl(h_xy), kl_cyc_y = latent_kl(h_yx);
    const Var<T> vae_x = unit_vae_loss(x, h_x, x_rec, weights);
    const Var<T> vae_y = unit_vae_loss(y, h_y, y_rec, weights);

    Var<T> total = add(add(gan_x, gan_y), add(vae_x, vae_y));
    total = add(total, scale(add(cyc_x, cyc_y), weights.lambda_cyc));
    total = add(total, scale(add(kl_cyc_x, kl_cyc_y), weights.lambda_kl));

    const std::vector<std::pair<std::string, Var<T>>> terms = {
        {"gan_x", gan_x}, {"gan_y", gan_y}, {"rec_x", rec_x},       {"rec_y", rec_y},
        {"kl_x", kl_x},   {"kl_y", kl_y},   {"vae_x", vae_x},       {"vae_y", vae_y},
        {"cyc_x", cyc_x}, {"cyc_y", cyc_y}, {"kl_cyc_x", kl_cyc_x}, {"kl_cyc_y", kl_cyc_y},
        {"g_total", total}};
    check_finite_terms(terms, "encoder/decoder step");
    auto grads = tape.backward(total);
    update(model.nets.e_x, e_x, grads, model.opt_e_x);
    update(model.nets.e_y, e_y, grads, model.opt_e_y);
    update(model.nets.g_x, g_x, grads, model.opt_g_x);
    update(model.nets.g_y, g_y, grads, model.opt_g_y);
    update(model.nets.shared, shared, grads, model.opt_shared);
    append_terms(report, terms);
    report.tape_scopes = tape.scope_counts();
    x_to_y_value = x_to_y.value();
    y_to_x_value = y_to_x.value();
  }

  const double d_x = discriminator_update(model.nets.d_x.params, cfg, model.opt_d_x, x_batch, y_to_x_value, "d_x");
  const double d_y = discriminator_update(model.nets.d_y.params, cfg, model.opt_d_y, y_batch, x_to_y_value, "d_y");
  report.terms.emplace_back("d_x", d_x);
  report.terms.emplace_back("d_y", d_y);
  return report;
}

Direction parse_direction(const std::string& text) {
  if (text == "photo2icon") return Direction::photo_to_icon;
  if (text == "icon2photo") return Direction::icon_to_photo;
  throw std::invalid_argument("unknown direction '" + text + "' (expected photo2icon or icon2photo)");
}

namespace {

template <typename T>
Tensor<T> unit_translate(const UnitNets<T>& nets, const Tensor<T>& img, Domain from, Domain to) {
  Tape<T> tape;
  BoundParams<T> enc(tape, nets.encoder(from), false);
  BoundParams<T> dec(tape, nets.decoder(to), false);
  BoundParams<T> shared(tape, nets.shared, false);
  const Var<T> z = unit_encode_mean(enc, shared, nets.config, tape.constant(img));
  return unit_decode(dec, shared, nets.config, z).value();
}

}  // namespace

template <typename T>
Tensor<T> convert(const CycleGanModel<T>& model, const Tensor<T>& img, Direction direction) {
  return generator_forward(direction == Direction::photo_to_icon ? model.g_xy : model.g_yx, img);
}

template <typename T>
Tensor<T> convert(const UnitModel<T>& model, const Tensor<T>& img, Direction direction) {
  const bool fwd = direction == Direction::photo_to_icon;
  return unit_translate(model.nets, img, fwd ? Domain::x : Domain::y, fwd ? Domain::y : Domain::x);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> reconstruct(const CycleGanModel<T>& model, const Tensor<T>& img, Direction direction) {
  const bool fwd = direction == Direction::photo_to_icon;
  Tensor<T> translated = generator_forward(fwd ? model.g_xy : model.g_yx, img);
  Tensor<T> back = generator_forward(fwd ? model.g_yx : model.g_xy, translated);
  return {std::move(translated), std::move(back)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> reconstruct(const UnitModel<T>& model, const Tensor<T>& img, Direction direction) {
  const bool fwd = direction == Direction::photo_to_icon;
  const Domain from = fwd ? Domain::x : Domain::y, to = fwd ? Domain::y : Domain::x;
  Tensor<T> translated = unit_translate(model.nets, img, from, to);
  Tensor<T> back = unit_translate(model.nets, translated, to, from);
  return {std::move(translated), std::move(back)};
}

StageSchedule StageSchedule::from_total(const std::vector<std::size_t>& resolutions, std::size_t total) {
  if (resolutions.empty()) throw std::invalid_argument("stage schedule: no resolutions");
  std::vector<double> share;
  if (resolutions.size() == 4) {
    share = {0.40, 0.25, 0.20, 0.15};
  } else {
    share.assign(resolutions.size(), 1.0 / static_cast<double>(resolutions.size()));
  }
  StageSchedule s;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < resolutions.size(); ++i) {
    const auto n = static_cast<std::size_t>(std::floor(share[i] * static_cast<double>(total) + 1e-9));
    s.stages.push_back({resolutions[i], n});
    assigned += n;
  }
  s.stages.front().iterations += total - assigned;
  s.validate();
  return s;
}

void StageSchedule::validate() const {
  if (stages.empty()) throw std::invalid_argument("stage schedule: no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].iterations == 0) {
      throw std::invalid_argument("stage schedule: stage " + std::to_string(i) + " has no iterations");
    }
    if (stages[i].resolution == 0 || stages[i].resolution % 4 != 0) {
      throw std::invalid_argument("stage schedule: resolution " + std::to_string(stages[i].resolution) +
                                  " is not a positive multiple of 4");
    }
    if (i > 0 && stages[i].resolution <= stages[i - 1].resolution) {
      throw std::invalid_argument("stage schedule: resolutions must be strictly increasing");
    }
  }
}

std::size_t StageSchedule::total_iterations() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.iterations;
  return n;
}

std::string format_log_line(const StepRecord& record) {
  std::string line = std::to_string(record.step) + " " + std::to_string(record.resolution) + " ";
  char buf[64];
  for (std::size_t i = 0; i < record.report.terms.size(); ++i) {
    const auto& [name, value] = record.report.terms[i];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    if (i > 0) line += ',';
    line += name + '=' + buf;
  }
  return line;
}

std::filesystem::path stage_checkpoint_name(std::size_t stage_index, std::size_t resolution) {
  return "stage" + std::to_string(stage_index) + "_" + std::to_string(resolution) + ".ckpt";
}

namespace {

LossReport step_model(CycleGanModel<float>& m, const Tensor<float>& x, const Tensor<float>& y, const LossWeights& w) {
  return cyclegan_train_step(m, x, y, w);
}

LossReport step_model(UnitModel<float>& m, const Tensor<float>& x, const Tensor<float>& y, const LossWeights& w) {
  return unit_train_step(m, x, y, w);
}

void prepare_stage(CycleGanModel<float>& m, std::size_t resolution) {
  // Pooled fakes from a coarser stage cannot be fed to the discriminator.
  for (auto* pool : {&m.pool_x, &m.pool_y}) {
    if (pool->size() > 0 && pool->buffer().front().dim(2) != resolution) pool->clear();
  }
}

void prepare_stage(UnitModel<float>&, std::size_t) {}

}  // namespace

RunResult run_coarse_to_fine(AnyModel& model, RunState& state, const StageSchedule& schedule,
                             const DomainDataset& x_native, const DomainDataset& y_native, const LossWeights& weights,
                             const RunOptions& options) {
  schedule.validate();
  weights.validate();
  if (x_native.size() == 0 || y_native.size() == 0) throw TrainingError("training needs images in both domains");
  if (state.stage_index > schedule.stages.size()) throw TrainingError("run state is past the end of the schedule");
  const std::uint64_t total = schedule.total_iterations();
  RunResult result;
  std::uint64_t steps_run = 0;

  while (state.stage_index < schedule.stages.size()) {
    const Stage stage = schedule.stages[state.stage_index];
    if (state.stage_iteration >= stage.iterations) {
      throw TrainingError("run state iteration exceeds stage " + std::to_string(state.stage_index));
    }
    const DomainDataset xs = stage_resize(x_native, stage.resolution);
    const DomainDataset ys = stage_resize(y_native, stage.resolution);
    std::visit([&](auto& m) { prepare_stage(m, stage.resolution); }, model);
    state.resolution = stage.resolution;
    if (state.stage_iteration == 0 && options.on_stage_begin) options.on_stage_begin(state.stage_index, model);

    for (; state.stage_iteration < stage.iterations; ++state.stage_iteration) {
      if (options.max_steps && steps_run >= *options.max_steps) return result;
      auto [xb, yb] = sample_unpaired_batch(xs, ys, options.batch_size, state.data_rng);
      const double lr = lr_schedule(state.global_step, total, options.base_lr);
      const LossReport report = std::visit(
          [&](auto& m) {
            m.set_learning_rate(lr);
            try {
              return step_model(m, xb, yb, weights);
            } catch (const NonFiniteError& e) {
              throw TrainingError("step " + std::to_string(state.global_step) + " at " +
                                  std::to_string(stage.resolution) + "px: " + e.what());
            }
          },
          model);
      if (options.on_step) options.on_step(StepRecord{state.global_step, stage.resolution, report});
      ++state.global_step;
      ++steps_run;
    }

    if (options.on_stage_end) options.on_stage_end(state.stage_index, model);
    const std::size_t finished = state.stage_index;
    state.stage_index += 1;
    state.stage_iteration = 0;
    if (options.checkpoint_dir) {
      const auto path = *options.checkpoint_dir / stage_checkpoint_name(finished, stage.resolution);
      save_checkpoint(path, model, state);
      result.checkpoints.push_back(path);
    }
  }
  result.completed = true;
  return result;
}

#define ICONIFY_INSTANTIATE_TRAINING(T)                                                                          \
  template struct CycleGanModel<T>;                                                                              \
  template struct UnitModel<T>;                                                                                  \
  template CycleGanModel<T> make_cyclegan(const NetConfig&, const AdamHyper&, std::size_t, std::uint64_t,        \
                                          std::size_t);                                                          \
  template UnitModel<T> make_unit(const NetConfig&, const AdamHyper&, std::size_t, std::uint64_t);               \
  template CycleGanObjective<T> cyclegan_generator_objective(const BoundParams<T>&, const BoundParams<T>&,       \
                                                             const BoundParams<T>&, const BoundParams<T>&,       \
                                                             const NetConfig&, const Var<T>&, const Var<T>&,     \
                                                             const LossWeights&);                                \
  template Var<T> discriminator_objective(const BoundParams<T>&, const NetConfig&, const Var<T>&, const Var<T>&); \
  template LossReport cyclegan_train_step(CycleGanModel<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                          const LossWeights&);                                                   \
  template LossReport unit_train_step(UnitModel<T>&, const Tensor<T>&, const Tensor<T>&, const LossWeights&);    \
  template Tensor<T> convert(const CycleGanModel<T>&, const Tensor<T>&, Direction);                              \
  template Tensor<T> convert(const UnitModel<T>&, const Tensor<T>&, Direction);                                  \
  template std::pair<Tensor<T>, Tensor<T>> reconstruct(const CycleGanModel<T>&, const Tensor<T>&, Direction);    \
  template std::pair<Tensor<T>, Tensor<T>> reconstruct(const UnitModel<T>&, const Tensor<T>&, Direction);

ICONIFY_INSTANTIATE_TRAINING(float)
ICONIFY_INSTANTIATE_TRAINING(double)

#undef ICONIFY_INSTANTIATE_TRAINING

}  // namespace iconify
