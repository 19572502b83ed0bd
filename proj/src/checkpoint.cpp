#include "iconify/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

namespace iconify {

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[4] = {'I', 'C', 'F', 'Y'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(checked_u32(s.size(), "string length"));
    out.insert(out.end(), s.begin(), s.end());
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    u32(bits);
  }
  static std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xffffffffULL) throw CheckpointFormatError(std::string("checkpoint: ") + what + " exceeds 32 bits");
    return static_cast<std::uint32_t>(v);
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[i]) << (8 * i);
    p_ += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  bool done() const { return p_ == end_; }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw CheckpointTruncatedError("checkpoint: unexpected end of data");
  }

  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kCheckpointVersion);
  w.str(data.kind);
  w.u32(Writer::checked_u32(data.tensors.size(), "record count"));
  for (const auto& [name, t] : data.tensors) {
    w.str(name);
    w.u32(Writer::checked_u32(t.rank(), "rank"));
    for (std::size_t d : t.shape()) w.u32(Writer::checked_u32(d, "dimension"));
    for (float v : t.data()) w.f32(v);
  }
  w.u32(Writer::checked_u32(data.meta.size(), "metadata count"));
  for (const auto& [k, v] : data.meta) {
    w.str(k);
    w.str(v);
  }
  w.u64(fnv1a64(w.out.data(), w.out.size()));
  return std::move(w.out);
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw CheckpointTruncatedError("checkpoint: file too short (" + std::to_string(bytes.size()) +
                                                        " bytes)");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointFormatError("checkpoint: bad magic bytes");
  Reader header(bytes.data() + 4, 4);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (fnv1a64(bytes.data(), body) != stored) throw CheckpointChecksumError("checkpoint: checksum mismatch");

  Reader r(bytes.data() + 8, body - 8);
  CheckpointData data;
  data.kind = r.str();
  const std::uint32_t records = r.u32();
  for (std::uint32_t i = 0; i < records; ++i) {
    std::string name = r.str();
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    std::vector<float> values(element_count(shape));
    for (auto& v : values) v = r.f32();
    data.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  const std::uint32_t meta = r.u32();
  for (std::uint32_t i = 0; i < meta; ++i) {
    std::string k = r.str();
    data.meta[std::move(k)] = r.str();
  }
  if (!r.done()) throw CheckpointFormatError("checkpoint: trailing bytes before the checksum");
  return data;
}

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

namespace {

void put_params(CheckpointData& d, const std::string& prefix, const ParameterSet<float>& p) {
  for (std::size_t i = 0; i < p.size(); ++i) d.tensors.emplace_back(prefix + "/" + p.name(i), p.tensor(i));
}

void put_adam(CheckpointData& d, const std::string& name, const ParameterSet<float>& p, const AdamState<float>& s) {
  for (std::size_t i = 0; i < p.size(); ++i) d.tensors.emplace_back("adam." + name + ".m/" + p.name(i), s.m[i]);
  for (std::size_t i = 0; i < p.size(); ++i) d.tensors.emplace_back("adam." + name + ".v/" + p.name(i), s.v[i]);
  d.meta["adam." + name + ".step"] = std::to_string(s.step);
  d.meta["adam." + name + ".lr"] = hex_double(s.lr);
  d.meta["adam." + name + ".beta1"] = hex_double(s.beta1);
  d.meta["adam." + name + ".beta2"] = hex_double(s.beta2);
  d.meta["adam." + name + ".eps"] = hex_double(s.eps);
}

void put_pool(CheckpointData& d, const std::string& name, const ImagePool<float>& pool) {
  char buf[32];
  for (std::size_t i = 0; i < pool.size(); ++i) {
    std::snprintf(buf, sizeof buf, "/%06zu", i);
    d.tensors.emplace_back(name + buf, pool.buffer()[i]);
  }
  d.meta[name + ".capacity"] = std::to_string(pool.capacity());
  d.meta[name + ".rng"] = pool.rng().state();
}

void put_common(CheckpointData& d, const NetConfig& cfg, const RunState& state) {
  d.meta["net.image_channels"] = std::to_string(cfg.image_channels);
  d.meta["net.ngf"] = std::to_string(cfg.ngf);
  d.meta["net.ndf"] = std::to_string(cfg.ndf);
  d.meta["net.n_res_blocks"] = std::to_string(cfg.n_res_blocks);
  d.meta["net.disc_downsamples"] = std::to_string(cfg.disc_downsamples);
  d.meta["net.norm_eps"] = hex_double(cfg.norm_eps);
  d.meta["run.stage_index"] = std::to_string(state.stage_index);
  d.meta["run.stage_iteration"] = std::to_string(state.stage_iteration);
  d.meta["run.global_step"] = std::to_string(state.global_step);
  d.meta["run.resolution"] = std::to_string(state.resolution);
  d.meta["run.data_rng"] = state.data_rng.state();
}

/// Consumes records in order by prefix.
class RecordCursor {
 public:
  explicit RecordCursor(const CheckpointData& d) : d_(d) {}

  ParameterSet<float> params(const std::string& prefix) {
    ParameterSet<float> p;
    const std::string lead = prefix + "/";
    while (pos_ < d_.tensors.size() && d_.tensors[pos_].first.starts_with(lead)) {
      p.add(d_.tensors[pos_].first.substr(lead.size()), d_.tensors[pos_].second);
      ++pos_;
    }
    if (p.size() == 0) throw CheckpointFormatError("checkpoint: no records for '" + prefix + "'");
    return p;
  }

  std::vector<Tensor<float>> aligned(const std::string& prefix, const ParameterSet<float>& p) {
    std::vector<Tensor<float>> out;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::string expect = prefix + "/" + p.name(i);
      if (pos_ >= d_.tensors.size() || d_.tensors[pos_].first != expect) {
        throw CheckpointFormatError("checkpoint: expected record '" + expect + "'");
      }
      if (d_.tensors[pos_].second.shape() != p.tensor(i).shape()) {
        throw CheckpointFormatError("checkpoint: shape mismatch for '" + expect + "'");
      }
      out.push_back(d_.tensors[pos_++].second);
    }
    return out;
  }

  std::vector<Tensor<float>> rest_with(const std::string& prefix) {
    std::vector<Tensor<float>> out;
    while (pos_ < d_.tensors.size() && d_.tensors[pos_].first.starts_with(prefix + "/")) {
      out.push_back(d_.tensors[pos_++].second);
    }
    return out;
  }

  void finish() const {
    if (pos_ != d_.tensors.size()) throw CheckpointFormatError("checkpoint: unexpected record '" +
                                                               d_.tensors[pos_].first + "'");
  }

 private:
  const CheckpointData& d_;
  std::size_t pos_ = 0;
};

const std::string& meta_at(const CheckpointData& d, const std::string& key) {
  auto it = d.meta.find(key);
  if (it == d.meta.end()) throw CheckpointFormatError("checkpoint: missing metadata '" + key + "'");
  return it->second;
}

std::uint64_t meta_u64(const CheckpointData& d, const std::string& key) {
  const std::string& s = meta_at(d, key);
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw CheckpointFormatError("checkpoint: bad integer for '" + key + "'");
  return v;
}

double meta_double(const CheckpointData& d, const std::string& key) {
  const std::string& s = meta_at(d, key);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw CheckpointFormatError("checkpoint: bad number for '" + key + "'");
  return v;
}

Rng meta_rng(const CheckpointData& d, const std::string& key) {
  Rng rng;
  try {
    rng.set_state(meta_at(d, key));
  } catch (const std::invalid_argument&) {
    throw CheckpointFormatError("checkpoint: bad rng state for '" + key + "'");
  }
  return rng;
}

AdamState<float> get_adam(RecordCursor& cur, const CheckpointData& d, const std::string& name,
                          const ParameterSet<float>& p) {
  AdamState<float> s;
  s.m = cur.aligned("adam." + name + ".m", p);
  s.v = cur.aligned("adam." + name + ".v", p);
  s.step = meta_u64(d, "adam." + name + ".step");
  s.lr = meta_double(d, "adam." + name + ".lr");
  s.beta1 = meta_double(d, "adam." + name + ".beta1");
  s.beta2 = meta_double(d, "adam." + name + ".beta2");
  s.eps = meta_double(d, "adam." + name + ".eps");
  return s;
}

ImagePool<float> get_pool(RecordCursor& cur, const CheckpointData& d, const std::string& name) {
  ImagePool<float> pool(meta_u64(d, name + ".capacity"));
  pool.restore(cur.rest_with(name), meta_at(d, name + ".rng"));
  return pool;
}

}  // namespace

CheckpointData to_checkpoint(const AnyModel& model, const RunState& state) {
  CheckpointData d;
  if (const auto* m = std::get_if<CycleGanModel<float>>(&model)) {
    d.kind = "cyclegan";
    put_params(d, "g_xy", m->g_xy.params);
    put_params(d, "g_yx", m->g_yx.params);
    put_params(d, "d_x", m->d_x.params);
    put_params(d, "d_y", m->d_y.params);
    put_adam(d, "g_xy", m->g_xy.params, m->opt_g_xy);
    put_adam(d, "g_yx", m->g_yx.params, m->opt_g_yx);
    put_adam(d, "d_x", m->d_x.params, m->opt_d_x);
    put_adam(d, "d_y", m->d_y.params, m->opt_d_y);
    put_pool(d, "pool_x", m->pool_x);
    put_pool(d, "pool_y", m->pool_y);
    put_common(d, m->config, state);
  } else {
    const auto& u = std::get<UnitModel<float>>(model);
    d.kind = "unit";
    put_params(d, "e_x", u.nets.e_x);
    put_params(d, "e_y", u.nets.e_y);
    put_params(d, "g_x", u.nets.g_x);
    put_params(d, "g_y", u.nets.g_y);
    put_params(d, "shared", u.nets.shared);
    put_params(d, "d_x", u.nets.d_x.params);
    put_params(d, "d_y", u.nets.d_y.params);
    put_adam(d, "e_x", u.nets.e_x, u.opt_e_x);
    put_adam(d, "e_y", u.nets.e_y, u.opt_e_y);
    put_adam(d, "g_x", u.nets.g_x, u.opt_g_x);
    put_adam(d, "g_y", u.nets.g_y, u.opt_g_y);
    put_adam(d, "shared", u.nets.shared, u.opt_shared);
    put_adam(d, "d_x", u.nets.d_x.params, u.opt_d_x);
    put_adam(d, "d_y", u.nets.d_y.params, u.opt_d_y);
    d.meta["unit.noise_rng"] = u.noise_rng.state();
    put_common(d, u.nets.config, state);
  }
  return d;
}

LoadedCheckpoint from_checkpoint(const CheckpointData& d) {
  NetConfig cfg;
  cfg.image_channels = meta_u64(d, "net.image_channels");
  cfg.ngf = meta_u64(d, "net.ngf");
  cfg.ndf = meta_u64(d, "net.ndf");
  cfg.n_res_blocks = meta_u64(d, "net.n_res_blocks");
  cfg.disc_downsamples = meta_u64(d, "net.disc_downsamples");
  cfg.norm_eps = meta_double(d, "net.norm_eps");

  RunState state;
  state.stage_index = meta_u64(d, "run.stage_index");
  state.stage_iteration = meta_u64(d, "run.stage_iteration");
  state.global_step = meta_u64(d, "run.global_step");
  state.resolution = meta_u64(d, "run.resolution");
  state.data_rng = meta_rng(d, "run.data_rng");

  RecordCursor cur(d);
  if (d.kind == "cyclegan") {
    CycleGanModel<float> m;
    m.config = cfg;
    m.g_xy = {cfg, cur.params("g_xy")};
    m.g_yx = {cfg, cur.params("g_yx")};
    m.d_x = {cfg, cur.params("d_x")};
    m.d_y = {cfg, cur.params("d_y")};
    m.opt_g_xy = get_adam(cur, d, "g_xy", m.g_xy.params);
    m.opt_g_yx = get_adam(cur, d, "g_yx", m.g_yx.params);
    m.opt_d_x = get_adam(cur, d, "d_x", m.d_x.params);
    m.opt_d_y = get_adam(cur, d, "d_y", m.d_y.params);
    m.pool_x = get_pool(cur, d, "pool_x");
    m.pool_y = get_pool(cur, d, "pool_y");
    cur.finish();
    return {AnyModel(std::move(m)), state};
  }
  if (d.kind == "unit") {
    UnitModel<float> u;
    u.nets.config = cfg;
    u.nets.e_x = cur.params("e_x");
    u.nets.e_y = cur.params("e_y");
    u.nets.g_x = cur.params("g_x");
    u.nets.g_y = cur.params("g_y");
    u.nets.shared = cur.params("shared");
    u.nets.d_x = {cfg, cur.params("d_x")};
    u.nets.d_y = {cfg, cur.params("d_y")};
    u.opt_e_x = get_adam(cur, d, "e_x", u.nets.e_x);
    u.opt_e_y = get_adam(cur, d, "e_y", u.nets.e_y);
    u.opt_g_x = get_adam(cur, d, "g_x", u.nets.g_x);
    u.opt_g_y = get_adam(cur, d, "g_y", u.nets.g_y);
    u.opt_shared = get_adam(cur, d, "shared", u.nets.shared);
    u.opt_d_x = get_adam(cur, d, "d_x", u.nets.d_x.params);
    u.opt_d_y = get_adam(cur, d, "d_y", u.nets.d_y.params);
    u.noise_rng = meta_rng(d, "unit.noise_rng");
    cur.finish();
    return {AnyModel(std::move(u)), state};
  }
  throw CheckpointFormatError("checkpoint: unknown model kind '" + d.kind + "'");
}

void save_checkpoint(const std::filesystem::path& path, const AnyModel& model, const RunState& state) {
  write_checkpoint_file(path, to_checkpoint(model, state));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint_file(path));
}

}  // namespace iconify
