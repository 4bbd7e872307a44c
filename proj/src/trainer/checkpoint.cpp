// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "config/run_config.hpp"
#include "trainer/trainer.hpp"

// Layout (little-endian):
//   "SCL1" | u32 version | u32 d_s d_t d_c d_z | u64 step | u32 epoch
//   | u32 len + train config JSON | u32 len + rng state
//   | u32 tensor count | per tensor: u32 name_len, name, u32 ndim, u32 dims[],
//     f32 values[], f32 adam_m[], f32 adam_v[]
namespace scale {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'S', 'C', 'L', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <class T>
  void put(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void put_floats(const Matrix<float>& m) {
    buf_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size()) {
      throw ValidationError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_floats(Matrix<float>& m, const char* what) {
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(float);
    need(n, what);
    std::memcpy(m.data(), buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelState& state, const fs::path& path) {
  auto& model = const_cast<ScaleModel<float>&>(state.model);
  const auto params = model.params();
  if (state.optimizer.first.size() != params.size()) throw ValidationError("checkpoint: optimizer state missing");

  Writer w;
  for (char ch : kMagic) w.put(ch);
  w.put(kVersion);
  for (std::size_t d : {model.dims.d_s, model.dims.d_t, model.dims.d_c, model.dims.d_z}) {
    w.put(static_cast<std::uint32_t>(d));
  }
  w.put(static_cast<std::uint64_t>(state.step));
  w.put(state.epoch);
  w.put_string(to_json(state.config).dump());
  w.put_string(state.rng.serialize());
  w.put(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    w.put_string(p->name);
    w.put(static_cast<std::uint32_t>(2));
    w.put(static_cast<std::uint32_t>(p->value.rows()));
    w.put(static_cast<std::uint32_t>(p->value.cols()));
    w.put_floats(p->value);
    w.put_floats(state.optimizer.first[i]);
    w.put_floats(state.optimizer.second[i]);
  }

  // Write-then-rename keeps the previous checkpoint intact on failure.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

ModelState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());

  char magic[4];
  for (char& ch : magic) ch = r.get<char>("magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ValidationError("checkpoint version error: " + path.string() + " is not a SCL1 checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw ValidationError("checkpoint version error: file has version " + std::to_string(version) + ", expected " +
                          std::to_string(kVersion));
  }
  ModelDims dims;
  dims.d_s = r.get<std::uint32_t>("dims");
  dims.d_t = r.get<std::uint32_t>("dims");
  dims.d_c = r.get<std::uint32_t>("dims");
  dims.d_z = r.get<std::uint32_t>("dims");
  dims.validate();

  ModelState st;
  st.step = r.get<std::uint64_t>("step");
  st.epoch = r.get<std::uint32_t>("epoch");
  try {
    st.config = train_config_from_json(nlohmann::ordered_json::parse(r.get_string("config")));
  } catch (const nlohmann::ordered_json::exception& e) {
    throw ValidationError(std::string("checkpoint config unreadable: ") + e.what());
  }
  st.rng.deserialize(r.get_string("rng state"));
  st.model = ScaleModel<float>(dims);
  const auto params = st.model.params();
  st.optimizer.ensure_moments(params);

  std::map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < params.size(); ++i) by_name[params[i]->name] = i;
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  std::vector<bool> filled(params.size(), false);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.get_string("tensor name");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("checkpoint: unknown tensor name '" + name + "'");
    if (filled[it->second]) throw ValidationError("checkpoint: duplicate tensor '" + name + "'");
    filled[it->second] = true;
    auto* p = params[it->second];
    const auto ndim = r.get<std::uint32_t>("tensor rank");
    if (ndim != 2) throw ValidationError("checkpoint: tensor '" + name + "' has unsupported rank");
    const auto rows = r.get<std::uint32_t>("tensor shape");
    const auto cols = r.get<std::uint32_t>("tensor shape");
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw ValidationError("checkpoint: tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", model expects " + std::to_string(p->value.rows()) + "x" +
                            std::to_string(p->value.cols()));
    }
    r.get_floats(p->value, "tensor values");
    r.get_floats(st.optimizer.first[it->second], "adam first moment");
    r.get_floats(st.optimizer.second[it->second], "adam second moment");
    p->zero_grad();
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes after tensor table");
  return st;
}

}  // namespace scale
