#include "defectvit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "defectvit/errors.hpp"

namespace defectvit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void tensor(const std::string& name, const Shape& shape, std::span<const Scalar> values) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) u64(d);
    for (Scalar v : values) u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw IoError("checkpoint " + path_ + " is truncated");
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct Stored {
  Shape shape;
  std::vector<Scalar> values;
};

json offsets_json(const Offsets& o) { return json::array({o[0], o[1], o[2], o[3]}); }

Offsets offsets_from(const json& j) {
  Offsets o{};
  for (std::size_t i = 0; i < 4; ++i) o[i] = j.at(i).get<double>();
  return o;
}

}  // namespace

void save_checkpoint(const fs::path& path, const RunConfig& cfg, const TrainState& state) {
  const NamedParams named = state.model.named_params();
  const json meta = {{"config", config_to_json(cfg)},
                     {"scaler", {{"min", offsets_json(state.scaler.min())}, {"max", offsets_json(state.scaler.max())}}},
                     {"anchor_grid",
                      {{"image_size", cfg.grid.image_size},
                       {"stride", cfg.grid.stride},
                       {"scales", cfg.grid.scales},
                       {"aspect_ratios", cfg.grid.aspect_ratios}}},
                     {"epoch", state.epoch},
                     {"step", state.step},
                     {"best_epoch", state.best_epoch},
                     {"adam_step", state.adam.step},
                     {"history", history_to_json(state.history)}};
  const std::string meta_text = meta.dump();

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(meta_text.size());
  w.bytes(meta_text.data(), meta_text.size());
  const bool moments = state.adam.m.size() == named.size();
  w.u32(static_cast<std::uint32_t>(named.size() * (moments ? 3 : 1)));
  for (const auto& [name, t] : named) w.tensor(name, t.shape(), t.data());
  if (moments) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      w.tensor("adam.m." + named[i].first, named[i].second.shape(), state.adam.m[i]);
      w.tensor("adam.v." + named[i].first, named[i].second.shape(), state.adam.v[i]);
    }
  }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw IoError("write failed for checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());

  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path.string() + " is not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
  }
  const std::uint64_t meta_len = r.u64();
  json meta;
  try {
    meta = json::parse(r.str(meta_len));
  } catch (const json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": bad metadata: " + e.what());
  }

  std::map<std::string, Stored> stored;
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str(r.u32());
    Stored s;
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) s.shape.push_back(r.u64());
    const std::size_t n = shape_numel(s.shape);
    s.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.values[i] = std::bit_cast<float>(r.u32());
    if (!stored.emplace(name, std::move(s)).second) {
      throw ValidationError("checkpoint " + path.string() + ": duplicate tensor " + name);
    }
  }
  if (!r.done()) throw IoError("checkpoint " + path.string() + " has trailing bytes");

  Checkpoint ck;
  try {
    ck.config = config_from_json(meta.at("config"), path.string());
    ck.config.finalize();
    TrainState& st = ck.state;
    st.scaler = MinMaxScaler(offsets_from(meta.at("scaler").at("min")), offsets_from(meta.at("scaler").at("max")));
    st.epoch = meta.at("epoch").get<int>();
    st.step = meta.at("step").get<std::uint64_t>();
    st.best_epoch = meta.at("best_epoch").get<int>();
    st.adam.step = meta.at("adam_step").get<std::int64_t>();
    st.history = history_from_json(meta.at("history"));
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + ": bad metadata: " + e.what());
  }

  TrainState& st = ck.state;
  st.model = DetectorModel(ck.config.model, 0);
  NamedParams named = st.model.named_params();
  auto take = [&](const std::string& name, const Shape& shape) -> Stored& {
    auto it = stored.find(name);
    if (it == stored.end()) throw ValidationError("checkpoint " + path.string() + " lacks tensor " + name);
    if (it->second.shape != shape) {
      throw ValidationError("checkpoint " + path.string() + ": tensor " + name + " has shape " +
                            shape_str(it->second.shape) + ", config expects " + shape_str(shape));
    }
    return it->second;
  };
  std::size_t used = 0;
  for (auto& [name, t] : named) {
    const Stored& s = take(name, t.shape());
    std::copy(s.values.begin(), s.values.end(), t.mutable_data().begin());
    ++used;
  }
  if (stored.count("adam.m." + named.front().first)) {
    for (auto& [name, t] : named) {
      st.adam.m.push_back(take("adam.m." + name, t.shape()).values);
      st.adam.v.push_back(take("adam.v." + name, t.shape()).values);
      used += 2;
    }
  }
  if (used != stored.size()) {
    for (const auto& [name, s] : stored) {
      bool known = false;
      for (const auto& [n, t] : named) known |= name == n || name == "adam.m." + n || name == "adam.v." + n;
      if (!known) throw ValidationError("checkpoint " + path.string() + " has unexpected tensor " + name);
    }
  }
  return ck;
}

}  // namespace defectvit
