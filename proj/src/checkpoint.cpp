#include "softclu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace softclu {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'O', 'F', 'T', 'C', 'L', 'U', '\0'};

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json meta = {{"format_version", kCheckpointVersion},
                         {"config_hash", ckpt.config_hash},
                         {"epoch", ckpt.epoch},
                         {"step", ckpt.step},
                         {"solver", to_json(ckpt.solver)}};
  meta["encoder"] = to_json(ckpt.params.config);
  meta["encoder"]["J"] = ckpt.params.config.clusters;
  const std::string meta_str = meta.dump();

  std::string buf(kMagic, sizeof kMagic);
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint64_t>(buf, meta_str.size());
  buf += meta_str;

  auto params = ckpt.params;  // tensors() needs a mutable object
  const auto tensors = params.tensors();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (Index d : t.shape) put<std::uint64_t>(buf, static_cast<std::uint64_t>(d));
    for (double v : t.values) put<double>(buf, v);
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  Reader r(std::move(bytes));
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw CheckpointError(path.string() + " is not a softclu checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = r.get<std::uint64_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config_hash = meta.at("config_hash").get<std::string>();
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.step = meta.at("step").get<long>();
    ckpt.solver = solver_config_from_json(meta.at("solver"));
    ckpt.params = init_params<double>(encoder_config_from_json(meta.at("encoder")), 0);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }

  std::map<std::string, TensorView<double>> slots;
  for (auto& t : ckpt.params.tensors()) slots.emplace(t.name, t);

  const auto count = r.get<std::uint32_t>();
  if (count != slots.size()) throw CheckpointError("checkpoint tensor count does not match its encoder config");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name = r.bytes(r.get<std::uint32_t>());
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    const auto ndim = r.get<std::uint32_t>();
    std::vector<Index> shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<Index>(r.get<std::uint64_t>()));
    if (shape != it->second.shape) throw CheckpointError("shape mismatch for tensor '" + name + "'");
    for (double& v : it->second.values) v = r.get<double>();
    slots.erase(it);
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  return ckpt;
}

std::string file_digest(const std::filesystem::path& path) { return fnv1a_hex(read_file(path)); }

}  // namespace softclu
