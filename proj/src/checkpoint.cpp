#include "lsas/checkpoint.hpp"

#include <bit>
#include <algorithm>
#include <cstring>
#include <fstream>

#include "lsas/errors.hpp"

namespace lsas {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Json to_json(const ModelConfig& cfg) {
  return Json{{"depth", cfg.depth},
              {"num_classes", cfg.num_classes},
              {"attention", to_string(cfg.attention)},
              {"order", cfg.lsas_order},
              {"mu", cfg.gate_mu},
              {"input_height", cfg.input_height},
              {"input_width", cfg.input_width},
              {"se_reduction", cfg.se_reduction},
              {"eca_kernel", cfg.eca_kernel}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  try {
    c.depth = j.value("depth", c.depth);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.attention = parse_attention_kind(j.value("attention", to_string(c.attention)));
    c.lsas_order = j.value("order", c.lsas_order);
    c.gate_mu = j.value("mu", c.gate_mu);
    c.input_height = j.value("input_height", c.input_height);
    c.input_width = j.value("input_width", c.input_width);
    c.se_reduction = j.value("se_reduction", c.se_reduction);
    c.eca_kernel = j.value("eca_kernel", c.eca_kernel);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

namespace {

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in, const std::string& what) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw DataError("checkpoint truncated while reading " + what);
  return v;
}

std::string get_string(std::istream& in, std::uint64_t n, const std::string& what) {
  if (n > (1ULL << 32)) throw DataError("checkpoint corrupt: oversized " + what);
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint truncated while reading " + what);
  return s;
}

constexpr char kMagic[8] = {'L', 'S', 'A', 'S', 'C', 'K', 'P', 'T'};

}  // namespace

template <class T>
void write_checkpoint(const std::filesystem::path& path, const Json& meta,
                      const std::map<std::string, const Tensor<T>*>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string text = meta.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, std::is_same_v<T, float> ? 0 : 1);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
      for (int d : t->shape()) put<std::int32_t>(out, d);
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(T)));
    }
    if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointArchive read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError("'" + path.string() + "' is not an LSAS checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointArchive a;
  const auto meta_len = get<std::uint64_t>(in, "metadata length");
  try {
    a.meta = Json::parse(get_string(in, meta_len, "metadata"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const auto count = get<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in, get<std::uint32_t>(in, "name length"), "tensor name");
    const auto dtype = get<std::uint8_t>(in, name);
    const auto rank = get<std::uint32_t>(in, name);
    if (dtype > 1 || rank > 8) throw DataError("checkpoint corrupt at tensor '" + name + "'");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = get<std::int32_t>(in, name);
    Tensor<double> t(shape);
    if (dtype == 0) {
      std::vector<float> raw(t.size());
      if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)))) {
        throw DataError("checkpoint truncated in tensor '" + name + "'");
      }
      std::copy(raw.begin(), raw.end(), t.data());
    } else if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw DataError("checkpoint truncated in tensor '" + name + "'");
    }
    a.tensors.emplace(std::move(name), std::move(t));
  }
  return a;
}

template <class T>
std::map<std::string, const Tensor<T>*> model_state(Model<T>& model) {
  std::map<std::string, const Tensor<T>*> out;
  for (const auto& p : model.parameters()) out.emplace(p.name, p.value);
  for (const auto& b : model.buffers()) out.emplace(b.name, b.value);
  return out;
}

template <class T>
void load_model_state(Model<T>& model, const CheckpointArchive& archive) {
  auto copy = [&](const std::string& name, Tensor<T>& dst) {
    const auto it = archive.tensors.find(name);
    if (it == archive.tensors.end()) throw ConfigError("checkpoint/config mismatch: tensor '" + name + "' missing");
    if (it->second.shape() != dst.shape()) {
      throw ConfigError("checkpoint/config mismatch: '" + name + "' has shape " + shape_string(it->second.shape()) +
                        ", model expects " + shape_string(dst.shape()));
    }
    std::transform(it->second.data(), it->second.data() + it->second.size(), dst.data(),
                   [](double v) { return static_cast<T>(v); });
  };
  for (auto& p : model.parameters()) copy(p.name, *p.value);
  for (auto& b : model.buffers()) copy(b.name, *b.value);
}

template <class T>
Model<T> model_from_checkpoint(const CheckpointArchive& archive) {
  if (!archive.meta.contains("model")) throw ConfigError("checkpoint has no model config");
  Model<T> model = build_model<T>(model_config_from_json(archive.meta["model"]), 0);
  load_model_state(model, archive);
  return model;
}

template void write_checkpoint<float>(const std::filesystem::path&, const Json&,
                                      const std::map<std::string, const Tensor<float>*>&);
template void write_checkpoint<double>(const std::filesystem::path&, const Json&,
                                       const std::map<std::string, const Tensor<double>*>&);
template std::map<std::string, const Tensor<float>*> model_state(Model<float>&);
template std::map<std::string, const Tensor<double>*> model_state(Model<double>&);
template void load_model_state(Model<float>&, const CheckpointArchive&);
template void load_model_state(Model<double>&, const CheckpointArchive&);
template Model<float> model_from_checkpoint<float>(const CheckpointArchive&);
template Model<double> model_from_checkpoint<double>(const CheckpointArchive&);

}  // namespace lsas
