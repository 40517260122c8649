#include "moco/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace moco::ckpt {

void Checkpoint::add(const std::string& name, Tensor<float> t) {
  if (find(name)) throw std::invalid_argument("checkpoint: duplicate array '" + name + "'");
  arrays.emplace_back(name, std::move(t));
}

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return &t;
  return nullptr;
}

const Tensor<float>& Checkpoint::require(const std::string& name) const {
  const Tensor<float>* t = find(name);
  if (!t) throw std::runtime_error("checkpoint: missing array '" + name + "'");
  return *t;
}

void save(const Checkpoint& c, const std::string& stem) {
  nlohmann::json manifest;
  manifest["format_version"] = c.format_version;
  manifest["stage"] = c.stage;
  manifest["seed"] = c.seed;
  manifest["config"] = c.config;

  nlohmann::json entries = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : c.arrays) {
    const uint64_t bytes = static_cast<uint64_t>(t.numel()) * 4;
    entries.push_back({{"name", name},
                       {"shape", t.shape},
                       {"dtype", "f32le"},
                       {"byte_offset", offset},
                       {"byte_length", bytes}});
    offset += bytes;
  }
  manifest["arrays"] = std::move(entries);

  std::ofstream mf(stem + ".json", std::ios::binary);
  if (!mf) throw std::runtime_error("checkpoint: cannot write " + stem + ".json");
  mf << manifest.dump(2) << "\n";
  mf.close();

  std::ofstream bf(stem + ".blob", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot write " + stem + ".blob");
  for (const auto& [name, t] : c.arrays) {
    static_assert(sizeof(float) == 4);
    bf.write(reinterpret_cast<const char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * 4));
  }
  if (!bf) throw std::runtime_error("checkpoint: write failure on " + stem + ".blob");
}

Checkpoint load(const std::string& stem) {
  std::ifstream mf(stem + ".json", std::ios::binary);
  if (!mf) throw std::runtime_error("checkpoint: cannot open " + stem + ".json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: bad manifest " + stem + ".json: " + e.what());
  }

  Checkpoint c;
  c.format_version = manifest.at("format_version").get<int>();
  if (c.format_version != 1)
    throw std::runtime_error("checkpoint: unsupported format_version " +
                             std::to_string(c.format_version));
  c.stage = manifest.at("stage").get<std::string>();
  c.seed = manifest.at("seed").get<uint64_t>();
  c.config = manifest.value("config", nlohmann::json::object());

  std::ifstream bf(stem + ".blob", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot open " + stem + ".blob");
  bf.seekg(0, std::ios::end);
  const uint64_t blob_size = static_cast<uint64_t>(bf.tellg());

  // offsets must be non-overlapping, in order, and in bounds
  uint64_t expect = 0;
  for (const auto& e : manifest.at("arrays")) {
    const std::string name = e.at("name").get<std::string>();
    const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    const uint64_t off = e.at("byte_offset").get<uint64_t>();
    const uint64_t len = e.at("byte_length").get<uint64_t>();
    if (e.at("dtype").get<std::string>() != "f32le")
      throw std::runtime_error("checkpoint: array '" + name + "' has unsupported dtype");
    if (off != expect)
      throw std::runtime_error("checkpoint: array '" + name + "' overlaps or leaves a gap");
    if (off + len > blob_size)
      throw std::runtime_error("checkpoint: array '" + name + "' exceeds blob size");
    const uint64_t want = static_cast<uint64_t>(Tensor<float>::numel_of(shape)) * 4;
    if (want != len)
      throw std::runtime_error("checkpoint: array '" + name + "' length does not match shape");
    expect = off + len;

    Tensor<float> t(shape);
    bf.seekg(static_cast<std::streamoff>(off));
    bf.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(len));
    if (!bf) throw std::runtime_error("checkpoint: short read on '" + name + "'");
    c.add(name, std::move(t));
  }
  return c;
}

}  // namespace moco::ckpt
