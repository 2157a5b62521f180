#include "hfrwkv/interchange.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "hfrwkv/status.hpp"

namespace hfrwkv::interchange {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "interchange payloads are read in native order");

namespace {

std::string file_name_for(const std::string& tensor) { return tensor + ".f32"; }

std::vector<double> read_f32(const fs::path& path, size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InterchangeError("cannot open payload " + path.string());
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec || size != count * sizeof(float)) throw InterchangeError("payload size mismatch: " + path.string());
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw InterchangeError("short read: " + path.string());
  return std::vector<double>(buf.begin(), buf.end());
}

}  // namespace

model::FloatModel read_model(const fs::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw InterchangeError("cannot open " + (dir / kManifestName).string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InterchangeError(std::string("bad manifest: ") + e.what());
  }

  model::FloatModel m;
  try {
    if (j.at("format").get<std::string>() != kFormatName) throw InterchangeError("unknown interchange format");
    if (j.at("version").get<int>() != kVersion) throw InterchangeError("unsupported interchange version");
    m.dims.n_layers = j.at("n_layers").get<uint32_t>();
    m.dims.hidden = j.at("hidden_dim").get<uint32_t>();
    m.dims.ffn = j.at("ffn_dim").get<uint32_t>();
    m.dims.vocab = j.at("vocab_size").get<uint32_t>();
    for (const auto& t : j.at("tensors")) {
      model::FloatTensor ft;
      ft.shape = t.at("shape").get<std::vector<uint32_t>>();
      uint64_t n = 1;
      for (uint32_t s : ft.shape) {
        if (s != 0 && n > (uint64_t{1} << 40) / s) throw InterchangeError("tensor too large");
        n *= s;
      }
      const auto file = t.at("file").get<std::string>();
      if (fs::path(file).is_absolute() || file.find("..") != std::string::npos) {
        throw InterchangeError("payload path escapes the model directory: " + file);
      }
      ft.data = read_f32(dir / file, n);
      const auto name = t.at("name").get<std::string>();
      if (!m.tensors.emplace(name, std::move(ft)).second) throw InterchangeError("duplicate tensor " + name);
    }
  } catch (const json::exception& e) {
    throw InterchangeError(std::string("bad manifest: ") + e.what());
  }
  if (m.tensors.size() < model::schema_size(m.dims)) {
    throw InterchangeError("manifest lists " + std::to_string(m.tensors.size()) + " tensors, the model needs " +
                           std::to_string(model::schema_size(m.dims)));
  }
  try {
    m.validate();
  } catch (const ContractError& e) {
    throw InterchangeError(e.what());
  }
  return m;
}

void write_model(const model::FloatModel& m, const fs::path& dir) {
  fs::create_directories(dir);
  json tensors = json::array();
  for (const auto& [name, t] : m.tensors) {
    const auto file = file_name_for(name);
    std::vector<float> buf(t.data.begin(), t.data.end());
    std::ofstream out(dir / file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw InterchangeError("cannot write " + (dir / file).string());
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"file", file}});
  }
  nlohmann::ordered_json j;
  j["format"] = kFormatName;
  j["version"] = kVersion;
  j["n_layers"] = m.dims.n_layers;
  j["hidden_dim"] = m.dims.hidden;
  j["ffn_dim"] = m.dims.ffn;
  j["vocab_size"] = m.dims.vocab;
  j["tensors"] = tensors;
  std::ofstream out(dir / kManifestName);
  out << j.dump(2) << "\n";
  if (!out) throw InterchangeError("cannot write manifest");
}

}  // namespace hfrwkv::interchange
