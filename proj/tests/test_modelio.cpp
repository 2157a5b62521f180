#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "hfrwkv/interchange.hpp"
#include "hfrwkv/modelio.hpp"
#include "hfrwkv/random_model.hpp"
#include "hfrwkv/status.hpp"
#include "oracles.hpp"

using namespace hfrwkv;
using namespace hfrwkv::modelio;
using Kind = ContainerError::Kind;

namespace {

const model::Dims kDims{1, 8, 16, 16};

model::QuantModel small_model(uint64_t seed = 1) { return model::quantize_model(model::random_model(kDims, seed)); }

template <class F>
Kind kind_of(F&& f) {
  try {
    f();
  } catch (const ContainerError& e) {
    return e.kind();
  }
  FAIL("no ContainerError thrown");
  return Kind::kBadHeader;
}

void put_le(std::vector<uint8_t>& b, size_t off, uint64_t v, int n) {
  for (int i = 0; i < n; ++i) b[off + static_cast<size_t>(i)] = static_cast<uint8_t>(v >> (8 * i));
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("hfrwkv_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("pack and load round trip") {
  const auto m = small_model();
  const auto bytes = pack_model(m);
  CHECK(bytes == pack_model(m));
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HFRW");

  const auto back = load_model(bytes);
  CHECK(back.dims == m.dims);
  CHECK(back.dpot == m.dpot);
  CHECK(back.tensors.size() == m.tensors.size());
  for (const auto& [name, t] : m.tensors) {
    const auto& u = back.at(name);
    CHECK(u.shape == t.shape);
    CHECK(u.encoding() == t.encoding());
    CHECK(u.dequantize() == t.dequantize());
  }
  CHECK(pack_model(back) == bytes);

  const auto info = read_directory(bytes);
  CHECK(info.header.dims == kDims);
  CHECK((info.header.flags & kFlagPow2Scales) != 0);
  CHECK(info.entries.size() == model::tensor_schema(kDims).size());
  CHECK(info.entries.front().name == "emb.weight");
}

TEST_CASE("non-default term widths round trip") {
  const quant::DeltaPotConfig cfg{{2, 2, 2, 2}};
  const auto m = model::quantize_model(model::random_model(kDims, 4), cfg);
  const auto back = load_model(pack_model(m));
  CHECK(back.dpot == cfg);
  CHECK(back.matrix("head.weight").codes == m.matrix("head.weight").codes);
}

TEST_CASE("typed errors") {
  const auto m = small_model();
  const auto bytes = pack_model(m);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK(kind_of([&] { load_model(bad); }) == Kind::kBadMagic);

  bad = bytes;
  put_le(bad, 4, 9, 2);
  CHECK(kind_of([&] { load_model(bad); }) == Kind::kBadVersion);

  bad.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  CHECK(kind_of([&] { load_model(bad); }) == Kind::kTruncated);
  bad.assign(bytes.begin(), bytes.begin() + 10);
  CHECK(kind_of([&] { load_model(bad); }) == Kind::kTruncated);

  bad = bytes;
  bad.push_back(0);
  CHECK(kind_of([&] { load_model(bad); }) == Kind::kBadHeader);

  auto missing = m;
  missing.tensors.erase("head.weight");
  CHECK(kind_of([&] { pack_model(missing); }) == Kind::kMissingTensor);

  auto empty = m;
  empty.tensors["extra"] = model::QTensor{{0}, quant::U9Vector{{}, quant::TensorScale{1.0}}};
  CHECK(kind_of([&] { pack_model(empty); }) == Kind::kEmptyTensor);

  auto wrong = m;
  wrong.tensors.at("blocks.0.ln1.bias").shape = {9};
  CHECK_THROWS(pack_model(wrong));

  auto noncanon = m;
  std::get<quant::QMatrix>(noncanon.tensors.at("head.weight").data).codes[0] = quant::DeltaPotCode{true, {0, 3, 0}};
  CHECK(kind_of([&] { pack_model(noncanon); }) == Kind::kCodeOutOfRange);

  // A U9 payload holding -256 is out of range.
  const auto info = read_directory(bytes);
  const auto& emb = info.entries.front();
  bad = bytes;
  bad[emb.offset] = 0x80;
  bad[emb.offset + 1] &= 0x7F;
  CHECK(kind_of([&] { load_model(bad); }) == Kind::kCodeOutOfRange);

  // A Delta-PoT code with a field after a zero field is rejected.
  const auto head = std::find_if(info.entries.begin(), info.entries.end(), [](const auto& e) { return e.name == "head.weight"; });
  bad = bytes;
  bad[head->offset] = 0b0'000'001'0;
  CHECK(kind_of([&] { load_model(bad); }) == Kind::kCodeOutOfRange);

  // A layer count beyond what the directory could hold.
  bad = bytes;
  put_le(bad, 8, 0x7FFFFFFF, 4);
  CHECK(kind_of([&] { load_model(bad); }) == Kind::kMissingTensor);

  CHECK(std::string(kind_name(Kind::kOverlap)) == "overlapping payloads");
}

TEST_CASE("loader reads stay inside declared ranges") {
  const auto bytes = pack_model(small_model());
  const auto info = read_directory(bytes);
  std::vector<std::pair<uint64_t, uint64_t>> allowed;
  uint64_t first = info.header.dir_offset;
  for (const auto& e : info.entries) {
    allowed.push_back({e.offset, e.offset + (e.bit_length + 7) / 8});
    first = std::min(first, e.offset);
  }
  allowed.push_back({0, first});
  allowed.push_back({info.header.dir_offset, bytes.size()});

  int64_t outside = 0, reads = 0;
  load_model(bytes, [&](uint64_t off, uint64_t len) {
    ++reads;
    const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                [&](const auto& r) { return off >= r.first && off + len <= r.second; });
    outside += !ok;
  });
  CHECK(reads > 0);
  CHECK(outside == 0);
}

TEST_CASE("fuzzed headers and directories only raise typed errors") {
  const auto bytes = pack_model(small_model());
  const auto info = read_directory(bytes);
  uint64_t header_end = info.header.dir_offset;
  for (const auto& e : info.entries) header_end = std::min(header_end, e.offset);
  const uint64_t dir = info.header.dir_offset;
  const uint64_t dir_len = bytes.size() - dir;

  int typed = 0, accepted = 0, untyped = 0;
  for (int i = 0; i < 10000; ++i) {
    auto b = bytes;
    const int edits = static_cast<int>(oracle::uniform_int(1, 6));
    for (int e = 0; e < edits; ++e) {
      const bool in_header = oracle::uniform_int(0, 2) == 0;
      const uint64_t pos = in_header ? static_cast<uint64_t>(oracle::uniform_int(0, static_cast<int64_t>(header_end) - 1))
                                     : dir + static_cast<uint64_t>(oracle::uniform_int(0, static_cast<int64_t>(dir_len) - 1));
      switch (oracle::uniform_int(0, 3)) {
        case 0: b[pos] ^= static_cast<uint8_t>(1u << oracle::uniform_int(0, 7)); break;
        case 1: b[pos] = static_cast<uint8_t>(oracle::uniform_int(0, 255)); break;
        case 2: b[pos] = 0xFF; break;
        default:
          if (pos + 8 <= b.size()) put_le(b, pos, static_cast<uint64_t>(oracle::uniform_int(0, INT64_MAX)), 8);
      }
    }
    if (oracle::uniform_int(0, 9) == 0) b.resize(static_cast<size_t>(oracle::uniform_int(0, static_cast<int64_t>(b.size()))));
    try {
      load_model(b);
      ++accepted;
    } catch (const ContainerError&) {
      ++typed;
    } catch (...) {
      ++untyped;
    }
  }
  CHECK(untyped == 0);
  CHECK(typed + accepted == 10000);
  CHECK(typed > 9000);
}

TEST_CASE("file io") {
  const auto dir = temp_dir("file");
  std::filesystem::create_directories(dir);
  const auto bytes = pack_model(small_model());
  write_file(dir / "m.hfrw", bytes);
  CHECK(read_file(dir / "m.hfrw") == bytes);
  CHECK_THROWS_AS(read_file(dir / "missing.hfrw"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("schema") {
  const auto s = model::tensor_schema(model::Dims{2, 8, 16, 32});
  // Per layer: 2 LayerNorms (4), 6 + 4 mix vectors, decay and bonus, 7 matrices.
  CHECK(s.size() == 1 + 2 * 23 + 2 + 1);
  CHECK(model::schema_size(model::Dims{2, 8, 16, 32}) == s.size());
  CHECK(s.front().name == "emb.weight");
  CHECK(s.back().name == "head.weight");
  CHECK(s.back().shape == std::vector<uint32_t>{32, 8});
  CHECK(model::block_name(1, "ffn.key.weight") == "blocks.1.ffn.key.weight");
  CHECK_THROWS_AS(model::Dims{}.validate(), ContractError);
}

TEST_CASE("quantize and dequantize models") {
  const auto fm = model::random_model(kDims, 2);
  CHECK(model::random_model(kDims, 2).tensors.at("head.weight").data == fm.tensors.at("head.weight").data);
  const auto qm = model::quantize_model(fm);
  CHECK(qm.pow2_scales());

  // Quantization is a fixed point of dequantize -> quantize.
  const auto again = model::quantize_model(model::dequantize_model(qm));
  CHECK(pack_model(again) == pack_model(qm));

  auto zero = fm;
  for (auto& [name, t] : zero.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
  const auto zq = model::quantize_model(zero);
  for (const auto& [name, t] : zq.tensors)
    for (double v : t.dequantize()) CHECK(v == 0.0);
}

TEST_CASE("interchange directory") {
  const auto dir = temp_dir("ix");
  const auto fm = model::random_model(kDims, 5);
  interchange::write_model(fm, dir);
  const auto back = interchange::read_model(dir);
  CHECK(back.dims == fm.dims);
  for (const auto& [name, t] : fm.tensors) {
    const auto& u = back.at(name);
    CHECK(u.shape == t.shape);
    for (size_t i = 0; i < t.data.size(); ++i) CHECK(u.data[i] == static_cast<double>(static_cast<float>(t.data[i])));
  }

  const auto manifest_path = dir / interchange::kManifestName;
  nlohmann::json manifest;
  std::ifstream(manifest_path) >> manifest;
  CHECK(manifest["format"] == "hfrwkv-interchange");
  CHECK(manifest["tensors"].size() == fm.tensors.size());

  auto edit = [&](auto&& f) {
    auto copy = manifest;
    f(copy);
    std::ofstream(manifest_path) << copy.dump();
  };
  edit([](auto& j) {
    auto& ts = j["tensors"];
    for (size_t i = 0; i < ts.size(); ++i)
      if (ts[i]["name"] == "blocks.0.att.time_mix_k") ts.erase(i);
  });
  CHECK_THROWS_AS(interchange::read_model(dir), interchange::InterchangeError);
  edit([](auto& j) { j["tensors"][0]["file"] = "../escape.f32"; });
  CHECK_THROWS_AS(interchange::read_model(dir), interchange::InterchangeError);
  edit([](auto& j) { j["format"] = "other"; });
  CHECK_THROWS_AS(interchange::read_model(dir), interchange::InterchangeError);
  edit([](auto& j) { j["tensors"][0]["shape"] = {16, 9}; });
  CHECK_THROWS_AS(interchange::read_model(dir), interchange::InterchangeError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(interchange::read_model(dir), interchange::InterchangeError);
}
