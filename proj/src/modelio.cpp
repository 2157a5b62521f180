#include "hfrwkv/modelio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "hfrwkv/status.hpp"

namespace hfrwkv::modelio {

using Kind = ContainerError::Kind;
using model::Encoding;

ContainerError::ContainerError(Kind kind, const std::string& what)
    : std::runtime_error(std::string(kind_name(kind)) + ": " + what), kind_(kind) {}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kBadMagic: return "bad magic";
    case Kind::kBadVersion: return "bad version";
    case Kind::kBadHeader: return "bad header";
    case Kind::kTruncated: return "truncated";
    case Kind::kCodeOutOfRange: return "code out of range";
    case Kind::kDanglingEntry: return "dangling directory entry";
    case Kind::kOverlap: return "overlapping payloads";
    case Kind::kShapeMismatch: return "shape mismatch";
    case Kind::kMissingTensor: return "missing tensor";
    case Kind::kDuplicateTensor: return "duplicate tensor";
    case Kind::kEmptyTensor: return "empty tensor";
  }
  return "unknown";
}

namespace {

constexpr size_t kMaxDims = 8;
constexpr uint64_t kMaxElements = uint64_t{1} << 40;

// ---------------------------------------------------------------------------
// Writing

class ByteWriter {
 public:
  void u8(uint8_t v) { b_.push_back(v); }
  void u16(uint16_t v) { le(v, 2); }
  void u32(uint32_t v) { le(v, 4); }
  void u64(uint64_t v) { le(v, 8); }
  void i16(int16_t v) { u16(static_cast<uint16_t>(v)); }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void bytes(std::span<const uint8_t> s) { b_.insert(b_.end(), s.begin(), s.end()); }
  void patch_u64(size_t at, uint64_t v) {
    for (int i = 0; i < 8; ++i) b_[at + static_cast<size_t>(i)] = static_cast<uint8_t>(v >> (8 * i));
  }
  void patch_u32(size_t at, uint32_t v) {
    for (int i = 0; i < 4; ++i) b_[at + static_cast<size_t>(i)] = static_cast<uint8_t>(v >> (8 * i));
  }
  size_t size() const { return b_.size(); }
  std::vector<uint8_t> take() { return std::move(b_); }

 private:
  void le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) b_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> b_;
};

class BitWriter {
 public:
  void put(uint32_t v, int bits) {
    for (int i = bits - 1; i >= 0; --i) {
      if (n_ % 8 == 0) b_.push_back(0);
      if ((v >> i) & 1u) b_.back() |= static_cast<uint8_t>(0x80u >> (n_ % 8));
      ++n_;
    }
  }
  uint64_t bit_length() const { return n_; }
  const std::vector<uint8_t>& bytes() const { return b_; }

 private:
  std::vector<uint8_t> b_;
  uint64_t n_ = 0;
};

int bits_per_element(Encoding e, const quant::DeltaPotConfig& cfg) {
  switch (e) {
    case Encoding::kDpot: return cfg.total_bits();
    case Encoding::kU9: return 9;
    case Encoding::kFx16: return 16;
  }
  return 0;
}

void encode_dpot(BitWriter& w, std::span<const quant::DeltaPotCode> codes, const quant::DeltaPotConfig& cfg,
                 const std::string& name) {
  for (const auto& c : codes) {
    if (!quant::is_canonical(c, cfg)) throw ContainerError(Kind::kCodeOutOfRange, name);
    w.put(quant::pack_code(c, cfg), cfg.total_bits());
  }
}

struct Prepared {
  DirectoryEntry entry;
  BitWriter bits;
};

void set_scale(DirectoryEntry& e, const quant::TensorScale& s) {
  e.scale = s.gamma;
  e.is_pow2 = s.is_pow2();
  e.scale_exp = e.is_pow2 ? static_cast<int16_t>(s.log2()) : 0;
}

Prepared prepare(const std::string& name, const model::QTensor& t, const quant::DeltaPotConfig& cfg) {
  Prepared p;
  p.entry.name = name;
  p.entry.shape = t.shape;
  p.entry.encoding = t.encoding();
  uint64_t numel = 1;
  for (uint32_t s : t.shape) numel *= s;
  if (t.shape.empty() || numel == 0) throw ContainerError(Kind::kEmptyTensor, name);
  if (t.shape.size() > kMaxDims || numel != t.numel()) throw ContainerError(Kind::kShapeMismatch, name);

  if (const auto* m = std::get_if<quant::QMatrix>(&t.data)) {
    if (t.shape.size() != 2 || t.shape[0] != m->rows || t.shape[1] != m->cols) {
      throw ContainerError(Kind::kShapeMismatch, name);
    }
    if (!(m->config == cfg)) throw ContainerError(Kind::kBadHeader, "Delta-PoT config differs for " + name);
    set_scale(p.entry, m->scale);
    encode_dpot(p.bits, m->codes, cfg, name);
  } else if (const auto* v = std::get_if<quant::DpotVector>(&t.data)) {
    if (t.shape.size() != 1) throw ContainerError(Kind::kShapeMismatch, name);
    if (!(v->config == cfg)) throw ContainerError(Kind::kBadHeader, "Delta-PoT config differs for " + name);
    set_scale(p.entry, v->scale);
    encode_dpot(p.bits, v->codes, cfg, name);
  } else if (const auto* u = std::get_if<quant::U9Vector>(&t.data)) {
    set_scale(p.entry, u->scale);
    for (int16_t c : u->codes) {
      if (c < -quant::kU9Max || c > quant::kU9Max) throw ContainerError(Kind::kCodeOutOfRange, name);
      p.bits.put(static_cast<uint32_t>(c) & 0x1FFu, 9);
    }
  } else {
    const auto& f = std::get<model::Fx16Tensor>(t.data);
    p.entry.scale = std::ldexp(1.0, -f.frac_bits);
    p.entry.scale_exp = static_cast<int16_t>(-f.frac_bits);
    p.entry.is_pow2 = true;
    for (int16_t r : f.raw) p.bits.put(static_cast<uint16_t>(r), 16);
  }
  if (!(p.entry.scale > 0.0) || !std::isfinite(p.entry.scale)) throw ContainerError(Kind::kBadHeader, "bad scale: " + name);
  p.entry.bit_length = p.bits.bit_length();
  return p;
}

// ---------------------------------------------------------------------------
// Reading

class Reader {
 public:
  Reader(std::span<const uint8_t> b, const ReadObserver& obs) : b_(b), obs_(obs) {}

  std::span<const uint8_t> take(uint64_t off, uint64_t len, const char* what) const {
    if (off > b_.size() || len > b_.size() - off) throw ContainerError(Kind::kTruncated, what);
    if (obs_) obs_(off, len);
    return b_.subspan(static_cast<size_t>(off), static_cast<size_t>(len));
  }
  uint64_t size() const { return b_.size(); }

 private:
  std::span<const uint8_t> b_;
  const ReadObserver& obs_;
};

class Cursor {
 public:
  Cursor(const Reader& r, uint64_t pos) : r_(r), pos_(pos) {}

  uint64_t le(int n, const char* what) {
    const auto s = r_.take(pos_, static_cast<uint64_t>(n), what);
    pos_ += static_cast<uint64_t>(n);
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= uint64_t{s[static_cast<size_t>(i)]} << (8 * i);
    return v;
  }
  uint8_t u8(const char* w) { return static_cast<uint8_t>(le(1, w)); }
  uint16_t u16(const char* w) { return static_cast<uint16_t>(le(2, w)); }
  uint32_t u32(const char* w) { return static_cast<uint32_t>(le(4, w)); }
  uint64_t u64(const char* w) { return le(8, w); }
  std::string str(size_t n, const char* w) {
    const auto s = r_.take(pos_, n, w);
    pos_ += n;
    return std::string(s.begin(), s.end());
  }
  uint64_t pos() const { return pos_; }

 private:
  const Reader& r_;
  uint64_t pos_;
};

class BitReader {
 public:
  explicit BitReader(std::span<const uint8_t> b) : b_(b) {}
  uint32_t get(int bits) {
    uint32_t v = 0;
    for (int i = 0; i < bits; ++i, ++n_) {
      v = (v << 1) | ((b_[static_cast<size_t>(n_ / 8)] >> (7 - n_ % 8)) & 1u);
    }
    return v;
  }

 private:
  std::span<const uint8_t> b_;
  uint64_t n_ = 0;
};

int64_t sign_extend(uint32_t v, int bits) {
  const uint32_t m = 1u << (bits - 1);
  return static_cast<int64_t>(v ^ m) - static_cast<int64_t>(m);
}

struct Parsed {
  ContainerInfo info;
  uint64_t header_end = 0;
};

Parsed parse(const Reader& r) {
  Parsed p;
  Header& h = p.info.header;
  Cursor c(r, 0);
  if (c.str(4, "magic") != std::string(kMagic, 4)) throw ContainerError(Kind::kBadMagic, "not an HFRW container");
  h.version = c.u16("version");
  if (h.version != kVersion) throw ContainerError(Kind::kBadVersion, "version " + std::to_string(h.version));
  h.flags = c.u16("flags");
  if ((h.flags & ~kFlagPow2Scales) != 0) throw ContainerError(Kind::kBadHeader, "unknown flags");
  h.dims.n_layers = c.u32("dims");
  h.dims.hidden = c.u32("dims");
  h.dims.ffn = c.u32("dims");
  h.dims.vocab = c.u32("dims");
  try {
    h.dims.validate();
  } catch (const ContractError& e) {
    throw ContainerError(Kind::kBadHeader, e.what());
  }
  const uint8_t n = c.u8("dpot config");
  if (n == 0 || n > quant::kMaxTerms) throw ContainerError(Kind::kBadHeader, "bad Delta-PoT term count");
  h.dpot.term_bits.clear();
  for (uint8_t i = 0; i < n; ++i) h.dpot.term_bits.push_back(c.u8("dpot config"));
  try {
    h.dpot.validate();
  } catch (const ContractError& e) {
    throw ContainerError(Kind::kBadHeader, e.what());
  }
  h.dir_offset = c.u64("directory offset");
  h.dir_count = c.u32("directory count");
  p.header_end = c.pos();
  if (h.dir_offset < p.header_end) throw ContainerError(Kind::kBadHeader, "directory overlaps header");
  if (h.dir_offset > r.size()) throw ContainerError(Kind::kTruncated, "directory beyond end of data");

  Cursor d(r, h.dir_offset);
  std::set<std::string> names;
  for (uint32_t i = 0; i < h.dir_count; ++i) {
    DirectoryEntry e;
    e.name = d.str(d.u16("record"), "record name");
    if (!names.insert(e.name).second) throw ContainerError(Kind::kDuplicateTensor, e.name);
    const uint8_t enc = d.u8("record");
    if (enc > static_cast<uint8_t>(Encoding::kFx16)) throw ContainerError(Kind::kBadHeader, "unknown encoding");
    e.encoding = static_cast<Encoding>(enc);
    const uint8_t ndims = d.u8("record");
    if (ndims == 0 || ndims > kMaxDims) throw ContainerError(Kind::kShapeMismatch, e.name);
    for (uint8_t k = 0; k < ndims; ++k) e.shape.push_back(d.u32("record dims"));
    e.scale = std::bit_cast<double>(d.u64("record scale"));
    e.scale_exp = static_cast<int16_t>(d.u16("record scale"));
    const uint8_t pow2 = d.u8("record scale");
    if (pow2 > 1) throw ContainerError(Kind::kBadHeader, "bad pow2 marker");
    e.is_pow2 = pow2 == 1;
    e.offset = d.u64("record payload");
    e.bit_length = d.u64("record payload");

    if (!(e.scale > 0.0) || !std::isfinite(e.scale)) throw ContainerError(Kind::kBadHeader, "bad scale: " + e.name);
    if (e.is_pow2 && (e.scale_exp < -1000 || e.scale_exp > 1000 || e.scale != std::ldexp(1.0, e.scale_exp))) {
      throw ContainerError(Kind::kBadHeader, "inconsistent scale exponent: " + e.name);
    }
    uint64_t numel = 1;
    for (uint32_t s : e.shape) {
      if (s == 0) throw ContainerError(Kind::kEmptyTensor, e.name);
      if (numel > kMaxElements / s) throw ContainerError(Kind::kShapeMismatch, e.name);
      numel *= s;
    }
    const auto bpe = static_cast<uint64_t>(bits_per_element(e.encoding, h.dpot));
    if (e.bit_length != numel * bpe) throw ContainerError(Kind::kShapeMismatch, "payload length of " + e.name);
    const uint64_t nbytes = (e.bit_length + 7) / 8;
    if (e.offset < p.header_end || e.offset > h.dir_offset || nbytes > h.dir_offset - e.offset) {
      throw ContainerError(Kind::kDanglingEntry, e.name);
    }
    p.info.entries.push_back(std::move(e));
  }
  if (d.pos() != r.size()) throw ContainerError(Kind::kBadHeader, "trailing bytes after directory");

  std::vector<std::pair<uint64_t, uint64_t>> ranges;
  for (const auto& e : p.info.entries) ranges.emplace_back(e.offset, e.offset + (e.bit_length + 7) / 8);
  std::sort(ranges.begin(), ranges.end());
  for (size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) throw ContainerError(Kind::kOverlap, "payload ranges overlap");
  }
  return p;
}

quant::TensorScale scale_of(const DirectoryEntry& e) { return quant::TensorScale{e.scale}; }

model::QTensor decode(const Reader& r, const DirectoryEntry& e, const quant::DeltaPotConfig& cfg) {
  const auto bytes = r.take(e.offset, (e.bit_length + 7) / 8, "payload");
  BitReader br(bytes);
  uint64_t numel = 1;
  for (uint32_t s : e.shape) numel *= s;
  model::QTensor t;
  t.shape = e.shape;
  switch (e.encoding) {
    case Encoding::kDpot: {
      if (e.shape.size() > 2) throw ContainerError(Kind::kShapeMismatch, e.name);
      std::vector<quant::DeltaPotCode> codes(numel);
      for (auto& c : codes) {
        c = quant::unpack_code(br.get(cfg.total_bits()), cfg);
        if (!quant::is_canonical(c, cfg)) throw ContainerError(Kind::kCodeOutOfRange, e.name);
      }
      if (e.shape.size() == 2) {
        t.data = quant::QMatrix{e.shape[0], e.shape[1], std::move(codes), scale_of(e), cfg};
      } else {
        t.data = quant::DpotVector{std::move(codes), scale_of(e), cfg};
      }
      break;
    }
    case Encoding::kU9: {
      quant::U9Vector u;
      u.scale = scale_of(e);
      u.codes.resize(numel);
      for (auto& c : u.codes) {
        const int64_t v = sign_extend(br.get(9), 9);
        if (v < -quant::kU9Max) throw ContainerError(Kind::kCodeOutOfRange, e.name);
        c = static_cast<int16_t>(v);
      }
      t.data = std::move(u);
      break;
    }
    case Encoding::kFx16: {
      if (!e.is_pow2 || e.scale_exp > 0 || e.scale_exp < -31) throw ContainerError(Kind::kBadHeader, e.name);
      model::Fx16Tensor f;
      f.frac_bits = -e.scale_exp;
      f.raw.resize(numel);
      for (auto& v : f.raw) v = static_cast<int16_t>(sign_extend(br.get(16), 16));
      t.data = std::move(f);
      break;
    }
  }
  return t;
}

}  // namespace

std::vector<uint8_t> pack_model(const model::QuantModel& m) {
  try {
    m.dims.validate();
    m.dpot.validate();
  } catch (const ContractError& e) {
    throw ContainerError(Kind::kBadHeader, e.what());
  }
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const auto& spec : model::tensor_schema(m.dims)) {
    auto it = m.tensors.find(spec.name);
    if (it == m.tensors.end()) throw ContainerError(Kind::kMissingTensor, spec.name);
    if (it->second.shape != spec.shape) throw ContainerError(Kind::kShapeMismatch, spec.name);
    if (it->second.encoding() != model::encoding_for(spec.kind)) throw ContainerError(Kind::kShapeMismatch, spec.name);
    order.push_back(spec.name);
    seen.insert(spec.name);
  }
  for (const auto& [name, t] : m.tensors) {
    if (!seen.count(name)) order.push_back(name);
  }

  std::vector<Prepared> prepared;
  prepared.reserve(order.size());
  for (const auto& name : order) prepared.push_back(prepare(name, m.tensors.at(name), m.dpot));

  ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const uint8_t*>(kMagic), 4));
  w.u16(kVersion);
  w.u16(m.pow2_scales() ? kFlagPow2Scales : 0);
  w.u32(m.dims.n_layers);
  w.u32(m.dims.hidden);
  w.u32(m.dims.ffn);
  w.u32(m.dims.vocab);
  w.u8(static_cast<uint8_t>(m.dpot.terms()));
  for (int k : m.dpot.term_bits) w.u8(static_cast<uint8_t>(k));
  const size_t dir_offset_at = w.size();
  w.u64(0);
  w.u32(static_cast<uint32_t>(prepared.size()));

  for (auto& p : prepared) {
    p.entry.offset = w.size();
    w.bytes(p.bits.bytes());
  }
  w.patch_u64(dir_offset_at, w.size());
  for (const auto& p : prepared) {
    const auto& e = p.entry;
    if (e.name.size() > std::numeric_limits<uint16_t>::max()) throw ContainerError(Kind::kBadHeader, "name too long");
    w.u16(static_cast<uint16_t>(e.name.size()));
    w.bytes(std::span(reinterpret_cast<const uint8_t*>(e.name.data()), e.name.size()));
    w.u8(static_cast<uint8_t>(e.encoding));
    w.u8(static_cast<uint8_t>(e.shape.size()));
    for (uint32_t s : e.shape) w.u32(s);
    w.f64(e.scale);
    w.i16(e.scale_exp);
    w.u8(e.is_pow2 ? 1 : 0);
    w.u64(e.offset);
    w.u64(e.bit_length);
  }
  return w.take();
}

ContainerInfo read_directory(std::span<const uint8_t> bytes, const ReadObserver& observer) {
  const Reader r(bytes, observer);
  return parse(r).info;
}

model::QuantModel load_model(std::span<const uint8_t> bytes, const ReadObserver& observer) {
  const Reader r(bytes, observer);
  const Parsed p = parse(r);
  const Header& h = p.info.header;

  if (p.info.entries.size() < model::schema_size(h.dims)) {
    throw ContainerError(Kind::kMissingTensor, "directory lists " + std::to_string(p.info.entries.size()) +
                                                   " tensors, the model needs " +
                                                   std::to_string(model::schema_size(h.dims)));
  }
  model::QuantModel m;
  m.dims = h.dims;
  m.dpot = h.dpot;
  for (const auto& e : p.info.entries) m.tensors.emplace(e.name, decode(r, e, h.dpot));

  for (const auto& spec : model::tensor_schema(m.dims)) {
    auto it = m.tensors.find(spec.name);
    if (it == m.tensors.end()) throw ContainerError(Kind::kMissingTensor, spec.name);
    const auto& t = it->second;
    const bool kind_ok = [&] {
      switch (spec.kind) {
        case model::TensorKind::kMatrix: return std::holds_alternative<quant::QMatrix>(t.data);
        case model::TensorKind::kMix: return std::holds_alternative<quant::DpotVector>(t.data);
        default: return std::holds_alternative<quant::U9Vector>(t.data);
      }
    }();
    if (t.shape != spec.shape || !kind_ok) throw ContainerError(Kind::kShapeMismatch, spec.name);
  }
  if (((h.flags & kFlagPow2Scales) != 0) != m.pow2_scales()) {
    throw ContainerError(Kind::kBadHeader, "power-of-two flag disagrees with the tensor scales");
  }
  return m;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace hfrwkv::modelio
