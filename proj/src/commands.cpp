#include "hfrwkv/commands.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "hfrwkv/cycles.hpp"
#include "hfrwkv/engine.hpp"
#include "hfrwkv/interchange.hpp"
#include "hfrwkv/modelio.hpp"
#include "hfrwkv/random_model.hpp"
#include "hfrwkv/units.hpp"

namespace hfrwkv::cli {

using ojson = nlohmann::ordered_json;

namespace {

// Bounds checked by `units`.
constexpr double kDivBound = 0.035;
constexpr double kExpBound = 0.035;
constexpr double kSigmoidBound = 0.02;

/// Prints rows as JSON lines, or as an aligned table when pretty.
class Report {
 public:
  Report(std::ostream& out, bool pretty) : out_(out), pretty_(pretty) {}
  ~Report() { flush(); }

  void row(ojson r) {
    if (!pretty_) {
      out_ << r.dump() << "\n";
      return;
    }
    rows_.push_back(std::move(r));
  }

  void flush() {
    if (rows_.empty()) return;
    std::vector<std::string> cols;
    for (const auto& r : rows_) {
      for (const auto& [k, v] : r.items()) {
        if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
      }
    }
    std::vector<std::vector<std::string>> cells;
    std::vector<size_t> width(cols.size());
    for (size_t c = 0; c < cols.size(); ++c) width[c] = cols[c].size();
    for (const auto& r : rows_) {
      std::vector<std::string> line;
      for (size_t c = 0; c < cols.size(); ++c) {
        std::string s;
        if (r.contains(cols[c])) {
          const auto& v = r[cols[c]];
          s = v.is_string() ? v.get<std::string>() : v.dump();
        }
        width[c] = std::max(width[c], s.size());
        line.push_back(std::move(s));
      }
      cells.push_back(std::move(line));
    }
    auto print = [&](const std::vector<std::string>& line) {
      for (size_t c = 0; c < line.size(); ++c) {
        out_ << std::left << std::setw(static_cast<int>(width[c])) << line[c] << (c + 1 < line.size() ? "  " : "\n");
      }
    };
    print(cols);
    for (const auto& line : cells) print(line);
    rows_.clear();
  }

 private:
  std::ostream& out_;
  bool pretty_;
  std::vector<ojson> rows_;
};

uint32_t argmax(const fx::Vec& v) {
  return static_cast<uint32_t>(std::max_element(v.elems.begin(), v.elems.end()) - v.elems.begin());
}

}  // namespace

std::vector<uint32_t> parse_prompt(const std::string& spec) {
  std::string text = spec;
  if (!spec.empty() && spec.front() == '@') {
    std::ifstream in(spec.substr(1));
    if (!in) throw std::runtime_error("cannot open prompt file " + spec.substr(1));
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream is(text);
  std::vector<uint32_t> out;
  std::string tok;
  while (is >> tok) {
    size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size() || v > UINT32_MAX) throw std::runtime_error("bad token id: " + tok);
    out.push_back(static_cast<uint32_t>(v));
  }
  if (out.empty()) throw std::runtime_error("empty prompt");
  return out;
}

std::vector<int> parse_term_bits(const std::string& spec) {
  std::string text = spec;
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream is(text);
  std::vector<int> out;
  int v = 0;
  while (is >> v) out.push_back(v);
  if (!is.eof() || out.empty()) throw std::runtime_error("bad term bit list: " + spec);
  return out;
}

int cmd_quantize(const QuantizeOptions& o, std::ostream& out, std::ostream& err) {
  try {
    const quant::DeltaPotConfig cfg{o.term_bits};
    cfg.validate();
    const auto fm = interchange::read_model(o.input);
    const auto qm = model::quantize_model(fm, cfg);
    if (!o.out.empty()) modelio::write_file(o.out, modelio::pack_model(qm));

    std::vector<quant::Scheme> schemes{quant::Scheme::kRtn, quant::Scheme::kPot, quant::Scheme::kLogQ,
                                       quant::Scheme::kDeltaPot};
    if (o.scheme) schemes = {quant::parse_scheme(*o.scheme)};

    Report rep(out, o.pretty);
    for (const auto& spec : model::tensor_schema(fm.dims)) {
      const auto& src = fm.at(spec.name).data;
      const auto deq = qm.at(spec.name).dequantize();
      const auto e = quant::reconstruction_error(src, deq);
      rep.row({{"tensor", spec.name},
               {"encoding", std::string(model::encoding_name(model::encoding_for(spec.kind)))},
               {"numel", spec.numel()},
               {"mse", e.mse},
               {"max_abs", e.max_abs}});
    }
    if (o.compare) {
      rep.flush();
      for (const auto& spec : model::tensor_schema(fm.dims)) {
        if (spec.kind != model::TensorKind::kMatrix) continue;
        const auto& src = fm.at(spec.name).data;
        for (auto s : schemes) {
          const auto fq = quant::quantize_baseline(src, s, o.bits);
          const auto e = quant::reconstruction_error(src, fq.dequant);
          rep.row({{"tensor", spec.name},
                   {"scheme", std::string(quant::scheme_name(s))},
                   {"bits", o.bits},
                   {"mse", e.mse},
                   {"max_abs", e.max_abs}});
        }
      }
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "quantize: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_dequantize(const DequantizeOptions& o, std::ostream& out, std::ostream& err) {
  try {
    const auto qm = modelio::load_model(modelio::read_file(o.model));
    interchange::write_model(model::dequantize_model(qm), o.out);
    out << ojson{{"written", o.out.string()}, {"tensors", qm.tensors.size()}}.dump() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "dequantize: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_infer(const InferOptions& o, std::ostream& out, std::ostream& err) {
  try {
    if (o.tokens < 1) throw std::runtime_error("--tokens must be >= 1");
    const auto qm = modelio::load_model(modelio::read_file(o.model));
    engine::Hardware hw;
    hw.mvpa.lanes = o.lanes;
    hw.tree_par = o.tree_par;
    hw.threads = o.threads;
    const engine::Engine eng(qm, hw);
    auto state = eng.new_state();
    for (uint32_t t : o.prompt) {
      if (t >= qm.dims.vocab) throw std::runtime_error("prompt token " + std::to_string(t) + " exceeds vocabulary");
    }

    Report rep(out, o.pretty);
    CycleLedger total;
    std::vector<uint32_t> generated;
    uint32_t next = 0;
    auto step = [&](uint32_t input, const char* phase) {
      CycleLedger ledger;
      next = argmax(eng.forward_token(input, state, &ledger));
      ojson by_op;
      for (const auto& [op, c] : ledger.by_op()) by_op[op] = c;
      rep.row({{"phase", phase}, {"input", input}, {"token", next}, {"cycles", ledger.total()}, {"by_op", by_op}});
      total.append(ledger);
    };
    for (uint32_t t : o.prompt) step(t, "prompt");
    generated.push_back(next);
    for (int i = 1; i < o.tokens; ++i) {
      step(next, "generate");
      generated.push_back(next);
    }
    rep.flush();
    out << ojson{{"generated", generated}, {"total_cycles", total.total()}, {"flags", state.flags.describe()}}.dump()
        << "\n";
    if (o.strict && state.flags.any()) {
      err << "infer: hardware flags raised: " << state.flags.describe() << "\n";
      return kExitViolation;
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "infer: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_units(const UnitsOptions& o, std::ostream& out, std::ostream& err) {
  if (o.div_bits < 1 || o.div_bits > 16) {
    err << "units: divider sweep width must be in [1, 16]\n";
    return kExitError;
  }
  Report rep(out, o.pretty);
  bool ok = true;

  {
    int64_t mismatches = units::lod(0) == -1 ? 0 : 1;
    for (uint32_t x = 1; x < (1u << 16); ++x) mismatches += units::lod(x) != static_cast<int>(std::bit_width(x)) - 1;
    ok &= mismatches == 0;
    rep.row({{"unit", "lod"}, {"cases", 1 << 16}, {"mismatches", mismatches}, {"pass", mismatches == 0}});
  }
  {
    const auto lut = units::DivLut::midpoint();
    const uint32_t hi = 1u << o.div_bits;
    double max_rel = 0.0, sum_rel = 0.0;
    bool diag = true;
    for (uint32_t x = 1; x < hi; ++x) {
      for (uint32_t y = 1; y < hi; ++y) {
        const double q = units::divu_parts(x, y, lut).value();
        const double rel = std::fabs(q * y / x - 1.0);
        max_rel = std::max(max_rel, rel);
        sum_rel += rel;
      }
      diag &= units::divu_parts(x, x, lut).value() == 1.0;
    }
    StatusFlags f;
    const uint16_t z = units::divu(7, 0, lut, &f);
    const bool div0 = z == 0xFFFF && f.test(Flag::kDivByZero);
    const double n = static_cast<double>(hi - 1) * static_cast<double>(hi - 1);
    const bool pass = max_rel <= kDivBound && diag && div0;
    ok &= pass;
    rep.row({{"unit", "divu"},
             {"cases", static_cast<int64_t>(n)},
             {"max_rel_err", max_rel},
             {"mean_rel_err", sum_rel / n},
             {"bound", kDivBound},
             {"diagonal_exact", diag},
             {"div_by_zero_saturates", div0},
             {"pass", pass}});
  }
  const units::ExpSigmaUnit unit;
  {
    double max_rel = 0.0, sum_rel = 0.0, prev = -1.0;
    bool monotone = true;
    int n = 0;
    for (int raw = -8 * 2048; raw < 8 * 2048; raw += 8) {
      const double x = raw / 2048.0;
      const double y = unit.exp_parts(fx::Value{raw, fx::kUnitIn}).value();
      const double rel = std::fabs(y / std::exp(x) - 1.0);
      max_rel = std::max(max_rel, rel);
      sum_rel += rel;
      monotone &= y >= prev;
      prev = y;
      ++n;
    }
    const bool one = unit.exp(fx::Value{0, fx::kUnitIn}, fx::kProb).raw == (1 << fx::kProb.frac_bits);
    const bool pass = max_rel <= kExpBound && monotone && one;
    ok &= pass;
    rep.row({{"unit", "exp"},
             {"cases", n},
             {"max_rel_err", max_rel},
             {"mean_rel_err", sum_rel / n},
             {"bound", kExpBound},
             {"monotone", monotone},
             {"exp0_exact", one},
             {"pass", pass}});
  }
  {
    double max_abs = 0.0, sum_abs = 0.0;
    bool symmetric = true, in_range = true;
    int n = 0;
    constexpr int kOne = 1 << fx::kProb.frac_bits;
    for (int raw = -8 * 2048; raw <= 8 * 2048; raw += 8) {
      const double x = raw / 2048.0;
      const int32_t f = unit.sigmoid(fx::Value{raw, fx::kUnitIn}).raw;
      const int32_t g = unit.sigmoid(fx::Value{-raw, fx::kUnitIn}).raw;
      const double e = std::fabs(f / static_cast<double>(kOne) - 1.0 / (1.0 + std::exp(-x)));
      max_abs = std::max(max_abs, e);
      sum_abs += e;
      symmetric &= f + g == kOne;
      in_range &= f >= 0 && f <= kOne;
      ++n;
    }
    const bool anchors = unit.sigmoid(fx::Value{0, fx::kUnitIn}).raw == kOne / 2 &&
                         unit.sigmoid(fx::Value{5 * 2048, fx::kUnitIn}).raw == kOne;
    const bool pass = max_abs <= kSigmoidBound && symmetric && in_range && anchors;
    ok &= pass;
    rep.row({{"unit", "sigmoid"},
             {"cases", n},
             {"max_abs_err", max_abs},
             {"mean_abs_err", sum_abs / n},
             {"bound", kSigmoidBound},
             {"symmetric", symmetric},
             {"anchors_exact", anchors},
             {"pass", pass}});
  }
  return ok ? kExitOk : kExitViolation;
}

int cmd_cycles(const CyclesOptions& o, std::ostream& out, std::ostream& err) {
  struct Config {
    std::string name;
    int64_t lanes, tree_par;
  };
  std::vector<Config> configs{{"HFRWKV_0", 384, 256}, {"HFRWKV_1", 512, 512}, {"HFRWKV*_0", 768, 256},
                              {"HFRWKV*_1", 1024, 512}};
  if (o.lanes || o.tree_par) configs.push_back({"custom", o.lanes.value_or(384), o.tree_par.value_or(512)});
  try {
    Report rep(out, o.pretty);
    for (const auto& c : configs) {
      rep.row({{"config", c.name},
               {"l", o.dim},
               {"d", c.lanes},
               {"P", c.tree_par},
               {"matvec", matvec_cycles(o.dim, o.dim, c.lanes)},
               {"elementwise", elementwise_cycles(o.dim, c.lanes)},
               {"atac", atac_cycles(o.dim, c.tree_par)},
               {"complex_unit", complex_unit_cycles(o.dim, kComplexUnits)}});
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "cycles: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_codebook(const std::vector<int>& term_bits, std::ostream& out, std::ostream& err) {
  try {
    const quant::DeltaPotConfig cfg{term_bits};
    cfg.validate();
    out << std::setprecision(17);
    for (double l : quant::dpot_codebook(cfg)) out << l << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "codebook: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_validate(const std::filesystem::path& path, bool pretty, std::ostream& out, std::ostream& err) {
  try {
    const auto bytes = modelio::read_file(path);
    const auto info = modelio::read_directory(bytes);
    modelio::load_model(bytes);
    const auto& h = info.header;
    std::string k;
    for (int b : h.dpot.term_bits) k += (k.empty() ? "" : ",") + std::to_string(b);
    out << ojson{{"version", h.version},
                 {"n_layers", h.dims.n_layers},
                 {"hidden_dim", h.dims.hidden},
                 {"ffn_dim", h.dims.ffn},
                 {"vocab_size", h.dims.vocab},
                 {"dpot", k},
                 {"pow2_scales", (h.flags & modelio::kFlagPow2Scales) != 0},
                 {"tensors", h.dir_count}}
               .dump()
        << "\n";
    Report rep(out, pretty);
    for (const auto& e : info.entries) {
      rep.row({{"name", e.name},
               {"encoding", std::string(model::encoding_name(e.encoding))},
               {"shape", e.shape},
               {"scale", e.scale},
               {"offset", e.offset},
               {"bits", e.bit_length}});
    }
    return kExitOk;
  } catch (const modelio::ContainerError& e) {
    err << "validate: " << e.what() << "\n";
    return kExitViolation;
  } catch (const std::exception& e) {
    err << "validate: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_random_model(const RandomModelOptions& o, std::ostream& out, std::ostream& err) {
  try {
    interchange::write_model(model::random_model(o.dims, o.seed), o.out);
    out << ojson{{"written", o.out.string()}, {"seed", o.seed}}.dump() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "random-model: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace hfrwkv::cli
